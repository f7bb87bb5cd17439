use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = u32;

pub const BOS: TokenId = 0;
pub const EOS: TokenId = 1;

/// Character vocabulary. Id 0 is the begin-of-sequence marker, id 1 the
/// end-of-sequence marker, characters follow in sorted order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<char>", into = "Vec<char>")]
pub struct Vocab {
    symbols: Vec<char>,
    index: HashMap<char, TokenId>,
}

impl From<Vec<char>> for Vocab {
    fn from(symbols: Vec<char>) -> Self {
        Self::new(symbols)
    }
}

impl From<Vocab> for Vec<char> {
    fn from(v: Vocab) -> Self {
        v.symbols
    }
}

impl Vocab {
    /// Builds a vocabulary from distinct characters (duplicates are dropped,
    /// order is normalized).
    pub fn new(symbols: impl IntoIterator<Item = char>) -> Self {
        let symbols: Vec<char> = symbols
            .into_iter()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let index = symbols
            .iter()
            .enumerate()
            .map(|(i, &c)| (c, i as TokenId + 2))
            .collect();
        Self { symbols, index }
    }

    pub fn from_texts<S: AsRef<str>>(texts: &[S]) -> Self {
        Self::new(texts.iter().flat_map(|t| t.as_ref().chars().collect::<Vec<_>>()))
    }

    /// Number of token ids including BOS and EOS.
    pub fn size(&self) -> usize {
        self.symbols.len() + 2
    }

    pub fn symbols(&self) -> &[char] {
        &self.symbols
    }

    pub fn id(&self, c: char) -> Result<TokenId> {
        self.index
            .get(&c)
            .copied()
            .ok_or(Error::OutOfVocabulary { symbol: c })
    }

    pub fn symbol(&self, id: TokenId) -> Option<char> {
        id.checked_sub(2)
            .and_then(|i| self.symbols.get(i as usize).copied())
    }

    /// `BOS c_1 .. c_n`: the conditioning sequence for a prompt.
    pub fn encode_prompt(&self, text: &str) -> Result<Vec<TokenId>> {
        std::iter::once(Ok(BOS))
            .chain(text.chars().map(|c| self.id(c)))
            .collect()
    }

    /// `BOS c_1 .. c_n EOS`: a full training / scoring sequence.
    pub fn encode_document(&self, text: &str) -> Result<Vec<TokenId>> {
        let mut t = self.encode_prompt(text)?;
        t.push(EOS);
        Ok(t)
    }

    pub fn decode(&self, tokens: &[TokenId]) -> String {
        tokens.iter().filter_map(|&t| self.symbol(t)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bijection_and_markers() {
        let v = Vocab::new("cab".chars());
        assert_eq!(v.size(), 5);
        assert_eq!(v.id('a').unwrap(), 2);
        assert_eq!(v.symbol(4), Some('c'));
        assert_eq!(v.symbol(BOS), None);
        assert_eq!(v.encode_document("ab").unwrap(), vec![BOS, 2, 3, EOS]);
        assert_eq!(v.decode(&[BOS, 4, 2, EOS]), "ca");
        for &c in v.symbols() {
            assert_eq!(v.symbol(v.id(c).unwrap()), Some(c));
        }
    }

    #[test]
    fn unknown_symbol_is_out_of_vocabulary() {
        let v = Vocab::new("ab".chars());
        assert!(matches!(
            v.encode_prompt("abz"),
            Err(Error::OutOfVocabulary { symbol: 'z' })
        ));
    }

    #[test]
    fn serde_round_trip() {
        let v = Vocab::new("hello world".chars());
        let s = serde_json::to_string(&v).unwrap();
        assert_eq!(serde_json::from_str::<Vocab>(&s).unwrap(), v);
    }
}
