//! Synthetic multi-domain corpus and plain-text corpus I/O.
//!
//! Each domain is a first-order Markov chain over a shared alphabet; each of
//! its topics re-draws a fraction of the domain's transition rows. Every row
//! assigns the same probability profile to a random set of successors, so all
//! sources have the same entropy rate and no domain is intrinsically easier
//! to predict than another.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub n_domains: usize,
    pub topics_per_domain: usize,
    pub docs_per_domain: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub alphabet: String,
    /// Successor probabilities shared by every transition row.
    pub profile: Vec<f64>,
    /// Fraction of rows a topic re-draws from its domain's table.
    pub topic_shift: f64,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            n_domains: 8,
            topics_per_domain: 4,
            docs_per_domain: 400,
            min_len: 180,
            max_len: 256,
            alphabet: "abcdefghijklmnopqrstuvwxyz ".into(),
            profile: vec![0.5, 0.25, 0.15, 0.1],
            topic_shift: 0.5,
            seed: 2024,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        let n_sym = self.alphabet.chars().count();
        if self.n_domains == 0 || self.topics_per_domain == 0 || self.docs_per_domain == 0 {
            return Err(Error::Config("corpus needs at least one domain, topic and document".into()));
        }
        if self.min_len < 2 || self.min_len > self.max_len {
            return Err(Error::Config("corpus lengths need 2 <= min_len <= max_len".into()));
        }
        if self.profile.is_empty() || self.profile.len() > n_sym {
            return Err(Error::Config("profile must be non-empty and no longer than the alphabet".into()));
        }
        let sum: f64 = self.profile.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || self.profile.iter().any(|&p| p <= 0.0) {
            return Err(Error::Config("profile must be positive and sum to 1".into()));
        }
        if !(0.0..=1.0).contains(&self.topic_shift) {
            return Err(Error::Config("topic_shift must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Entropy rate (nats per symbol) shared by every source.
    pub fn entropy_rate(&self) -> f64 {
        -self.profile.iter().map(|p| p * p.ln()).sum::<f64>()
    }
}

/// One generated document with its source labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledDoc {
    pub text: String,
    pub domain: usize,
    pub topic: usize,
}

type Table = Vec<Vec<(usize, f64)>>;

fn random_row(n_sym: usize, profile: &[f64], rng: &mut ChaCha8Rng) -> Vec<(usize, f64)> {
    let mut succ: Vec<usize> = (0..n_sym).collect();
    succ.shuffle(rng);
    succ.into_iter().zip(profile.iter().copied()).collect()
}

fn sample_row(row: &[(usize, f64)], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for &(s, p) in row {
        acc += p;
        if u < acc {
            return s;
        }
    }
    row.last().expect("non-empty row").0
}

/// Builds the per-(domain, topic) transition tables.
fn tables(cfg: &CorpusConfig, rng: &mut ChaCha8Rng) -> Vec<Vec<Table>> {
    let n_sym = cfg.alphabet.chars().count();
    let n_shift = (cfg.topic_shift * n_sym as f64).round() as usize;
    (0..cfg.n_domains)
        .map(|_| {
            let domain: Table = (0..n_sym).map(|_| random_row(n_sym, &cfg.profile, rng)).collect();
            (0..cfg.topics_per_domain)
                .map(|_| {
                    let mut t = domain.clone();
                    let mut rows: Vec<usize> = (0..n_sym).collect();
                    rows.shuffle(rng);
                    for &r in &rows[..n_shift] {
                        t[r] = random_row(n_sym, &cfg.profile, rng);
                    }
                    t
                })
                .collect()
        })
        .collect()
}

/// Generates `docs_per_domain` documents per domain, topics assigned round
/// robin, shuffled into one list.
pub fn generate_corpus(cfg: &CorpusConfig) -> Result<Vec<LabeledDoc>> {
    cfg.validate()?;
    let symbols: Vec<char> = cfg.alphabet.chars().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let tables = tables(cfg, &mut rng);
    let mut docs = Vec::with_capacity(cfg.n_domains * cfg.docs_per_domain);
    for (domain, topics) in tables.iter().enumerate() {
        for i in 0..cfg.docs_per_domain {
            let topic = i % cfg.topics_per_domain;
            let table = &topics[topic];
            let len = rng.gen_range(cfg.min_len..=cfg.max_len);
            let mut s = rng.gen_range(0..symbols.len());
            let mut text = String::with_capacity(len);
            for _ in 0..len {
                text.push(symbols[s]);
                s = sample_row(&table[s], &mut rng);
            }
            docs.push(LabeledDoc { text, domain, topic });
        }
    }
    docs.shuffle(&mut rng);
    Ok(docs)
}

/// Reads a corpus: a file holds one document per non-empty line; a
/// directory holds one document per regular file (sorted by name).
pub fn read_corpus(path: &Path) -> Result<Vec<String>> {
    let meta = fs::metadata(path).map_err(|e| Error::io(path, e))?;
    let docs: Vec<String> = if meta.is_dir() {
        let mut entries: Vec<_> = fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        entries.sort();
        entries
            .iter()
            .map(|p| fs::read_to_string(p).map_err(|e| Error::io(p, e)))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .map(|d| d.trim_end_matches(['\n', '\r']).to_string())
            .filter(|d| !d.is_empty())
            .collect()
    } else {
        fs::read_to_string(path)
            .map_err(|e| Error::io(path, e))?
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(str::to_string)
            .collect()
    };
    if docs.is_empty() {
        return Err(Error::Config(format!("{}: corpus is empty", path.display())));
    }
    Ok(docs)
}

/// Writes one document per line.
pub fn write_corpus<S: AsRef<str>>(path: &Path, docs: &[S]) -> Result<()> {
    let mut text = String::new();
    for d in docs {
        if d.as_ref().contains('\n') {
            return Err(Error::Config("documents must not contain newlines".into()));
        }
        text.push_str(d.as_ref());
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
