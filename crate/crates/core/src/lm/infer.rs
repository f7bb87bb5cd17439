use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::lora::LoraAdapter;
use super::model::{BaseParams, Compiled, Lm, SequenceModel};
use super::vocab::{TokenId, BOS, EOS};
use crate::error::{Error, Result};

/// Token-mean NLL over pre-encoded sequences (every position after the first
/// is a target).
pub fn mean_nll<T: AsRef<[TokenId]>>(base: &BaseParams, adapter: Option<&LoraAdapter>, batch: &[T]) -> Result<f64> {
    let c = Compiled::new(base, adapter)?;
    let mut nll = 0.0;
    let mut count = 0usize;
    for seq in batch {
        let seq = seq.as_ref();
        if seq.len() < 2 {
            continue;
        }
        let probs = c.distributions(&seq[..seq.len() - 1]);
        for (p, &y) in probs.iter().zip(&seq[1..]) {
            nll -= p[y as usize].ln();
        }
        count += seq.len() - 1;
    }
    if count == 0 {
        return Err(Error::EmptySequence);
    }
    Ok(nll / count as f64)
}

/// Sum of NLL and number of scored targets for one document, skipping the
/// first `skip` character targets. EOS is always scored.
pub fn document_nll<M: SequenceModel + ?Sized>(model: &M, index: usize, doc: &str, skip: usize) -> Result<(f64, usize)> {
    let len = doc.chars().count();
    if len <= skip {
        return Err(Error::DocumentTooShort {
            index,
            len,
            need: skip + 1,
        });
    }
    let tokens = model.vocab().encode_document(doc)?;
    let probs = model.distributions(&tokens[..tokens.len() - 1]);
    let mut nll = 0.0;
    for (p, &y) in probs.iter().zip(&tokens[1..]).skip(skip) {
        nll -= p[y as usize].ln();
    }
    Ok((nll, tokens.len() - 1 - skip))
}

/// `exp` of the mean NLL over every scored position of every document.
pub fn model_perplexity<M: SequenceModel + ?Sized, S: AsRef<str>>(model: &M, docs: &[S], eval_prefix_len: usize) -> Result<f64> {
    let mut nll = 0.0;
    let mut count = 0usize;
    for (i, d) in docs.iter().enumerate() {
        let (n, c) = document_nll(model, i, d.as_ref(), eval_prefix_len)?;
        nll += n;
        count += c;
    }
    if count == 0 {
        return Err(Error::EmptySequence);
    }
    Ok((nll / count as f64).exp())
}

pub fn perplexity<S: AsRef<str>>(base: &BaseParams, adapter: Option<&LoraAdapter>, docs: &[S], eval_prefix_len: usize) -> Result<f64> {
    model_perplexity(&Lm::new(base, adapter)?, docs, eval_prefix_len)
}

/// Shannon entropy in nats.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum::<f64>()
}

/// Ancestral sampling of up to `n_tokens` characters after `prompt`. BOS is
/// never sampled; sampling EOS ends the text early.
pub fn generate_with<M: SequenceModel + ?Sized>(model: &M, prompt: &str, n_tokens: usize, seed: u64) -> Result<String> {
    let mut tokens = model.vocab().encode_prompt(prompt)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..n_tokens {
        let mut p = model.next_token(&tokens);
        p[BOS as usize] = 0.0;
        let next = WeightedIndex::new(&p)
            .map_err(|e| Error::Config(format!("invalid next-token distribution: {e}")))?
            .sample(&mut rng) as TokenId;
        if next == EOS {
            break;
        }
        tokens.push(next);
    }
    Ok(format!("{prompt}{}", model.vocab().decode(&tokens[prompt.chars().count() + 1..])))
}

pub fn generate(base: &BaseParams, adapter: Option<&LoraAdapter>, prompt: &str, n_tokens: usize, seed: u64) -> Result<String> {
    generate_with(&Lm::new(base, adapter)?, prompt, n_tokens, seed)
}
