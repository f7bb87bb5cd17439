use serde::{Deserialize, Serialize};

use crate::embed::{cosine, EmbeddingVector};
use crate::error::{Error, Result};
use crate::lm::{train_adapter, AdapterTrainer, BaseParams, LoraAdapter, LoraConfig, TrainConfig};

/// One adapter over the whole training set.
pub fn global_finetune<S: AsRef<str>>(base: &BaseParams, train: &[S], lora: &LoraConfig, cfg: &TrainConfig) -> Result<LoraAdapter> {
    train_adapter(base, train, lora, cfg)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TttConfig {
    pub n_neighbors: usize,
    pub learning_rate: f64,
    /// Passes over the neighbours; 1 is one gradient step per neighbour.
    pub epochs: usize,
}

impl Default for TttConfig {
    fn default() -> Self {
        Self {
            n_neighbors: 100,
            learning_rate: 1e-2,
            epochs: 1,
        }
    }
}

/// Indices of the `n` documents most similar to `query`, most similar first
/// (lower index on ties).
pub fn nearest_neighbors(query: &EmbeddingVector, index: &[EmbeddingVector], n: usize) -> Vec<usize> {
    let sims: Vec<f64> = index.iter().map(|e| cosine(e, query)).collect();
    let mut ids: Vec<usize> = (0..index.len()).collect();
    ids.sort_by(|&a, &b| sims[b].total_cmp(&sims[a]).then(a.cmp(&b)));
    ids.truncate(n);
    ids
}

/// Test-time training: a fresh adapter takes one optimizer step on each of
/// the `n_neighbors` nearest documents, from most to least similar.
pub fn ttt_adapt<S: AsRef<str>>(
    base: &BaseParams,
    query: &EmbeddingVector,
    index: &[EmbeddingVector],
    docs: &[S],
    ttt: &TttConfig,
    lora: &LoraConfig,
    train: &TrainConfig,
) -> Result<LoraAdapter> {
    if index.len() != docs.len() {
        return Err(Error::Config("TTT index and documents differ in length".into()));
    }
    if ttt.n_neighbors == 0 || ttt.n_neighbors > docs.len() {
        return Err(Error::ExpertCountOutOfRange { n: ttt.n_neighbors, k: docs.len() });
    }
    let cfg = TrainConfig {
        learning_rate: ttt.learning_rate,
        ..train.clone()
    };
    let mut trainer = AdapterTrainer::new(base, lora, &cfg)?;
    let order = nearest_neighbors(query, index, ttt.n_neighbors);
    let encoded = order
        .iter()
        .map(|&i| cfg.encode(&base.vocab, docs[i].as_ref()))
        .collect::<Result<Vec<_>>>()?;
    for _ in 0..ttt.epochs.max(1) {
        for seq in &encoded {
            trainer.step(std::slice::from_ref(seq))?;
        }
    }
    Ok(trainer.into_adapter())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::{Embedder, EmbedderConfig, HashedNgramEmbedder};
    use crate::lm::{mean_nll, perplexity, ModelConfig, Vocab};

    fn setup() -> (BaseParams, Vec<String>, Vec<EmbeddingVector>) {
        let docs: Vec<String> = ["abab abab abab", "cdcd cdcd cdcd", "aaaa bbbb", "dcba dcba dcba"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let base = BaseParams::init(Vocab::from_texts(&docs), &ModelConfig { hidden: 8, ..ModelConfig::default() });
        let e = HashedNgramEmbedder::new(EmbedderConfig::default()).unwrap();
        let emb = e.embed_all(&docs).unwrap();
        (base, docs, emb)
    }

    fn cfgs() -> (LoraConfig, TrainConfig) {
        (LoraConfig { rank: 2, ..LoraConfig::default() }, TrainConfig { learning_rate: 0.05, ..TrainConfig::default() })
    }

    #[test]
    fn zero_rate_ttt_is_base() {
        let (base, docs, emb) = setup();
        let (lora, train) = cfgs();
        let ttt = TttConfig { n_neighbors: 2, learning_rate: 0.0, epochs: 1 };
        let a = ttt_adapt(&base, &emb[0], &emb, &docs, &ttt, &lora, &train).unwrap();
        assert!(a.is_zero_delta());
        assert_eq!(perplexity(&base, Some(&a), &docs, 0).unwrap(), perplexity(&base, None, &docs, 0).unwrap());
    }

    #[test]
    fn single_neighbor_is_the_source_document() {
        let (base, docs, emb) = setup();
        assert_eq!(nearest_neighbors(&emb[2], &emb, 1), vec![2]);
        let (lora, train) = cfgs();
        let ttt = TttConfig { n_neighbors: 1, learning_rate: 0.05, epochs: 1 };
        let a = ttt_adapt(&base, &emb[2], &emb, &docs, &ttt, &lora, &train).unwrap();
        let target = vec![base.vocab.encode_document(&docs[2]).unwrap()];
        // the adapter took exactly one step, on document 2 only
        let mut trainer = AdapterTrainer::new(&base, &lora, &TrainConfig { learning_rate: 0.05, ..train.clone() }).unwrap();
        trainer.step(&target).unwrap();
        assert_eq!(trainer.adapter(), &a);
        let before = mean_nll(&base, None, &target).unwrap();
        let after = mean_nll(&base, Some(&a), &target).unwrap();
        assert!(after < before);
    }

    #[test]
    fn neighbour_bounds() {
        let (base, docs, emb) = setup();
        let (lora, train) = cfgs();
        let ttt = TttConfig { n_neighbors: 5, ..TttConfig::default() };
        assert!(ttt_adapt(&base, &emb[0], &emb, &docs, &ttt, &lora, &train).is_err());
    }

    #[test]
    fn zero_rate_finetune_is_zero_delta() {
        let (base, docs, _) = setup();
        let (lora, train) = cfgs();
        let a = global_finetune(&base, &docs, &lora, &TrainConfig { learning_rate: 0.0, ..train }).unwrap();
        assert!(a.is_zero_delta());
    }
}
