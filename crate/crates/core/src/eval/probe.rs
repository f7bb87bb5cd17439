//! Numeric check of the merging-vs-neighbourhood-training bound.
//!
//! Two adapters start from the same parameters and run `T` full-batch
//! gradient steps of size `eta`: one on the `N` nearest documents of a
//! prompt, one on a cluster sharing at least one of those documents. The gap
//! between their next-token distributions at the prompt is compared against
//! `eta * T * L * G * (diam(neighbours) + diam(cluster))`, with `L` and `G`
//! estimated empirically and inflated by a safety factor.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cluster::{bisecting_kmeans, subset_diameter};
use crate::embed::{EmbedderConfig, Embedder, EmbeddingVector, HashedNgramEmbedder};
use crate::error::{Error, Result};
use crate::eval::baselines::nearest_neighbors;
use crate::lm::{grad_at, next_token_at, next_token_jacobian, BaseParams, LoraAdapter, LoraConfig, ModelConfig, TokenId, Vocab};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropositionProbe {
    pub eta: f64,
    pub steps: usize,
    pub n_neighbors: usize,
    /// Multiplier on both estimated constants.
    pub safety_factor: f64,
    /// Fixed constants; estimated per instance when absent.
    pub l_hat: Option<f64>,
    pub g_hat: Option<f64>,
    /// Points sampled on the segment between the two final parameter vectors
    /// when estimating `L`.
    pub segment_points: usize,
}

impl Default for PropositionProbe {
    fn default() -> Self {
        Self {
            eta: 0.01,
            steps: 1,
            n_neighbors: 4,
            safety_factor: 2.0,
            l_hat: None,
            g_hat: None,
            segment_points: 5,
        }
    }
}

impl PropositionProbe {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0 && self.eta.is_finite()) || self.steps == 0 || self.n_neighbors == 0 {
            return Err(Error::Config("probe needs eta >= 0, steps >= 1 and n_neighbors >= 1".into()));
        }
        if self.safety_factor < 1.0 || self.segment_points < 2 {
            return Err(Error::Config("probe needs safety_factor >= 1 and segment_points >= 2".into()));
        }
        if [self.l_hat, self.g_hat].iter().flatten().any(|&c| !(c > 0.0)) {
            return Err(Error::Config("fixed probe constants must be positive".into()));
        }
        Ok(())
    }
}

/// Model, initial adapter parameters and embedded corpus shared by both runs.
pub struct ProbeSetup<'a> {
    pub base: &'a BaseParams,
    /// Layout of the adapter; its own values are ignored.
    pub adapter: &'a LoraAdapter,
    pub theta0: &'a [f64],
    pub corpus: &'a [String],
    pub embeddings: &'a [EmbeddingVector],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeOutcome {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
    pub l_hat: f64,
    pub g_hat: f64,
    pub diam_neighbors: f64,
    pub diam_cluster: f64,
    pub neighbors: Vec<usize>,
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn mean_of(grads: &[Vec<f64>], rows: impl Iterator<Item = usize>) -> Vec<f64> {
    let mut out = vec![0.0; grads[0].len()];
    let mut n = 0.0;
    for r in rows {
        out.iter_mut().zip(&grads[r]).for_each(|(o, g)| *o += g);
        n += 1.0;
    }
    out.iter_mut().for_each(|o| *o /= n);
    out
}

/// Largest singular value of `J` (rows x params) by power iteration on `J J^T`.
fn spectral_norm(j: &[Vec<f64>]) -> f64 {
    let v = j.len();
    let gram: Vec<Vec<f64>> = (0..v)
        .map(|a| (0..v).map(|b| j[a].iter().zip(&j[b]).map(|(x, y)| x * y).sum()).collect())
        .collect();
    let mut x = vec![1.0 / (v as f64).sqrt(); v];
    let mut lambda = 0.0;
    for _ in 0..200 {
        let y: Vec<f64> = gram.iter().map(|row| row.iter().zip(&x).map(|(g, xi)| g * xi).sum()).collect();
        let norm = y.iter().map(|t| t * t).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        lambda = norm;
        x = y.into_iter().map(|t| t / norm).collect();
    }
    lambda.sqrt()
}

/// Per-document gradients of every document in `docs` at `theta`.
fn doc_grads(setup: &ProbeSetup, encoded: &[Vec<TokenId>], theta: &[f64]) -> Result<Vec<Vec<f64>>> {
    encoded
        .iter()
        .map(|seq| grad_at(setup.base, setup.adapter, theta, std::slice::from_ref(seq)).map(|(_, g)| g))
        .collect()
}

/// Runs both trainings from `setup.theta0` and evaluates the bound at `prompt`.
pub fn proposition_probe(
    probe: &PropositionProbe,
    setup: &ProbeSetup,
    prompt: &str,
    query: &EmbeddingVector,
    cluster: &[usize],
) -> Result<ProbeOutcome> {
    probe.validate()?;
    if setup.corpus.len() != setup.embeddings.len() || setup.theta0.len() != setup.adapter.num_params() {
        return Err(Error::Config("probe corpus, embeddings and parameters disagree in size".into()));
    }
    if probe.n_neighbors > setup.corpus.len() {
        return Err(Error::ExpertCountOutOfRange { n: probe.n_neighbors, k: setup.corpus.len() });
    }
    let neighbors = nearest_neighbors(query, setup.embeddings, probe.n_neighbors);
    let near: BTreeSet<usize> = neighbors.iter().copied().collect();
    let prime: BTreeSet<usize> = cluster.iter().copied().collect();
    if near.is_disjoint(&prime) {
        return Err(Error::PropositionPrecondition);
    }
    let union: Vec<usize> = near.union(&prime).copied().collect();
    let pos = |d: &usize| union.iter().position(|u| u == d).expect("member of union");
    let near_rows: Vec<usize> = near.iter().map(pos).collect();
    let prime_rows: Vec<usize> = prime.iter().map(pos).collect();
    let encoded = union
        .iter()
        .map(|&d| setup.base.vocab.encode_document(&setup.corpus[d]))
        .collect::<Result<Vec<_>>>()?;
    let phis: Vec<&EmbeddingVector> = union.iter().map(|&d| &setup.embeddings[d]).collect();

    let mut g_max = 0.0f64;
    let mut observe = |grads: &[Vec<f64>]| {
        for i in 0..grads.len() {
            for j in i + 1..grads.len() {
                let d = phis[i].dist_sq(phis[j]).sqrt();
                if d > 1e-12 {
                    g_max = g_max.max(l2(&grads[i], &grads[j]) / d);
                }
            }
        }
    };
    let mut run = |rows: &[usize]| -> Result<Vec<f64>> {
        let mut theta = setup.theta0.to_vec();
        for _ in 0..probe.steps {
            let grads = doc_grads(setup, &encoded, &theta)?;
            observe(&grads);
            let g = mean_of(&grads, rows.iter().copied());
            theta.iter_mut().zip(&g).for_each(|(t, gi)| *t -= probe.eta * gi);
        }
        let grads = doc_grads(setup, &encoded, &theta)?;
        observe(&grads);
        Ok(theta)
    };
    let theta_near = run(&near_rows)?;
    let theta_prime = run(&prime_rows)?;

    let x = setup.base.vocab.encode_prompt(prompt)?;
    let p_near = next_token_at(setup.base, setup.adapter, &theta_near, &x)?;
    let p_prime = next_token_at(setup.base, setup.adapter, &theta_prime, &x)?;
    let lhs = l2(&p_near, &p_prime);

    let l_hat = match probe.l_hat {
        Some(l) => l,
        None => {
            let mut l_max = 0.0f64;
            let gap = l2(&theta_near, &theta_prime);
            if gap > 0.0 {
                l_max = lhs / gap;
            }
            for s in 0..probe.segment_points {
                let t = s as f64 / (probe.segment_points - 1) as f64;
                let th: Vec<f64> = theta_near.iter().zip(&theta_prime).map(|(a, b)| a + t * (b - a)).collect();
                l_max = l_max.max(spectral_norm(&next_token_jacobian(setup.base, setup.adapter, &th, &x)?));
            }
            l_max * probe.safety_factor
        }
    };
    let g_hat = probe.g_hat.unwrap_or(g_max * probe.safety_factor);
    let near_list: Vec<usize> = near.iter().copied().collect();
    let prime_list: Vec<usize> = prime.iter().copied().collect();
    let diam_neighbors = subset_diameter(setup.embeddings, &near_list);
    let diam_cluster = subset_diameter(setup.embeddings, &prime_list);
    let rhs = probe.eta * probe.steps as f64 * l_hat * g_hat * (diam_neighbors + diam_cluster);
    Ok(ProbeOutcome {
        lhs,
        rhs,
        holds: lhs <= rhs,
        l_hat,
        g_hat,
        diam_neighbors,
        diam_cluster,
        neighbors,
    })
}

/// A self-contained random probe instance, reproducible from its fields.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeInstance {
    pub seed: u64,
    pub probe: PropositionProbe,
    pub alphabet: String,
    pub hidden: usize,
    pub rank: usize,
    pub corpus: Vec<String>,
    pub prompt: String,
    pub cluster: Vec<usize>,
    pub theta0: Vec<f64>,
}

const PROBE_ALPHABET: &str = "abcdef";
const PROBE_SOURCES: usize = 3;
const DOCS_PER_SOURCE: usize = 8;

fn markov_doc(table: &[Vec<usize>], len: usize, rng: &mut ChaCha8Rng) -> String {
    let symbols: Vec<char> = PROBE_ALPHABET.chars().collect();
    let mut s = rng.gen_range(0..symbols.len());
    (0..len)
        .map(|_| {
            let c = symbols[s];
            let row = &table[s];
            s = if rng.gen_bool(0.7) { row[0] } else { row[rng.gen_range(0..row.len())] };
            c
        })
        .collect()
}

/// Draws a small instance: three Markov sources over six symbols (V = 8),
/// hidden size 8, rank 2, `T <= 3` and `eta * T <= 0.03`. The second
/// training set is the cluster of a random nearest neighbour, so the
/// precondition holds by construction.
pub fn random_instance(seed: u64) -> Result<ProbeInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_sym = PROBE_ALPHABET.chars().count();
    let tables: Vec<Vec<Vec<usize>>> = (0..PROBE_SOURCES)
        .map(|_| {
            (0..n_sym)
                .map(|_| {
                    let mut succ: Vec<usize> = (0..n_sym).collect();
                    succ.shuffle(&mut rng);
                    succ.truncate(3);
                    succ
                })
                .collect()
        })
        .collect();
    let mut corpus = Vec::new();
    for t in &tables {
        for _ in 0..DOCS_PER_SOURCE {
            let len = rng.gen_range(6..=14);
            corpus.push(markov_doc(t, len, &mut rng));
        }
    }
    let prompt = markov_doc(&tables[rng.gen_range(0..PROBE_SOURCES)], 10, &mut rng);
    let steps = rng.gen_range(1..=3usize);
    let eta = rng.gen_range(0.002..=0.03 / steps as f64);
    let probe = PropositionProbe { eta, steps, ..PropositionProbe::default() };

    let embedder = HashedNgramEmbedder::new(EmbedderConfig::default())?;
    let emb = embedder.embed_all(&corpus)?;
    let query = embedder.embed(&prompt)?;
    let neighbors = nearest_neighbors(&query, &emb, probe.n_neighbors);
    let assignment = bisecting_kmeans(&emb, PROBE_SOURCES, seed)?;
    let pick = neighbors[rng.gen_range(0..neighbors.len())];
    let cluster = assignment.members(assignment.label(pick));

    let (_, adapter) = instance_model(PROBE_ALPHABET, seed, 8, 2)?;
    let normal = Normal::new(0.0, 0.3).expect("valid std");
    let theta0 = (0..adapter.num_params()).map(|_| normal.sample(&mut rng)).collect();
    Ok(ProbeInstance {
        seed,
        probe,
        alphabet: PROBE_ALPHABET.into(),
        hidden: 8,
        rank: 2,
        corpus,
        prompt,
        cluster,
        theta0,
    })
}

fn instance_model(alphabet: &str, seed: u64, hidden: usize, rank: usize) -> Result<(BaseParams, LoraAdapter)> {
    let base = BaseParams::init(
        Vocab::new(alphabet.chars()),
        &ModelConfig { hidden, n_blocks: 1, context_decay: 0.5, init_seed: seed },
    );
    let lora = LoraConfig { rank, alpha: rank as f32, ..LoraConfig::default() };
    let adapter = LoraAdapter::init(&base, &lora, seed)?;
    Ok((base, adapter))
}

/// Rebuilds the model of an instance and runs the probe on it.
pub fn run_instance(inst: &ProbeInstance) -> Result<ProbeOutcome> {
    let (base, adapter) = instance_model(&inst.alphabet, inst.seed, inst.hidden, inst.rank)?;
    let embedder = HashedNgramEmbedder::new(EmbedderConfig::default())?;
    let embeddings = embedder.embed_all(&inst.corpus)?;
    let query = embedder.embed(&inst.prompt)?;
    let setup = ProbeSetup {
        base: &base,
        adapter: &adapter,
        theta0: &inst.theta0,
        corpus: &inst.corpus,
        embeddings: &embeddings,
    };
    proposition_probe(&inst.probe, &setup, &inst.prompt, &query, &inst.cluster)
}

/// Runs `n` random instances with seeds `seed, seed + 1, ...`.
pub fn probe_sweep(n: usize, seed: u64) -> Result<Vec<(ProbeInstance, ProbeOutcome)>> {
    (0..n as u64)
        .map(|i| {
            let inst = random_instance(seed + i)?;
            let out = run_instance(&inst)?;
            Ok((inst, out))
        })
        .collect()
}

/// Writes an instance and its outcome as JSON.
pub fn dump_instance(path: &Path, inst: &ProbeInstance, outcome: &ProbeOutcome) -> Result<()> {
    let v = serde_json::json!({ "instance": inst, "outcome": outcome });
    let text = serde_json::to_string_pretty(&v).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outcome(inst: &ProbeInstance) -> ProbeOutcome {
        run_instance(inst).unwrap()
    }

    #[test]
    fn zero_step_size_gives_zero_sides() {
        let mut inst = random_instance(1).unwrap();
        inst.probe.eta = 0.0;
        let o = outcome(&inst);
        assert_eq!(o.lhs, 0.0);
        assert_eq!(o.rhs, 0.0);
        assert!(o.holds);
    }

    #[test]
    fn identical_training_sets_hold_trivially() {
        let mut inst = random_instance(2).unwrap();
        inst.cluster = outcome(&inst).neighbors;
        let o = outcome(&inst);
        assert_eq!(o.lhs, 0.0);
        assert!(o.holds);
    }

    #[test]
    fn disjoint_cluster_is_rejected() {
        let mut inst = random_instance(3).unwrap();
        let near = outcome(&inst).neighbors;
        inst.cluster = (0..inst.corpus.len()).filter(|d| !near.contains(d)).collect();
        assert!(matches!(run_instance(&inst), Err(Error::PropositionPrecondition)));
    }

    #[test]
    fn instances_respect_their_limits() {
        for seed in 0..10 {
            let inst = random_instance(seed).unwrap();
            assert!(inst.probe.steps <= 3);
            assert!(inst.probe.eta * inst.probe.steps as f64 <= 0.03 + 1e-12);
            assert_eq!(random_instance(seed).unwrap(), inst);
            let o = outcome(&inst);
            assert!(o.l_hat > 0.0 && o.g_hat > 0.0);
        }
    }

    #[test]
    fn spectral_norm_of_diagonal() {
        let j = vec![vec![3.0, 0.0, 0.0], vec![0.0, -4.0, 0.0]];
        assert!((spectral_norm(&j) - 4.0).abs() < 1e-9);
    }

    #[test]
    fn dump_parses() {
        let inst = random_instance(4).unwrap();
        let o = outcome(&inst);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("probe.json");
        dump_instance(&p, &inst, &o).unwrap();
        let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&p).unwrap()).unwrap();
        assert_eq!(v["instance"]["seed"], 4);
    }
}
