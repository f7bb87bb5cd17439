//! Merging coefficients from a prompt embedding.
//!
//! The default mode scores every expert by `cos(centroid_k, query) / beta` and
//! passes the scores through a sparse softmax: probabilities at or below
//! `tau` are dropped and the survivors renormalized. Because the largest
//! softmax probability is at least `1/K`, any `tau < 1/K` keeps at least one
//! expert.
//!
//! Ties are broken toward the lower expert id everywhere.

use serde::{Deserialize, Serialize};

use crate::embed::{cosine, EmbeddingVector};
use crate::error::{Error, Result};
use crate::linalg::{cholesky_solve, softmax};
use crate::lm::{entropy, BaseParams, Lm, LoraAdapter, SequenceModel};

/// Sparse nonnegative distribution over expert ids, sorted by id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(usize, f64)>", into = "Vec<(usize, f64)>")]
pub struct MergeWeights {
    entries: Vec<(usize, f64)>,
}

impl TryFrom<Vec<(usize, f64)>> for MergeWeights {
    type Error = Error;

    fn try_from(v: Vec<(usize, f64)>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<MergeWeights> for Vec<(usize, f64)> {
    fn from(w: MergeWeights) -> Self {
        w.entries
    }
}

impl MergeWeights {
    /// Validates positivity, uniqueness and normalization (within 1e-9).
    pub fn new(mut entries: Vec<(usize, f64)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Config("merge weights must have at least one entry".into()));
        }
        entries.sort_by_key(|e| e.0);
        if entries.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::Config("duplicate expert id in merge weights".into()));
        }
        if entries.iter().any(|e| !(e.1 > 0.0 && e.1.is_finite())) {
            return Err(Error::Config("merge weights must be positive and finite".into()));
        }
        let sum: f64 = entries.iter().map(|e| e.1).sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("merge weights sum to {sum}, not 1")));
        }
        Ok(Self { entries })
    }

    /// Drops zero entries and rescales the rest to sum to one.
    fn from_dense(w: &[f64]) -> Result<Self> {
        let sum: f64 = w.iter().filter(|v| **v > 0.0).sum();
        let entries = w
            .iter()
            .enumerate()
            .filter(|(_, v)| **v > 0.0)
            .map(|(i, v)| (i, v / sum))
            .collect();
        Self::new(entries)
    }

    pub fn one_hot(id: usize) -> Self {
        Self {
            entries: vec![(id, 1.0)],
        }
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn support(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.0).collect()
    }

    /// Number of experts with nonzero weight.
    pub fn n_active(&self) -> usize {
        self.entries.len()
    }

    pub fn get(&self, id: usize) -> f64 {
        self.entries
            .binary_search_by_key(&id, |e| e.0)
            .map_or(0.0, |i| self.entries[i].1)
    }

    /// Largest-weight expert (lower id on ties).
    pub fn argmax(&self) -> usize {
        argmax(&self.entries.iter().map(|e| e.1).collect::<Vec<_>>())
            .map(|i| self.entries[i].0)
            .expect("non-empty")
    }

    pub fn to_dense(&self, k: usize) -> Vec<f64> {
        let mut d = vec![0.0; k];
        for &(i, w) in &self.entries {
            d[i] = w;
        }
        d
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    #[default]
    CrossAttention,
    UniformTopn,
    Sift,
    Dawin,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SiftConfig {
    pub lambda: f64,
    pub n_candidates: usize,
}

impl Default for SiftConfig {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            n_candidates: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoutingConfig {
    pub beta: f64,
    pub tau: f64,
    pub fixed_n: Option<usize>,
    pub weighting: Weighting,
    pub sift: SiftConfig,
}

impl Default for RoutingConfig {
    fn default() -> Self {
        Self {
            beta: 0.05,
            tau: 0.01,
            fixed_n: None,
            weighting: Weighting::CrossAttention,
            sift: SiftConfig::default(),
        }
    }
}

impl RoutingConfig {
    pub fn validate(&self, k: usize) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!("beta must be positive, got {}", self.beta)));
        }
        if let Some(n) = self.fixed_n {
            check_n(n, k)?;
        }
        if self.weighting == Weighting::CrossAttention && self.fixed_n.is_none() {
            check_tau(self.tau, k)?;
        }
        if self.weighting == Weighting::Sift && !(self.sift.lambda > 0.0) {
            return Err(Error::Config("sift lambda must be positive".into()));
        }
        Ok(())
    }
}

fn check_tau(tau: f64, k: usize) -> Result<()> {
    if !(tau >= 0.0) || tau * k as f64 >= 1.0 {
        return Err(Error::TauTooLarge { tau, k });
    }
    Ok(())
}

fn check_n(n: usize, k: usize) -> Result<()> {
    if n == 0 || n > k {
        return Err(Error::ExpertCountOutOfRange { n, k });
    }
    Ok(())
}

/// Index of the largest value, lower index on ties.
pub fn argmax(v: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &x) in v.iter().enumerate() {
        if best.map_or(true, |b| x > v[b]) {
            best = Some(i);
        }
    }
    best
}

/// `relu(softmax(z) - tau)`, renormalized; zero entries are omitted.
pub fn sparse_softmax(z: &[f64], tau: f64) -> Result<MergeWeights> {
    if z.is_empty() {
        return Err(Error::ExpertCountOutOfRange { n: 0, k: 0 });
    }
    check_tau(tau, z.len())?;
    let p = softmax(z);
    let w: Vec<f64> = p.iter().map(|&pi| (pi - tau).max(0.0)).collect();
    MergeWeights::from_dense(&w)
}

/// `cos(centroid_k, query) / beta` for every expert.
pub fn logits(query: &EmbeddingVector, centroids: &[EmbeddingVector], beta: f64) -> Vec<f64> {
    centroids.iter().map(|c| cosine(c, query) / beta).collect()
}

/// Expert ids ordered by decreasing cosine to `query`, lower id first on ties.
pub fn rank_by_similarity(query: &EmbeddingVector, centroids: &[EmbeddingVector]) -> Vec<usize> {
    let sims: Vec<f64> = centroids.iter().map(|c| cosine(c, query)).collect();
    let mut ids: Vec<usize> = (0..centroids.len()).collect();
    ids.sort_by(|&a, &b| sims[b].total_cmp(&sims[a]).then(a.cmp(&b)));
    ids
}

/// Routes with the configured weighting mode. Entropy weighting needs model
/// outputs and goes through [`weights_dawin`] instead.
pub fn route(query: &EmbeddingVector, centroids: &[EmbeddingVector], cfg: &RoutingConfig) -> Result<MergeWeights> {
    if centroids.is_empty() {
        return Err(Error::Catalog("no experts to route to".into()));
    }
    cfg.validate(centroids.len())?;
    match cfg.weighting {
        Weighting::CrossAttention => match cfg.fixed_n {
            Some(n) => route_fixed_n(query, centroids, n, cfg.beta),
            None => sparse_softmax(&logits(query, centroids, cfg.beta), cfg.tau),
        },
        Weighting::UniformTopn => weights_uniform_topn(query, centroids, cfg.fixed_n.unwrap_or(1)),
        Weighting::Sift => weights_sift(query, centroids, &cfg.sift),
        Weighting::Dawin => Err(Error::Config(
            "entropy weighting needs model outputs; use weights_dawin".into(),
        )),
    }
}

/// Batched routing: the `n x K` score matrix `Q C^T / beta` followed by a
/// row-wise sparse softmax. Row `i` equals `route(queries[i])` exactly.
pub fn route_batch(queries: &[EmbeddingVector], centroids: &[EmbeddingVector], cfg: &RoutingConfig) -> Result<Vec<MergeWeights>> {
    if cfg.weighting != Weighting::CrossAttention || cfg.fixed_n.is_some() {
        return queries.iter().map(|q| route(q, centroids, cfg)).collect();
    }
    if centroids.is_empty() {
        return Err(Error::Catalog("no experts to route to".into()));
    }
    cfg.validate(centroids.len())?;
    let scores: Vec<Vec<f64>> = queries.iter().map(|q| logits(q, centroids, cfg.beta)).collect();
    scores.iter().map(|row| sparse_softmax(row, cfg.tau)).collect()
}

/// Softmax at temperature `beta` over the `n` most similar experts only.
pub fn route_fixed_n(query: &EmbeddingVector, centroids: &[EmbeddingVector], n: usize, beta: f64) -> Result<MergeWeights> {
    check_n(n, centroids.len())?;
    let mut chosen = rank_by_similarity(query, centroids);
    chosen.truncate(n);
    chosen.sort_unstable();
    let z: Vec<f64> = chosen.iter().map(|&k| cosine(&centroids[k], query) / beta).collect();
    MergeWeights::from_dense(&scatter(centroids.len(), &chosen, &softmax(&z)))
}

fn scatter(k: usize, ids: &[usize], vals: &[f64]) -> Vec<f64> {
    let mut d = vec![0.0; k];
    for (&i, &v) in ids.iter().zip(vals) {
        d[i] = v;
    }
    d
}

/// Equal weight on the `n` most similar experts.
pub fn weights_uniform_topn(query: &EmbeddingVector, centroids: &[EmbeddingVector], n: usize) -> Result<MergeWeights> {
    check_n(n, centroids.len())?;
    let ranked = rank_by_similarity(query, centroids);
    let w = 1.0 / n as f64;
    MergeWeights::new(ranked[..n].iter().map(|&k| (k, w)).collect())
}

/// Posterior variances `sigma^2_0 = 1, sigma^2_1, ..., sigma^2_N` of the
/// query under a linear-kernel Gaussian process conditioned on the first `i`
/// candidates: `sigma^2_i = k(q,q) - k_i^T (K_i + lambda I)^{-1} k_i`.
pub fn sift_variances(query: &EmbeddingVector, candidates: &[&EmbeddingVector], lambda: f64) -> Vec<f64> {
    let kqq = cosine(query, query);
    let kq: Vec<f64> = candidates.iter().map(|c| cosine(c, query)).collect();
    let mut out = vec![kqq];
    for i in 1..=candidates.len() {
        let mut gram = vec![0.0; i * i];
        for a in 0..i {
            for b in 0..i {
                gram[a * i + b] = cosine(candidates[a], candidates[b]) + if a == b { lambda } else { 0.0 };
            }
        }
        let x = cholesky_solve(&gram, i, &kq[..i]).expect("gram + lambda I is positive definite");
        let quad: f64 = kq[..i].iter().zip(&x).map(|(a, b)| a * b).sum();
        out.push(kqq - quad);
    }
    out
}

/// Weights proportional to the variance reduction contributed by each of the
/// `n_candidates` nearest experts, taken in order of similarity. A duplicate
/// of an already chosen centroid reduces the variance by little, so
/// redundant experts share weight instead of doubling it.
pub fn weights_sift(query: &EmbeddingVector, centroids: &[EmbeddingVector], cfg: &SiftConfig) -> Result<MergeWeights> {
    check_n(cfg.n_candidates, centroids.len())?;
    if !(cfg.lambda > 0.0) {
        return Err(Error::Config("sift lambda must be positive".into()));
    }
    let ranked = rank_by_similarity(query, centroids);
    let cand: Vec<&EmbeddingVector> = ranked[..cfg.n_candidates].iter().map(|&k| &centroids[k]).collect();
    let var = sift_variances(query, &cand, cfg.lambda);
    let total = var[0] - var[cfg.n_candidates];
    if !(total > 0.0) {
        return Err(Error::NoUncertaintyReduction);
    }
    let dec: Vec<f64> = var.windows(2).map(|w| ((w[0] - w[1]) / total).max(0.0)).collect();
    let dense = scatter(centroids.len(), &ranked[..cfg.n_candidates], &dec);
    MergeWeights::from_dense(&dense).map_err(|_| Error::NoUncertaintyReduction)
}

/// Sparse softmax of negated entropies at temperature `beta`.
pub fn dawin_from_entropies(entropies: &[f64], beta: f64, tau: f64) -> Result<MergeWeights> {
    if !(beta > 0.0) {
        return Err(Error::Config("beta must be positive".into()));
    }
    let z: Vec<f64> = entropies.iter().map(|h| -h / beta).collect();
    sparse_softmax(&z, tau)
}

/// Weights experts by the entropy of their next-token distribution at the
/// final prompt position. Costs one model evaluation per expert.
pub fn weights_dawin(prompt: &str, base: &BaseParams, adapters: &[LoraAdapter], beta: f64, tau: f64) -> Result<MergeWeights> {
    let tokens = base.vocab.encode_prompt(prompt)?;
    let entropies = adapters
        .iter()
        .map(|a| Ok(entropy(&Lm::new(base, Some(a))?.next_token(&tokens))))
        .collect::<Result<Vec<_>>>()?;
    dawin_from_entropies(&entropies, beta, tau)
}

/// `normalize(exp(-|q - c_k|^2 / (2 beta)))`, the radial-basis form of the
/// routing softmax.
pub fn rbf_weights(query: &EmbeddingVector, centroids: &[EmbeddingVector], beta: f64) -> Vec<f64> {
    let z: Vec<f64> = centroids.iter().map(|c| -query.dist_sq(c) / (2.0 * beta)).collect();
    softmax(&z)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn unit(v: &[f64]) -> EmbeddingVector {
        EmbeddingVector::normalized(v).unwrap()
    }

    fn random_units(n: usize, dim: usize, seed: u64) -> Vec<EmbeddingVector> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| unit(&(0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>()))
            .collect()
    }

    fn one_hot(dim: usize, i: usize) -> EmbeddingVector {
        let mut v = vec![0.0; dim];
        v[i] = 1.0;
        unit(&v)
    }

    #[test]
    fn sparse_softmax_examples() {
        let w = sparse_softmax(&[0.0; 3], 0.0).unwrap();
        for k in 0..3 {
            assert!((w.get(k) - 1.0 / 3.0).abs() < 1e-15);
        }
        // logits whose softmax is (0.5, 0.3, 0.2)
        let z = [0.5f64.ln(), 0.3f64.ln(), 0.2f64.ln()];
        let w = sparse_softmax(&z, 0.25).unwrap();
        assert_eq!(w.support(), vec![0, 1]);
        assert!((w.get(0) - 5.0 / 6.0).abs() < 1e-12);
        assert!((w.get(1) - 1.0 / 6.0).abs() < 1e-12);
        assert_eq!(sparse_softmax(&[3.7], 0.99).unwrap(), MergeWeights::one_hot(0));
    }

    #[test]
    fn tau_bound() {
        assert!(matches!(sparse_softmax(&[0.0; 4], 0.25), Err(Error::TauTooLarge { .. })));
        assert!(sparse_softmax(&[0.0; 4], 0.2499).is_ok());
        assert!(sparse_softmax(&[0.0; 4], -0.1).is_err());
    }

    #[test]
    fn small_beta_concentrates_on_matching_centroid() {
        let cents = random_units(6, 16, 1);
        let cfg = RoutingConfig {
            beta: 1e-3,
            tau: 0.0,
            ..RoutingConfig::default()
        };
        for (k, c) in cents.iter().enumerate() {
            let w = route(c, &cents, &cfg).unwrap();
            let p = softmax(&logits(c, &cents, 1e-3));
            assert!(p[k] > 1.0 - 1e-6);
            assert!(w.get(k) > 1.0 - 1e-6);
        }
    }

    #[test]
    fn huge_beta_is_uniform() {
        let cents = random_units(5, 16, 2);
        let q = random_units(1, 16, 3).pop().unwrap();
        let cfg = RoutingConfig {
            beta: 1e9,
            tau: 0.0,
            ..RoutingConfig::default()
        };
        let w = route(&q, &cents, &cfg).unwrap();
        for k in 0..5 {
            assert!((w.get(k) - 0.2).abs() < 1e-9);
        }
    }

    #[test]
    fn permutation_equivariance() {
        let cents = random_units(7, 16, 4);
        let q = random_units(1, 16, 5).pop().unwrap();
        let perm = [3, 0, 6, 1, 5, 2, 4];
        let permuted: Vec<_> = perm.iter().map(|&i| cents[i].clone()).collect();
        let cfg = RoutingConfig {
            beta: 0.1,
            ..RoutingConfig::default()
        };
        let a = route(&q, &cents, &cfg).unwrap();
        let b = route(&q, &permuted, &cfg).unwrap();
        for (j, &i) in perm.iter().enumerate() {
            assert!((b.get(j) - a.get(i)).abs() < 1e-12);
        }
    }

    #[test]
    fn batch_rows_equal_single_routes() {
        let cents = random_units(16, 32, 6);
        let mut qs = random_units(5, 32, 7);
        qs.push(qs[0].clone());
        let cfg = RoutingConfig::default();
        let batch = route_batch(&qs, &cents, &cfg).unwrap();
        for (q, row) in qs.iter().zip(&batch) {
            let single = route(q, &cents, &cfg).unwrap();
            assert_eq!(single.entries().len(), row.entries().len());
            for (a, b) in single.entries().iter().zip(row.entries()) {
                assert_eq!(a.0, b.0);
                assert!((a.1 - b.1).abs() <= 1e-12);
            }
        }
        assert_eq!(batch[0], batch[5]);
        assert_eq!(route_batch(&qs[..1], &cents, &cfg).unwrap()[0], route(&qs[0], &cents, &cfg).unwrap());
    }

    #[test]
    fn fixed_n_all_equals_unpruned_route() {
        let cents = random_units(6, 16, 8);
        let q = random_units(1, 16, 9).pop().unwrap();
        let a = route_fixed_n(&q, &cents, 6, 0.2).unwrap();
        let b = route(
            &q,
            &cents,
            &RoutingConfig {
                beta: 0.2,
                tau: 0.0,
                ..RoutingConfig::default()
            },
        )
        .unwrap();
        assert_eq!(a, b);
        let one = route_fixed_n(&q, &cents, 1, 0.2).unwrap();
        assert_eq!(one, MergeWeights::one_hot(rank_by_similarity(&q, &cents)[0]));
    }

    #[test]
    fn fixed_three_matches_brute_force() {
        let cents = random_units(6, 16, 10);
        let q = random_units(1, 16, 11).pop().unwrap();
        let beta = 0.07;
        let sims: Vec<f64> = cents.iter().map(|c| cosine(c, &q)).collect();
        // exhaustive scan over all 3-subsets for the largest total similarity
        let mut best = (f64::NEG_INFINITY, [0; 3]);
        for a in 0..6 {
            for b in a + 1..6 {
                for c in b + 1..6 {
                    let s = sims[a] + sims[b] + sims[c];
                    if s > best.0 {
                        best = (s, [a, b, c]);
                    }
                }
            }
        }
        let e: Vec<f64> = best.1.iter().map(|&i| (sims[i] / beta).exp()).collect();
        let sum: f64 = e.iter().sum();
        let w = route_fixed_n(&q, &cents, 3, beta).unwrap();
        assert_eq!(w.support(), best.1.to_vec());
        for (j, &i) in best.1.iter().enumerate() {
            assert!((w.get(i) - e[j] / sum).abs() < 1e-12);
        }
        assert!(route_fixed_n(&q, &cents, 7, beta).is_err());
        assert!(route_fixed_n(&q, &cents, 0, beta).is_err());
    }

    #[test]
    fn uniform_topn_support_matches_fixed_n() {
        let cents = random_units(9, 16, 12);
        let q = random_units(1, 16, 13).pop().unwrap();
        let w = weights_uniform_topn(&q, &cents, 4).unwrap();
        assert!(w.entries().iter().all(|e| e.1 == 0.25));
        assert_eq!(w.support(), route_fixed_n(&q, &cents, 4, 0.05).unwrap().support());
        assert_eq!(weights_uniform_topn(&q, &cents, 1).unwrap().n_active(), 1);
    }

    #[test]
    fn sift_single_candidate_and_normalization() {
        let cents = random_units(8, 16, 14);
        let q = random_units(1, 16, 15).pop().unwrap();
        let one = weights_sift(&q, &cents, &SiftConfig { lambda: 0.1, n_candidates: 1 }).unwrap();
        assert_eq!(one, MergeWeights::one_hot(rank_by_similarity(&q, &cents)[0]));
        let w = weights_sift(&q, &cents, &SiftConfig { lambda: 0.1, n_candidates: 5 }).unwrap();
        let s: f64 = w.entries().iter().map(|e| e.1).sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sift_variances_are_nonincreasing() {
        let cents = random_units(6, 8, 16);
        let q = random_units(1, 8, 17).pop().unwrap();
        let refs: Vec<&EmbeddingVector> = cents.iter().collect();
        let v = sift_variances(&q, &refs, 0.05);
        assert!(v.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        // single candidate: closed form 1 - k^2 / (1 + lambda)
        let k = cosine(&cents[0], &q);
        assert!((v[1] - (1.0 - k * k / (1.0 + 0.05))).abs() < 1e-6);
    }

    #[test]
    fn sift_duplicate_shares_weight() {
        let cents = random_units(6, 16, 18);
        let q = unit(
            &cents[0]
                .to_f64()
                .iter()
                .zip(cents[1].to_f64())
                .map(|(a, b)| a + 0.6 * b)
                .collect::<Vec<_>>(),
        );
        let cfg = SiftConfig { lambda: 1e-3, n_candidates: 3 };
        let dedup = weights_sift(&q, &cents, &cfg).unwrap();
        let mut dup = cents.clone();
        dup.push(cents[0].clone());
        let cfg_dup = SiftConfig { n_candidates: 4, ..cfg };
        let with = weights_sift(&q, &dup, &cfg_dup).unwrap();
        let pair = with.get(0) + with.get(6);
        assert!((pair - dedup.get(0)).abs() <= 0.05 * dedup.get(0), "{pair} vs {}", dedup.get(0));
    }

    #[test]
    fn sift_orthogonal_query_has_no_reduction() {
        let cents = vec![one_hot(8, 0), one_hot(8, 1)];
        let q = one_hot(8, 5);
        assert!(matches!(
            weights_sift(&q, &cents, &SiftConfig { lambda: 0.1, n_candidates: 2 }),
            Err(Error::NoUncertaintyReduction)
        ));
    }

    #[test]
    fn dawin_prefers_confident_expert() {
        let w = dawin_from_entropies(&[1.0, 1.0, 1.0], 0.1, 0.0).unwrap();
        assert!(w.entries().iter().all(|e| (e.1 - 1.0 / 3.0).abs() < 1e-12));
        let v = 8f64;
        let w = dawin_from_entropies(&[v.ln(), 0.0, v.ln() - 0.01], 0.05, 0.0).unwrap();
        assert!(w.get(1) > 0.99);
    }

    #[test]
    fn rbf_form_agrees_with_cosine_softmax() {
        let cents = random_units(12, 32, 19);
        for q in random_units(20, 32, 20) {
            for beta in [0.01, 0.1, 1.0] {
                let a = softmax(&logits(&q, &cents, beta));
                let b = rbf_weights(&q, &cents, beta);
                for (x, y) in a.iter().zip(&b) {
                    assert!((x - y).abs() <= 1e-6);
                }
            }
        }
    }

    #[test]
    fn argmax_is_nearest_centroid() {
        let cents = random_units(10, 16, 21);
        for q in random_units(30, 16, 22) {
            let w = route(&q, &cents, &RoutingConfig::default()).unwrap();
            assert_eq!(w.argmax(), rank_by_similarity(&q, &cents)[0]);
        }
    }

    #[test]
    fn merge_weights_validation() {
        assert!(MergeWeights::new(vec![]).is_err());
        assert!(MergeWeights::new(vec![(0, 0.5), (0, 0.5)]).is_err());
        assert!(MergeWeights::new(vec![(0, 0.6), (1, 0.3)]).is_err());
        let w = MergeWeights::new(vec![(3, 0.25), (1, 0.75)]).unwrap();
        assert_eq!(w.support(), vec![1, 3]);
        let s = serde_json::to_string(&w).unwrap();
        assert_eq!(serde_json::from_str::<MergeWeights>(&s).unwrap(), w);
    }

    proptest! {
        #[test]
        fn sparse_softmax_invariants(z in proptest::collection::vec(-10.0f64..10.0, 1..20), frac in 0.0f64..1.0) {
            let tau = frac / z.len() as f64;
            let w = sparse_softmax(&z, tau).unwrap();
            let p = softmax(&z);
            prop_assert!(w.n_active() >= 1);
            let s: f64 = w.entries().iter().map(|e| e.1).sum();
            prop_assert!((s - 1.0).abs() <= 1e-9);
            for (k, &pk) in p.iter().enumerate() {
                if w.get(k) == 0.0 {
                    prop_assert!(pk <= tau);
                }
            }
            prop_assert_eq!(w.argmax(), argmax(&p).unwrap());
        }

        #[test]
        fn raising_a_logit_never_lowers_its_weight(z in proptest::collection::vec(-5.0f64..5.0, 2..10), bump in 0.0f64..3.0, pick in 0usize..10) {
            let k = pick % z.len();
            let tau = 0.3 / z.len() as f64;
            let before = sparse_softmax(&z, tau).unwrap().get(k);
            let mut z2 = z.clone();
            z2[k] += bump;
            let after = sparse_softmax(&z2, tau).unwrap().get(k);
            prop_assert!(after >= before - 1e-12);
        }
    }
}
