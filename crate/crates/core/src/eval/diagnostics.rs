use rayon::prelude::*;

use crate::cluster::ClusterAssignment;
use crate::embed::EmbeddingVector;
use crate::error::{Error, Result};
use crate::lm::{perplexity, BaseParams, LoraAdapter};
use crate::router::rank_by_similarity;

/// Entry `(k, j)` is the perplexity of expert `k` on the holdout documents of
/// cluster `j`.
pub fn expert_cluster_matrix<S: AsRef<str> + Sync>(
    base: &BaseParams,
    adapters: &[LoraAdapter],
    holdout: &[Vec<S>],
    eval_prefix_len: usize,
) -> Result<Vec<Vec<f64>>> {
    if adapters.len() != holdout.len() {
        return Err(Error::Config(format!(
            "{} experts but {} holdout clusters",
            adapters.len(),
            holdout.len()
        )));
    }
    adapters
        .par_iter()
        .map(|a| {
            holdout
                .iter()
                .map(|docs| perplexity(base, Some(a), docs, eval_prefix_len))
                .collect()
        })
        .collect()
}

/// Fraction of rows whose diagonal entry is the row minimum (ties count).
pub fn diagonal_row_min_fraction(matrix: &[Vec<f64>]) -> f64 {
    if matrix.is_empty() {
        return 0.0;
    }
    let hits = matrix
        .iter()
        .enumerate()
        .filter(|(k, row)| row.iter().all(|&v| row[*k] <= v))
        .count();
    hits as f64 / matrix.len() as f64
}

/// For each `n`, the fraction of samples whose source cluster is among the
/// `n` centroids most similar to the sample.
pub fn pass_at_n(centroids: &[EmbeddingVector], samples: &[(EmbeddingVector, usize)], n_list: &[usize]) -> Result<Vec<(usize, f64)>> {
    let k = centroids.len();
    if let Some(&n) = n_list.iter().find(|&&n| n == 0 || n > k) {
        return Err(Error::ExpertCountOutOfRange { n, k });
    }
    let ranks: Vec<usize> = samples
        .iter()
        .map(|(e, c)| {
            rank_by_similarity(e, centroids)
                .iter()
                .position(|id| id == c)
                .ok_or(Error::InvalidAssignment(format!("sample cluster {c} not among {k} centroids")))
        })
        .collect::<Result<_>>()?;
    Ok(n_list
        .iter()
        .map(|&n| {
            let hit = ranks.iter().filter(|&&r| r < n).count();
            let frac = if ranks.is_empty() { 1.0 } else { hit as f64 / ranks.len() as f64 };
            (n, frac)
        })
        .collect())
}

fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Cluster chosen by distance to the (unnormalized) cluster mean and cluster
/// chosen by summed distance to every member. Lower id wins ties.
pub fn centroid_vs_sum_selection(query: &[f64], points: &[Vec<f64>], assignment: &ClusterAssignment) -> (usize, usize) {
    let mut by_centroid = (f64::INFINITY, 0);
    let mut by_sum = (f64::INFINITY, 0);
    for (c, members) in assignment.all_members().into_iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        let dim = query.len();
        let mut mean = vec![0.0; dim];
        for &i in &members {
            mean.iter_mut().zip(&points[i]).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= members.len() as f64);
        let dc = dist_sq(query, &mean);
        let ds: f64 = members.iter().map(|&i| dist_sq(query, &points[i])).sum();
        if dc < by_centroid.0 {
            by_centroid = (dc, c);
        }
        if ds < by_sum.0 {
            by_sum = (ds, c);
        }
    }
    (by_centroid.1, by_sum.1)
}

/// Fraction of queries for which both selection criteria agree.
pub fn selection_agreement(queries: &[EmbeddingVector], embeddings: &[EmbeddingVector], assignment: &ClusterAssignment) -> f64 {
    if queries.is_empty() {
        return 1.0;
    }
    let points: Vec<Vec<f64>> = embeddings.iter().map(EmbeddingVector::to_f64).collect();
    let agree = queries
        .iter()
        .filter(|q| {
            let (a, b) = centroid_vs_sum_selection(&q.to_f64(), &points, assignment);
            a == b
        })
        .count();
    agree as f64 / queries.len() as f64
}
