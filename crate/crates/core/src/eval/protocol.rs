use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cluster::ClusterAssignment;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalProtocol {
    /// Leading characters of a test document used as the routing query.
    pub query_prefix_len: usize,
    /// Leading characters excluded from scoring.
    pub eval_prefix_len: usize,
    /// Per-cluster fraction held out for tuning and diagnostics.
    pub holdout_fraction: f64,
    pub seed: u64,
}

impl Default for EvalProtocol {
    fn default() -> Self {
        Self {
            query_prefix_len: 50,
            eval_prefix_len: 50,
            holdout_fraction: 0.1,
            seed: 7,
        }
    }
}

impl EvalProtocol {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(Error::Config("holdout_fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }

    /// Routing query of a document: its first `query_prefix_len` characters.
    pub fn query<'a>(&self, doc: &'a str) -> &'a str {
        match doc.char_indices().nth(self.query_prefix_len) {
            Some((i, _)) => &doc[..i],
            None => doc,
        }
    }
}

/// Document indices split per cluster.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    /// Holdout documents of each cluster.
    pub holdout: Vec<Vec<usize>>,
    /// Exactly one test document per cluster, indexed by cluster.
    pub test: Vec<usize>,
}

impl Split {
    /// Training documents of one cluster.
    pub fn train_of(&self, assignment: &ClusterAssignment, cluster: usize) -> Vec<usize> {
        self.train.iter().copied().filter(|&d| assignment.label(d) == cluster).collect()
    }
}

/// Seeded per-cluster split: one test document, `max(1, round(f * size))`
/// holdout documents when `f > 0`, the rest for training. Every cluster must
/// keep at least one training document.
pub fn split_holdout(assignment: &ClusterAssignment, protocol: &EvalProtocol) -> Result<Split> {
    protocol.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(protocol.seed);
    let mut train = Vec::new();
    let mut holdout = Vec::with_capacity(assignment.k());
    let mut test = Vec::with_capacity(assignment.k());
    for (c, mut members) in assignment.all_members().into_iter().enumerate() {
        let size = members.len();
        let n_hold = if protocol.holdout_fraction > 0.0 {
            ((protocol.holdout_fraction * size as f64).round() as usize).max(1)
        } else {
            0
        };
        if size < 2 + n_hold {
            return Err(Error::ClusterTooSmall { cluster: c, size });
        }
        members.shuffle(&mut rng);
        test.push(members[0]);
        let mut h = members[1..1 + n_hold].to_vec();
        h.sort_unstable();
        holdout.push(h);
        train.extend_from_slice(&members[1 + n_hold..]);
    }
    train.sort_unstable();
    Ok(Split { train, holdout, test })
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use super::*;

    fn assignment() -> ClusterAssignment {
        ClusterAssignment::new((0..40).map(|i| i % 4).collect(), 4).unwrap()
    }

    #[test]
    fn partition_and_sizes() {
        let p = EvalProtocol::default();
        let s = split_holdout(&assignment(), &p).unwrap();
        assert_eq!(s.test.len(), 4);
        let mut all: Vec<usize> = s.train.iter().chain(&s.test).copied().collect();
        for h in &s.holdout {
            assert_eq!(h.len(), 1);
            all.extend(h);
        }
        let set: HashSet<usize> = all.iter().copied().collect();
        assert_eq!(set.len(), 40);
        assert_eq!(all.len(), 40);
        for (c, &t) in s.test.iter().enumerate() {
            assert_eq!(t % 4, c);
        }
    }

    #[test]
    fn zero_holdout_still_has_one_test_doc_per_cluster() {
        let p = EvalProtocol { holdout_fraction: 0.0, ..EvalProtocol::default() };
        let s = split_holdout(&assignment(), &p).unwrap();
        assert_eq!(s.test.len(), 4);
        assert!(s.holdout.iter().all(|h| h.is_empty()));
        assert_eq!(s.train.len(), 36);
    }

    #[test]
    fn seeded() {
        let p = EvalProtocol::default();
        assert_eq!(split_holdout(&assignment(), &p).unwrap(), split_holdout(&assignment(), &p).unwrap());
    }

    #[test]
    fn tiny_cluster_is_named() {
        let a = ClusterAssignment::new(vec![0, 0, 0, 1, 1], 2).unwrap();
        let p = EvalProtocol { holdout_fraction: 0.3, ..EvalProtocol::default() };
        assert!(matches!(split_holdout(&a, &p), Err(Error::ClusterTooSmall { cluster: 1, size: 2 })));
    }

    #[test]
    fn query_prefix_is_char_based() {
        let p = EvalProtocol { query_prefix_len: 3, ..EvalProtocol::default() };
        assert_eq!(p.query("héllo"), "hél");
        assert_eq!(p.query("hi"), "hi");
    }
}
