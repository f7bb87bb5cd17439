//! Bisecting k-means over unit embeddings.
//!
//! Starting from a single cluster, the cluster with the largest diameter is
//! split with 2-means until `K` clusters exist. Cluster ids are assigned in
//! split order: the first half of a split keeps the parent's id and the second
//! half receives the next free id, so a run to `K` clusters is a prefix of the
//! run to any larger `K` with the same seed.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embed::EmbeddingVector;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    labels: Vec<usize>,
    k: usize,
}

impl ClusterAssignment {
    /// Validates that every label is in `[0, k)` and no cluster is empty.
    pub fn new(labels: Vec<usize>, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::ZeroClusters);
        }
        let mut sizes = vec![0usize; k];
        for (doc, &l) in labels.iter().enumerate() {
            if l >= k {
                return Err(Error::InvalidAssignment(format!(
                    "document {doc} has label {l} >= K = {k}"
                )));
            }
            sizes[l] += 1;
        }
        if let Some(empty) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::InvalidAssignment(format!("cluster {empty} is empty")));
        }
        Ok(Self { labels, k })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, doc: usize) -> usize {
        self.labels[doc]
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.k];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }

    pub fn members(&self, cluster: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == cluster)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn all_members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l].push(i);
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CentroidSet {
    pub centroids: Vec<EmbeddingVector>,
    pub sizes: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BisectConfig {
    /// Lloyd iterations per 2-means split.
    pub max_iter: usize,
    /// Clusters up to this size get an exact O(n^2) diameter; larger ones use
    /// twice the maximum distance to the cluster mean.
    pub exact_diameter_cap: usize,
    /// Extra seeded restarts when both farthest-pair inits leave a side empty.
    pub empty_side_retries: usize,
}

impl Default for BisectConfig {
    fn default() -> Self {
        Self {
            max_iter: 25,
            exact_diameter_cap: 512,
            empty_side_retries: 3,
        }
    }
}

pub fn bisecting_kmeans(
    embeddings: &[EmbeddingVector],
    k: usize,
    seed: u64,
) -> Result<ClusterAssignment> {
    bisecting_kmeans_with(embeddings, k, seed, &BisectConfig::default(), |_, _| {})
}

/// Bisecting k-means with an observer called after every split with the
/// current number of clusters and labels.
pub fn bisecting_kmeans_with(
    embeddings: &[EmbeddingVector],
    k: usize,
    seed: u64,
    cfg: &BisectConfig,
    mut on_split: impl FnMut(usize, &[usize]),
) -> Result<ClusterAssignment> {
    let n = embeddings.len();
    if k == 0 {
        return Err(Error::ZeroClusters);
    }
    if k > n {
        return Err(Error::TooManyClusters { k, n });
    }
    let points: Vec<Vec<f64>> = embeddings.iter().map(|e| e.to_f64()).collect();
    let mut labels = vec![0usize; n];
    let mut members: Vec<Vec<usize>> = vec![(0..n).collect()];
    let mut diameters = vec![selection_diameter(&points, &members[0], cfg)];
    on_split(1, &labels);

    while members.len() < k {
        let target = (0..members.len())
            .filter(|&c| members[c].len() >= 2)
            .fold(None, |best: Option<usize>, c| match best {
                Some(b) if diameters[b] >= diameters[c] => Some(b),
                _ => Some(c),
            })
            .expect("k <= n leaves a splittable cluster");
        let split_index = members.len() as u64 - 1;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ mix(split_index + 1));
        let (left, right) = two_means(&points, &members[target], cfg, &mut rng);
        let new_id = members.len();
        for &i in &right {
            labels[i] = new_id;
        }
        diameters[target] = selection_diameter(&points, &left, cfg);
        diameters.push(selection_diameter(&points, &right, cfg));
        members[target] = left;
        members.push(right);
        on_split(members.len(), &labels);
    }
    ClusterAssignment::new(labels, k)
}

fn mix(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn mean_of(points: &[Vec<f64>], idx: &[usize]) -> Vec<f64> {
    let dim = points[idx[0]].len();
    let mut m = vec![0.0; dim];
    for &i in idx {
        for (acc, v) in m.iter_mut().zip(&points[i]) {
            *acc += v;
        }
    }
    let n = idx.len() as f64;
    m.iter_mut().for_each(|v| *v /= n);
    m
}

fn sse(points: &[Vec<f64>], idx: &[usize]) -> f64 {
    if idx.is_empty() {
        return 0.0;
    }
    let m = mean_of(points, idx);
    idx.iter().map(|&i| dist_sq(&points[i], &m)).sum()
}

fn exact_diameter(points: &[Vec<f64>], idx: &[usize]) -> f64 {
    let mut best = 0.0f64;
    for (a, &i) in idx.iter().enumerate() {
        for &j in &idx[a + 1..] {
            best = best.max(dist_sq(&points[i], &points[j]));
        }
    }
    best.sqrt()
}

fn selection_diameter(points: &[Vec<f64>], idx: &[usize], cfg: &BisectConfig) -> f64 {
    if idx.len() < 2 {
        return 0.0;
    }
    if idx.len() <= cfg.exact_diameter_cap {
        exact_diameter(points, idx)
    } else {
        let m = mean_of(points, idx);
        let far = idx
            .iter()
            .map(|&i| dist_sq(&points[i], &m))
            .fold(0.0f64, f64::max);
        2.0 * far.sqrt()
    }
}

fn farthest_from(points: &[Vec<f64>], idx: &[usize], from: &[f64]) -> usize {
    let mut best = idx[0];
    let mut best_d = -1.0;
    for &i in idx {
        let d = dist_sq(&points[i], from);
        if d > best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// Lloyd iterations from two initial centers. Returns `None` if a side ends up empty.
fn lloyd(
    points: &[Vec<f64>],
    idx: &[usize],
    mut c0: Vec<f64>,
    mut c1: Vec<f64>,
    max_iter: usize,
) -> Option<(Vec<usize>, Vec<usize>)> {
    let mut side = vec![2u8; idx.len()];
    for _ in 0..max_iter.max(1) {
        let mut changed = false;
        for (s, &i) in side.iter_mut().zip(idx) {
            let new = u8::from(dist_sq(&points[i], &c1) < dist_sq(&points[i], &c0));
            if *s != new {
                *s = new;
                changed = true;
            }
        }
        let left: Vec<usize> = idx
            .iter()
            .zip(&side)
            .filter(|(_, &s)| s == 0)
            .map(|(&i, _)| i)
            .collect();
        let right: Vec<usize> = idx
            .iter()
            .zip(&side)
            .filter(|(_, &s)| s == 1)
            .map(|(&i, _)| i)
            .collect();
        if left.is_empty() || right.is_empty() {
            return None;
        }
        if !changed {
            return Some((left, right));
        }
        c0 = mean_of(points, &left);
        c1 = mean_of(points, &right);
    }
    let left: Vec<usize> = idx
        .iter()
        .zip(&side)
        .filter(|(_, &s)| s == 0)
        .map(|(&i, _)| i)
        .collect();
    let right: Vec<usize> = idx
        .iter()
        .zip(&side)
        .filter(|(_, &s)| s == 1)
        .map(|(&i, _)| i)
        .collect();
    (!left.is_empty() && !right.is_empty()).then_some((left, right))
}

fn two_means(
    points: &[Vec<f64>],
    idx: &[usize],
    cfg: &BisectConfig,
    rng: &mut ChaCha8Rng,
) -> (Vec<usize>, Vec<usize>) {
    let mut best: Option<(f64, Vec<usize>, Vec<usize>)> = None;
    let consider = |split: Option<(Vec<usize>, Vec<usize>)>,
                        best: &mut Option<(f64, Vec<usize>, Vec<usize>)>| {
        if let Some((l, r)) = split {
            let loss = sse(points, &l) + sse(points, &r);
            if best.as_ref().map_or(true, |(b, _, _)| loss < *b) {
                *best = Some((loss, l, r));
            }
        }
    };

    // two farthest-pair inits from distinct random starting members
    let mut starts: Vec<usize> = idx.to_vec();
    starts.shuffle(rng);
    for &start in starts.iter().take(2) {
        let a = farthest_from(points, idx, &points[start]);
        let b = farthest_from(points, idx, &points[a]);
        consider(
            lloyd(points, idx, points[a].clone(), points[b].clone(), cfg.max_iter),
            &mut best,
        );
    }
    for _ in 0..cfg.empty_side_retries {
        if best.is_some() {
            break;
        }
        let a = idx[rng.gen_range(0..idx.len())];
        let b = idx[rng.gen_range(0..idx.len())];
        consider(
            lloyd(points, idx, points[a].clone(), points[b].clone(), cfg.max_iter),
            &mut best,
        );
    }
    if let Some((_, l, r)) = best {
        return order_sides(l, r);
    }
    // fallback: peel off the member farthest from the mean
    let m = mean_of(points, idx);
    let far = farthest_from(points, idx, &m);
    let rest: Vec<usize> = idx.iter().copied().filter(|&i| i != far).collect();
    order_sides(rest, vec![far])
}

/// The side holding the smallest document index keeps the parent's id.
fn order_sides(l: Vec<usize>, r: Vec<usize>) -> (Vec<usize>, Vec<usize>) {
    if l.iter().min() <= r.iter().min() {
        (l, r)
    } else {
        (r, l)
    }
}

/// Sum of squared distances to the (unnormalized) cluster means.
pub fn kmeans_loss(embeddings: &[EmbeddingVector], assignment: &ClusterAssignment) -> f64 {
    let points: Vec<Vec<f64>> = embeddings.iter().map(|e| e.to_f64()).collect();
    assignment
        .all_members()
        .iter()
        .map(|m| sse(&points, m))
        .sum()
}

/// Renormalized cluster means.
pub fn compute_centroids(
    embeddings: &[EmbeddingVector],
    assignment: &ClusterAssignment,
) -> Result<CentroidSet> {
    if embeddings.len() != assignment.len() {
        return Err(Error::InvalidAssignment(format!(
            "{} embeddings but {} labels",
            embeddings.len(),
            assignment.len()
        )));
    }
    let mut centroids = Vec::with_capacity(assignment.k());
    let mut sizes = Vec::with_capacity(assignment.k());
    for (c, members) in assignment.all_members().into_iter().enumerate() {
        sizes.push(members.len());
        if members.len() == 1 {
            centroids.push(embeddings[members[0]].clone());
            continue;
        }
        let dim = embeddings[members[0]].dim();
        let mut sum = vec![0.0f64; dim];
        for &i in &members {
            for (acc, &v) in sum.iter_mut().zip(embeddings[i].as_slice()) {
                *acc += f64::from(v);
            }
        }
        let n = members.len() as f64;
        sum.iter_mut().for_each(|v| *v /= n);
        let norm = sum.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-12 {
            return Err(Error::DegenerateCentroid { cluster: c });
        }
        centroids.push(EmbeddingVector::normalized(&sum)?);
    }
    Ok(CentroidSet { centroids, sizes })
}

/// Exact maximum pairwise Euclidean distance within a cluster.
pub fn cluster_diameter(
    embeddings: &[EmbeddingVector],
    assignment: &ClusterAssignment,
    cluster: usize,
) -> f64 {
    let members = assignment.members(cluster);
    subset_diameter(embeddings, &members)
}

/// Exact diameter of an arbitrary subset of embeddings.
pub fn subset_diameter(embeddings: &[EmbeddingVector], members: &[usize]) -> f64 {
    let mut best = 0.0f64;
    for (a, &i) in members.iter().enumerate() {
        for &j in &members[a + 1..] {
            best = best.max(embeddings[i].dist_sq(&embeddings[j]));
        }
    }
    best.sqrt()
}

/// k-means loss for each requested K, from a single bisecting run.
pub fn elbow_curve(
    embeddings: &[EmbeddingVector],
    k_list: &[usize],
    seed: u64,
) -> Result<Vec<(usize, f64)>> {
    if k_list.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Config("K list must be sorted ascending".into()));
    }
    let Some(&k_max) = k_list.last() else {
        return Ok(Vec::new());
    };
    let mut snapshots: Vec<(usize, Vec<usize>)> = Vec::new();
    bisecting_kmeans_with(
        embeddings,
        k_max,
        seed,
        &BisectConfig::default(),
        |k, labels| {
            if k_list.contains(&k) {
                snapshots.push((k, labels.to_vec()));
            }
        },
    )?;
    k_list
        .iter()
        .map(|&k| {
            let labels = snapshots
                .iter()
                .find(|(kk, _)| *kk == k)
                .map(|(_, l)| l.clone())
                .ok_or(Error::ZeroClusters)?;
            let assignment = ClusterAssignment::new(labels, k)?;
            Ok((k, kmeans_loss(embeddings, &assignment)))
        })
        .collect()
}

/// Random unit vectors scattered around `center` with the given noise level.
#[doc(hidden)]
pub fn blob<R: Rng>(center: &[f64], n: usize, noise: f64, rng: &mut R) -> Vec<EmbeddingVector> {
    (0..n)
        .map(|_| {
            let v: Vec<f64> = center
                .iter()
                .map(|c| c + noise * (rng.gen::<f64>() - 0.5))
                .collect();
            EmbeddingVector::normalized(&v).expect("non-zero blob point")
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(v: &[f64]) -> EmbeddingVector {
        EmbeddingVector::normalized(v).unwrap()
    }

    fn random_units(n: usize, dim: usize, seed: u64) -> Vec<EmbeddingVector> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let v: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>() - 0.5).collect();
                unit(&v)
            })
            .collect()
    }

    /// Brute force: best 2-partition by k-means loss over all 2^(n-1) splits.
    fn best_two_partition(points: &[EmbeddingVector]) -> (f64, Vec<usize>) {
        let n = points.len();
        let mut best = (f64::INFINITY, vec![]);
        for mask in 1u32..(1 << (n - 1)) {
            let labels: Vec<usize> = (0..n).map(|i| ((mask >> i) & 1) as usize).collect();
            let a = ClusterAssignment::new(labels.clone(), 2).unwrap();
            let loss = kmeans_loss(points, &a);
            if loss < best.0 {
                best = (loss, labels);
            }
        }
        best
    }

    #[test]
    fn k_one_is_a_single_cluster() {
        let pts = random_units(7, 8, 1);
        let a = bisecting_kmeans(&pts, 1, 0).unwrap();
        assert!(a.labels().iter().all(|&l| l == 0));
    }

    #[test]
    fn k_equal_n_gives_singletons() {
        let pts = random_units(9, 8, 2);
        let a = bisecting_kmeans(&pts, 9, 5).unwrap();
        assert_eq!(a.sizes(), vec![1; 9]);
        assert_eq!(kmeans_loss(&pts, &a), 0.0);
    }

    #[test]
    fn k_equal_n_with_duplicates_still_fills_every_cluster() {
        let p = unit(&[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let pts = vec![p.clone(), p.clone(), p.clone(), p];
        let a = bisecting_kmeans(&pts, 4, 0).unwrap();
        assert_eq!(a.sizes(), vec![1; 4]);
    }

    #[test]
    fn rejects_bad_k() {
        let pts = random_units(3, 8, 3);
        assert!(matches!(
            bisecting_kmeans(&pts, 4, 0),
            Err(Error::TooManyClusters { k: 4, n: 3 })
        ));
        assert!(matches!(bisecting_kmeans(&pts, 0, 0), Err(Error::ZeroClusters)));
    }

    #[test]
    fn two_blobs_match_exhaustive_partition() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut e1 = vec![0.0; 8];
        e1[0] = 1.0;
        let mut e2 = vec![0.0; 8];
        e2[1] = 1.0;
        let mut pts = blob(&e1, 6, 0.2, &mut rng);
        pts.extend(blob(&e2, 6, 0.2, &mut rng));
        for i in 0..6 {
            for j in 0..6 {
                assert!(cosine_f(&pts[i], &pts[j]) >= 0.95);
                assert!(cosine_f(&pts[i], &pts[6 + j]) <= 0.1);
            }
        }
        let (_, oracle) = best_two_partition(&pts);
        let a = bisecting_kmeans(&pts, 2, 9).unwrap();
        let same = |x: &[usize], y: &[usize]| {
            (0..x.len()).all(|i| (0..x.len()).all(|j| (x[i] == x[j]) == (y[i] == y[j])))
        };
        assert!(same(a.labels(), &oracle));
        let blobs: Vec<usize> = (0..12).map(|i| i / 6).collect();
        assert!(same(a.labels(), &blobs));
    }

    fn cosine_f(a: &EmbeddingVector, b: &EmbeddingVector) -> f64 {
        crate::embed::cosine(a, b)
    }

    #[test]
    fn kmeans_loss_antipodal_pair() {
        let v = unit(&[1.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let pts = vec![v.clone(), v.neg()];
        let a = ClusterAssignment::new(vec![0, 0], 1).unwrap();
        // f32 storage leaves the norm within 1e-7 of one
        assert!((kmeans_loss(&pts, &a) - 2.0).abs() < 1e-6);
    }

    #[test]
    fn kmeans_loss_matches_definition() {
        let pts = random_units(10, 6, 4);
        let labels = vec![0, 1, 2, 0, 1, 2, 0, 1, 2, 0];
        let a = ClusterAssignment::new(labels.clone(), 3).unwrap();
        let mut oracle = 0.0;
        for c in 0..3 {
            let members: Vec<&EmbeddingVector> = pts
                .iter()
                .zip(&labels)
                .filter(|(_, &l)| l == c)
                .map(|(p, _)| p)
                .collect();
            let mut mean = vec![0.0; 6];
            for p in &members {
                for (m, &v) in mean.iter_mut().zip(p.as_slice()) {
                    *m += f64::from(v) / members.len() as f64;
                }
            }
            for p in &members {
                for (m, &v) in mean.iter().zip(p.as_slice()) {
                    oracle += (f64::from(v) - m).powi(2);
                }
            }
        }
        assert!((kmeans_loss(&pts, &a) - oracle).abs() < 1e-12);
    }

    #[test]
    fn centroids_of_singletons_and_pairs() {
        let e1 = unit(&[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let e2 = unit(&[0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let pts = vec![e1.clone(), e2.clone()];
        let single = compute_centroids(&pts, &ClusterAssignment::new(vec![0, 1], 2).unwrap())
            .unwrap();
        assert_eq!(single.centroids, pts);
        let pair =
            compute_centroids(&pts, &ClusterAssignment::new(vec![0, 0], 1).unwrap()).unwrap();
        let s = std::f32::consts::FRAC_1_SQRT_2;
        assert!((pair.centroids[0].as_slice()[0] - s).abs() < 1e-7);
        assert!((pair.centroids[0].as_slice()[1] - s).abs() < 1e-7);
        assert_eq!(pair.sizes, vec![2]);
    }

    #[test]
    fn centroids_are_unit_norm_and_sizes_sum() {
        let pts = random_units(40, 16, 7);
        let a = bisecting_kmeans(&pts, 5, 1).unwrap();
        let c = compute_centroids(&pts, &a).unwrap();
        for v in &c.centroids {
            assert!((v.norm() - 1.0).abs() <= 1e-6);
        }
        assert_eq!(c.sizes.iter().sum::<usize>(), 40);
    }

    #[test]
    fn antipodal_members_are_a_degenerate_centroid() {
        let v = unit(&[0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let w = unit(&[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let pts = vec![w, v.clone(), v.neg()];
        let a = ClusterAssignment::new(vec![0, 1, 1], 2).unwrap();
        assert!(matches!(
            compute_centroids(&pts, &a),
            Err(Error::DegenerateCentroid { cluster: 1 })
        ));
    }

    #[test]
    fn diameter_cases() {
        let v = unit(&[0.3, 0.4, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let pts = vec![v.clone(), v.neg()];
        let one = ClusterAssignment::new(vec![0, 0], 1).unwrap();
        assert!((cluster_diameter(&pts, &one, 0) - 2.0).abs() < 1e-6);
        let two = ClusterAssignment::new(vec![0, 1], 2).unwrap();
        assert_eq!(cluster_diameter(&pts, &two, 0), 0.0);

        let pts = random_units(8, 5, 8);
        let all = ClusterAssignment::new(vec![0; 8], 1).unwrap();
        let mut oracle = 0.0f64;
        for i in 0..8 {
            for j in 0..8 {
                let d: f64 = pts[i]
                    .as_slice()
                    .iter()
                    .zip(pts[j].as_slice())
                    .map(|(&a, &b)| (f64::from(a) - f64::from(b)).powi(2))
                    .sum();
                oracle = oracle.max(d.sqrt());
            }
        }
        assert!((cluster_diameter(&pts, &all, 0) - oracle).abs() < 1e-12);
    }

    #[test]
    fn elbow_is_monotone_and_anchored() {
        let pts = random_units(30, 8, 9);
        let single = elbow_curve(&pts, &[1], 0).unwrap();
        assert_eq!(single.len(), 1);
        let total = kmeans_loss(&pts, &ClusterAssignment::new(vec![0; 30], 1).unwrap());
        assert!((single[0].1 - total).abs() < 1e-12);

        let ends = elbow_curve(&pts, &[1, 30], 0).unwrap();
        assert_eq!(ends[1].1, 0.0);

        let ks: Vec<usize> = (1..=30).collect();
        let curve = elbow_curve(&pts, &ks, 3).unwrap();
        for w in curve.windows(2) {
            assert!(w[1].1 <= w[0].1 + 1e-12, "{:?}", w);
        }
        assert!(elbow_curve(&pts, &[3, 2], 0).is_err());
    }

    #[test]
    fn elbow_prefix_matches_direct_run() {
        let pts = random_units(25, 8, 10);
        let direct = bisecting_kmeans(&pts, 6, 4).unwrap();
        let curve = elbow_curve(&pts, &[6, 10], 4).unwrap();
        assert!((curve[0].1 - kmeans_loss(&pts, &direct)).abs() < 1e-12);
    }

    #[test]
    fn deterministic_for_seed() {
        let pts = random_units(50, 8, 12);
        assert_eq!(
            bisecting_kmeans(&pts, 7, 42).unwrap(),
            bisecting_kmeans(&pts, 7, 42).unwrap()
        );
    }

    #[test]
    fn large_clusters_use_surrogate_diameter() {
        let pts = random_units(20, 4, 13);
        let cfg = BisectConfig {
            exact_diameter_cap: 4,
            ..BisectConfig::default()
        };
        let a = bisecting_kmeans_with(&pts, 5, 0, &cfg, |_, _| {}).unwrap();
        assert_eq!(a.k(), 5);
        assert!(a.sizes().iter().all(|&s| s >= 1));
    }
}
