//! Combining experts in parameter space and in prediction space.
//!
//! For every adapted matrix the merge is one contraction over the stacked
//! factors of all active experts:
//!
//! ```text
//! dW = [w_1 s_1 B_1 | ... | w_n s_n B_n] . [A_1; ...; A_n]      s_k = alpha_k / r_k
//! ```
//!
//! so mixed ranks need no special casing.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, MatrixF64};
use crate::lm::{BaseParams, Lm, LoraAdapter, SequenceModel, TokenId, Vocab};
use crate::router::MergeWeights;

/// Lookup of adapters by expert id.
pub trait AdapterSet {
    fn adapter(&self, id: usize) -> Option<&LoraAdapter>;
}

impl AdapterSet for [LoraAdapter] {
    fn adapter(&self, id: usize) -> Option<&LoraAdapter> {
        self.get(id)
    }
}

impl AdapterSet for Vec<LoraAdapter> {
    fn adapter(&self, id: usize) -> Option<&LoraAdapter> {
        self.get(id)
    }
}

impl AdapterSet for BTreeMap<usize, LoraAdapter> {
    fn adapter(&self, id: usize) -> Option<&LoraAdapter> {
        self.get(&id)
    }
}

impl AdapterSet for HashMap<usize, LoraAdapter> {
    fn adapter(&self, id: usize) -> Option<&LoraAdapter> {
        self.get(&id)
    }
}

/// Dense per-matrix deltas of a merged expert.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MergedAdapter {
    pub deltas: Vec<(String, Matrix)>,
    pub weights: MergeWeights,
}

impl MergedAdapter {
    pub fn delta(&self, name: &str) -> Option<&Matrix> {
        self.deltas.iter().find(|d| d.0 == name).map(|d| &d.1)
    }

    pub fn is_finite(&self) -> bool {
        self.deltas.iter().all(|d| d.1.is_finite())
    }

    /// Single-evaluation inference model for the merged parameters.
    pub fn model<'a>(&self, base: &'a BaseParams) -> Result<Lm<'a>> {
        Lm::with_deltas(base, &self.deltas)
    }
}

/// Merges the weighted experts into one dense delta per adapted matrix.
pub fn merge_adapters<S: AdapterSet + ?Sized>(weights: &MergeWeights, adapters: &S) -> Result<MergedAdapter> {
    let active = weights
        .entries()
        .iter()
        .map(|&(id, w)| adapters.adapter(id).map(|a| (w, a)).ok_or(Error::MissingAdapter(id)))
        .collect::<Result<Vec<_>>>()?;
    let (_, first) = active[0];
    let mut deltas = Vec::with_capacity(first.factors.len());
    for f0 in &first.factors {
        let (d_out, d_in) = (f0.d_out(), f0.d_in());
        let mut parts = Vec::with_capacity(active.len());
        for &(w, a) in &active {
            let f = a.factor(&f0.name).ok_or_else(|| Error::ShapeMismatch {
                name: f0.name.clone(),
                detail: "matrix missing from one of the merged adapters".into(),
            })?;
            f.validate()?;
            if (f.d_out(), f.d_in()) != (d_out, d_in) {
                return Err(Error::ShapeMismatch {
                    name: f0.name.clone(),
                    detail: format!("{}x{} vs {}x{}", f.d_out(), f.d_in(), d_out, d_in),
                });
            }
            parts.push((w * f.scale(), f));
        }
        let total_rank: usize = parts.iter().map(|p| p.1.rank()).sum();
        let mut b_cat = MatrixF64::zeros(d_out, total_rank);
        let mut a_cat = MatrixF64::zeros(total_rank, d_in);
        let mut off = 0;
        for (scale, f) in parts {
            let r = f.rank();
            for i in 0..d_out {
                for j in 0..r {
                    b_cat.data[i * total_rank + off + j] = scale * f64::from(f.b.get(i, j));
                }
            }
            for j in 0..r {
                for (dst, &src) in a_cat.data[(off + j) * d_in..(off + j + 1) * d_in]
                    .iter_mut()
                    .zip(f.a.row(j))
                {
                    *dst = f64::from(src);
                }
            }
            off += r;
        }
        deltas.push((f0.name.clone(), b_cat.matmul(&a_cat).to_f32()));
    }
    if active.iter().any(|(_, a)| a.factors.len() != first.factors.len()) {
        return Err(Error::ShapeMismatch {
            name: "adapter".into(),
            detail: "merged adapters target different matrix sets".into(),
        });
    }
    Ok(MergedAdapter {
        deltas,
        weights: weights.clone(),
    })
}

/// A copy of `base` with every merged delta added to its matrix.
pub fn apply_merged(base: &BaseParams, merged: &MergedAdapter) -> Result<BaseParams> {
    let mut out = base.clone();
    for (name, delta) in &merged.deltas {
        let w = out.matrix_mut(name).ok_or_else(|| Error::ShapeMismatch {
            name: name.clone(),
            detail: "no such matrix in base model".into(),
        })?;
        if w.shape() != delta.shape() {
            return Err(Error::ShapeMismatch {
                name: name.clone(),
                detail: format!("delta is {:?}, base is {:?}", delta.shape(), w.shape()),
            });
        }
        for (x, &d) in w.data.iter_mut().zip(&delta.data) {
            *x = (f64::from(*x) + f64::from(d)) as f32;
        }
    }
    Ok(out)
}

/// Prediction-space mixture `sum_k w_k p_k`. Every call evaluates each
/// member once per token.
#[derive(Debug)]
pub struct Ensemble<M> {
    members: Vec<(f64, M)>,
}

impl<M: SequenceModel> Ensemble<M> {
    pub fn new(members: Vec<(f64, M)>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::Config("ensemble needs at least one member".into()));
        }
        Ok(Self { members })
    }

    pub fn members(&self) -> &[(f64, M)] {
        &self.members
    }
}

impl<M: SequenceModel> SequenceModel for Ensemble<M> {
    fn vocab(&self) -> &Vocab {
        self.members[0].1.vocab()
    }

    fn distributions(&self, tokens: &[TokenId]) -> Vec<Vec<f64>> {
        let mut acc: Option<Vec<Vec<f64>>> = None;
        for (w, m) in &self.members {
            let d = m.distributions(tokens);
            match &mut acc {
                None => {
                    acc = Some(
                        d.into_iter()
                            .map(|row| row.into_iter().map(|p| w * p).collect())
                            .collect(),
                    )
                }
                Some(acc) => {
                    for (arow, drow) in acc.iter_mut().zip(d) {
                        for (a, p) in arow.iter_mut().zip(drow) {
                            *a += w * p;
                        }
                    }
                }
            }
        }
        acc.expect("non-empty ensemble")
    }
}

/// Builds the ensemble of active experts for `weights`.
pub fn ensemble<'a, S: AdapterSet + ?Sized>(weights: &MergeWeights, adapters: &S, base: &'a BaseParams) -> Result<Ensemble<Lm<'a>>> {
    let members = weights
        .entries()
        .iter()
        .map(|&(id, w)| {
            let a = adapters.adapter(id).ok_or(Error::MissingAdapter(id))?;
            Ok((w, Lm::new(base, Some(a))?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ensemble::new(members)
}

/// Weighted mixture of the active experts' next-token distributions.
pub fn ensemble_forward<S: AdapterSet + ?Sized>(weights: &MergeWeights, adapters: &S, base: &BaseParams, prefix: &str) -> Result<Vec<f64>> {
    let tokens = base.vocab.encode_prompt(prefix)?;
    Ok(ensemble(weights, adapters, base)?.next_token(&tokens))
}
