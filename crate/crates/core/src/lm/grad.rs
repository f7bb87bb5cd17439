//! Reverse-mode gradients of the token-mean negative log-likelihood.
//!
//! The backward pass produces gradients for the effective (adapted) weights;
//! adapter gradients follow from `W_eff = W + s B A` as `dB = s dW A^T` and
//! `dA = s B^T dW`.

use super::lora::LoraAdapter;
use super::model::{BaseParams, Compiled, Trace, OUT_PROJ};
use super::vocab::TokenId;
use crate::error::{Error, Result};
use crate::linalg::MatrixF64;

/// Gradients for every base parameter (weights and biases).
#[derive(Clone, Debug)]
pub struct FullGrad {
    pub embed: MatrixF64,
    pub blocks: Vec<(MatrixF64, Vec<f64>)>,
    pub out: (MatrixF64, Vec<f64>),
}

impl FullGrad {
    pub(crate) fn zeros(c: &Compiled) -> Self {
        Self {
            embed: MatrixF64::zeros(c.embed.rows, c.embed.cols),
            blocks: c
                .blocks
                .iter()
                .map(|(w, b)| (MatrixF64::zeros(w.rows, w.cols), vec![0.0; b.len()]))
                .collect(),
            out: (
                MatrixF64::zeros(c.out.0.rows, c.out.0.cols),
                vec![0.0; c.out.1.len()],
            ),
        }
    }

    fn weight(&self, name: &str) -> Option<&MatrixF64> {
        if name == OUT_PROJ {
            return Some(&self.out.0);
        }
        let i: usize = name.strip_prefix("block.")?.parse().ok()?;
        self.blocks.get(i).map(|b| &b.0)
    }
}

/// Gradients for each factor pair of an adapter, in adapter order.
#[derive(Clone, Debug)]
pub struct AdapterGrad {
    /// `(dA, dB)` per factor.
    pub factors: Vec<(MatrixF64, MatrixF64)>,
}

impl AdapterGrad {
    /// Same layout as [`LoraAdapter::flatten`].
    pub fn flatten(&self) -> Vec<f64> {
        self.factors
            .iter()
            .flat_map(|(a, b)| a.data.iter().chain(&b.data).copied())
            .collect()
    }

    pub fn from_weight_grads(adapter: &LoraAdapter, g: &FullGrad) -> Self {
        let factors = adapter
            .factors
            .iter()
            .map(|f| {
                let dw = g
                    .weight(&f.name)
                    .expect("adapter validated against base on compile");
                let s = f.scale();
                let a = f.a.to_f64();
                let b = f.b.to_f64();
                let mut da = b.transpose().matmul(dw);
                let mut db = dw.matmul(&a.transpose());
                da.data.iter_mut().for_each(|v| *v *= s);
                db.data.iter_mut().for_each(|v| *v *= s);
                (da, db)
            })
            .collect();
        Self { factors }
    }
}

/// Accumulates into `g` the gradient of `sum_t <dlogits_t, logits_t>` where
/// `dlogits(t, probs_t)` supplies the upstream gradient at position `t`.
pub(crate) fn backprop<F>(c: &Compiled, tokens: &[TokenId], trace: &Trace, mut dlogits: F, g: &mut FullGrad)
where
    F: FnMut(usize, &[f64]) -> Option<Vec<f64>>,
{
    let n = trace.probs.len();
    let h = c.hidden();
    let mut ds = vec![vec![0.0; h]; n];
    for t in 0..n {
        let Some(dl) = dlogits(t, &trace.probs[t]) else {
            continue;
        };
        let acts = &trace.acts[t];
        let top: &[f64] = acts.last().map_or(&trace.inputs[t], |a| a.as_slice());
        g.out.0.add_outer(&dl, top, 1.0);
        for (gb, d) in g.out.1.iter_mut().zip(&dl) {
            *gb += d;
        }
        let mut da = vec![0.0; h];
        c.out.0.matvec_t_add(&dl, &mut da);
        for b in (0..c.blocks.len()).rev() {
            let y = &acts[b];
            let dz: Vec<f64> = da.iter().zip(y).map(|(d, y)| d * (1.0 - y * y)).collect();
            let x: &[f64] = if b == 0 { &trace.inputs[t] } else { &acts[b - 1] };
            g.blocks[b].0.add_outer(&dz, x, 1.0);
            for (gb, d) in g.blocks[b].1.iter_mut().zip(&dz) {
                *gb += d;
            }
            let mut dx = vec![0.0; c.blocks[b].0.cols];
            c.blocks[b].0.matvec_t_add(&dz, &mut dx);
            da = dx;
        }
        ds[t] = da;
    }
    // s_t = E[x_t] + decay * s_{t-1}  =>  r_t = ds_t + decay * r_{t+1}
    let mut r = vec![0.0; h];
    for t in (0..n).rev() {
        for (ri, d) in r.iter_mut().zip(&ds[t]) {
            *ri = d + c.decay * *ri;
        }
        let row = tokens[t] as usize;
        for (e, ri) in g.embed.data[row * h..(row + 1) * h].iter_mut().zip(&r) {
            *e += ri;
        }
    }
}

fn nll_grad_into<T: AsRef<[TokenId]>>(c: &Compiled, batch: &[T], g: &mut FullGrad) -> Result<f64> {
    let count: usize = batch
        .iter()
        .map(|s| s.as_ref().len().saturating_sub(1))
        .sum();
    if count == 0 {
        return Err(Error::EmptySequence);
    }
    let w = 1.0 / count as f64;
    let mut nll = 0.0;
    for seq in batch {
        let seq = seq.as_ref();
        if seq.len() < 2 {
            continue;
        }
        let inputs = &seq[..seq.len() - 1];
        let trace = c.trace(inputs);
        backprop(
            c,
            inputs,
            &trace,
            |t, p| {
                let y = seq[t + 1] as usize;
                nll -= p[y].ln();
                let mut d: Vec<f64> = p.iter().map(|v| v * w).collect();
                d[y] -= w;
                Some(d)
            },
            g,
        );
    }
    Ok(nll * w)
}

/// Token-mean NLL of `batch` and its gradient with respect to the adapter
/// factors only; the base stays frozen.
pub fn nll_and_grad<T: AsRef<[TokenId]>>(
    base: &BaseParams,
    adapter: &LoraAdapter,
    batch: &[T],
) -> Result<(f64, AdapterGrad)> {
    let c = Compiled::new(base, Some(adapter))?;
    let mut g = FullGrad::zeros(&c);
    let nll = nll_grad_into(&c, batch, &mut g)?;
    Ok((nll, AdapterGrad::from_weight_grads(adapter, &g)))
}

/// Token-mean NLL and the gradient for every base parameter.
pub fn nll_and_full_grad<T: AsRef<[TokenId]>>(base: &BaseParams, batch: &[T]) -> Result<(f64, FullGrad)> {
    let c = Compiled::new(base, None)?;
    let mut g = FullGrad::zeros(&c);
    let nll = nll_grad_into(&c, batch, &mut g)?;
    Ok((nll, g))
}

/// Token-mean NLL with adapter parameters taken from a flat `f64` vector in
/// [`LoraAdapter::flatten`] order (no `f32` rounding). Used as a
/// finite-difference oracle.
pub fn nll_at<T: AsRef<[TokenId]>>(base: &BaseParams, adapter: &LoraAdapter, theta: &[f64], batch: &[T]) -> Result<f64> {
    let c = Compiled::with_theta(base, adapter, theta)?;
    let mut g = FullGrad::zeros(&c);
    nll_grad_into(&c, batch, &mut g)
}

/// Gradient of the token-mean NLL at flat `f64` adapter parameters.
pub fn grad_at<T: AsRef<[TokenId]>>(base: &BaseParams, adapter: &LoraAdapter, theta: &[f64], batch: &[T]) -> Result<(f64, Vec<f64>)> {
    let c = Compiled::with_theta(base, adapter, theta)?;
    let mut g = FullGrad::zeros(&c);
    let nll = nll_grad_into(&c, batch, &mut g)?;
    Ok((nll, adapter_grad_flat(adapter, theta, &g)))
}

/// Next-token distribution after `prefix` at flat `f64` adapter parameters.
pub fn next_token_at(base: &BaseParams, adapter: &LoraAdapter, theta: &[f64], prefix: &[TokenId]) -> Result<Vec<f64>> {
    let c = Compiled::with_theta(base, adapter, theta)?;
    c.distributions(prefix).pop().ok_or(Error::EmptySequence)
}

fn adapter_grad_flat(adapter: &LoraAdapter, theta: &[f64], g: &FullGrad) -> Vec<f64> {
    let mut out = Vec::with_capacity(theta.len());
    let mut off = 0;
    for f in &adapter.factors {
        let (r, d_in, d_out) = (f.rank(), f.d_in(), f.d_out());
        let a = MatrixF64 {
            rows: r,
            cols: d_in,
            data: theta[off..off + r * d_in].to_vec(),
        };
        off += r * d_in;
        let b = MatrixF64 {
            rows: d_out,
            cols: r,
            data: theta[off..off + d_out * r].to_vec(),
        };
        off += d_out * r;
        let dw = g.weight(&f.name).expect("adapter validated against base on compile");
        let s = f.scale();
        out.extend(b.transpose().matmul(dw).data.iter().map(|v| v * s));
        out.extend(dw.matmul(&a.transpose()).data.iter().map(|v| v * s));
    }
    out
}

/// Jacobian of the next-token distribution after `prefix` with respect to
/// the adapter parameters `theta`; row `y` is `d p_y / d theta` in
/// [`LoraAdapter::flatten`] order.
pub fn next_token_jacobian(base: &BaseParams, adapter: &LoraAdapter, theta: &[f64], prefix: &[TokenId]) -> Result<Vec<Vec<f64>>> {
    if prefix.is_empty() {
        return Err(Error::EmptySequence);
    }
    let c = Compiled::with_theta(base, adapter, theta)?;
    let trace = c.trace(prefix);
    let last = prefix.len() - 1;
    let v = c.vocab_size();
    let mut rows = Vec::with_capacity(v);
    for y in 0..v {
        let mut g = FullGrad::zeros(&c);
        backprop(
            &c,
            prefix,
            &trace,
            |t, p| {
                (t == last).then(|| {
                    // d p_y / d logit_j = p_y (delta_yj - p_j)
                    let mut d: Vec<f64> = p.iter().map(|pj| -p[y] * pj).collect();
                    d[y] += p[y];
                    d
                })
            },
            &mut g,
        );
        rows.push(adapter_grad_flat(adapter, theta, &g));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::linalg::Matrix;
    use crate::lm::infer::mean_nll;
    use crate::lm::lora::LoraConfig;
    use crate::lm::model::ModelConfig;
    use crate::lm::vocab::Vocab;

    fn tiny() -> (BaseParams, LoraAdapter, Vec<Vec<TokenId>>) {
        let vocab = Vocab::new("abc".chars());
        let base = BaseParams::init(
            vocab.clone(),
            &ModelConfig {
                hidden: 4,
                n_blocks: 2,
                context_decay: 0.5,
                init_seed: 3,
            },
        );
        let cfg = LoraConfig {
            rank: 2,
            alpha: 2.0,
            targets: vec![],
            init_std: 0.5,
        };
        let mut adapter = LoraAdapter::init(&base, &cfg, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for f in &mut adapter.factors {
            f.b = Matrix::gaussian(f.b.rows, f.b.cols, 0.5, &mut rng);
        }
        let batch = ["abcab", "cc", "bacca"]
            .iter()
            .map(|s| vocab.encode_document(s).unwrap())
            .collect();
        (base, adapter, batch)
    }

    #[test]
    fn base_weight_gradients_match_finite_differences() {
        let (base, _, batch) = tiny();
        let (_, g) = nll_and_full_grad(&base, &batch).unwrap();
        let eps = 1e-3f32;
        let loss = |b: &BaseParams| mean_nll(b, None, &batch).unwrap();
        let check = |analytic: f64, plus: BaseParams, minus: BaseParams| {
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * f64::from(eps));
            assert!(
                (analytic - fd).abs() <= 1e-3 * (1.0 + fd.abs()),
                "analytic {analytic} vs fd {fd}"
            );
        };
        for i in [0, 5, 9, 17] {
            let (mut p, mut m) = (base.clone(), base.clone());
            p.embed.data[i] += eps;
            m.embed.data[i] -= eps;
            check(g.embed.data[i], p, m);
        }
        for i in [0, 7, 15] {
            let (mut p, mut m) = (base.clone(), base.clone());
            p.blocks[0].weight.data[i] += eps;
            m.blocks[0].weight.data[i] -= eps;
            check(g.blocks[0].0.data[i], p, m);
        }
        for i in [1, 3] {
            let (mut p, mut m) = (base.clone(), base.clone());
            p.blocks[1].bias[i] += eps;
            m.blocks[1].bias[i] -= eps;
            check(g.blocks[1].1[i], p, m);
        }
        for i in [0, 4] {
            let (mut p, mut m) = (base.clone(), base.clone());
            p.out_proj.bias[i] += eps;
            m.out_proj.bias[i] -= eps;
            check(g.out.1[i], p, m);
        }
    }

    #[test]
    fn adapter_gradients_match_finite_differences() {
        let (base, adapter, batch) = tiny();
        let theta = adapter.flatten();
        let (_, g) = grad_at(&base, &adapter, &theta, &batch).unwrap();
        let (_, g32) = nll_and_grad(&base, &adapter, &batch).unwrap();
        for (a, b) in g.iter().zip(g32.flatten()) {
            assert!((a - b).abs() < 1e-12);
        }
        let eps = 1e-5;
        for j in 0..theta.len() {
            let mut p = theta.clone();
            let mut m = theta.clone();
            p[j] += eps;
            m[j] -= eps;
            let fd = (nll_at(&base, &adapter, &p, &batch).unwrap()
                - nll_at(&base, &adapter, &m, &batch).unwrap())
                / (2.0 * eps);
            assert!((g[j] - fd).abs() <= 1e-6 * (1e-3 + fd.abs().max(g[j].abs())), "j={j}: {} vs {fd}", g[j]);
        }
    }

    #[test]
    fn repeated_batch_keeps_mean_and_gradient() {
        let (base, adapter, batch) = tiny();
        let doubled: Vec<_> = batch.iter().chain(&batch).cloned().collect();
        let (l1, g1) = nll_and_grad(&base, &adapter, &batch).unwrap();
        let (l2, g2) = nll_and_grad(&base, &adapter, &doubled).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
        for (a, b) in g1.flatten().iter().zip(g2.flatten()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let (base, adapter, batch) = tiny();
        let prefix = &batch[0][..4];
        let theta = adapter.flatten();
        let jac = next_token_jacobian(&base, &adapter, &theta, prefix).unwrap();
        let eps = 1e-5;
        let dist = |th: &[f64]| next_token_at(&base, &adapter, th, prefix).unwrap();
        for j in (0..theta.len()).step_by(3) {
            let mut p = theta.clone();
            let mut m = theta.clone();
            p[j] += eps;
            m[j] -= eps;
            let (dp, dm) = (dist(&p), dist(&m));
            for y in 0..dp.len() {
                let fd = (dp[y] - dm[y]) / (2.0 * eps);
                assert!((jac[y][j] - fd).abs() < 1e-7, "y={y} j={j}");
            }
        }
    }

    #[test]
    fn empty_batch_is_rejected() {
        let (base, adapter, _) = tiny();
        let empty: Vec<Vec<TokenId>> = vec![];
        assert!(nll_and_grad(&base, &adapter, &empty).is_err());
    }

    #[test]
    fn uniform_model_nll_is_log_v() {
        let vocab = Vocab::new("ab".chars());
        let base = BaseParams::zeros(vocab.clone(), 3, 1);
        let adapter = LoraAdapter::init(&base, &LoraConfig::default(), 0).unwrap();
        let batch = vec![vocab.encode_prompt("a").unwrap(); 4];
        let (nll, _) = nll_and_grad(&base, &adapter, &batch).unwrap();
        assert!((nll - (4f64).ln()).abs() < 1e-12);
    }
}
