//! Base parameters and the forward pass.
//!
//! The network reads a leaky context vector `s_t = E[x_t] + decay * s_{t-1}`,
//! passes it through `n_blocks` dense `h x h` tanh blocks and projects to
//! vocabulary logits. Weights are stored in `f32`; every pass runs on an `f64`
//! copy in which each adapted matrix is materialized as `W + (alpha/r) B A`.

use std::sync::atomic::{AtomicUsize, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::lora::LoraAdapter;
use super::vocab::{TokenId, Vocab};
use crate::error::{Error, Result};
use crate::linalg::{softmax_in_place, Matrix, MatrixF64};

pub const OUT_PROJ: &str = "out_proj";

pub fn block_name(i: usize) -> String {
    format!("block.{i}")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub hidden: usize,
    pub n_blocks: usize,
    pub context_decay: f32,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            n_blocks: 2,
            context_decay: 0.5,
            init_seed: 17,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Vec<f32>,
}

impl Dense {
    fn zeros(d_out: usize, d_in: usize) -> Self {
        Self {
            weight: Matrix::zeros(d_out, d_in),
            bias: vec![0.0; d_out],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaseParams {
    pub vocab: Vocab,
    pub context_decay: f32,
    /// `V x h` token embeddings.
    pub embed: Matrix,
    /// Dense `h x h` tanh blocks.
    pub blocks: Vec<Dense>,
    /// `V x h` output projection.
    pub out_proj: Dense,
}

impl BaseParams {
    pub fn init(vocab: Vocab, cfg: &ModelConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.init_seed);
        let v = vocab.size();
        let h = cfg.hidden;
        let block_std = 1.0 / (h as f64).sqrt();
        let embed = Matrix::gaussian(v, h, 0.5, &mut rng);
        let blocks = (0..cfg.n_blocks)
            .map(|_| Dense {
                weight: Matrix::gaussian(h, h, block_std, &mut rng),
                bias: vec![0.0; h],
            })
            .collect();
        let out_proj = Dense {
            weight: Matrix::gaussian(v, h, block_std, &mut rng),
            bias: vec![0.0; v],
        };
        Self {
            vocab,
            context_decay: cfg.context_decay,
            embed,
            blocks,
            out_proj,
        }
    }

    /// All-zero parameters: the uniform next-token model.
    pub fn zeros(vocab: Vocab, hidden: usize, n_blocks: usize) -> Self {
        let v = vocab.size();
        Self {
            vocab,
            context_decay: 0.5,
            embed: Matrix::zeros(v, hidden),
            blocks: (0..n_blocks).map(|_| Dense::zeros(hidden, hidden)).collect(),
            out_proj: Dense::zeros(v, hidden),
        }
    }

    pub fn hidden(&self) -> usize {
        self.embed.cols
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.size()
    }

    /// Names of the matrices that can carry a low-rank adapter.
    pub fn matrix_names(&self) -> Vec<String> {
        (0..self.blocks.len())
            .map(block_name)
            .chain(std::iter::once(OUT_PROJ.to_string()))
            .collect()
    }

    pub fn matrix(&self, name: &str) -> Option<&Matrix> {
        if name == OUT_PROJ {
            return Some(&self.out_proj.weight);
        }
        let i: usize = name.strip_prefix("block.")?.parse().ok()?;
        self.blocks.get(i).map(|b| &b.weight)
    }

    pub fn matrix_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        if name == OUT_PROJ {
            return Some(&mut self.out_proj.weight);
        }
        let i: usize = name.strip_prefix("block.")?.parse().ok()?;
        self.blocks.get_mut(i).map(|b| &mut b.weight)
    }

    pub fn is_finite(&self) -> bool {
        self.embed.is_finite()
            && self.out_proj.weight.is_finite()
            && self.out_proj.bias.iter().all(|v| v.is_finite())
            && self
                .blocks
                .iter()
                .all(|b| b.weight.is_finite() && b.bias.iter().all(|v| v.is_finite()))
    }

    /// SHA-256 over the vocabulary, shapes and every parameter bit pattern.
    pub fn fingerprint(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        let symbols: String = self.vocab.symbols().iter().collect();
        h.update((symbols.len() as u64).to_le_bytes());
        h.update(symbols.as_bytes());
        h.update(self.context_decay.to_le_bytes());
        let mut put = |m: &Matrix| {
            h.update((m.rows as u64).to_le_bytes());
            h.update((m.cols as u64).to_le_bytes());
            for v in &m.data {
                h.update(v.to_le_bytes());
            }
        };
        put(&self.embed);
        for b in &self.blocks {
            put(&b.weight);
            put(&Matrix::from_vec(1, b.bias.len(), b.bias.clone()));
        }
        put(&self.out_proj.weight);
        put(&Matrix::from_vec(
            1,
            self.out_proj.bias.len(),
            self.out_proj.bias.clone(),
        ));
        h.finalize().into()
    }
}

/// Working-precision copy of a (possibly adapted) model.
#[derive(Clone, Debug)]
pub(crate) struct Compiled {
    pub decay: f64,
    pub embed: MatrixF64,
    pub blocks: Vec<(MatrixF64, Vec<f64>)>,
    pub out: (MatrixF64, Vec<f64>),
}

/// Activations of one sequence pass, kept for the backward pass.
pub(crate) struct Trace {
    /// Context vector per position.
    pub inputs: Vec<Vec<f64>>,
    /// `acts[t][b]`: output of block `b` at position `t`.
    pub acts: Vec<Vec<Vec<f64>>>,
    pub probs: Vec<Vec<f64>>,
}

impl Compiled {
    pub fn new(base: &BaseParams, adapter: Option<&LoraAdapter>) -> Result<Self> {
        let deltas = adapter
            .map(|a| a.factors.iter().map(|f| (f.name.as_str(), f.delta())).collect())
            .unwrap_or_default();
        Self::with_deltas(base, deltas)
    }

    /// Like [`new`](Self::new) but reads the adapter parameters from a flat
    /// `f64` vector laid out as [`LoraAdapter::flatten`], without rounding
    /// them to `f32`.
    pub fn with_theta(base: &BaseParams, adapter: &LoraAdapter, theta: &[f64]) -> Result<Self> {
        assert_eq!(theta.len(), adapter.num_params(), "flat parameter length");
        let mut off = 0;
        let mut deltas = Vec::with_capacity(adapter.factors.len());
        for f in &adapter.factors {
            let (r, d_in, d_out) = (f.rank(), f.d_in(), f.d_out());
            let a = MatrixF64 {
                rows: r,
                cols: d_in,
                data: theta[off..off + r * d_in].to_vec(),
            };
            off += r * d_in;
            let mut b = MatrixF64 {
                rows: d_out,
                cols: r,
                data: theta[off..off + d_out * r].to_vec(),
            };
            off += d_out * r;
            let s = f.scale();
            b.data.iter_mut().for_each(|v| *v *= s);
            deltas.push((f.name.as_str(), b.matmul(&a)));
        }
        Self::with_deltas(base, deltas)
    }

    pub fn with_deltas(base: &BaseParams, deltas: Vec<(&str, MatrixF64)>) -> Result<Self> {
        let bias = |b: &[f32]| b.iter().map(|&v| f64::from(v)).collect::<Vec<f64>>();
        let mut blocks: Vec<(MatrixF64, Vec<f64>)> = base
            .blocks
            .iter()
            .map(|b| (b.weight.to_f64(), bias(&b.bias)))
            .collect();
        let mut out = (base.out_proj.weight.to_f64(), bias(&base.out_proj.bias));
        for (name, delta) in deltas {
            let w = if name == OUT_PROJ {
                &mut out.0
            } else {
                let i = name
                    .strip_prefix("block.")
                    .and_then(|s| s.parse::<usize>().ok())
                    .filter(|&i| i < blocks.len())
                    .ok_or_else(|| Error::ShapeMismatch {
                        name: name.to_string(),
                        detail: "no such matrix in base model".into(),
                    })?;
                &mut blocks[i].0
            };
            if (w.rows, w.cols) != (delta.rows, delta.cols) {
                return Err(Error::ShapeMismatch {
                    name: name.to_string(),
                    detail: format!(
                        "adapter is {}x{}, base is {}x{}",
                        delta.rows, delta.cols, w.rows, w.cols
                    ),
                });
            }
            for (wv, dv) in w.data.iter_mut().zip(&delta.data) {
                *wv += dv;
            }
        }
        Ok(Self {
            decay: f64::from(base.context_decay),
            embed: base.embed.to_f64(),
            blocks,
            out,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.out.0.rows
    }

    pub fn hidden(&self) -> usize {
        self.embed.cols
    }

    /// Advances the context with `token` and returns the next-token logits.
    pub fn step_logits(&self, context: &mut [f64], token: TokenId) -> Vec<f64> {
        let e = self.embed.row(token as usize);
        for (c, &v) in context.iter_mut().zip(e) {
            *c = v + self.decay * *c;
        }
        let mut x = context.to_vec();
        for (w, b) in &self.blocks {
            let mut y = vec![0.0; w.rows];
            w.matvec_bias(&x, b, &mut y);
            y.iter_mut().for_each(|v| *v = v.tanh());
            x = y;
        }
        let mut logits = vec![0.0; self.out.0.rows];
        self.out.0.matvec_bias(&x, &self.out.1, &mut logits);
        logits
    }

    pub fn trace(&self, tokens: &[TokenId]) -> Trace {
        let h = self.hidden();
        let mut context = vec![0.0; h];
        let mut inputs = Vec::with_capacity(tokens.len());
        let mut acts = Vec::with_capacity(tokens.len());
        let mut probs = Vec::with_capacity(tokens.len());
        for &tok in tokens {
            let e = self.embed.row(tok as usize);
            for (c, &v) in context.iter_mut().zip(e) {
                *c = v + self.decay * *c;
            }
            inputs.push(context.clone());
            let mut layer_acts = Vec::with_capacity(self.blocks.len());
            let mut x: &[f64] = &context;
            for (w, b) in &self.blocks {
                let mut y = vec![0.0; w.rows];
                w.matvec_bias(x, b, &mut y);
                y.iter_mut().for_each(|v| *v = v.tanh());
                layer_acts.push(y);
                x = layer_acts.last().expect("just pushed");
            }
            let mut logits = vec![0.0; self.out.0.rows];
            self.out.0.matvec_bias(x, &self.out.1, &mut logits);
            softmax_in_place(&mut logits);
            acts.push(layer_acts);
            probs.push(logits);
        }
        Trace {
            inputs,
            acts,
            probs,
        }
    }

    pub fn distributions(&self, tokens: &[TokenId]) -> Vec<Vec<f64>> {
        let mut context = vec![0.0; self.hidden()];
        tokens
            .iter()
            .map(|&t| {
                let mut l = self.step_logits(&mut context, t);
                softmax_in_place(&mut l);
                l
            })
            .collect()
    }
}

/// Anything that maps a token sequence to next-token distributions.
pub trait SequenceModel: Sync {
    fn vocab(&self) -> &Vocab;

    /// `out[t]` is the distribution of the token following `tokens[..=t]`.
    fn distributions(&self, tokens: &[TokenId]) -> Vec<Vec<f64>>;

    fn next_token(&self, prefix: &[TokenId]) -> Vec<f64> {
        self.distributions(prefix)
            .pop()
            .expect("prefix contains at least BOS")
    }
}

/// A base model with an optional adapter folded in, ready for inference.
#[derive(Clone, Debug)]
pub struct Lm<'a> {
    base: &'a BaseParams,
    compiled: Compiled,
}

impl<'a> Lm<'a> {
    pub fn new(base: &'a BaseParams, adapter: Option<&LoraAdapter>) -> Result<Self> {
        Ok(Self {
            base,
            compiled: Compiled::new(base, adapter)?,
        })
    }

    /// Base with dense per-matrix deltas added (e.g. a merged adapter).
    pub fn with_deltas(base: &'a BaseParams, deltas: &[(String, Matrix)]) -> Result<Self> {
        let d = deltas.iter().map(|(n, m)| (n.as_str(), m.to_f64())).collect();
        Ok(Self {
            base,
            compiled: Compiled::with_deltas(base, d)?,
        })
    }

    pub fn base(&self) -> &BaseParams {
        self.base
    }

    /// Raw logits after each prefix.
    pub fn logits(&self, tokens: &[TokenId]) -> Vec<Vec<f64>> {
        let mut context = vec![0.0; self.compiled.hidden()];
        tokens
            .iter()
            .map(|&t| self.compiled.step_logits(&mut context, t))
            .collect()
    }

    #[cfg(test)]
    pub(crate) fn compiled(&self) -> &Compiled {
        &self.compiled
    }
}

impl SequenceModel for Lm<'_> {
    fn vocab(&self) -> &Vocab {
        &self.base.vocab
    }

    fn distributions(&self, tokens: &[TokenId]) -> Vec<Vec<f64>> {
        self.compiled.distributions(tokens)
    }
}

/// Counts per-token model evaluations of the wrapped model.
#[derive(Debug)]
pub struct Counted<M> {
    inner: M,
    evals: AtomicUsize,
}

impl<M> Counted<M> {
    pub fn new(inner: M) -> Self {
        Self {
            inner,
            evals: AtomicUsize::new(0),
        }
    }

    pub fn evals(&self) -> usize {
        self.evals.load(Ordering::SeqCst)
    }

    pub fn reset(&self) {
        self.evals.store(0, Ordering::SeqCst);
    }
}

impl<M: SequenceModel> SequenceModel for Counted<M> {
    fn vocab(&self) -> &Vocab {
        self.inner.vocab()
    }

    fn distributions(&self, tokens: &[TokenId]) -> Vec<Vec<f64>> {
        self.evals.fetch_add(tokens.len(), Ordering::SeqCst);
        self.inner.distributions(tokens)
    }
}

impl<M: SequenceModel> SequenceModel for &M {
    fn vocab(&self) -> &Vocab {
        (*self).vocab()
    }

    fn distributions(&self, tokens: &[TokenId]) -> Vec<Vec<f64>> {
        (*self).distributions(tokens)
    }
}

/// Next-token distribution after `prefix` (BOS is prepended).
pub fn forward(base: &BaseParams, adapter: Option<&LoraAdapter>, prefix: &str) -> Result<Vec<f64>> {
    let tokens = base.vocab.encode_prompt(prefix)?;
    let lm = Lm::new(base, adapter)?;
    Ok(lm.next_token(&tokens))
}
