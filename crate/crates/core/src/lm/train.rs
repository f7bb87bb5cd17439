use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::grad::{nll_and_full_grad, nll_and_grad, FullGrad};
use super::lora::{LoraAdapter, LoraConfig};
use super::model::{BaseParams, ModelConfig};
use super::vocab::{TokenId, Vocab};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub max_seq_len: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-2,
            batch_size: 4,
            epochs: 1,
            max_seq_len: 256,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// A zero learning rate is accepted (it yields the untouched initial
    /// adapter); negative or non-finite rates are not.
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.max_seq_len == 0 {
            return Err(Error::Config(
                "batch_size, epochs and max_seq_len must be >= 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0 {
            return Err(Error::Config("invalid Adam betas/eps".into()));
        }
        Ok(())
    }

    /// `BOS + text + EOS`, truncated to `max_seq_len + 1` tokens so there are
    /// at most `max_seq_len` prediction targets.
    pub fn encode(&self, vocab: &Vocab, doc: &str) -> Result<Vec<TokenId>> {
        let mut t = vocab.encode_document(doc)?;
        t.truncate(self.max_seq_len + 1);
        Ok(t)
    }
}

/// Adam with decoupled weight decay over a flat parameter vector.
#[derive(Clone, Debug)]
pub struct AdamW {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamW {
    pub fn new(n: usize, cfg: &TrainConfig) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            weight_decay: cfg.weight_decay,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let update = (self.m[i] / bc1) / ((self.v[i] / bc2).sqrt() + self.eps);
            params[i] -= self.lr * (update + self.weight_decay * params[i]);
        }
    }
}

/// An adapter together with its optimizer state.
#[derive(Clone, Debug)]
pub struct AdapterTrainer<'a> {
    base: &'a BaseParams,
    adapter: LoraAdapter,
    opt: AdamW,
    steps: usize,
}

impl<'a> AdapterTrainer<'a> {
    pub fn new(base: &'a BaseParams, lora: &LoraConfig, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let adapter = LoraAdapter::init(base, lora, cfg.seed)?;
        let opt = AdamW::new(adapter.num_params(), cfg);
        Ok(Self {
            base,
            adapter,
            opt,
            steps: 0,
        })
    }

    /// One optimizer step on `batch`; returns the loss before the update.
    pub fn step<T: AsRef<[TokenId]>>(&mut self, batch: &[T]) -> Result<f64> {
        let (loss, grad) = nll_and_grad(self.base, &self.adapter, batch)?;
        if !loss.is_finite() {
            return Err(Error::Diverged {
                step: self.steps,
                loss,
            });
        }
        if self.opt.lr > 0.0 {
            let mut theta = self.adapter.flatten();
            self.opt.step(&mut theta, &grad.flatten());
            self.adapter.assign(&theta);
            if !self.adapter.is_finite() {
                return Err(Error::Diverged {
                    step: self.steps,
                    loss: f64::NAN,
                });
            }
        }
        self.steps += 1;
        Ok(loss)
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn adapter(&self) -> &LoraAdapter {
        &self.adapter
    }

    pub fn into_adapter(self) -> LoraAdapter {
        self.adapter
    }
}

/// Trains a fresh adapter for `cfg.epochs` passes over seeded shuffled
/// minibatches of `docs`.
pub fn train_adapter<S: AsRef<str>>(base: &BaseParams, docs: &[S], lora: &LoraConfig, cfg: &TrainConfig) -> Result<LoraAdapter> {
    if docs.is_empty() {
        return Err(Error::EmptySequence);
    }
    let encoded = docs
        .iter()
        .map(|d| cfg.encode(&base.vocab, d.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    let mut trainer = AdapterTrainer::new(base, lora, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0f_ba7c);
    let mut order: Vec<usize> = (0..encoded.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&[TokenId]> = chunk.iter().map(|&i| encoded[i].as_slice()).collect();
            trainer.step(&batch)?;
        }
    }
    Ok(trainer.into_adapter())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub model: ModelConfig,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_seq_len: usize,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            steps: 150,
            batch_size: 8,
            learning_rate: 1e-2,
            max_seq_len: 128,
            seed: 11,
        }
    }
}

fn flatten_base(b: &BaseParams) -> Vec<f64> {
    let mut out: Vec<f64> = b.embed.data.iter().map(|&v| f64::from(v)).collect();
    for blk in &b.blocks {
        out.extend(blk.weight.data.iter().chain(&blk.bias).map(|&v| f64::from(v)));
    }
    out.extend(
        b.out_proj
            .weight
            .data
            .iter()
            .chain(&b.out_proj.bias)
            .map(|&v| f64::from(v)),
    );
    out
}

fn assign_base(b: &mut BaseParams, flat: &[f64]) {
    let mut it = flat.iter();
    let mut fill = |dst: &mut [f32]| {
        for v in dst {
            *v = *it.next().expect("flat length matches base") as f32;
        }
    };
    fill(&mut b.embed.data);
    for blk in &mut b.blocks {
        fill(&mut blk.weight.data);
        fill(&mut blk.bias);
    }
    fill(&mut b.out_proj.weight.data);
    fill(&mut b.out_proj.bias);
}

fn flatten_grad(g: &FullGrad) -> Vec<f64> {
    let mut out = g.embed.data.clone();
    for (w, b) in &g.blocks {
        out.extend(w.data.iter().chain(b));
    }
    out.extend(g.out.0.data.iter().chain(&g.out.1));
    out
}

/// Trains every base parameter for a fixed number of minibatch steps. This
/// stands in for the pre-trained model the experts are attached to.
pub fn pretrain_base<S: AsRef<str>>(vocab: Vocab, docs: &[S], cfg: &PretrainConfig) -> Result<BaseParams> {
    let mut base = BaseParams::init(vocab, &cfg.model);
    if docs.is_empty() || cfg.steps == 0 {
        return Ok(base);
    }
    let tc = TrainConfig {
        learning_rate: cfg.learning_rate,
        max_seq_len: cfg.max_seq_len,
        weight_decay: 0.0,
        ..TrainConfig::default()
    };
    tc.validate()?;
    let encoded = docs
        .iter()
        .map(|d| tc.encode(&base.vocab, d.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    let mut theta = flatten_base(&base);
    let mut opt = AdamW::new(theta.len(), &tc);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = Vec::new();
    for step in 0..cfg.steps {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            if order.is_empty() {
                order = (0..encoded.len()).collect();
                order.shuffle(&mut rng);
            }
            batch.push(encoded[order.pop().expect("refilled")].as_slice());
        }
        let (loss, g) = nll_and_full_grad(&base, &batch)?;
        if !loss.is_finite() {
            return Err(Error::Diverged { step, loss });
        }
        opt.step(&mut theta, &flatten_grad(&g));
        assign_base(&mut base, &theta);
    }
    Ok(base)
}
