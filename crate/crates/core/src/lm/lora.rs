use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::BaseParams;
use crate::error::{Error, Result};
use crate::linalg::{Matrix, MatrixF64};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoraConfig {
    pub rank: usize,
    pub alpha: f32,
    /// Matrix names to adapt; empty means every adaptable matrix.
    pub targets: Vec<String>,
    pub init_std: f64,
}

impl Default for LoraConfig {
    fn default() -> Self {
        Self {
            rank: 8,
            alpha: 16.0,
            targets: Vec::new(),
            init_std: 0.02,
        }
    }
}

impl LoraConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::Config("LoRA rank must be >= 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config("LoRA alpha must be positive".into()));
        }
        if !(self.init_std >= 0.0 && self.init_std.is_finite()) {
            return Err(Error::Config("LoRA init_std must be >= 0".into()));
        }
        Ok(())
    }
}

/// Low-rank factors for one `d_out x d_in` matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoraFactors {
    pub name: String,
    /// `r x d_in`.
    pub a: Matrix,
    /// `d_out x r`.
    pub b: Matrix,
    pub alpha: f32,
}

impl LoraFactors {
    pub fn rank(&self) -> usize {
        self.a.rows
    }

    pub fn d_in(&self) -> usize {
        self.a.cols
    }

    pub fn d_out(&self) -> usize {
        self.b.rows
    }

    pub fn scale(&self) -> f64 {
        f64::from(self.alpha) / self.rank() as f64
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |detail: String| Error::ShapeMismatch {
            name: self.name.clone(),
            detail,
        };
        if self.rank() == 0 {
            return Err(bad("rank 0".into()));
        }
        if self.b.cols != self.rank() {
            return Err(bad(format!(
                "A has rank {} but B has {} columns",
                self.rank(),
                self.b.cols
            )));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(bad(format!("alpha {} is not positive", self.alpha)));
        }
        Ok(())
    }

    /// `(alpha / r) B A` in working precision.
    pub fn delta(&self) -> MatrixF64 {
        let mut bs = self.b.to_f64();
        let s = self.scale();
        bs.data.iter_mut().for_each(|v| *v *= s);
        bs.matmul(&self.a.to_f64())
    }
}

/// One expert: a set of low-rank factor pairs over named base matrices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoraAdapter {
    pub factors: Vec<LoraFactors>,
}

impl LoraAdapter {
    /// Seeded Gaussian `A`, zero `B`: the delta starts at exactly zero.
    pub fn init(base: &BaseParams, cfg: &LoraConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let names = if cfg.targets.is_empty() {
            base.matrix_names()
        } else {
            cfg.targets.clone()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut factors = Vec::with_capacity(names.len());
        for name in names {
            let w = base.matrix(&name).ok_or_else(|| Error::ShapeMismatch {
                name: name.clone(),
                detail: "no such matrix in base model".into(),
            })?;
            factors.push(LoraFactors {
                a: Matrix::gaussian(cfg.rank, w.cols, cfg.init_std, &mut rng),
                b: Matrix::zeros(w.rows, cfg.rank),
                alpha: cfg.alpha,
                name,
            });
        }
        Ok(Self { factors })
    }

    pub fn factor(&self, name: &str) -> Option<&LoraFactors> {
        self.factors.iter().find(|f| f.name == name)
    }

    pub fn num_params(&self) -> usize {
        self.factors
            .iter()
            .map(|f| f.a.data.len() + f.b.data.len())
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.factors.iter().all(|f| f.a.is_finite() && f.b.is_finite())
    }

    /// True when every `B` is zero, so the adapter is a no-op.
    pub fn is_zero_delta(&self) -> bool {
        self.factors
            .iter()
            .all(|f| f.b.data.iter().all(|&v| v == 0.0))
    }

    /// Flat view of all parameters: for each factor, `A` then `B`.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for f in &self.factors {
            out.extend(f.a.data.iter().map(|&v| f64::from(v)));
            out.extend(f.b.data.iter().map(|&v| f64::from(v)));
        }
        out
    }

    /// Inverse of [`flatten`](Self::flatten).
    pub fn assign(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params(), "flat parameter length");
        let mut it = flat.iter();
        for f in &mut self.factors {
            for v in f.a.data.iter_mut().chain(f.b.data.iter_mut()) {
                *v = *it.next().expect("length checked") as f32;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::model::{ModelConfig, OUT_PROJ};
    use crate::lm::vocab::Vocab;

    fn base() -> BaseParams {
        BaseParams::init(
            Vocab::new("abc".chars()),
            &ModelConfig {
                hidden: 4,
                ..ModelConfig::default()
            },
        )
    }

    #[test]
    fn init_targets_every_matrix_with_zero_b() {
        let a = LoraAdapter::init(&base(), &LoraConfig::default(), 1).unwrap();
        let names: Vec<&str> = a.factors.iter().map(|f| f.name.as_str()).collect();
        assert_eq!(names, ["block.0", "block.1", OUT_PROJ]);
        assert!(a.is_zero_delta());
        let out = a.factor(OUT_PROJ).unwrap();
        assert_eq!((out.d_out(), out.d_in(), out.rank()), (5, 4, 8));
    }

    #[test]
    fn unknown_target_is_rejected() {
        let cfg = LoraConfig {
            targets: vec!["block.9".into()],
            ..LoraConfig::default()
        };
        assert!(LoraAdapter::init(&base(), &cfg, 0).is_err());
    }

    #[test]
    fn delta_matches_explicit_product() {
        let f = LoraFactors {
            name: "m".into(),
            a: Matrix::from_vec(1, 2, vec![1.0, 2.0]),
            b: Matrix::from_vec(2, 1, vec![3.0, -1.0]),
            alpha: 2.0,
        };
        assert_eq!(f.delta().data, vec![6.0, 12.0, -2.0, -4.0]);
    }

    #[test]
    fn flatten_assign_round_trip() {
        let mut a = LoraAdapter::init(&base(), &LoraConfig::default(), 4).unwrap();
        let mut flat = a.flatten();
        flat.iter_mut().enumerate().for_each(|(i, v)| *v = i as f64);
        a.assign(&flat);
        assert_eq!(a.flatten(), flat);
    }
}
