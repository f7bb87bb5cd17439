//! Character-level autoregressive language model with low-rank adapters.

mod grad;
mod infer;
mod lora;
mod model;
mod train;
mod vocab;

pub use grad::{grad_at, next_token_at, next_token_jacobian, nll_and_full_grad, nll_and_grad, nll_at, AdapterGrad, FullGrad};
pub use infer::{document_nll, entropy, generate, generate_with, mean_nll, model_perplexity, perplexity};
pub use lora::{LoraAdapter, LoraConfig, LoraFactors};
pub use model::{block_name, forward, BaseParams, Counted, Dense, Lm, ModelConfig, SequenceModel, OUT_PROJ};
pub use train::{pretrain_base, train_adapter, AdamW, AdapterTrainer, PretrainConfig, TrainConfig};
pub use vocab::{TokenId, Vocab, BOS, EOS};
