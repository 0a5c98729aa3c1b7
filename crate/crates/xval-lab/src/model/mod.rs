//! GPT-2-style transformer trunk with a multiplicative number embedding,
//! weight-tied token head, and a scalar number head.
//!
//! The trunk follows the usual pre-layer-norm block layout (layer norm before
//! attention and before the MLP, residual connections around both, MLP hidden
//! width 4x the embedding). Trunk weights are initialized
//! `Normal(0, (2 * fan_in * n_layers)^-1)` to counteract the residual stack,
//! and the trunk carries no biases unless configured otherwise.

mod checkpoint;
mod forward;
mod infer;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointHeader, ExtraTensor};
pub use forward::{ForwardInput, ForwardNodes, ParamNodes};
pub use infer::{argmax_token, infer_numbers, InferredNumber};

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::real::Real;
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("d_model {0} not divisible by n_heads {1}")]
    BadHeads(usize, usize),
    #[error("context length {0} exceeds max_context {1}")]
    ContextOverflow(usize, usize),
    #[error("non-finite activations in layer {layer}")]
    NonFinite { layer: usize },
    #[error("token id {0} outside vocabulary {1}")]
    BadToken(u32, usize),
    #[error("checkpoint malformed: {0}")]
    BadCheckpoint(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<V> = std::result::Result<V, ModelError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Mlm,
    Ar,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub head_dim: usize,
    pub vocab_size: usize,
    pub max_context: usize,
    pub mode: Mode,
    #[serde(default)]
    pub trunk_biases: bool,
    #[serde(default = "default_true")]
    pub first_block_pre_mlp_layernorm: bool,
    #[serde(default = "default_true")]
    pub number_head_bias: bool,
}

impl ModelConfig {
    pub fn d_model(&self) -> usize {
        self.n_heads * self.head_dim
    }

    pub fn mlp_hidden(&self) -> usize {
        4 * self.d_model()
    }

    /// Trunk weight std: `(2 * fan_in * n_layers)^(-1/2)`.
    pub fn trunk_std(&self, fan_in: usize) -> f64 {
        1.0 / ((2 * fan_in * self.n_layers) as f64).sqrt()
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-5;
const EMBED_INIT_STD: f64 = 0.02;

#[derive(Debug, Clone)]
pub struct NamedParam<T> {
    pub name: String,
    pub value: Tensor<T>,
    /// Whether decoupled weight decay applies (matrices yes, gains/biases no).
    pub decay: bool,
}

pub struct Model<T> {
    pub config: ModelConfig,
    pub vocab_hash: String,
    /// The `[NUM]` row of the token embedding, exempt from weight decay.
    pub num_token_id: Option<u32>,
    params: Vec<NamedParam<T>>,
    index: HashMap<String, usize>,
}

impl<T: Real> Model<T> {
    pub fn params(&self) -> &[NamedParam<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [NamedParam<T>] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> &Tensor<T> {
        &self.params[self.index[name]].value
    }

    pub fn param_pos(&self, name: &str) -> usize {
        self.index[name]
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Number of bias parameters inside the trunk (zero by default).
    pub fn trunk_bias_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.name.contains(".b_") || p.name.ends_with(".bias"))
            .filter(|p| p.name.starts_with("block") || p.name.starts_with("final_ln"))
            .map(|p| p.value.numel())
            .sum()
    }
}

/// Deterministic model construction: same seed, same bits.
pub fn build_model<T: Real>(
    config: &ModelConfig,
    vocab_size: usize,
    vocab_hash: &str,
    num_token_id: Option<u32>,
    seed: u64,
) -> Result<Model<T>> {
    let mut cfg = config.clone();
    cfg.vocab_size = vocab_size;
    let d = cfg.d_model();
    if d == 0 || d % cfg.n_heads != 0 {
        return Err(ModelError::BadHeads(d, cfg.n_heads));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut params: Vec<NamedParam<T>> = Vec::new();

    let normal = |rng: &mut ChaCha20Rng, shape: Vec<usize>, std: f64| -> Tensor<T> {
        let dist = Normal::new(0.0f64, std).expect("valid std");
        let n: usize = shape.iter().product();
        let data: Vec<T> = (0..n).map(|_| T::from_f64(dist.sample(rng))).collect();
        Tensor::new(shape, data)
    };
    let push = |params: &mut Vec<NamedParam<T>>, name: String, value: Tensor<T>, decay: bool| {
        params.push(NamedParam { name, value, decay });
    };

    push(
        &mut params,
        "embed.token".into(),
        normal(&mut rng, vec![vocab_size, d], EMBED_INIT_STD),
        true,
    );
    push(
        &mut params,
        "embed.pos".into(),
        normal(&mut rng, vec![cfg.max_context, d], EMBED_INIT_STD),
        true,
    );
    for l in 0..cfg.n_layers {
        let std_d = cfg.trunk_std(d);
        let std_h = cfg.trunk_std(cfg.mlp_hidden());
        push(&mut params, format!("block{l}.ln1.gain"), Tensor::ones(vec![d]), false);
        if cfg.trunk_biases {
            push(&mut params, format!("block{l}.ln1.bias"), Tensor::zeros(vec![d]), false);
        }
        for w in ["wq", "wk", "wv", "wo"] {
            push(
                &mut params,
                format!("block{l}.attn.{w}"),
                normal(&mut rng, vec![d, d], std_d),
                true,
            );
            if cfg.trunk_biases {
                push(
                    &mut params,
                    format!("block{l}.attn.b_{w}"),
                    Tensor::zeros(vec![d]),
                    false,
                );
            }
        }
        push(&mut params, format!("block{l}.ln2.gain"), Tensor::ones(vec![d]), false);
        if cfg.trunk_biases {
            push(&mut params, format!("block{l}.ln2.bias"), Tensor::zeros(vec![d]), false);
        }
        push(
            &mut params,
            format!("block{l}.mlp.w1"),
            normal(&mut rng, vec![d, cfg.mlp_hidden()], std_d),
            true,
        );
        if cfg.trunk_biases {
            push(
                &mut params,
                format!("block{l}.mlp.b_w1"),
                Tensor::zeros(vec![cfg.mlp_hidden()]),
                false,
            );
        }
        push(
            &mut params,
            format!("block{l}.mlp.w2"),
            normal(&mut rng, vec![cfg.mlp_hidden(), d], std_h),
            true,
        );
        if cfg.trunk_biases {
            push(&mut params, format!("block{l}.mlp.b_w2"), Tensor::zeros(vec![d]), false);
        }
    }
    push(&mut params, "final_ln.gain".into(), Tensor::ones(vec![d]), false);
    if cfg.trunk_biases {
        push(&mut params, "final_ln.bias".into(), Tensor::zeros(vec![d]), false);
    }
    // number head: MLP d -> d -> 1, bias configurable
    push(
        &mut params,
        "num_head.w1".into(),
        normal(&mut rng, vec![d, d], EMBED_INIT_STD),
        true,
    );
    if cfg.number_head_bias {
        push(&mut params, "num_head.b1".into(), Tensor::zeros(vec![d]), false);
    }
    push(
        &mut params,
        "num_head.w2".into(),
        normal(&mut rng, vec![d, 1], EMBED_INIT_STD),
        true,
    );
    if cfg.number_head_bias {
        push(&mut params, "num_head.b2".into(), Tensor::zeros(vec![1]), false);
    }

    let index = params
        .iter()
        .enumerate()
        .map(|(i, p)| (p.name.clone(), i))
        .collect();
    Ok(Model {
        config: cfg,
        vocab_hash: vocab_hash.to_string(),
        num_token_id,
        params,
        index,
    })
}

#[cfg(test)]
pub(crate) fn tiny_config() -> ModelConfig {
    ModelConfig {
        n_layers: 2,
        n_heads: 2,
        head_dim: 8,
        vocab_size: 0,
        max_context: 16,
        mode: Mode::Mlm,
        trunk_biases: false,
        first_block_pre_mlp_layernorm: true,
        number_head_bias: true,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigma_formula_example() {
        let cfg = ModelConfig {
            n_layers: 6,
            n_heads: 6,
            head_dim: 128,
            ..tiny_config()
        };
        // fan_in 768, 6 layers
        assert!((cfg.trunk_std(768) - 0.01042).abs() < 1e-5);
    }

    #[test]
    fn same_seed_bit_identical() {
        let cfg = tiny_config();
        let a: Model<f32> = build_model(&cfg, 40, "h", None, 7).unwrap();
        let b: Model<f32> = build_model(&cfg, 40, "h", None, 7).unwrap();
        for (pa, pb) in a.params().iter().zip(b.params()) {
            assert_eq!(pa.value.data(), pb.value.data(), "{}", pa.name);
        }
        let c: Model<f32> = build_model(&cfg, 40, "h", None, 8).unwrap();
        assert_ne!(
            a.param("embed.token").data(),
            c.param("embed.token").data()
        );
    }

    #[test]
    fn no_trunk_biases_by_default() {
        let cfg = tiny_config();
        let m: Model<f32> = build_model(&cfg, 40, "h", None, 7).unwrap();
        assert_eq!(m.trunk_bias_count(), 0);
        let mut cfg2 = cfg;
        cfg2.trunk_biases = true;
        let m2: Model<f32> = build_model(&cfg2, 40, "h", None, 7).unwrap();
        assert!(m2.trunk_bias_count() > 0);
    }

    #[test]
    fn empirical_std_within_ten_percent() {
        let cfg = ModelConfig {
            n_layers: 4,
            n_heads: 4,
            head_dim: 16,
            ..tiny_config()
        };
        let m: Model<f64> = build_model(&cfg, 100, "h", None, 3).unwrap();
        let d = cfg.d_model();
        for l in 0..cfg.n_layers {
            for (name, fan_in) in [
                (format!("block{l}.attn.wq"), d),
                (format!("block{l}.mlp.w1"), d),
                (format!("block{l}.mlp.w2"), 4 * d),
            ] {
                let p = m.param(&name);
                let n = p.numel() as f64;
                let mean: f64 = p.data().iter().sum::<f64>() / n;
                let var: f64 =
                    p.data().iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
                let sigma = cfg.trunk_std(fan_in);
                assert!(
                    (var.sqrt() - sigma).abs() / sigma < 0.10,
                    "{name}: {} vs {sigma}",
                    var.sqrt()
                );
            }
        }
    }

    #[test]
    fn bad_head_split_rejected() {
        let cfg = ModelConfig {
            n_heads: 0,
            ..tiny_config()
        };
        assert!(build_model::<f32>(&cfg, 10, "h", None, 0).is_err());
    }
}
