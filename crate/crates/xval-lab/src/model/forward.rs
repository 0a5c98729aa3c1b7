//! Batched forward pass on the autodiff tape.
//!
//! The embedding is multiplicative in the value lane: the `[NUM]` token's
//! embedding row is scaled by the number it stands for (1 everywhere else),
//! the positional encoding is added afterwards, and the first block's layer
//! norm then squashes the scalar through `x / sqrt(1 + x^2)` along the
//! `[NUM]` direction.

use super::{Mode, Model, ModelError, Result, LAYER_NORM_EPS};
use crate::real::{real, Real};
use crate::tensor::{NodeId, Tape, Tensor};

const MASK_NEG: f64 = -1e9;

/// Tape handles for every parameter, in declaration order.
pub struct ParamNodes {
    nodes: Vec<NodeId>,
}

impl ParamNodes {
    pub fn all(&self) -> &[NodeId] {
        &self.nodes
    }
}

pub struct ForwardInput<'a> {
    /// Token ids, row-major `[batch, seq]`.
    pub token_ids: &'a [u32],
    /// Value lane aligned with `token_ids` (1.0 off `[NUM]`).
    pub numbers: &'a [f64],
    pub batch: usize,
    pub seq: usize,
    /// `false` marks padding; masked out of attention keys and losses.
    pub real_mask: Option<&'a [bool]>,
}

pub struct ForwardNodes {
    /// `[batch * seq, vocab]` token logits (token head tied to the embedding).
    pub logits_flat: NodeId,
    /// `[batch * seq]` scalar number-head output at every position.
    pub number_preds: NodeId,
    /// The `[batch, seq]` input-value node, for derivatives w.r.t. inputs.
    pub numbers_node: NodeId,
    /// `[batch, seq, d]` trunk output after the final layer norm.
    pub trunk_out: NodeId,
}

impl<T: Real> Model<T> {
    /// Insert the model's parameters as tape leaves.
    pub fn insert_params(&self, tape: &mut Tape<T>, requires_grad: bool) -> ParamNodes {
        ParamNodes {
            nodes: self
                .params()
                .iter()
                .map(|p| tape.leaf(p.value.clone(), requires_grad))
                .collect(),
        }
    }

    /// Insert externally supplied parameter values (same declaration order);
    /// used by the finite-difference harness.
    pub fn insert_param_values(
        &self,
        tape: &mut Tape<T>,
        values: &[Tensor<T>],
        requires_grad: bool,
    ) -> ParamNodes {
        assert_eq!(values.len(), self.params().len());
        ParamNodes {
            nodes: values
                .iter()
                .map(|v| tape.leaf(v.clone(), requires_grad))
                .collect(),
        }
    }

    fn node(&self, p: &ParamNodes, name: &str) -> NodeId {
        p.nodes[self.param_pos(name)]
    }

    fn maybe_node(&self, p: &ParamNodes, name: &str, want: bool) -> Option<NodeId> {
        want.then(|| self.node(p, name))
    }

    /// Multiplicative embedding: `numbers * token_embedding[ids] + positional`.
    /// Returns `(activations [B,T,d], numbers_node [B,T])`.
    pub fn embed(
        &self,
        tape: &mut Tape<T>,
        params: &ParamNodes,
        input: &ForwardInput,
        numbers_node: Option<NodeId>,
    ) -> Result<(NodeId, NodeId)> {
        let cfg = &self.config;
        let (b, t, d) = (input.batch, input.seq, cfg.d_model());
        if t > cfg.max_context {
            return Err(ModelError::ContextOverflow(t, cfg.max_context));
        }
        if let Some(&bad) = input
            .token_ids
            .iter()
            .find(|&&id| id as usize >= cfg.vocab_size)
        {
            return Err(ModelError::BadToken(bad, cfg.vocab_size));
        }
        assert_eq!(input.token_ids.len(), b * t);
        assert_eq!(input.numbers.len(), b * t);

        let ids: Vec<usize> = input.token_ids.iter().map(|&x| x as usize).collect();
        let tok = self.node(params, "embed.token");
        let rows = tape.gather_rows(tok, &ids)?;
        let h_text = tape.reshape(rows, vec![b, t, d])?;

        let numbers_node = match numbers_node {
            Some(n) => n,
            None => tape.constant(Tensor::from_f64(vec![b, t], input.numbers)),
        };
        let h_num = tape.reshape(numbers_node, vec![b, t, 1])?;
        let h = tape.mul(h_text, h_num)?;

        let pos = self.node(params, "embed.pos");
        let pos_t = tape.slice(pos, 0, 0, t)?;
        let h = tape.add(h, pos_t)?;
        Ok((h, numbers_node))
    }

    /// Trunk only: embedding, blocks, final layer norm. Returns the
    /// `[B, T, d]` trunk output and the input-numbers node.
    pub fn trunk(
        &self,
        tape: &mut Tape<T>,
        params: &ParamNodes,
        input: &ForwardInput,
        numbers_node: Option<NodeId>,
    ) -> Result<(NodeId, NodeId)> {
        let cfg = &self.config;
        let (b, t, d) = (input.batch, input.seq, cfg.d_model());
        let (heads, dh) = (cfg.n_heads, cfg.head_dim);
        let (mut x, numbers_node) = self.embed(tape, params, input, numbers_node)?;

        let attn_bias = self.attention_bias(tape, input);

        for l in 0..cfg.n_layers {
            let ln1 = tape.layer_norm(
                x,
                self.node(params, &format!("block{l}.ln1.gain")),
                self.maybe_node(params, &format!("block{l}.ln1.bias"), cfg.trunk_biases),
                LAYER_NORM_EPS,
            )?;
            let proj = |tape: &mut Tape<T>, w: &str| -> Result<NodeId> {
                let mut y = tape.matmul(ln1, self.node(params, &format!("block{l}.attn.{w}")))?;
                if cfg.trunk_biases {
                    let bias = self.node(params, &format!("block{l}.attn.b_{w}"));
                    y = tape.add(y, bias)?;
                }
                let y = tape.reshape(y, vec![b, t, heads, dh])?;
                Ok(tape.permute(y, &[0, 2, 1, 3])?)
            };
            let q = proj(tape, "wq")?;
            let k = proj(tape, "wk")?;
            let v = proj(tape, "wv")?;
            let kt = tape.permute(k, &[0, 1, 3, 2])?;
            let scores = tape.matmul(q, kt)?;
            let mut scores = tape.scale(scores, 1.0 / (dh as f64).sqrt())?;
            if let Some(bias) = attn_bias {
                scores = tape.add(scores, bias)?;
            }
            let probs = tape.softmax(scores)?;
            let ctx = tape.matmul(probs, v)?;
            let ctx = tape.permute(ctx, &[0, 2, 1, 3])?;
            let ctx = tape.reshape(ctx, vec![b, t, d])?;
            let mut attn_out = tape.matmul(ctx, self.node(params, &format!("block{l}.attn.wo")))?;
            if cfg.trunk_biases {
                let bias = self.node(params, &format!("block{l}.attn.b_wo"));
                attn_out = tape.add(attn_out, bias)?;
            }
            x = tape.add(x, attn_out)?;

            let mlp_in = if l == 0 && !cfg.first_block_pre_mlp_layernorm {
                x
            } else {
                tape.layer_norm(
                    x,
                    self.node(params, &format!("block{l}.ln2.gain")),
                    self.maybe_node(params, &format!("block{l}.ln2.bias"), cfg.trunk_biases),
                    LAYER_NORM_EPS,
                )?
            };
            let mut h = tape.matmul(mlp_in, self.node(params, &format!("block{l}.mlp.w1")))?;
            if cfg.trunk_biases {
                h = tape.add(h, self.node(params, &format!("block{l}.mlp.b_w1")))?;
            }
            let h = tape.gelu(h)?;
            let mut h = tape.matmul(h, self.node(params, &format!("block{l}.mlp.w2")))?;
            if cfg.trunk_biases {
                h = tape.add(h, self.node(params, &format!("block{l}.mlp.b_w2")))?;
            }
            x = tape.add(x, h)?;

            if !tape.value(x).is_finite() {
                return Err(ModelError::NonFinite { layer: l });
            }
        }

        let trunk_out = tape.layer_norm(
            x,
            self.node(params, "final_ln.gain"),
            self.maybe_node(params, "final_ln.bias", cfg.trunk_biases),
            LAYER_NORM_EPS,
        )?;
        Ok((trunk_out, numbers_node))
    }

    /// Token head (weight-tied to the embedding matrix) over `[M, d]` rows.
    pub fn token_logits_from(
        &self,
        tape: &mut Tape<T>,
        params: &ParamNodes,
        rows: NodeId,
    ) -> Result<NodeId> {
        let tok = self.node(params, "embed.token");
        let tok_t = tape.permute(tok, &[1, 0])?;
        Ok(tape.matmul(rows, tok_t)?)
    }

    /// Scalar number head (MLP d -> d -> 1) over `[M, d]` rows; returns `[M]`.
    pub fn number_preds_from(
        &self,
        tape: &mut Tape<T>,
        params: &ParamNodes,
        rows: NodeId,
    ) -> Result<NodeId> {
        let cfg = &self.config;
        let m = tape.value(rows).shape()[0];
        let mut h1 = tape.matmul(rows, self.node(params, "num_head.w1"))?;
        if cfg.number_head_bias {
            h1 = tape.add(h1, self.node(params, "num_head.b1"))?;
        }
        let h1 = tape.gelu(h1)?;
        let mut preds = tape.matmul(h1, self.node(params, "num_head.w2"))?;
        if cfg.number_head_bias {
            preds = tape.add(preds, self.node(params, "num_head.b2"))?;
        }
        Ok(tape.reshape(preds, vec![m])?)
    }

    /// Full forward pass: trunk, tied token head, number head, all positions.
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        params: &ParamNodes,
        input: &ForwardInput,
        numbers_node: Option<NodeId>,
    ) -> Result<ForwardNodes> {
        let (b, t, d) = (input.batch, input.seq, self.config.d_model());
        let (trunk_out, numbers_node) = self.trunk(tape, params, input, numbers_node)?;
        let flat = tape.reshape(trunk_out, vec![b * t, d])?;
        let logits_flat = self.token_logits_from(tape, params, flat)?;
        let number_preds = self.number_preds_from(tape, params, flat)?;
        Ok(ForwardNodes {
            logits_flat,
            number_preds,
            numbers_node,
            trunk_out,
        })
    }

    /// Additive attention mask: causal in AR mode plus key padding, or `None`
    /// when bidirectional with no padding.
    fn attention_bias(&self, tape: &mut Tape<T>, input: &ForwardInput) -> Option<NodeId> {
        let (b, t) = (input.batch, input.seq);
        let causal = self.config.mode == Mode::Ar;
        let has_pad = input
            .real_mask
            .map(|m| m.iter().any(|&r| !r))
            .unwrap_or(false);
        if !causal && !has_pad {
            return None;
        }
        let neg: T = real(MASK_NEG);
        let mut bias = vec![T::zero(); b * t * t];
        for bi in 0..b {
            for i in 0..t {
                for j in 0..t {
                    let mut blocked = causal && j > i;
                    if let Some(m) = input.real_mask {
                        blocked = blocked || !m[bi * t + j];
                    }
                    if blocked {
                        bias[(bi * t + i) * t + j] = neg;
                    }
                }
            }
        }
        Some(tape.constant(Tensor::new(vec![b, 1, t, t], bias)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, tiny_config, Mode};
    use crate::tensor::Tape;

    fn run_logits(
        model: &Model<f64>,
        ids: &[u32],
        numbers: &[f64],
    ) -> (Vec<f64>, Vec<f64>) {
        let mut tape = Tape::new(true);
        let params = model.insert_params(&mut tape, false);
        let input = ForwardInput {
            token_ids: ids,
            numbers,
            batch: 1,
            seq: ids.len(),
            real_mask: None,
        };
        let out = model.forward(&mut tape, &params, &input, None).unwrap();
        (
            tape.value(out.logits_flat).data().to_vec(),
            tape.value(out.number_preds).data().to_vec(),
        )
    }

    #[test]
    fn ar_mode_is_causal() {
        let cfg = crate::model::ModelConfig {
            mode: Mode::Ar,
            ..tiny_config()
        };
        let model: Model<f64> = build_model(&cfg, 30, "h", None, 5).unwrap();
        let ids_a = [1u32, 2, 3, 4, 5];
        let ids_b = [1u32, 2, 3, 9, 9];
        let ones = [1.0; 5];
        let (la, _) = run_logits(&model, &ids_a, &ones);
        let (lb, _) = run_logits(&model, &ids_b, &ones);
        let v = 30;
        // positions 0..2 unchanged by edits at positions 3..4
        for pos in 0..3 {
            for j in 0..v {
                assert_eq!(la[pos * v + j], lb[pos * v + j], "pos {pos}");
            }
        }
        assert_ne!(&la[3 * v..4 * v], &lb[3 * v..4 * v]);
    }

    #[test]
    fn mlm_mode_is_bidirectional() {
        let model: Model<f64> = build_model(&tiny_config(), 30, "h", None, 5).unwrap();
        let ids_a = [1u32, 2, 3, 4, 5];
        let ids_b = [1u32, 2, 3, 9, 9];
        let ones = [1.0; 5];
        let (la, _) = run_logits(&model, &ids_a, &ones);
        let (lb, _) = run_logits(&model, &ids_b, &ones);
        assert_ne!(&la[..30], &lb[..30]);
    }

    #[test]
    fn zero_value_leaves_positional_only() {
        let model: Model<f64> = build_model(&tiny_config(), 30, "h", Some(3), 5).unwrap();
        let mut tape = Tape::new(true);
        let params = model.insert_params(&mut tape, false);
        let input = ForwardInput {
            token_ids: &[3, 3],
            numbers: &[0.0, 1.0],
            batch: 1,
            seq: 2,
            real_mask: None,
        };
        let (h, _) = model.embed(&mut tape, &params, &input, None).unwrap();
        let d = model.config.d_model();
        let hv = tape.value(h).data();
        let pos = model.param("embed.pos").data();
        for j in 0..d {
            assert!((hv[j] - pos[j]).abs() < 1e-15);
        }
        // with value 1 the [NUM] embedding contributes fully
        let tok = model.param("embed.token").data();
        for j in 0..d {
            assert!((hv[d + j] - (tok[3 * d + j] + pos[d + j])).abs() < 1e-15);
        }
    }

    #[test]
    fn permuting_positional_rows_permutes_outputs() {
        let mut model: Model<f64> = build_model(&tiny_config(), 30, "h", None, 5).unwrap();
        let ids = [7u32, 7, 7];
        let ones = [1.0; 3];
        let (base, _) = run_logits(&model, &ids, &ones);
        // swap positional rows 0 and 2; identical tokens, so outputs swap too
        let pos_idx = model.param_pos("embed.pos");
        let d = model.config.d_model();
        {
            let data = model.params_mut()[pos_idx].value.data_mut();
            for j in 0..d {
                data.swap(j, 2 * d + j);
            }
        }
        let (swapped, _) = run_logits(&model, &ids, &ones);
        let v = 30;
        for j in 0..v {
            assert!((base[j] - swapped[2 * v + j]).abs() < 1e-9);
            assert!((base[2 * v + j] - swapped[j]).abs() < 1e-9);
            assert!((base[v + j] - swapped[v + j]).abs() < 1e-9);
        }
    }

    #[test]
    fn padding_is_excluded_from_attention() {
        let model: Model<f64> = build_model(&tiny_config(), 30, "h", None, 5).unwrap();
        let mut tape = Tape::new(true);
        let params = model.insert_params(&mut tape, false);
        // same prefix, one sample padded with id 0, one with id 9: outputs at
        // real positions must agree because pad keys are masked out
        let run = |model: &Model<f64>, pad_id: u32| {
            let ids = [5u32, 6, pad_id];
            let mask = [true, true, false];
            let mut tape = Tape::new(true);
            let params = model.insert_params(&mut tape, false);
            let input = ForwardInput {
                token_ids: &ids,
                numbers: &[1.0; 3],
                batch: 1,
                seq: 3,
                real_mask: Some(&mask),
            };
            let out = model.forward(&mut tape, &params, &input, None).unwrap();
            tape.value(out.logits_flat).data().to_vec()
        };
        let _ = (&mut tape, &params);
        let a = run(&model, 0);
        let b = run(&model, 9);
        assert_eq!(&a[..2 * 30], &b[..2 * 30]);
    }

    #[test]
    fn context_overflow_rejected() {
        let model: Model<f64> = build_model(&tiny_config(), 30, "h", None, 5).unwrap();
        let ids = vec![1u32; 17];
        let numbers = vec![1.0; 17];
        let mut tape = Tape::new(true);
        let params = model.insert_params(&mut tape, false);
        let input = ForwardInput {
            token_ids: &ids,
            numbers: &numbers,
            batch: 1,
            seq: 17,
            real_mask: None,
        };
        assert!(matches!(
            model.forward(&mut tape, &params, &input, None),
            Err(ModelError::ContextOverflow(17, 16))
        ));
    }
}
