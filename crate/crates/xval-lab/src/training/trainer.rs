//! The training loop.
//!
//! Determinism contract: batch selection and masking are stateless functions
//! of `(seed, step)`, so a run resumed from any checkpoint replays the exact
//! same step sequence bit-for-bit. Heads are evaluated only at target
//! positions; unmasked positions never touch the loss.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use crate::codec::TokenizedSample;
use crate::model::{ExtraTensor, ForwardInput, Model};
use crate::real::Real;
use crate::tensor::Tape;

use super::{
    apply_mlm_mask, ar_targets, collate, lr_at, AdamW, MaskedSample, Result, TrainConfig,
    TrainError,
};
use crate::model::Mode;

const BATCH_SALT: u64 = 0x9e3779b97f4a7c15;
const MASK_SALT: u64 = 0xc2b2ae3d27d4eb4f;

#[derive(Debug, Clone, Serialize)]
pub struct StepMetrics {
    pub step: u64,
    pub loss: f64,
    pub ce: f64,
    pub mse: f64,
    pub lr: f64,
    pub grad_norm: f64,
    pub wall_time: f64,
}

/// Ids the loop needs from the vocabulary.
#[derive(Debug, Clone, Copy)]
pub struct SpecialIds {
    pub pad: u32,
    pub mask: u32,
    pub num: Option<u32>,
}

pub struct TrainState<T> {
    pub model: Model<T>,
    pub opt: AdamW<T>,
    /// Steps already completed.
    pub step: u64,
}

impl<T: Real> TrainState<T> {
    pub fn fresh(model: Model<T>, weight_decay: f64) -> Self {
        let opt = AdamW::new(model.params(), weight_decay);
        TrainState {
            model,
            opt,
            step: 0,
        }
    }

    /// Optimizer state as checkpoint extras.
    pub fn opt_extras(&self) -> Vec<ExtraTensor> {
        let (m, v) = self.opt.state();
        let mut extras = Vec::new();
        for (kind, state) in [("m", m), ("v", v)] {
            for (p, s) in self.model.params().iter().zip(state) {
                extras.push(ExtraTensor {
                    name: format!("opt.{kind}.{}", p.name),
                    shape: vec![s.len()],
                    data: s.iter().map(|x| x.to_f64_() as f32).collect(),
                });
            }
        }
        extras
    }

    /// Rebuild optimizer state from checkpoint extras.
    pub fn resume(model: Model<T>, weight_decay: f64, step: u64, extras: &[ExtraTensor]) -> Self {
        let mut opt = AdamW::new(model.params(), weight_decay);
        let find = |name: &str| -> Option<Vec<T>> {
            extras
                .iter()
                .find(|e| e.name == name)
                .map(|e| e.data.iter().map(|&x| T::from_f64(x as f64)).collect())
        };
        let mut m = Vec::new();
        let mut v = Vec::new();
        for p in model.params() {
            m.push(find(&format!("opt.m.{}", p.name)).unwrap_or_else(|| vec![T::zero(); p.value.numel()]));
            v.push(find(&format!("opt.v.{}", p.name)).unwrap_or_else(|| vec![T::zero(); p.value.numel()]));
        }
        opt.restore(m, v, step);
        TrainState { model, opt, step }
    }
}

fn step_rng(seed: u64, salt: u64, step: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ salt);
    rng.set_stream(step.wrapping_add(1));
    rng
}

/// Deterministic batch of sample indices for a step.
pub fn batch_indices(seed: u64, step: u64, corpus_len: usize, batch_size: usize) -> Vec<usize> {
    let mut rng = step_rng(seed, BATCH_SALT, step);
    (0..batch_size).map(|_| rng.gen_range(0..corpus_len)).collect()
}

/// Run (or continue) training until `cfg.total_steps`, or `stop_at` if given
/// (the schedule still spans `total_steps`, so an interrupted run resumes
/// bit-identically). Emits metrics every `log_interval` steps and invokes
/// `on_checkpoint` at the configured interval and at the end.
pub fn train<T: Real>(
    state: &mut TrainState<T>,
    corpus: &[TokenizedSample],
    ids: SpecialIds,
    cfg: &TrainConfig,
    stop_at: Option<u64>,
    mut on_metrics: impl FnMut(&StepMetrics),
    mut on_checkpoint: impl FnMut(&TrainState<T>) -> Result<()>,
) -> Result<()> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let start = Instant::now();
    let end_step = stop_at.unwrap_or(cfg.total_steps).min(cfg.total_steps);
    while state.step < end_step {
        let step = state.step;
        let picked = batch_indices(cfg.seed, step, corpus.len(), cfg.batch_size);
        let mut mask_rng = step_rng(cfg.seed, MASK_SALT, step);
        let masked: Vec<MaskedSample> = picked
            .iter()
            .map(|&i| match cfg.mode {
                Mode::Mlm => apply_mlm_mask(&corpus[i], cfg.mask_prob, ids.mask, ids.num, &mut mask_rng),
                Mode::Ar => ar_targets(&corpus[i], ids.num),
            })
            .collect();
        let batch = collate(&masked, ids.pad);

        let mut tape: Tape<T> = Tape::new(false);
        let params = state.model.insert_params(&mut tape, true);
        let input = ForwardInput {
            token_ids: &batch.token_ids,
            numbers: &batch.numbers,
            batch: batch.batch,
            seq: batch.seq,
            real_mask: Some(&batch.real_mask),
        };
        let (trunk_out, _) = state.model.trunk(&mut tape, &params, &input, None)?;
        let d = state.model.config.d_model();
        let flat = tape.reshape(trunk_out, vec![batch.batch * batch.seq, d])?;

        // heads only at target positions
        let mut ce_node = None;
        let mut mse_node = None;
        if !batch.token_targets.is_empty() {
            let positions: Vec<usize> = batch.token_targets.iter().map(|&(p, _)| p).collect();
            let targets: Vec<usize> =
                batch.token_targets.iter().map(|&(_, t)| t as usize).collect();
            let rows = tape.gather_rows(flat, &positions)?;
            let logits = state.model.token_logits_from(&mut tape, &params, rows)?;
            ce_node = Some(tape.cross_entropy(logits, &targets)?);
        }
        if !batch.number_targets.is_empty() && cfg.number_loss_weight != 0.0 {
            let positions: Vec<usize> = batch.number_targets.iter().map(|&(p, _)| p).collect();
            let values: Vec<f64> = batch.number_targets.iter().map(|&(_, v)| v).collect();
            let rows = tape.gather_rows(flat, &positions)?;
            let preds = state.model.number_preds_from(&mut tape, &params, rows)?;
            let targets = tape.constant(crate::tensor::Tensor::from_f64(
                vec![values.len()],
                &values,
            ));
            let diff = tape.sub(preds, targets)?;
            let sq = tape.mul(diff, diff)?;
            let mean = tape.mean_all(sq)?;
            mse_node = Some(tape.scale(mean, cfg.number_loss_weight)?);
        }
        let total = match (ce_node, mse_node) {
            (Some(a), Some(b)) => tape.add(a, b)?,
            (Some(a), None) => a,
            (None, Some(b)) => b,
            (None, None) => {
                state.step += 1;
                continue;
            }
        };
        let loss_val = tape.value(total).data()[0].to_f64_();
        if !loss_val.is_finite() {
            return Err(TrainError::NonFiniteLoss {
                step,
                batch_ids: picked,
            });
        }
        tape.backward(total)?;
        let grads: Vec<Vec<T>> = params
            .all()
            .to_vec()
            .iter()
            .zip(state.model.params())
            .map(|(&n, p)| {
                tape.take_grad_of(n)
                    .unwrap_or_else(|| vec![T::zero(); p.value.numel()])
            })
            .collect();
        let ce_val = ce_node.map_or(0.0, |n| tape.value(n).data()[0].to_f64_());
        let mse_val = mse_node.map_or(0.0, |n| tape.value(n).data()[0].to_f64_());
        drop(tape);

        let lr = lr_at(step + 1, cfg)?;
        let grad_norm = state.opt.step(&mut state.model, &grads, lr, cfg.grad_clip);
        state.step += 1;

        if state.step % cfg.log_interval == 0 || state.step == end_step {
            on_metrics(&StepMetrics {
                step: state.step,
                loss: loss_val,
                ce: ce_val,
                mse: mse_val,
                lr,
                grad_norm,
                wall_time: start.elapsed().as_secs_f64(),
            });
        }
        if state.step % cfg.checkpoint_interval == 0 || state.step == end_step {
            on_checkpoint(state)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{encode, Scheme, Vocabulary};
    use crate::model::{build_model, ModelConfig};

    fn xval_setup() -> (Vocabulary, Vec<TokenizedSample>, ModelConfig) {
        let vocab = Vocabulary::build(Scheme::XVal, &["v", "w", "=", ";"]);
        let corpus = vec![
            encode(Scheme::XVal, &vocab, "v=[NUM];w=[NUM]", &[2.5, -1.0]).unwrap(),
            encode(Scheme::XVal, &vocab, "w=[NUM];v=[NUM]", &[0.5, 3.0]).unwrap(),
        ];
        let cfg = ModelConfig {
            n_layers: 2,
            n_heads: 2,
            head_dim: 8,
            vocab_size: 0,
            max_context: 16,
            mode: Mode::Mlm,
            trunk_biases: false,
            first_block_pre_mlp_layernorm: true,
            number_head_bias: true,
        };
        (vocab, corpus, cfg)
    }

    fn train_cfg(total: u64, seed: u64) -> TrainConfig {
        TrainConfig {
            lr_max: 6e-3,
            lr_min_ratio: 0.1,
            warmup_steps: 10,
            total_steps: total,
            batch_size: 4,
            mask_prob: 0.3,
            weight_decay: 0.01,
            number_loss_weight: 1.0,
            seed,
            mode: Mode::Mlm,
            grad_clip: 1.0,
            log_interval: 50,
            checkpoint_interval: 10_000,
            precision: "f32".into(),
        }
    }

    #[test]
    fn overfits_single_sample() {
        let (vocab, corpus, mcfg) = xval_setup();
        let corpus = vec![corpus[0].clone()];
        let model = build_model::<f32>(&mcfg, vocab.len(), &vocab.hash(), vocab.num_id(), 3)
            .unwrap();
        let mut state = TrainState::fresh(model, 0.01);
        let ids = SpecialIds {
            pad: vocab.pad_id(),
            mask: vocab.mask_id(),
            num: vocab.num_id(),
        };
        let cfg = train_cfg(500, 5);
        let mut last = f64::INFINITY;
        train(&mut state, &corpus, ids, &cfg, None, |m| last = m.loss, |_| Ok(())).unwrap();
        assert!(last < 1e-2, "final loss {last}");
    }

    #[test]
    fn gradient_reaches_num_embedding_row() {
        let (vocab, corpus, mcfg) = xval_setup();
        let model = build_model::<f64>(&mcfg, vocab.len(), &vocab.hash(), vocab.num_id(), 3)
            .unwrap();
        let masked = targeted_like(&corpus[0], &vocab);
        let batch = collate(&[masked], vocab.pad_id());
        let mut tape: Tape<f64> = Tape::new(true);
        let params = model.insert_params(&mut tape, true);
        let input = ForwardInput {
            token_ids: &batch.token_ids,
            numbers: &batch.numbers,
            batch: 1,
            seq: batch.seq,
            real_mask: None,
        };
        let out = model.forward(&mut tape, &params, &input, None).unwrap();
        let nodes = super::super::compute_loss(
            &mut tape,
            out.logits_flat,
            out.number_preds,
            &batch,
            1.0,
        )
        .unwrap()
        .unwrap();
        tape.backward(nodes.total).unwrap();
        let embed_node = params.all()[model.param_pos("embed.token")];
        let g = tape.grad(embed_node).unwrap();
        let d = model.config.d_model();
        let row = vocab.num_id().unwrap() as usize;
        let norm: f64 = g[row * d..(row + 1) * d].iter().map(|x| x * x).sum();
        assert!(norm > 0.0, "no gradient on [NUM] embedding");
    }

    fn targeted_like(sample: &TokenizedSample, vocab: &Vocabulary) -> MaskedSample {
        super::super::targeted_mask(sample, &[0, 1], vocab.mask_id(), vocab.num_id()).unwrap()
    }

    #[test]
    fn resume_is_bit_identical() {
        let (vocab, corpus, mcfg) = xval_setup();
        let ids = SpecialIds {
            pad: vocab.pad_id(),
            mask: vocab.mask_id(),
            num: vocab.num_id(),
        };
        let cfg = train_cfg(40, 9);

        // uninterrupted
        let model = build_model::<f32>(&mcfg, vocab.len(), &vocab.hash(), vocab.num_id(), 3)
            .unwrap();
        let mut full = TrainState::fresh(model, cfg.weight_decay);
        let mut full_metrics = Vec::new();
        train(&mut full, &corpus, ids, &cfg, None, |m| full_metrics.push((m.step, m.loss, m.grad_norm)), |_| Ok(())).unwrap();

        // stop at 20 under the same schedule, resume through the checkpoint
        let model = build_model::<f32>(&mcfg, vocab.len(), &vocab.hash(), vocab.num_id(), 3)
            .unwrap();
        let mut half = TrainState::fresh(model, cfg.weight_decay);
        train(&mut half, &corpus, ids, &cfg, Some(20), |_| {}, |_| Ok(())).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.bin");
        crate::model::save_checkpoint(&path, &half.model, half.step, cfg.seed, &half.opt_extras())
            .unwrap();
        let (model2, header, extras) = crate::model::load_checkpoint::<f32>(&path).unwrap();
        let mut resumed = TrainState::resume(model2, cfg.weight_decay, header.step, &extras);
        let mut resumed_metrics = Vec::new();
        train(&mut resumed, &corpus, ids, &cfg, None, |m| resumed_metrics.push((m.step, m.loss, m.grad_norm)), |_| Ok(())).unwrap();

        for (a, b) in full
            .model
            .params()
            .iter()
            .zip(resumed.model.params())
        {
            assert_eq!(a.value.data(), b.value.data(), "{} diverged", a.name);
        }
        let full_tail: Vec<_> = full_metrics
            .iter()
            .filter(|(s, _, _)| *s > 20)
            .collect();
        let resumed_all: Vec<_> = resumed_metrics.iter().collect();
        assert_eq!(full_tail, resumed_all);
    }

    #[test]
    fn lambda_zero_leaves_number_head_untrained() {
        let (vocab, corpus, mcfg) = xval_setup();
        let ids = SpecialIds {
            pad: vocab.pad_id(),
            mask: vocab.mask_id(),
            num: vocab.num_id(),
        };
        let mut cfg = train_cfg(30, 2);
        cfg.number_loss_weight = 0.0;
        cfg.weight_decay = 0.0;
        let model = build_model::<f32>(&mcfg, vocab.len(), &vocab.hash(), vocab.num_id(), 3)
            .unwrap();
        let w_before = model.param("num_head.w1").data().to_vec();
        let mut state = TrainState::fresh(model, cfg.weight_decay);
        train(&mut state, &corpus, ids, &cfg, None, |_| {}, |_| Ok(())).unwrap();
        // number head receives no gradient and no decay
        assert_eq!(state.model.param("num_head.w1").data(), &w_before[..]);
        // trunk did move
        assert_ne!(
            state.model.param("block0.attn.wq").data()[0],
            build_model::<f32>(&mcfg, vocab.len(), &vocab.hash(), vocab.num_id(), 3)
                .unwrap()
                .param("block0.attn.wq")
                .data()[0]
        );
    }
}
