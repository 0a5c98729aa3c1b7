//! Joint loss: mean cross-entropy over masked token targets plus
//! `lambda * mean squared error` over masked `[NUM]` value targets, in
//! normalized space. Unmasked positions contribute to neither term.

use crate::real::Real;
use crate::tensor::{NodeId, Tape, Tensor};

use super::{MaskedBatch, Result};

pub struct LossNodes {
    pub total: NodeId,
    pub ce: Option<NodeId>,
    pub mse: Option<NodeId>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct LossValues {
    pub total: f64,
    pub ce: f64,
    pub mse: f64,
    pub token_targets: usize,
    pub number_targets: usize,
}

use serde::Serialize;

/// Build the loss on the tape. Returns `None` when the batch has no targets
/// at all (nothing to learn from).
pub fn compute_loss<T: Real>(
    tape: &mut Tape<T>,
    logits_flat: NodeId,
    number_preds: NodeId,
    batch: &MaskedBatch,
    lambda: f64,
) -> Result<Option<LossNodes>> {
    let mut ce = None;
    let mut mse = None;
    if !batch.token_targets.is_empty() {
        let positions: Vec<usize> = batch.token_targets.iter().map(|&(p, _)| p).collect();
        let targets: Vec<usize> = batch.token_targets.iter().map(|&(_, t)| t as usize).collect();
        let rows = tape.gather_rows(logits_flat, &positions)?;
        ce = Some(tape.cross_entropy(rows, &targets)?);
    }
    if !batch.number_targets.is_empty() && lambda != 0.0 {
        let positions: Vec<usize> = batch.number_targets.iter().map(|&(p, _)| p).collect();
        let values: Vec<f64> = batch.number_targets.iter().map(|&(_, v)| v).collect();
        let preds = tape.gather_rows(number_preds, &positions)?;
        let targets = tape.constant(Tensor::from_f64(vec![positions.len()], &values));
        let diff = tape.sub(preds, targets)?;
        let sq = tape.mul(diff, diff)?;
        let mean = tape.mean_all(sq)?;
        mse = Some(tape.scale(mean, lambda)?);
    }
    let total = match (ce, mse) {
        (Some(a), Some(b)) => tape.add(a, b)?,
        (Some(a), None) => a,
        (None, Some(b)) => b,
        (None, None) => return Ok(None),
    };
    Ok(Some(LossNodes { total, ce, mse }))
}

/// Loss from plain output arrays, for validation passes and tests. `logits`
/// is row-major `[positions, vocab]`; `mse` here is the unweighted mean
/// squared error (the `total` applies `lambda`).
pub fn eval_loss(
    logits: &[f64],
    vocab_size: usize,
    number_preds: &[f64],
    batch: &MaskedBatch,
    lambda: f64,
) -> LossValues {
    let mut ce = 0.0;
    for &(pos, target) in &batch.token_targets {
        let row = &logits[pos * vocab_size..(pos + 1) * vocab_size];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = row.iter().map(|x| (x - max).exp()).sum::<f64>().ln() + max;
        ce += lse - row[target as usize];
    }
    if !batch.token_targets.is_empty() {
        ce /= batch.token_targets.len() as f64;
    }
    let mut mse = 0.0;
    for &(pos, target) in &batch.number_targets {
        let d = number_preds[pos] - target;
        mse += d * d;
    }
    if !batch.number_targets.is_empty() {
        mse /= batch.number_targets.len() as f64;
    }
    LossValues {
        total: ce + lambda * mse,
        ce,
        mse,
        token_targets: batch.token_targets.len(),
        number_targets: batch.number_targets.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(token_targets: Vec<(usize, u32)>, number_targets: Vec<(usize, f64)>) -> MaskedBatch {
        MaskedBatch {
            token_ids: vec![],
            numbers: vec![],
            batch: 1,
            seq: 4,
            real_mask: vec![],
            token_targets,
            number_targets,
        }
    }

    #[test]
    fn uniform_logits_give_log_v() {
        let v = 7;
        let logits = vec![0.0; 4 * v];
        let preds = vec![0.0; 4];
        let b = batch(vec![(0, 1), (2, 3)], vec![]);
        let lv = eval_loss(&logits, v, &preds, &b, 1.0);
        assert!((lv.ce - (v as f64).ln()).abs() < 1e-12);
        assert_eq!(lv.mse, 0.0);
    }

    #[test]
    fn single_number_error_is_squared_times_lambda() {
        let logits = vec![0.0; 4];
        let preds = vec![1.0; 4];
        let b = batch(vec![], vec![(2, 3.0)]);
        let lv = eval_loss(&logits, 1, &preds, &b, 2.0);
        assert_eq!(lv.mse, 4.0);
        assert_eq!(lv.total, 8.0);
    }

    #[test]
    fn tape_loss_matches_eval_loss() {
        let v = 5;
        let positions = 6;
        let logits_data: Vec<f64> = (0..positions * v).map(|i| (i as f64 * 0.37).sin()).collect();
        let preds_data: Vec<f64> = (0..positions).map(|i| i as f64 * 0.5 - 1.0).collect();
        let b = batch(vec![(0, 2), (3, 4)], vec![(1, 0.5), (4, -2.0)]);

        let mut tape: Tape<f64> = Tape::new(true);
        let logits = tape.leaf(Tensor::new(vec![positions, v], logits_data.clone()), true);
        let preds = tape.leaf(Tensor::new(vec![positions], preds_data.clone()), true);
        let nodes = compute_loss(&mut tape, logits, preds, &b, 1.5)
            .unwrap()
            .unwrap();
        let total = tape.value(nodes.total).data()[0];
        let lv = eval_loss(&logits_data, v, &preds_data, &b, 1.5);
        assert!((total - lv.total).abs() < 1e-12, "{total} vs {}", lv.total);
    }

    #[test]
    fn unmasked_outputs_do_not_matter() {
        let v = 5;
        let positions = 6;
        let mut logits: Vec<f64> = (0..positions * v).map(|i| (i as f64 * 0.11).cos()).collect();
        let mut preds: Vec<f64> = (0..positions).map(|i| i as f64).collect();
        let b = batch(vec![(1, 0)], vec![(2, 1.0)]);
        let before = eval_loss(&logits, v, &preds, &b, 1.0);
        // zero all outputs at unmasked positions
        for pos in [0usize, 3, 4, 5] {
            for j in 0..v {
                logits[pos * v + j] = 0.0;
            }
            preds[pos] = 0.0;
        }
        preds[1] = 0.0; // token-masked but not a number target
        let after = eval_loss(&logits, v, &preds, &b, 1.0);
        assert_eq!(before, after);
    }

    #[test]
    fn empty_batch_yields_no_loss() {
        let b = batch(vec![], vec![]);
        let mut tape: Tape<f64> = Tape::new(true);
        let logits = tape.leaf(Tensor::zeros(vec![4, 3]), true);
        let preds = tape.leaf(Tensor::zeros(vec![4]), true);
        assert!(compute_loss(&mut tape, logits, preds, &b, 1.0)
            .unwrap()
            .is_none());
    }
}
