//! Masking and batch assembly.
//!
//! MLM masks each position independently: the token becomes `[MASK]` and the
//! aligned value lane entry becomes 1, so a masked `[NUM]` carries no trace
//! of its value. Targeted masks cover whole number spans of named fields and
//! drive the evaluation-style completions.

use rand::Rng;

use crate::codec::TokenizedSample;

use super::{Result, TrainError};

#[derive(Debug, Clone, Default)]
pub struct MaskedSample {
    pub token_ids: Vec<u32>,
    pub numbers: Vec<f64>,
    /// `(position, original token id)` per masked position.
    pub token_targets: Vec<(usize, u32)>,
    /// `(position, original value)` per masked `[NUM]` position.
    pub number_targets: Vec<(usize, f64)>,
}

/// Independently mask each position with probability `mask_prob`.
pub fn apply_mlm_mask(
    sample: &TokenizedSample,
    mask_prob: f64,
    mask_id: u32,
    num_id: Option<u32>,
    rng: &mut impl Rng,
) -> MaskedSample {
    let mut out = MaskedSample {
        token_ids: sample.token_ids.clone(),
        numbers: sample.numbers.clone(),
        ..Default::default()
    };
    for pos in 0..out.token_ids.len() {
        if rng.gen::<f64>() >= mask_prob {
            continue;
        }
        mask_position(&mut out, sample, pos, mask_id, num_id);
    }
    out
}

/// Mask exactly the token spans of the requested numbers (indices into
/// `sample.number_spans`).
pub fn targeted_mask(
    sample: &TokenizedSample,
    value_ordinals: &[usize],
    mask_id: u32,
    num_id: Option<u32>,
) -> Result<MaskedSample> {
    let mut out = MaskedSample {
        token_ids: sample.token_ids.clone(),
        numbers: sample.numbers.clone(),
        ..Default::default()
    };
    for &ord in value_ordinals {
        let &(start, len) = sample
            .number_spans
            .get(ord)
            .ok_or(TrainError::SpanOutOfRange(ord, sample.number_spans.len()))?;
        for pos in start..start + len {
            mask_position(&mut out, sample, pos, mask_id, num_id);
        }
    }
    Ok(out)
}

fn mask_position(
    out: &mut MaskedSample,
    sample: &TokenizedSample,
    pos: usize,
    mask_id: u32,
    num_id: Option<u32>,
) {
    let orig_id = sample.token_ids[pos];
    out.token_targets.push((pos, orig_id));
    if Some(orig_id) == num_id {
        out.number_targets.push((pos, sample.numbers[pos]));
    }
    out.token_ids[pos] = mask_id;
    out.numbers[pos] = 1.0;
}

/// Teacher-forced next-token targets for AR training (no masking; the number
/// target accompanies positions whose next token is `[NUM]`).
pub fn ar_targets(sample: &TokenizedSample, num_id: Option<u32>) -> MaskedSample {
    let mut out = MaskedSample {
        token_ids: sample.token_ids.clone(),
        numbers: sample.numbers.clone(),
        ..Default::default()
    };
    for pos in 0..sample.token_ids.len().saturating_sub(1) {
        let next = sample.token_ids[pos + 1];
        out.token_targets.push((pos, next));
        if Some(next) == num_id {
            out.number_targets.push((pos, sample.numbers[pos + 1]));
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct MaskedBatch {
    /// Row-major `[batch, seq]`, padded with `[PAD]`.
    pub token_ids: Vec<u32>,
    pub numbers: Vec<f64>,
    pub batch: usize,
    pub seq: usize,
    /// `false` at padding.
    pub real_mask: Vec<bool>,
    /// `(flat position, target id)` over the padded layout.
    pub token_targets: Vec<(usize, u32)>,
    pub number_targets: Vec<(usize, f64)>,
}

/// Pad to the batch max length; padding joins no loss term and is masked out
/// of attention.
pub fn collate(samples: &[MaskedSample], pad_id: u32) -> MaskedBatch {
    let batch = samples.len();
    let seq = samples.iter().map(|s| s.token_ids.len()).max().unwrap_or(0);
    let mut out = MaskedBatch {
        token_ids: vec![pad_id; batch * seq],
        numbers: vec![1.0; batch * seq],
        batch,
        seq,
        real_mask: vec![false; batch * seq],
        token_targets: Vec::new(),
        number_targets: Vec::new(),
    };
    for (b, s) in samples.iter().enumerate() {
        let off = b * seq;
        let n = s.token_ids.len();
        out.token_ids[off..off + n].copy_from_slice(&s.token_ids);
        out.numbers[off..off + n].copy_from_slice(&s.numbers);
        for m in out.real_mask[off..off + n].iter_mut() {
            *m = true;
        }
        out.token_targets
            .extend(s.token_targets.iter().map(|&(p, t)| (off + p, t)));
        out.number_targets
            .extend(s.number_targets.iter().map(|&(p, v)| (off + p, v)));
    }
    out
}
