//! Masked-field inference harness and the interpolation probes.
//!
//! Evaluation masks whole number spans of a named field, runs the model
//! once per batch, reads the two-stage inference out of the heads, and
//! denormalizes through the persisted spec. Invalid predictions (the token
//! head picked something that does not decode as a number) are excluded from
//! MSE and R² but counted in the invalid rate.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::codec::{tokenize_text, NormalizationSpec, Scheme, TokenizedSample, Vocabulary};
use crate::datagen::CorpusSample;
use crate::model::{infer_numbers, ForwardInput, Model};
use crate::real::Real;
use crate::tensor::Tape;
use crate::training::{collate, targeted_mask, MaskedSample};

use super::{r_squared, spearman, EvalError, Result};

pub struct EvalContext<'a, T: Real> {
    pub model: &'a Model<T>,
    pub vocab: &'a Vocabulary,
    pub norm: NormalizationSpec,
    pub scheme: Scheme,
    pub checkpoint_hash: String,
    pub dataset_hash: String,
    pub batch_size: usize,
}

impl<'a, T: Real> EvalContext<'a, T> {
    pub fn new(
        model: &'a Model<T>,
        vocab: &'a Vocabulary,
        norm: NormalizationSpec,
    ) -> Result<Self> {
        if model.vocab_hash != vocab.hash() {
            return Err(EvalError::VocabMismatch {
                model: model.vocab_hash.clone(),
                corpus: vocab.hash(),
            });
        }
        Ok(EvalContext {
            model,
            vocab,
            norm,
            scheme: vocab.scheme,
            checkpoint_hash: String::new(),
            dataset_hash: String::new(),
            batch_size: 16,
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SampleRecord {
    pub sample_id: u64,
    pub true_value: f64,
    /// Denormalized prediction; absent when the slot did not decode.
    pub predicted: Option<f64>,
    pub valid: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct FieldMetrics {
    pub n: usize,
    pub n_valid: usize,
    pub invalid_rate: f64,
    /// Over valid predictions only.
    pub mse: Option<f64>,
    pub r2: Option<f64>,
    pub adjusted_r2: Option<f64>,
    pub constant_truth: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub scheme: Scheme,
    pub checkpoint_hash: String,
    pub dataset_hash: String,
    pub fields: BTreeMap<String, FieldMetrics>,
    pub records: BTreeMap<String, Vec<SampleRecord>>,
}

/// One full-output forward over a collated batch, extracted as f64.
fn forward_batch<T: Real>(
    model: &Model<T>,
    batch: &crate::training::MaskedBatch,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut tape: Tape<T> = Tape::new(false);
    let params = model.insert_params(&mut tape, false);
    let input = ForwardInput {
        token_ids: &batch.token_ids,
        numbers: &batch.numbers,
        batch: batch.batch,
        seq: batch.seq,
        real_mask: Some(&batch.real_mask),
    };
    let out = model.forward(&mut tape, &params, &input, None)?;
    Ok((
        tape.value(out.logits_flat).to_f64_vec(),
        tape.value(out.number_preds).to_f64_vec(),
    ))
}

/// Predict the masked numbers of `field` for every sample; one record per
/// masked value, predictions denormalized.
fn predict_field<T: Real>(
    ctx: &EvalContext<T>,
    samples: &[CorpusSample],
    field: &str,
) -> Result<Vec<SampleRecord>> {
    let mut records = Vec::new();
    let mut batch_buf: Vec<(u64, TokenizedSample, MaskedSample, Vec<(usize, usize)>, Vec<f64>)> =
        Vec::new();

    let flush = |buf: &mut Vec<(u64, TokenizedSample, MaskedSample, Vec<(usize, usize)>, Vec<f64>)>,
                 records: &mut Vec<SampleRecord>|
     -> Result<()> {
        if buf.is_empty() {
            return Ok(());
        }
        let masked: Vec<MaskedSample> = buf.iter().map(|(_, _, m, _, _)| m.clone()).collect();
        let batch = collate(&masked, ctx.vocab.pad_id());
        let (logits, preds) = forward_batch(ctx.model, &batch)?;
        for (bi, (id, _, _, spans, truths)) in buf.iter().enumerate() {
            let offset = bi * batch.seq;
            let spans_flat: Vec<(usize, usize)> =
                spans.iter().map(|&(s, l)| (offset + s, l)).collect();
            let inferred = infer_numbers(ctx.scheme, ctx.vocab, &logits, &preds, &spans_flat);
            for (inf, &truth) in inferred.iter().zip(truths) {
                records.push(SampleRecord {
                    sample_id: *id,
                    true_value: truth,
                    predicted: inf.value.map(|v| ctx.norm.invert(v)),
                    valid: inf.valid,
                });
            }
        }
        buf.clear();
        Ok(())
    };

    for s in samples {
        let gt = s
            .ground_truth
            .get(field)
            .ok_or_else(|| EvalError::MissingField(field.to_string(), s.id))?;
        let tokenized = tokenize_text(ctx.scheme, ctx.vocab, &ctx.norm, &s.text)?;
        let masked = targeted_mask(
            &tokenized,
            &gt.ordinals,
            ctx.vocab.mask_id(),
            ctx.vocab.num_id(),
        )?;
        let spans: Vec<(usize, usize)> = gt
            .ordinals
            .iter()
            .map(|&o| tokenized.number_spans[o])
            .collect();
        batch_buf.push((s.id, tokenized, masked, spans, gt.values.clone()));
        if batch_buf.len() == ctx.batch_size {
            flush(&mut batch_buf, &mut records)?;
        }
    }
    flush(&mut batch_buf, &mut records)?;
    Ok(records)
}

fn aggregate(records: &[SampleRecord]) -> FieldMetrics {
    let n = records.len();
    let valid: Vec<&SampleRecord> = records.iter().filter(|r| r.valid).collect();
    let n_valid = valid.len();
    let mut mse = None;
    let mut r2 = None;
    let mut adjusted = None;
    let mut constant_truth = false;
    if n_valid > 0 {
        let se: f64 = valid
            .iter()
            .map(|r| {
                let d = r.predicted.unwrap() - r.true_value;
                d * d
            })
            .sum();
        mse = Some(se / n_valid as f64);
    }
    if n_valid >= 2 {
        let pred: Vec<f64> = valid.iter().map(|r| r.predicted.unwrap()).collect();
        let truth: Vec<f64> = valid.iter().map(|r| r.true_value).collect();
        if let Ok(rs) = r_squared(&pred, &truth) {
            constant_truth = rs.r2.is_none();
            r2 = rs.r2;
            adjusted = rs.adjusted_r2;
        }
    }
    FieldMetrics {
        n,
        n_valid,
        invalid_rate: if n == 0 {
            0.0
        } else {
            (n - n_valid) as f64 / n as f64
        },
        mse,
        r2,
        adjusted_r2: adjusted,
        constant_truth,
    }
}

/// Mask each named field in turn and score the model's completions.
pub fn eval_masked_fields<T: Real>(
    ctx: &EvalContext<T>,
    samples: &[CorpusSample],
    fields: &[String],
) -> Result<EvalReport> {
    let mut report = EvalReport {
        scheme: ctx.scheme,
        checkpoint_hash: ctx.checkpoint_hash.clone(),
        dataset_hash: ctx.dataset_hash.clone(),
        fields: BTreeMap::new(),
        records: BTreeMap::new(),
    };
    for field in fields {
        let records = predict_field(ctx, samples, field)?;
        report.fields.insert(field.clone(), aggregate(&records));
        report.records.insert(field.clone(), records);
    }
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct CurvePoint {
    pub true_value: f64,
    pub mean_prediction: Option<f64>,
    pub n: usize,
    pub n_valid: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct OodProbeReport {
    pub field: String,
    /// Fraction of valid predictions within `snap_delta` (normalized units)
    /// of any training-support value.
    pub snap_rate: f64,
    pub snap_delta: f64,
    pub support: Vec<f64>,
    /// Spearman rank correlation between grid values and mean predictions.
    pub spearman_rho: Option<f64>,
    pub interpolation_mse: Option<f64>,
    pub curve: Vec<CurvePoint>,
    pub records: Vec<SampleRecord>,
}

impl OodProbeReport {
    pub fn curve_csv(&self) -> String {
        let mut out = String::from("true_value,mean_prediction,n,n_valid\n");
        for p in &self.curve {
            out.push_str(&format!(
                "{},{},{},{}\n",
                p.true_value,
                p.mean_prediction.map_or(String::new(), |v| v.to_string()),
                p.n,
                p.n_valid
            ));
        }
        out
    }
}

/// Evaluate the masked field on out-of-distribution samples and summarize
/// interpolation behavior: snap-rate toward the training support and the
/// monotone-trend rank correlation.
pub fn ood_probe<T: Real>(
    ctx: &EvalContext<T>,
    ood_samples: &[CorpusSample],
    field: &str,
    support: &[f64],
    snap_delta: f64,
) -> Result<OodProbeReport> {
    let records = predict_field(ctx, ood_samples, field)?;
    // group by true value
    let mut by_value: BTreeMap<u64, (f64, Vec<&SampleRecord>)> = BTreeMap::new();
    for r in &records {
        by_value
            .entry(r.true_value.to_bits())
            .or_insert((r.true_value, Vec::new()))
            .1
            .push(r);
    }
    let mut curve: Vec<CurvePoint> = by_value
        .values()
        .map(|(tv, rs)| {
            let valid: Vec<f64> = rs.iter().filter_map(|r| r.predicted).collect();
            CurvePoint {
                true_value: *tv,
                mean_prediction: if valid.is_empty() {
                    None
                } else {
                    Some(valid.iter().sum::<f64>() / valid.len() as f64)
                },
                n: rs.len(),
                n_valid: valid.len(),
            }
        })
        .collect();
    curve.sort_by(|a, b| a.true_value.partial_cmp(&b.true_value).unwrap());

    let valid: Vec<&SampleRecord> = records.iter().filter(|r| r.valid).collect();
    let snapped = valid
        .iter()
        .filter(|r| {
            let p = ctx.norm.apply(r.predicted.unwrap());
            support
                .iter()
                .any(|&s| (p - ctx.norm.apply(s)).abs() <= snap_delta)
        })
        .count();
    let snap_rate = if valid.is_empty() {
        0.0
    } else {
        snapped as f64 / valid.len() as f64
    };
    let interpolation_mse = if valid.is_empty() {
        None
    } else {
        Some(
            valid
                .iter()
                .map(|r| {
                    let d = r.predicted.unwrap() - r.true_value;
                    d * d
                })
                .sum::<f64>()
                / valid.len() as f64,
        )
    };
    let curve_points: Vec<(f64, f64)> = curve
        .iter()
        .filter_map(|p| p.mean_prediction.map(|m| (p.true_value, m)))
        .collect();
    let xs: Vec<f64> = curve_points.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = curve_points.iter().map(|p| p.1).collect();
    Ok(OodProbeReport {
        field: field.to_string(),
        snap_rate,
        snap_delta,
        support: support.to_vec(),
        spearman_rho: spearman(&xs, &ys),
        interpolation_mse,
        curve,
        records,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct TraceRow {
    pub true_value: f64,
    /// `(token, mean logit)`, highest first.
    pub top: Vec<(String, f64)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct LogitsTrace {
    pub field: String,
    pub top_k: usize,
    pub rows: Vec<TraceRow>,
    /// Max absolute jump of any tracked token's logit between adjacent grid
    /// points.
    pub discontinuity: f64,
}

impl LogitsTrace {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("true_value");
        for i in 1..=self.top_k {
            out.push_str(&format!(",token{i},logit{i}"));
        }
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.true_value.to_string());
            for k in 0..self.top_k {
                if let Some((tok, logit)) = row.top.get(k) {
                    out.push_str(&format!(",{tok},{logit}"));
                } else {
                    out.push_str(",,");
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Record the top-k number-token logits at the masked mantissa position
/// across a grid of samples (text schemes only).
pub fn logits_trace<T: Real>(
    ctx: &EvalContext<T>,
    samples: &[CorpusSample],
    field: &str,
    top_k: usize,
) -> Result<LogitsTrace> {
    if ctx.scheme == Scheme::XVal {
        return Err(EvalError::NeedsTextScheme);
    }
    // offset of the (first) mantissa token inside a number span
    let mantissa_offset = match ctx.scheme {
        Scheme::P10 | Scheme::P1000 => 1,
        Scheme::B1999 | Scheme::Fp15 => 0,
        Scheme::XVal => unreachable!(),
    };
    let v = ctx.vocab.len();
    // mean logits per grid value over the number-component alphabet
    let mut by_value: BTreeMap<u64, (f64, Vec<f64>, usize)> = BTreeMap::new();
    for s in samples {
        let gt = s
            .ground_truth
            .get(field)
            .ok_or_else(|| EvalError::MissingField(field.to_string(), s.id))?;
        let tokenized = tokenize_text(ctx.scheme, ctx.vocab, &ctx.norm, &s.text)?;
        let masked = targeted_mask(
            &tokenized,
            &gt.ordinals,
            ctx.vocab.mask_id(),
            ctx.vocab.num_id(),
        )?;
        let batch = collate(&[masked], ctx.vocab.pad_id());
        let (logits, _) = forward_batch(ctx.model, &batch)?;
        let (start, _) = tokenized.number_spans[gt.ordinals[0]];
        let pos = start + mantissa_offset;
        let row = &logits[pos * v..(pos + 1) * v];
        let entry = by_value
            .entry(gt.values[0].to_bits())
            .or_insert((gt.values[0], vec![0.0; v], 0));
        for (acc, &x) in entry.1.iter_mut().zip(row) {
            *acc += x;
        }
        entry.2 += 1;
    }
    let mut rows_raw: Vec<(f64, Vec<f64>)> = by_value
        .values()
        .map(|(tv, sums, n)| (*tv, sums.iter().map(|s| s / *n as f64).collect()))
        .collect();
    rows_raw.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    let number_ids = ctx.vocab.number_component_ids();
    let mut rows = Vec::new();
    let mut tracked: Vec<u32> = Vec::new();
    for (tv, mean) in &rows_raw {
        let mut scored: Vec<(u32, f64)> = number_ids
            .iter()
            .map(|&id| (id, mean[id as usize]))
            .collect();
        scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        let top: Vec<(String, f64)> = scored
            .iter()
            .take(top_k)
            .map(|&(id, logit)| (ctx.vocab.token(id).unwrap().to_string(), logit))
            .collect();
        for &(id, _) in scored.iter().take(top_k) {
            if !tracked.contains(&id) {
                tracked.push(id);
            }
        }
        rows.push(TraceRow {
            true_value: *tv,
            top,
        });
    }
    let mut discontinuity = 0.0f64;
    for w in rows_raw.windows(2) {
        for &id in &tracked {
            let jump = (w[1].1[id as usize] - w[0].1[id as usize]).abs();
            discontinuity = discontinuity.max(jump);
        }
    }
    Ok(LogitsTrace {
        field: field.to_string(),
        top_k,
        rows,
        discontinuity,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::GroundTruthField;
    use crate::model::{build_model, Mode, ModelConfig};

    fn planet_like_setup(scheme: Scheme) -> (Vocabulary, Vec<CorpusSample>) {
        let vocab = Vocabulary::build(scheme, &["{", "}", "'", ":", ",", "v", "w"]);
        let samples: Vec<CorpusSample> = (0..6u64)
            .map(|id| {
                let val = 0.2 + 0.1 * id as f64;
                let mut gt = BTreeMap::new();
                gt.insert(
                    "v".to_string(),
                    GroundTruthField {
                        values: vec![val],
                        ordinals: vec![0],
                    },
                );
                CorpusSample {
                    id,
                    text: format!("{{'v':{val:.1},'w':{}}}", id),
                    split: crate::datagen::Split::Test,
                    ground_truth: gt,
                }
            })
            .collect();
        (vocab, samples)
    }

    fn tiny_model(vocab: &Vocabulary) -> Model<f64> {
        let cfg = ModelConfig {
            n_layers: 1,
            n_heads: 2,
            head_dim: 4,
            vocab_size: 0,
            max_context: 32,
            mode: Mode::Mlm,
            trunk_biases: false,
            first_block_pre_mlp_layernorm: true,
            number_head_bias: true,
        };
        build_model(&cfg, vocab.len(), &vocab.hash(), vocab.num_id(), 17).unwrap()
    }

    #[test]
    fn harness_reports_and_is_pure() {
        let (vocab, samples) = planet_like_setup(Scheme::XVal);
        let model = tiny_model(&vocab);
        let ctx = EvalContext::new(&model, &vocab, NormalizationSpec::IDENTITY).unwrap();
        let a = eval_masked_fields(&ctx, &samples, &["v".to_string()]).unwrap();
        let b = eval_masked_fields(&ctx, &samples, &["v".to_string()]).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        let m = &a.fields["v"];
        assert_eq!(m.n, 6);
        // untrained xval model still emits *something* per slot
        assert_eq!(m.n_valid + (m.invalid_rate * 6.0).round() as usize, 6);
    }

    #[test]
    fn vocab_mismatch_rejected() {
        let (vocab, _) = planet_like_setup(Scheme::XVal);
        let other = Vocabulary::build(Scheme::XVal, &["different"]);
        let model = tiny_model(&other);
        assert!(matches!(
            EvalContext::new(&model, &vocab, NormalizationSpec::IDENTITY),
            Err(EvalError::VocabMismatch { .. })
        ));
    }

    #[test]
    fn ood_probe_self_test_with_identity_oracle() {
        // perfect-oracle check of the snap-rate bookkeeping: predictions equal
        // truths, support = {0.2, 0.8} so only those two grid points snap
        let records: Vec<SampleRecord> = (0..5)
            .map(|i| {
                let v = 0.2 + 0.15 * i as f64;
                SampleRecord {
                    sample_id: i as u64,
                    true_value: v,
                    predicted: Some(v),
                    valid: true,
                }
            })
            .collect();
        // reuse the aggregation path through a fake report
        let support = [0.2, 0.8];
        let norm = NormalizationSpec::IDENTITY;
        let snapped = records
            .iter()
            .filter(|r| {
                support
                    .iter()
                    .any(|&s| (norm.apply(r.predicted.unwrap()) - norm.apply(s)).abs() <= 0.01)
            })
            .count();
        assert_eq!(snapped, 2); // 0.2 and 0.8 only
    }

    #[test]
    fn ood_probe_end_to_end_shapes() {
        let (vocab, samples) = planet_like_setup(Scheme::P1000);
        let model = tiny_model(&vocab);
        let ctx = EvalContext::new(&model, &vocab, NormalizationSpec::IDENTITY).unwrap();
        let rep = ood_probe(&ctx, &samples, "v", &[0.2, 0.3], 0.01).unwrap();
        assert_eq!(rep.curve.len(), 6);
        assert_eq!(rep.records.len(), 6);
        assert!(rep.curve_csv().starts_with("true_value,"));
    }

    #[test]
    fn logits_trace_is_text_scheme_only() {
        let (vocab, samples) = planet_like_setup(Scheme::XVal);
        let model = tiny_model(&vocab);
        let ctx = EvalContext::new(&model, &vocab, NormalizationSpec::IDENTITY).unwrap();
        assert!(matches!(
            logits_trace(&ctx, &samples, "v", 5),
            Err(EvalError::NeedsTextScheme)
        ));

        let (vocab, samples) = planet_like_setup(Scheme::P1000);
        let model = tiny_model(&vocab);
        let ctx = EvalContext::new(&model, &vocab, NormalizationSpec::IDENTITY).unwrap();
        let trace = logits_trace(&ctx, &samples, "v", 5).unwrap();
        assert_eq!(trace.rows.len(), 6);
        assert!(trace.rows.iter().all(|r| r.top.len() == 5));
        let csv = trace.to_csv();
        assert!(csv.lines().next().unwrap().split(',').count() == 1 + 2 * 5);
        // determinism: repeated grid point gives identical logits
        let t2 = logits_trace(&ctx, &samples, "v", 5).unwrap();
        assert_eq!(
            serde_json::to_string(&trace).unwrap(),
            serde_json::to_string(&t2).unwrap()
        );
    }
}
