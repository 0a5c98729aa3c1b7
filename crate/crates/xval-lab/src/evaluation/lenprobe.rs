//! Encoding-length spurious-correlation probe.
//!
//! Under the two-significant-figure, leading-zero-dropping rendering, the
//! token count of a number correlates with its sign and magnitude class, so
//! the mask length alone leaks the answer. The probe quantifies the cue with
//! a length-only logistic classifier and flags the anomaly class: values in
//! `[0.01, 0.1)` whose rendering collapses to length 2 (like `0.030 = 3E-2`),
//! which a length reader necessarily misclassifies.
//!
//! Optionally, a small MLM transformer is trained over the variable-length
//! token alphabet so its masked-number accuracy can be stratified by mask
//! length.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::codec::{
    extract_numbers, varlen_render, varlen_tokenize, Scheme, TokenizedSample,
    Vocabulary,
};
use crate::datagen::{CorpusSample, Dataset};
use crate::model::{build_model, Mode, Model, ModelConfig};
use crate::training::{train, SpecialIds, TrainConfig, TrainState};

use super::{EvalError, Result};

#[derive(Debug, Clone, Serialize)]
pub struct ClassifierResult {
    pub task: String,
    pub accuracy: f64,
    pub majority_baseline: f64,
    pub above_chance: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct AnomalyExample {
    pub value: f64,
    pub rendered: String,
    pub length: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct LengthProbeReport {
    pub values_examined: usize,
    /// Count of values per encoding length.
    pub length_histogram: BTreeMap<usize, usize>,
    /// Length-only logistic classifiers per task.
    pub classifiers: Vec<ClassifierResult>,
    /// Values in [0.01, 0.1) whose encoding length breaks the class trend.
    pub anomaly_count: usize,
    pub anomaly_examples: Vec<AnomalyExample>,
    /// Model accuracy per mask length, when a probe model was trained.
    pub model_accuracy_by_length: Option<BTreeMap<usize, f64>>,
}

/// 1-D logistic regression `P(y|len)` fit by Newton iterations.
fn logistic_fit(lengths: &[f64], labels: &[bool]) -> (f64, f64) {
    let (mut w, mut b) = (0.0f64, 0.0f64);
    for _ in 0..50 {
        let (mut g_w, mut g_b) = (0.0, 0.0);
        let (mut h_ww, mut h_wb, mut h_bb) = (0.0, 0.0, 0.0);
        for (&x, &y) in lengths.iter().zip(labels) {
            let p = 1.0 / (1.0 + (-(w * x + b)).exp());
            let err = p - if y { 1.0 } else { 0.0 };
            g_w += err * x;
            g_b += err;
            let s = p * (1.0 - p);
            h_ww += s * x * x;
            h_wb += s * x;
            h_bb += s;
        }
        // damped Newton step on the 2x2 Hessian
        let det = h_ww * h_bb - h_wb * h_wb;
        if det.abs() < 1e-12 {
            break;
        }
        let dw = (h_bb * g_w - h_wb * g_b) / det;
        let db = (h_ww * g_b - h_wb * g_w) / det;
        w -= dw;
        b -= db;
        if dw.abs() + db.abs() < 1e-10 {
            break;
        }
    }
    (w, b)
}

fn classifier_accuracy(lengths: &[f64], labels: &[bool], task: &str) -> ClassifierResult {
    let (w, b) = logistic_fit(lengths, labels);
    let correct = lengths
        .iter()
        .zip(labels)
        .filter(|(&x, &y)| (w * x + b > 0.0) == y)
        .count();
    let accuracy = correct as f64 / labels.len() as f64;
    let positives = labels.iter().filter(|&&y| y).count();
    let majority_baseline = positives.max(labels.len() - positives) as f64 / labels.len() as f64;
    ClassifierResult {
        task: task.to_string(),
        accuracy,
        majority_baseline,
        above_chance: accuracy > majority_baseline + 1e-9,
    }
}

/// Run the probe over the corpus values. `model_accuracy` supplies the
/// optional stratified accuracy of a trained probe model.
pub fn length_correlation_probe(
    samples: &[CorpusSample],
    max_values: usize,
    model_accuracy: Option<BTreeMap<usize, f64>>,
) -> Result<LengthProbeReport> {
    let mut lengths: Vec<f64> = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    let mut histogram: BTreeMap<usize, usize> = BTreeMap::new();
    let mut anomaly_count = 0usize;
    let mut anomaly_examples = Vec::new();
    'outer: for s in samples {
        let (_, nums, _) = extract_numbers(&s.text);
        for v in nums {
            let rendered = varlen_render(v);
            let len = varlen_tokenize(&rendered).len();
            *histogram.entry(len).or_insert(0) += 1;
            lengths.push(len as f64);
            values.push(v);
            // the trend says [0.01, 0.1) encodes at length >= 4; round
            // mantissas collapse to 2 and read as the wrong class
            if (0.01..0.1).contains(&v.abs()) && len <= 2 {
                anomaly_count += 1;
                if anomaly_examples.len() < 20 {
                    anomaly_examples.push(AnomalyExample {
                        value: v,
                        rendered,
                        length: len,
                    });
                }
            }
            if values.len() >= max_values {
                break 'outer;
            }
        }
    }
    if values.len() < 10 {
        return Err(EvalError::TooFewPoints(10));
    }
    let sign_labels: Vec<bool> = values.iter().map(|&v| v < 0.0).collect();
    let ge1_labels: Vec<bool> = values.iter().map(|&v| v.abs() >= 1.0).collect();
    let ge01_labels: Vec<bool> = values.iter().map(|&v| v.abs() >= 0.1).collect();
    let classifiers = vec![
        classifier_accuracy(&lengths, &sign_labels, "sign"),
        classifier_accuracy(&lengths, &ge1_labels, "magnitude >= 1"),
        classifier_accuracy(&lengths, &ge01_labels, "magnitude >= 0.1"),
    ];
    Ok(LengthProbeReport {
        values_examined: values.len(),
        length_histogram: histogram,
        classifiers,
        anomaly_count,
        anomaly_examples,
        model_accuracy_by_length: model_accuracy,
    })
}

/// Build the variable-length vocabulary over a corpus schema.
pub fn varlen_vocabulary(dataset: Dataset) -> Vocabulary {
    let mut schema = dataset.schema_tokens();
    // single digits, double digits, point, signs, exponents E-8..E+2
    schema.extend(["."]);
    let mut owned: Vec<String> = schema.iter().map(|s| s.to_string()).collect();
    for d in 0..10 {
        owned.push(d.to_string());
    }
    for d in 0..100 {
        owned.push(format!("{d:02}"));
    }
    owned.push("+".into());
    owned.push("-".into());
    for e in -8i8..=2 {
        owned.push(if e < 0 {
            format!("E-{}", -e)
        } else {
            format!("E+{e}")
        });
    }
    let refs: Vec<&str> = owned.iter().map(|s| s.as_str()).collect();
    // the varlen alphabet rides on the XVal scheme tag only for its specials;
    // numbers are expanded into text tokens below, never via [NUM]
    Vocabulary::build(Scheme::XVal, &refs)
}

/// Tokenize a document under the variable-length rendering.
pub fn varlen_tokenize_text(vocab: &Vocabulary, text: &str) -> Result<TokenizedSample> {
    let (template, raw, spans) = extract_numbers(text);
    let segments: Vec<&str> = template.split("[NUM]").collect();
    let mut token_ids = Vec::new();
    let mut number_spans = Vec::new();
    for (k, seg) in segments.iter().enumerate() {
        token_ids.extend(vocab.tokenize_structural(seg)?);
        if k == raw.len() {
            break;
        }
        let start = token_ids.len();
        for tok in varlen_tokenize(&varlen_render(raw[k])) {
            let id = vocab
                .id(&tok)
                .ok_or(crate::codec::CodecError::UnknownToken(tok))?;
            token_ids.push(id);
        }
        number_spans.push((start, token_ids.len() - start));
    }
    let n = token_ids.len();
    Ok(TokenizedSample {
        token_ids,
        numbers: vec![1.0; n],
        raw_values: raw,
        number_spans,
        source_spans: spans,
        underflow_flushed: 0,
    })
}

/// Train a small MLM model over the variable-length tokens and measure
/// masked-number accuracy (exact class of the decoded value) stratified by
/// mask length.
pub fn train_varlen_probe_model(
    samples: &[CorpusSample],
    dataset: Dataset,
    steps: u64,
    seed: u64,
) -> Result<(Model<f32>, BTreeMap<usize, f64>)> {
    let vocab = varlen_vocabulary(dataset);
    let tokenized: Vec<TokenizedSample> = samples
        .iter()
        .map(|s| varlen_tokenize_text(&vocab, &s.text))
        .collect::<Result<_>>()?;
    let max_len = tokenized.iter().map(|t| t.len()).max().unwrap_or(8);
    let mcfg = ModelConfig {
        n_layers: 2,
        n_heads: 4,
        head_dim: 16,
        vocab_size: 0,
        max_context: max_len.max(8),
        mode: Mode::Mlm,
        trunk_biases: false,
        first_block_pre_mlp_layernorm: true,
        number_head_bias: true,
    };
    let model = build_model::<f32>(&mcfg, vocab.len(), &vocab.hash(), None, seed)?;
    let mut state = TrainState::fresh(model, 0.1);
    let tcfg = TrainConfig {
        lr_max: 1e-3,
        lr_min_ratio: 0.1,
        warmup_steps: (steps / 10).max(1),
        total_steps: steps.max(2),
        batch_size: 8,
        mask_prob: 0.2,
        weight_decay: 0.1,
        number_loss_weight: 0.0,
        seed,
        mode: Mode::Mlm,
        grad_clip: 1.0,
        log_interval: 200,
        checkpoint_interval: u64::MAX,
        precision: "f32".into(),
    };
    let ids = SpecialIds {
        pad: vocab.pad_id(),
        mask: vocab.mask_id(),
        num: None,
    };
    train(&mut state, &tokenized, ids, &tcfg, None, |_| {}, |_| Ok(()))?;

    // stratified masked-number class accuracy over a sample subset
    let mut per_length: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for t in tokenized.iter().take(200) {
        for (ord, &(start, len)) in t.number_spans.iter().enumerate() {
            let truth = t.raw_values[ord];
            let masked = crate::training::targeted_mask(t, &[ord], vocab.mask_id(), None)?;
            let batch = crate::training::collate(&[masked], vocab.pad_id());
            let mut tape = crate::tensor::Tape::new(false);
            let params = state.model.insert_params(&mut tape, false);
            let input = crate::model::ForwardInput {
                token_ids: &batch.token_ids,
                numbers: &batch.numbers,
                batch: 1,
                seq: batch.seq,
                real_mask: Some(&batch.real_mask),
            };
            let out = state.model.forward(&mut tape, &params, &input, None)?;
            let logits = tape.value(out.logits_flat).to_f64_vec();
            let v = vocab.len();
            let toks: Vec<&str> = (start..start + len)
                .map(|p| {
                    let id = crate::model::argmax_token(&logits[p * v..(p + 1) * v]);
                    vocab.token(id).unwrap()
                })
                .collect();
            let decoded: f64 = toks.concat().parse().unwrap_or(f64::NAN);
            let correct = decoded.is_finite()
                && (decoded < 0.0) == (truth < 0.0)
                && (decoded.abs() >= 0.1) == (truth.abs() >= 0.1);
            let e = per_length.entry(len).or_insert((0, 0));
            e.1 += 1;
            if correct {
                e.0 += 1;
            }
        }
    }
    let acc = per_length
        .into_iter()
        .map(|(l, (c, n))| (l, c as f64 / n as f64))
        .collect();
    Ok((state.model, acc))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::gen_weather_corpus;

    #[test]
    fn length_cue_exists_on_weather_surrogate() {
        let samples = gen_weather_corpus(30, 13).unwrap();
        let report = length_correlation_probe(&samples, 20_000, None).unwrap();
        let sign = report.classifiers.iter().find(|c| c.task == "sign").unwrap();
        assert!(
            sign.above_chance,
            "sign accuracy {} <= baseline {}",
            sign.accuracy, sign.majority_baseline
        );
        let ge01 = report
            .classifiers
            .iter()
            .find(|c| c.task == "magnitude >= 0.1")
            .unwrap();
        assert!(ge01.above_chance);
        // plenty of unit-variance values collapse to round mantissas
        assert!(report.anomaly_count > 0, "no anomaly class found");
        for ex in &report.anomaly_examples {
            assert!(ex.length <= 2);
            assert!((0.01..0.1).contains(&ex.value.abs()));
        }
    }

    #[test]
    fn varlen_tokenization_roundtrips_lengths() {
        let vocab = varlen_vocabulary(Dataset::Weather);
        let t = varlen_tokenize_text(&vocab, "{'data':[.23,-.34,0.030]}").unwrap();
        let lens: Vec<usize> = t.number_spans.iter().map(|&(_, l)| l).collect();
        assert_eq!(lens, vec![2, 3, 2]);
    }
}
