//! Evaluation: regression metrics with invalid-prediction accounting,
//! masked-field inference, out-of-distribution probes, the encoding-length
//! spurious-cue probe, and embedding PCA export.

mod harness;
mod lenprobe;
mod pca;
mod svg;

pub use harness::{
    eval_masked_fields, logits_trace, ood_probe, EvalContext, EvalReport, FieldMetrics,
    LogitsTrace, OodProbeReport, SampleRecord,
};
pub use lenprobe::{length_correlation_probe, train_varlen_probe_model, LengthProbeReport};
pub use pca::{embedding_pca, mantissa_tokens, PcaExport};
pub use svg::{line_plot_svg, scatter_plot_svg, Series};

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("need at least {0} points")]
    TooFewPoints(usize),
    #[error("vocabulary hash mismatch: model {model} vs corpus {corpus}")]
    VocabMismatch { model: String, corpus: String },
    #[error("field {0:?} missing from sample {1}")]
    MissingField(String, u64),
    #[error("probe requires a text scheme, not xval")]
    NeedsTextScheme,
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Train(#[from] crate::training::TrainError),
    #[error(transparent)]
    Codec(#[from] crate::codec::CodecError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<V> = std::result::Result<V, EvalError>;

/// Plain and adjusted (p = 1) coefficients of determination. `None` when the
/// truth is constant (undefined denominator) — reported as a flag, not a
/// number.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RSquared {
    pub r2: Option<f64>,
    pub adjusted_r2: Option<f64>,
}

pub fn r_squared(pred: &[f64], truth: &[f64]) -> Result<RSquared> {
    if pred.len() != truth.len() || truth.len() < 2 {
        return Err(EvalError::TooFewPoints(2));
    }
    let n = truth.len() as f64;
    let mean = truth.iter().sum::<f64>() / n;
    let ss_tot: f64 = truth.iter().map(|t| (t - mean) * (t - mean)).sum();
    if ss_tot == 0.0 {
        return Ok(RSquared {
            r2: None,
            adjusted_r2: None,
        });
    }
    let ss_res: f64 = pred
        .iter()
        .zip(truth)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    let r2 = 1.0 - ss_res / ss_tot;
    // single-predictor adjustment
    let adjusted = if truth.len() > 2 {
        Some(1.0 - (1.0 - r2) * (n - 1.0) / (n - 2.0))
    } else {
        None
    };
    Ok(RSquared {
        r2: Some(r2),
        adjusted_r2: adjusted,
    })
}

/// Spearman rank correlation with average ranks on ties.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let rx = ranks(xs);
    let ry = ranks(ys);
    pearson(&rx, &ry)
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap_or(std::cmp::Ordering::Equal));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            out[idx[k]] = avg;
        }
        i = j + 1;
    }
    out
}

fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}
