//! Two-dimensional PCA of learned number-token embeddings.

use serde::Serialize;

use crate::codec::{Scheme, Vocabulary};
use crate::model::Model;
use crate::real::Real;

use super::{EvalError, Result};

#[derive(Debug, Clone, Serialize)]
pub struct PcaPoint {
    pub token: String,
    /// Numeric value of the token for color mapping, when it has one.
    pub value: Option<f64>,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PcaExport {
    pub explained_variance: [f64; 2],
    pub points: Vec<PcaPoint>,
}

impl PcaExport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("token,value,x,y\n");
        for p in &self.points {
            out.push_str(&format!(
                "{},{},{},{}\n",
                p.token,
                p.value.map_or(String::new(), |v| v.to_string()),
                p.x,
                p.y
            ));
        }
        out
    }
}

/// Mantissa-carrying tokens of a text scheme (digits for P10, mantissa
/// tokens otherwise), with the numeric value each represents.
pub fn mantissa_tokens(vocab: &Vocabulary) -> Vec<(u32, f64)> {
    let mut out = Vec::new();
    for &id in vocab.number_component_ids() {
        let tok = vocab.token(id).unwrap();
        let value = match vocab.scheme {
            Scheme::P10 => (tok.len() == 1 && tok.as_bytes()[0].is_ascii_digit())
                .then(|| tok.parse::<f64>().unwrap()),
            Scheme::P1000 => (tok.len() == 3 && tok.bytes().all(|b| b.is_ascii_digit()))
                .then(|| tok.parse::<f64>().unwrap()),
            Scheme::B1999 => (tok.len() == 4
                && (tok.starts_with('+') || tok.starts_with('-'))
                && tok[1..].bytes().all(|b| b.is_ascii_digit()))
            .then(|| tok.parse::<f64>().unwrap()),
            Scheme::Fp15 => tok
                .split_once(' ')
                .and_then(|(m, _)| m.parse::<f64>().ok()),
            Scheme::XVal => None,
        };
        if let Some(v) = value {
            out.push((id, v));
        }
    }
    out
}

/// PCA of the selected embedding rows: top-2 components via power iteration
/// with deflation, explained variance as eigenvalue fractions of the total.
pub fn embedding_pca<T: Real>(model: &Model<T>, tokens: &[(u32, f64)], vocab: &Vocabulary) -> Result<PcaExport> {
    if tokens.len() < 3 {
        return Err(EvalError::TooFewPoints(3));
    }
    let emb = model.param("embed.token");
    let d = model.config.d_model();
    let n = tokens.len();
    // center the selected rows
    let mut rows = vec![0.0f64; n * d];
    for (r, &(id, _)) in tokens.iter().enumerate() {
        for j in 0..d {
            rows[r * d + j] = emb.data()[id as usize * d + j].to_f64_();
        }
    }
    for j in 0..d {
        let mean: f64 = (0..n).map(|r| rows[r * d + j]).sum::<f64>() / n as f64;
        for r in 0..n {
            rows[r * d + j] -= mean;
        }
    }
    let total_var: f64 = rows.iter().map(|x| x * x).sum::<f64>() / (n as f64 - 1.0);

    let mut components = Vec::new();
    let mut eigenvalues = Vec::new();
    let mut work = rows.clone();
    for c in 0..2 {
        let (v, lambda) = top_component(&work, n, d, c as u64);
        // deflate: remove the component from every row
        for r in 0..n {
            let proj: f64 = (0..d).map(|j| work[r * d + j] * v[j]).sum();
            for j in 0..d {
                work[r * d + j] -= proj * v[j];
            }
        }
        components.push(v);
        eigenvalues.push(lambda);
    }

    let points = tokens
        .iter()
        .enumerate()
        .map(|(r, &(id, value))| PcaPoint {
            token: vocab.token(id).unwrap().to_string(),
            value: Some(value),
            x: (0..d).map(|j| rows[r * d + j] * components[0][j]).sum(),
            y: (0..d).map(|j| rows[r * d + j] * components[1][j]).sum(),
        })
        .collect();
    Ok(PcaExport {
        explained_variance: [
            eigenvalues[0] / total_var.max(1e-300),
            eigenvalues[1] / total_var.max(1e-300),
        ],
        points,
    })
}

/// Leading eigenvector of rows^T rows / (n-1) by power iteration.
fn top_component(rows: &[f64], n: usize, d: usize, salt: u64) -> (Vec<f64>, f64) {
    // deterministic quasi-random start
    let mut v: Vec<f64> = (0..d)
        .map(|j| (((j as u64 * 2654435761 + salt * 40503 + 1) % 1000) as f64 / 500.0) - 1.0)
        .collect();
    normalize(&mut v);
    let mut lambda = 0.0;
    for _ in 0..300 {
        // w = C v without forming C: rows^T (rows v) / (n-1)
        let mut rv = vec![0.0; n];
        for r in 0..n {
            rv[r] = (0..d).map(|j| rows[r * d + j] * v[j]).sum();
        }
        let mut w = vec![0.0; d];
        for r in 0..n {
            for j in 0..d {
                w[j] += rows[r * d + j] * rv[r];
            }
        }
        for x in w.iter_mut() {
            *x /= n as f64 - 1.0;
        }
        lambda = (0..d).map(|j| w[j] * v[j]).sum();
        normalize(&mut w);
        let delta: f64 = (0..d).map(|j| (w[j] - v[j]).abs()).sum();
        v = w;
        if delta < 1e-12 {
            break;
        }
    }
    (v, lambda.abs())
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
    for x in v.iter_mut() {
        *x /= norm;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, Mode, ModelConfig};

    fn model_with_embedding(emb: Vec<f64>, v: usize, d_heads: (usize, usize)) -> Model<f64> {
        let cfg = ModelConfig {
            n_layers: 1,
            n_heads: d_heads.0,
            head_dim: d_heads.1,
            vocab_size: 0,
            max_context: 8,
            mode: Mode::Mlm,
            trunk_biases: false,
            first_block_pre_mlp_layernorm: true,
            number_head_bias: true,
        };
        let mut m = build_model(&cfg, v, "h", None, 0).unwrap();
        let pos = m.param_pos("embed.token");
        m.params_mut()[pos].value.data_mut().copy_from_slice(&emb);
        m
    }

    #[test]
    fn orthonormal_rows_have_isotropic_spectrum() {
        // rows = identity: every direction explains ~1/(d-1) of the variance
        let d = 16usize;
        let mut emb = vec![0.0; d * d];
        for i in 0..d {
            emb[i * d + i] = 1.0;
        }
        let model = model_with_embedding(emb, d, (2, 8));
        let vocab = Vocabulary::build(Scheme::P10, &[]);
        let tokens: Vec<(u32, f64)> = (0..d as u32).map(|i| (i, i as f64)).collect();
        let out = embedding_pca(&model, &tokens, &vocab).unwrap();
        let expected = 1.0 / (d as f64 - 1.0); // ~2/d for the top-2 sum
        for ev in out.explained_variance {
            assert!(
                (ev - expected).abs() < 0.4 * expected,
                "{ev} vs {expected}"
            );
        }
    }

    #[test]
    fn duplicated_rows_project_identically() {
        let d = 8usize;
        let v = 6usize;
        let mut emb = vec![0.0; v * d];
        for i in 0..v {
            for j in 0..d {
                emb[i * d + j] = ((i / 2 + 1) * (j + 1)) as f64 * 0.1
                    + if j == i { 0.5 } else { 0.0 };
            }
        }
        // make rows 2 and 3 exact duplicates
        let dup: Vec<f64> = emb[2 * d..3 * d].to_vec();
        emb[3 * d..4 * d].copy_from_slice(&dup);
        let model = model_with_embedding(emb, v, (2, 4));
        let vocab = Vocabulary::build(Scheme::P10, &[]);
        let tokens: Vec<(u32, f64)> = (0..v as u32).map(|i| (i, i as f64)).collect();
        let out = embedding_pca(&model, &tokens, &vocab).unwrap();
        assert!((out.points[2].x - out.points[3].x).abs() < 1e-9);
        assert!((out.points[2].y - out.points[3].y).abs() < 1e-9);
    }

    #[test]
    fn too_few_tokens_rejected() {
        let model = model_with_embedding(vec![0.0; 2 * 8], 2, (2, 4));
        let vocab = Vocabulary::build(Scheme::P10, &[]);
        assert!(embedding_pca(&model, &[(0, 0.0), (1, 1.0)], &vocab).is_err());
    }

    #[test]
    fn mantissa_token_selection() {
        let vocab = Vocabulary::build(Scheme::P1000, &["{", "}"]);
        let toks = mantissa_tokens(&vocab);
        // 000 + 100..=999
        assert_eq!(toks.len(), 901);
        let vocab = Vocabulary::build(Scheme::P10, &[]);
        assert_eq!(mantissa_tokens(&vocab).len(), 10);
    }
}
