//! Adam with decoupled weight decay and global-norm gradient clipping.
//!
//! Decay touches only the weight matrices: layer-norm gains, biases, and the
//! `[NUM]` embedding row are exempt (decaying the `[NUM]` direction would
//! shrink the value pathway itself).

use rayon::prelude::*;

use crate::model::{Model, NamedParam};
use crate::real::{real, Real};

const PAR_CHUNK: usize = 1 << 15;

pub struct AdamW<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub step_count: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> AdamW<T> {
    pub fn new(params: &[NamedParam<T>], weight_decay: f64) -> Self {
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step_count: 0,
            m: params.iter().map(|p| vec![T::zero(); p.value.numel()]).collect(),
            v: params.iter().map(|p| vec![T::zero(); p.value.numel()]).collect(),
        }
    }

    /// Global gradient norm across every parameter (computed in f64;
    /// per-parameter partial sums reduced in declaration order).
    pub fn global_norm(grads: &[Vec<T>]) -> f64 {
        let partials: Vec<f64> = grads
            .par_iter()
            .map(|g| {
                g.iter()
                    .map(|x| {
                        let v = x.to_f64_();
                        v * v
                    })
                    .sum::<f64>()
            })
            .collect();
        partials.iter().sum::<f64>().sqrt()
    }

    /// One update. `grads` align with the model's parameter order. Returns
    /// the pre-clip global gradient norm.
    pub fn step(
        &mut self,
        model: &mut Model<T>,
        grads: &[Vec<T>],
        lr: f64,
        clip: f64,
    ) -> f64 {
        self.step_count += 1;
        let norm = Self::global_norm(grads);
        let scale = if clip > 0.0 && norm > clip {
            clip / norm
        } else {
            1.0
        };
        let t = self.step_count as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        let (b1, b2) = (real::<T>(self.beta1), real::<T>(self.beta2));
        let one_m_b1 = T::one() - b1;
        let one_m_b2 = T::one() - b2;
        let epsv: T = real(self.eps);
        let lr_t: T = real(lr);
        let scale_t: T = real(scale);
        let inv_bc1: T = real(1.0 / bc1);
        let inv_bc2_sqrt: T = real(1.0 / bc2.sqrt());

        let num_row = model.num_token_id.map(|id| id as usize);
        let embed_pos = model.param_pos("embed.token");
        let d_model = model.config.d_model();

        for (pi, p) in model.params_mut().iter_mut().enumerate() {
            let wd: T = if p.decay {
                real(self.weight_decay)
            } else {
                T::zero()
            };
            // the [NUM] embedding row is exempt from decay
            let skip_range = if pi == embed_pos {
                num_row.map(|row| (row * d_model, (row + 1) * d_model))
            } else {
                None
            };
            let m = &mut self.m[pi];
            let v = &mut self.v[pi];
            let g = &grads[pi];
            let data = p.value.data_mut();
            let update = |offset: usize, data: &mut [T], m: &mut [T], v: &mut [T], g: &[T]| {
                for j in 0..data.len() {
                    let gj = g[j] * scale_t;
                    m[j] = b1 * m[j] + one_m_b1 * gj;
                    v[j] = b2 * v[j] + one_m_b2 * gj * gj;
                    let m_hat = m[j] * inv_bc1;
                    let v_hat_sqrt = (v[j] * inv_bc2_sqrt * inv_bc2_sqrt).sqrt();
                    let mut upd = lr_t * m_hat / (v_hat_sqrt + epsv);
                    let wd_here = match skip_range {
                        Some((lo, hi)) if offset + j >= lo && offset + j < hi => T::zero(),
                        _ => wd,
                    };
                    upd += lr_t * wd_here * data[j];
                    data[j] -= upd;
                }
            };
            if data.len() > PAR_CHUNK {
                data.par_chunks_mut(PAR_CHUNK)
                    .zip(m.par_chunks_mut(PAR_CHUNK))
                    .zip(v.par_chunks_mut(PAR_CHUNK))
                    .zip(g.par_chunks(PAR_CHUNK))
                    .enumerate()
                    .for_each(|(ci, (((d, m), v), g))| update(ci * PAR_CHUNK, d, m, v, g));
            } else {
                update(0, data, m, v, g);
            }
        }
        norm
    }

    /// Flattened state for checkpointing, in parameter order.
    pub fn state(&self) -> (&[Vec<T>], &[Vec<T>]) {
        (&self.m, &self.v)
    }

    pub fn restore(&mut self, m: Vec<Vec<T>>, v: Vec<Vec<T>>, step_count: u64) {
        self.m = m;
        self.v = v;
        self.step_count = step_count;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, tiny_config};

    #[test]
    fn single_parameter_update_matches_closed_form() {
        let cfg = tiny_config();
        let mut model = build_model::<f64>(&cfg, 10, "h", None, 1).unwrap();
        let w0 = model.param("num_head.w2").data()[0];
        let mut opt = AdamW::new(model.params(), 0.1);
        let grads: Vec<Vec<f64>> = model
            .params()
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let mut g = vec![0.0; p.value.numel()];
                if model.params()[i].name == "num_head.w2" {
                    g[0] = 0.5;
                }
                g
            })
            .collect();
        let lr = 1e-3;
        opt.step(&mut model, &grads, lr, 0.0);
        // bias-corrected first step: m_hat = g, v_hat = g^2
        let g = 0.5f64;
        let expected = w0 - lr * g / (g.abs() + 1e-8) - lr * 0.1 * w0;
        let got = model.param("num_head.w2").data()[0];
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    }

    #[test]
    fn decay_skips_gains_and_num_row() {
        let cfg = tiny_config();
        let mut model = build_model::<f64>(&cfg, 10, "h", Some(3), 1).unwrap();
        let d = cfg.d_model();
        let gain0 = model.param("block0.ln1.gain").data()[0];
        let num_row0 = model.param("embed.token").data()[3 * d];
        let other_row0 = model.param("embed.token").data()[d];
        let mut opt = AdamW::new(model.params(), 0.5);
        let grads: Vec<Vec<f64>> = model
            .params()
            .iter()
            .map(|p| vec![0.0; p.value.numel()])
            .collect();
        opt.step(&mut model, &grads, 1e-2, 0.0);
        // zero grads: only decay moves parameters
        assert_eq!(model.param("block0.ln1.gain").data()[0], gain0);
        assert_eq!(model.param("embed.token").data()[3 * d], num_row0);
        let decayed = model.param("embed.token").data()[d];
        assert!((decayed - other_row0 * (1.0 - 1e-2 * 0.5)).abs() < 1e-15);
    }

    #[test]
    fn clipping_bounds_global_norm() {
        let g = vec![vec![3.0f64, 4.0]];
        assert!((AdamW::global_norm(&g) - 5.0).abs() < 1e-15);
    }
}
