//! Central-difference verification of reverse-mode gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Result, Tensor, TensorError};

pub struct FdCheckConfig {
    pub step: f64,
    pub sample_count: usize,
    pub seed: u64,
}

impl Default for FdCheckConfig {
    fn default() -> Self {
        FdCheckConfig {
            step: 1e-5,
            sample_count: 200,
            seed: 0,
        }
    }
}

/// Max relative error between analytic gradients and central differences over
/// randomly sampled parameter coordinates:
/// `|analytic - central| / (|analytic| + |central| + 1e-12)`.
///
/// `f` re-evaluates the scalar loss from scratch for perturbed parameters, so
/// it must be a pure function of them.
pub fn finite_difference_check(
    params: &[Tensor<f64>],
    analytic: &[Vec<f64>],
    mut f: impl FnMut(&[Tensor<f64>]) -> Result<f64>,
    cfg: &FdCheckConfig,
) -> Result<f64> {
    if !(1e-6..=1e-3).contains(&cfg.step) {
        return Err(TensorError::Invalid {
            op: "finite_difference_check",
            msg: format!("step {} outside [1e-6, 1e-3]", cfg.step),
        });
    }
    assert_eq!(params.len(), analytic.len());
    let sizes: Vec<usize> = params.iter().map(|p| p.numel()).collect();
    let total: usize = sizes.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let coords: Vec<usize> = if total <= cfg.sample_count {
        (0..total).collect()
    } else {
        (0..cfg.sample_count).map(|_| rng.gen_range(0..total)).collect()
    };

    let mut work: Vec<Tensor<f64>> = params.to_vec();
    let mut max_rel = 0.0f64;
    for flat in coords {
        // locate (tensor, offset)
        let mut rem = flat;
        let mut ti = 0;
        while rem >= sizes[ti] {
            rem -= sizes[ti];
            ti += 1;
        }
        let orig = work[ti].data()[rem];
        work[ti].data_mut()[rem] = orig + cfg.step;
        let up = f(&work)?;
        work[ti].data_mut()[rem] = orig - cfg.step;
        let down = f(&work)?;
        work[ti].data_mut()[rem] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(TensorError::NonFinite {
                op: "finite_difference_check",
            });
        }
        let central = (up - down) / (2.0 * cfg.step);
        let a = analytic[ti][rem];
        let rel = (a - central).abs() / (a.abs() + central.abs() + 1e-12);
        if rel > max_rel {
            max_rel = rel;
        }
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;

    #[test]
    fn cubic_gradient_matches() {
        // f(x) = x^3 at x = 2: analytic 12
        let params = vec![Tensor::new(vec![1], vec![2.0])];
        let analytic = vec![vec![12.0]];
        let rel = finite_difference_check(
            &params,
            &analytic,
            |p| {
                let x = p[0].data()[0];
                Ok(x * x * x)
            },
            &FdCheckConfig {
                step: 1e-5,
                sample_count: 10,
                seed: 1,
            },
        )
        .unwrap();
        assert!(rel <= 1e-8, "rel err {rel}");
    }

    #[test]
    fn constant_function_zero_error() {
        let params = vec![Tensor::new(vec![3], vec![1.0, -2.0, 0.5])];
        let analytic = vec![vec![0.0; 3]];
        let rel = finite_difference_check(
            &params,
            &analytic,
            |_| Ok(42.0),
            &FdCheckConfig::default(),
        )
        .unwrap();
        assert_eq!(rel, 0.0);
    }

    #[test]
    fn step_out_of_range_rejected() {
        let params = vec![Tensor::new(vec![1], vec![1.0])];
        let analytic = vec![vec![0.0]];
        let res = finite_difference_check(
            &params,
            &analytic,
            |_| Ok(0.0),
            &FdCheckConfig {
                step: 1e-2,
                sample_count: 1,
                seed: 0,
            },
        );
        assert!(res.is_err());
    }

    #[test]
    fn two_layer_gelu_mlp_checks_out() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let (din, dh) = (4, 6);
        let w1: Vec<f64> = (0..din * dh).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let w2: Vec<f64> = (0..dh).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let x: Vec<f64> = (0..din).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let x_in = Tensor::new(vec![1, din], x);
        let build = move |p: &[Tensor<f64>]| -> crate::tensor::Result<(Tape<f64>, Vec<crate::tensor::NodeId>, crate::tensor::NodeId)> {
            let mut tape = Tape::new(true);
            let w1 = tape.leaf(p[0].clone(), true);
            let w2 = tape.leaf(p[1].clone(), true);
            let x = tape.leaf(x_in.clone(), false);
            let h = tape.matmul(x, w1)?;
            let h = tape.gelu(h)?;
            let y = tape.matmul(h, w2)?;
            let sq = tape.mul(y, y)?;
            let loss = tape.mean_all(sq)?;
            Ok((tape, vec![w1, w2], loss))
        };

        let params = vec![
            Tensor::new(vec![din, dh], w1),
            Tensor::new(vec![dh, 1], w2),
        ];
        let (mut tape, ids, loss) = build(&params).unwrap();
        tape.backward(loss).unwrap();
        let analytic = vec![
            tape.grad(ids[0]).unwrap().to_vec(),
            tape.grad(ids[1]).unwrap().to_vec(),
        ];
        let rel = finite_difference_check(
            &params,
            &analytic,
            |p| {
                let (tape, _, loss) = build(p)?;
                Ok(tape.value(loss).data()[0])
            },
            &FdCheckConfig {
                step: 1e-5,
                sample_count: 60,
                seed: 9,
            },
        )
        .unwrap();
        assert!(rel <= 1e-5, "rel err {rel}");
    }
}
