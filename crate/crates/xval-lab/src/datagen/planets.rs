//! Planetary-orbit corpus: systems drawn from uniform priors, integrated
//! with the leapfrog, serialized as JSON documents.
//!
//! Semimajor axes are equally spaced from 1 to `a_f`, so the innermost axis
//! is always exactly 1 in-distribution; masses are mapped to `[1, 5]` and
//! eccentricities to `[0, 2]` in the rendered text.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::{
    simulate_system, CorpusSample, DatagenError, GroundTruthField, OodSpec, Result, Split,
    SystemParams,
};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlanetPriors {
    pub n_planets: (usize, usize),
    pub mass: (f64, f64),
    pub a_f: (f64, f64),
    pub ecc: (f64, f64),
    pub theta_zero_prob: f64,
    pub theta_range: (f64, f64),
    pub stepsizes: Vec<f64>,
    pub timesteps: usize,
    pub substeps: usize,
}

impl Default for PlanetPriors {
    fn default() -> Self {
        PlanetPriors {
            n_planets: (2, 4),
            mass: (1e-5, 5e-5),
            a_f: (1.5, 3.0),
            ecc: (0.0, 0.1),
            theta_zero_prob: 0.3,
            theta_range: (-PI / 6.0, PI / 6.0),
            stepsizes: vec![0.2, 0.3, 0.5, 0.8],
            timesteps: 8,
            substeps: 250,
        }
    }
}

const MAX_ATTEMPTS: usize = 64;

/// Mass in central-mass units mapped to the rendered `[1, 5]` range.
pub fn mass_to_text(m: f64, priors: &PlanetPriors) -> f64 {
    let (lo, hi) = priors.mass;
    1.0 + 4.0 * (m - lo) / (hi - lo)
}

/// Eccentricity mapped to the rendered `[0, 2]` range.
pub fn ecc_to_text(e: f64, priors: &PlanetPriors) -> f64 {
    let (lo, hi) = priors.ecc;
    2.0 * (e - lo) / (hi - lo)
}

/// Override applied to one sampled field for OOD set construction.
#[derive(Debug, Clone, Copy)]
pub enum Override {
    Stepsize(f64),
    InnerAxis(f64),
}

/// One sample as a pure function of `(seed, id)`; resamples deterministically
/// on close encounters.
pub fn gen_planet_sample(
    priors: &PlanetPriors,
    seed: u64,
    id: u64,
    split: Split,
    over: Option<Override>,
) -> Result<CorpusSample> {
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(id * MAX_ATTEMPTS as u64 + attempt as u64 + 1);
        let n = rng.gen_range(priors.n_planets.0..=priors.n_planets.1);
        let masses: Vec<f64> = (0..n).map(|_| rng.gen_range(priors.mass.0..priors.mass.1)).collect();
        let a_f = rng.gen_range(priors.a_f.0..priors.a_f.1);
        let mut axes: Vec<f64> = (0..n)
            .map(|k| 1.0 + (a_f - 1.0) * k as f64 / (n - 1) as f64)
            .collect();
        let eccs: Vec<f64> = (0..n).map(|_| rng.gen_range(priors.ecc.0..priors.ecc.1)).collect();
        let thetas: Vec<f64> = (0..n)
            .map(|_| {
                if rng.gen::<f64>() < priors.theta_zero_prob {
                    0.0
                } else {
                    rng.gen_range(priors.theta_range.0..priors.theta_range.1)
                }
            })
            .collect();
        let mut stepsize = priors.stepsizes[rng.gen_range(0..priors.stepsizes.len())];
        match over {
            Some(Override::Stepsize(v)) => stepsize = v,
            Some(Override::InnerAxis(v)) => axes[0] = v,
            None => {}
        }
        let params = SystemParams {
            masses: masses.clone(),
            axes: axes.clone(),
            eccentricities: eccs.clone(),
            thetas,
            stepsize,
            substeps: priors.substeps,
        };
        let traj = match simulate_system(&params, priors.timesteps) {
            Ok(t) => t,
            Err(DatagenError::Unstable(_)) => continue,
            Err(e) => return Err(e),
        };
        return Ok(render_sample(priors, id, split, &params, &traj));
    }
    Err(DatagenError::Unstable(MAX_ATTEMPTS))
}

fn render_sample(
    priors: &PlanetPriors,
    id: u64,
    split: Split,
    params: &SystemParams,
    traj: &[Vec<(f64, f64)>],
) -> CorpusSample {
    let n = params.masses.len();
    let mut text = String::from("{'description':{");
    let mut ground_truth: BTreeMap<String, GroundTruthField> = BTreeMap::new();
    let mut ordinal = 0usize;
    for k in 0..n {
        let m_txt = super::sig3(mass_to_text(params.masses[k], priors));
        let a_txt = super::sig3(params.axes[k]);
        let e_txt = super::sig3(ecc_to_text(params.eccentricities[k], priors));
        text.push_str(&format!(
            "'planet{k}':{{'m':{m_txt},'a':{a_txt},'e':{e_txt}}},"
        ));
        for (field, rendered) in [("m", &m_txt), ("a", &a_txt), ("e", &e_txt)] {
            ground_truth.insert(
                format!("{field}{}", k + 1),
                GroundTruthField {
                    values: vec![rendered.parse().unwrap()],
                    ordinals: vec![ordinal],
                },
            );
            ordinal += 1;
        }
    }
    let s_txt = super::sig3(params.stepsize);
    text.push_str(&format!("'stepsize':{s_txt}}},'data':["));
    ground_truth.insert(
        "stepsize".to_string(),
        GroundTruthField {
            values: vec![s_txt.parse().unwrap()],
            ordinals: vec![ordinal],
        },
    );
    for (t, step) in traj.iter().enumerate() {
        if t > 0 {
            text.push(',');
        }
        text.push('[');
        for (k, &(x, y)) in step.iter().enumerate() {
            if k > 0 {
                text.push(',');
            }
            text.push_str(&format!("[{},{}]", super::sig3(x), super::sig3(y)));
        }
        text.push(']');
    }
    text.push_str("]}");
    CorpusSample {
        id,
        text,
        split,
        ground_truth,
    }
}

pub fn gen_planet_corpus(
    count: usize,
    seed: u64,
    priors: Option<&PlanetPriors>,
) -> Result<Vec<CorpusSample>> {
    let default_priors = PlanetPriors::default();
    let priors = priors.unwrap_or(&default_priors);
    use rayon::prelude::*;
    (0..count as u64)
        .into_par_iter()
        .map(|id| gen_planet_sample(priors, seed, id, Split::of_id(id), None))
        .collect()
}

const OOD_SEED_SALT: u64 = 0x00d5a17;

/// Fresh systems with the named field pinned to each grid value; all samples
/// are evaluation-only.
pub fn gen_planet_ood(
    spec: &OodSpec,
    seed: u64,
    priors: Option<&PlanetPriors>,
) -> Result<Vec<CorpusSample>> {
    let default_priors = PlanetPriors::default();
    let priors = priors.unwrap_or(&default_priors);
    let mut out = Vec::new();
    for (gi, &g) in spec.grid.iter().enumerate() {
        for k in 0..spec.per_value {
            let id = (gi * spec.per_value + k) as u64;
            let over = match spec.field.as_str() {
                "stepsize" => Override::Stepsize(g),
                "a1" => Override::InnerAxis(g),
                other => return Err(DatagenError::BadOodField(other.to_string())),
            };
            out.push(gen_planet_sample(
                priors,
                seed ^ OOD_SEED_SALT,
                id,
                Split::Test,
                Some(over),
            )?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::extract_numbers;

    #[test]
    fn schema_and_ordinals_line_up() {
        let priors = PlanetPriors::default();
        let s = gen_planet_sample(&priors, 1, 0, Split::Train, None).unwrap();
        assert!(s.text.starts_with("{'description':{'planet0':{'m':"));
        assert!(s.text.contains("'stepsize':"));
        assert!(s.text.contains("'data':["));
        let (_, values, _) = extract_numbers(&s.text);
        for (name, field) in &s.ground_truth {
            for (&v, &ord) in field.values.iter().zip(&field.ordinals) {
                assert!(
                    (values[ord] - v).abs() < 1e-12,
                    "{name}: ordinal {ord} -> {} vs {v}",
                    values[ord]
                );
            }
        }
        // data block: 2 coords per planet per timestep
        let n = s.ground_truth.keys().filter(|k| k.starts_with('m')).count();
        assert_eq!(values.len(), 3 * n + 1 + 2 * n * priors.timesteps);
    }

    #[test]
    fn mass_normalization_reference_point() {
        let priors = PlanetPriors::default();
        // mass 3e-5 maps to 1 + 4 * (3e-5 - 1e-5) / 4e-5 = 3.0
        assert!((mass_to_text(3e-5, &priors) - 3.0).abs() < 1e-12);
        assert!((ecc_to_text(0.05, &priors) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn priors_respected_over_many_samples() {
        let priors = PlanetPriors::default();
        let samples = gen_planet_corpus(400, 5, None).unwrap();
        let mut zero_thetas = 0usize;
        let mut total = 0usize;
        for s in &samples {
            let n = s.ground_truth.keys().filter(|k| k.starts_with('m')).count();
            assert!((2..=4).contains(&n));
            let a1 = s.ground_truth["a1"].values[0];
            assert!((a1 - 1.0).abs() < 1e-9, "inner axis {a1}");
            let step = s.ground_truth["stepsize"].values[0];
            assert!([0.2, 0.3, 0.5, 0.8].contains(&step));
            for k in 1..=n {
                let m = s.ground_truth[&format!("m{k}")].values[0];
                assert!((1.0..=5.0).contains(&m));
                let e = s.ground_truth[&format!("e{k}")].values[0];
                assert!((0.0..=2.0).contains(&e));
            }
            // crude zero-angle counter: first data point of planet0 lies on
            // the periapsis ray (y = 0) when theta = 0
            let (_, values, _) = extract_numbers(&s.text);
            let y0 = values[3 * n + 2];
            total += 1;
            if y0 == 0.0 {
                zero_thetas += 1;
            }
        }
        let frac = zero_thetas as f64 / total as f64;
        assert!((frac - 0.3).abs() < 0.08, "zero-theta fraction {frac}");
    }

    #[test]
    fn ood_sets_pin_the_field() {
        let spec = OodSpec {
            field: "stepsize".into(),
            grid: vec![0.35, 0.45],
            per_value: 3,
        };
        let samples = gen_planet_ood(&spec, 5, None).unwrap();
        assert_eq!(samples.len(), 6);
        for (i, s) in samples.iter().enumerate() {
            let expect = spec.grid[i / 3];
            assert!((s.ground_truth["stepsize"].values[0] - expect).abs() < 1e-9);
            assert_eq!(s.split, Split::Test);
        }
        let spec = OodSpec {
            field: "a1".into(),
            grid: vec![1.08],
            per_value: 2,
        };
        let samples = gen_planet_ood(&spec, 5, None).unwrap();
        for s in &samples {
            assert!((s.ground_truth["a1"].values[0] - 1.08).abs() < 1e-9);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = gen_planet_corpus(20, 9, None).unwrap();
        let b = gen_planet_corpus(20, 9, None).unwrap();
        assert_eq!(a, b);
    }
}
