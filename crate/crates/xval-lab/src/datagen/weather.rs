//! Weather-like synthetic surrogate: 60-90 stations uniform on the sphere,
//! 8-16 timesteps at 8-hour spacing, temperatures from a known generative
//! process (smooth spatial field + seasonal + diurnal sinusoids + noise),
//! normalized to unit variance per sample.

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{CorpusSample, GroundTruthField, Result, Split};

const HOURS_PER_STEP: f64 = 8.0;

pub fn gen_weather_sample(seed: u64, id: u64) -> CorpusSample {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(id.wrapping_add(1));
    let stations = rng.gen_range(60..=90usize);
    let steps = rng.gen_range(8..=16usize);

    // uniform on the sphere
    let mut lats = Vec::with_capacity(stations);
    let mut lons = Vec::with_capacity(stations);
    for _ in 0..stations {
        lats.push((2.0 * rng.gen::<f64>() - 1.0).asin());
        lons.push(rng.gen_range(-PI..PI));
    }
    // start phases along the year and day cycles
    let phase_doy = rng.gen_range(0.0..TAU);
    let phase_tod = rng.gen_range(0.0..TAU);

    // generative parameters (kept as ground truth)
    let spatial_dirs: Vec<[f64; 3]> = (0..3)
        .map(|_| {
            let z: f64 = 2.0 * rng.gen::<f64>() - 1.0;
            let az = rng.gen_range(-PI..PI);
            let r = (1.0 - z * z).sqrt();
            [r * az.cos(), r * az.sin(), z]
        })
        .collect();
    let spatial_coefs: Vec<f64> = (0..3)
        .map(|_| 0.6 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
        .collect();
    let amp_seasonal = rng.gen_range(0.5..1.5);
    let amp_diurnal = rng.gen_range(0.2..0.8);
    let noise_std = 0.3;

    let mut data = vec![0.0f64; stations * steps];
    for s in 0..stations {
        let u = [
            lats[s].cos() * lons[s].cos(),
            lats[s].cos() * lons[s].sin(),
            lats[s].sin(),
        ];
        let field: f64 = spatial_dirs
            .iter()
            .zip(&spatial_coefs)
            .map(|(v, c)| c * (u[0] * v[0] + u[1] * v[1] + u[2] * v[2]))
            .sum();
        for t in 0..steps {
            let hours = HOURS_PER_STEP * t as f64;
            let seasonal =
                amp_seasonal * lats[s].sin() * (phase_doy + TAU * hours / (24.0 * 365.0)).cos();
            let diurnal = amp_diurnal * (phase_tod + TAU * hours / 24.0 + lons[s]).cos();
            let noise: f64 =
                noise_std * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng);
            data[s * steps + t] = field + seasonal + diurnal + noise;
        }
    }
    // unit variance, zero mean per sample
    let n = data.len() as f64;
    let mean = data.iter().sum::<f64>() / n;
    let var = data.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let inv_std = 1.0 / var.sqrt().max(1e-9);
    for x in data.iter_mut() {
        *x = (*x - mean) * inv_std;
    }

    let mut text = String::from("{'description':{'coords':[");
    for s in 0..stations {
        if s > 0 {
            text.push(',');
        }
        text.push_str(&format!(
            "[{},{},{}]",
            super::sig3(lats[s].sin()),
            super::sig3(lons[s].sin()),
            super::sig3(lons[s].cos())
        ));
    }
    text.push_str(&format!(
        "],'start':[{},{},{},{}]}},'data':[",
        super::sig3(phase_doy.sin()),
        super::sig3(phase_doy.cos()),
        super::sig3(phase_tod.sin()),
        super::sig3(phase_tod.cos())
    ));
    for s in 0..stations {
        if s > 0 {
            text.push(',');
        }
        text.push('[');
        for t in 0..steps {
            if t > 0 {
                text.push(',');
            }
            text.push_str(&super::sig3(data[s * steps + t]));
        }
        text.push(']');
    }
    text.push_str("]}");

    // the final timestep of every station, scattered through the data block
    let first_data_ordinal = 3 * stations + 4;
    let mut ground_truth = BTreeMap::new();
    ground_truth.insert(
        "last_step".to_string(),
        GroundTruthField {
            values: (0..stations)
                .map(|s| super::sig3(data[s * steps + steps - 1]).parse().unwrap())
                .collect(),
            ordinals: (0..stations)
                .map(|s| first_data_ordinal + s * steps + steps - 1)
                .collect(),
        },
    );
    for (name, value) in [
        ("gen_amp_seasonal", amp_seasonal),
        ("gen_amp_diurnal", amp_diurnal),
        ("gen_noise_std", noise_std),
        ("gen_scale", inv_std),
    ] {
        ground_truth.insert(
            name.to_string(),
            GroundTruthField {
                values: vec![value],
                ordinals: vec![],
            },
        );
    }
    CorpusSample {
        id,
        text,
        split: Split::of_id(id),
        ground_truth,
    }
}

pub fn gen_weather_corpus(count: usize, seed: u64) -> Result<Vec<CorpusSample>> {
    use rayon::prelude::*;
    Ok((0..count as u64)
        .into_par_iter()
        .map(|id| gen_weather_sample(seed, id))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::extract_numbers;

    #[test]
    fn coords_and_start_within_unit_range() {
        let s = gen_weather_sample(3, 0);
        let (_, values, _) = extract_numbers(&s.text);
        let stations = s.ground_truth["last_step"].values.len();
        for &v in &values[..3 * stations + 4] {
            assert!((-1.0..=1.0).contains(&v), "{v}");
        }
    }

    #[test]
    fn per_sample_variance_near_unit() {
        for id in 0..5 {
            let s = gen_weather_sample(7, id);
            let (_, values, _) = extract_numbers(&s.text);
            let stations = s.ground_truth["last_step"].values.len();
            let data = &values[3 * stations + 4..];
            let n = data.len() as f64;
            let mean = data.iter().sum::<f64>() / n;
            let var = data.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            assert!((var - 1.0).abs() <= 0.05, "variance {var}");
        }
    }

    #[test]
    fn last_step_ordinals_scatter_per_station() {
        let s = gen_weather_sample(9, 2);
        let gt = &s.ground_truth["last_step"];
        let (_, values, _) = extract_numbers(&s.text);
        let stations = gt.values.len();
        assert!((60..=90).contains(&stations));
        assert_eq!(gt.ordinals.len(), stations);
        for (&ord, &v) in gt.ordinals.iter().zip(&gt.values) {
            assert!((values[ord] - v).abs() < 1e-12);
        }
        // scattered: ordinals are not contiguous
        assert!(gt.ordinals.windows(2).all(|w| w[1] - w[0] > 1));
    }
}
