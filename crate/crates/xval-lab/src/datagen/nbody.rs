//! Planar N-body integration with a kick-drift-kick leapfrog.
//!
//! Units: G = 1, central mass 1 pinned at the origin. Planets feel the star
//! and each other. The integrator is symplectic and time-reversible; the
//! corpus `stepsize` is the output sampling interval, subdivided into
//! `substeps` internal steps.

use serde::{Deserialize, Serialize};

use super::{DatagenError, Result};

/// Pairwise distance below which a sample is aborted and regenerated.
pub const CLOSE_ENCOUNTER_DIST: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    /// Planet masses in units of the central mass.
    pub masses: Vec<f64>,
    /// Semimajor axes, innermost first.
    pub axes: Vec<f64>,
    pub eccentricities: Vec<f64>,
    /// Starting angle of each periapsis in the plane.
    pub thetas: Vec<f64>,
    /// Output sampling interval.
    pub stepsize: f64,
    /// Internal substeps per output interval.
    pub substeps: usize,
}

#[derive(Debug, Clone)]
pub struct NBodyState {
    pub masses: Vec<f64>,
    /// Flattened (x, y) per planet.
    pub pos: Vec<f64>,
    pub vel: Vec<f64>,
}

impl NBodyState {
    /// Each planet starts at periapsis of its Kepler orbit around the unit
    /// star, rotated by theta.
    pub fn from_elements(params: &SystemParams) -> NBodyState {
        let n = params.masses.len();
        let mut pos = Vec::with_capacity(2 * n);
        let mut vel = Vec::with_capacity(2 * n);
        for i in 0..n {
            let (a, e, th) = (params.axes[i], params.eccentricities[i], params.thetas[i]);
            let r = a * (1.0 - e);
            let v = ((1.0 + e) / (a * (1.0 - e))).sqrt();
            pos.push(r * th.cos());
            pos.push(r * th.sin());
            vel.push(-v * th.sin());
            vel.push(v * th.cos());
        }
        NBodyState {
            masses: params.masses.clone(),
            pos,
            vel,
        }
    }

    fn accelerations(&self) -> Vec<f64> {
        let n = self.masses.len();
        let mut acc = vec![0.0; 2 * n];
        for i in 0..n {
            let (xi, yi) = (self.pos[2 * i], self.pos[2 * i + 1]);
            // central star, mass 1 at the origin
            let r2 = xi * xi + yi * yi;
            let inv_r3 = 1.0 / (r2 * r2.sqrt());
            acc[2 * i] -= xi * inv_r3;
            acc[2 * i + 1] -= yi * inv_r3;
            for j in (i + 1)..n {
                let dx = self.pos[2 * j] - xi;
                let dy = self.pos[2 * j + 1] - yi;
                let d2 = dx * dx + dy * dy;
                let inv_d3 = 1.0 / (d2 * d2.sqrt());
                acc[2 * i] += self.masses[j] * dx * inv_d3;
                acc[2 * i + 1] += self.masses[j] * dy * inv_d3;
                acc[2 * j] -= self.masses[i] * dx * inv_d3;
                acc[2 * j + 1] -= self.masses[i] * dy * inv_d3;
            }
        }
        acc
    }

    /// One kick-drift-kick step.
    pub fn leapfrog_step(&mut self, h: f64) {
        let acc = self.accelerations();
        for (v, a) in self.vel.iter_mut().zip(&acc) {
            *v += 0.5 * h * a;
        }
        for (p, v) in self.pos.iter_mut().zip(&self.vel) {
            *p += h * v;
        }
        let acc = self.accelerations();
        for (v, a) in self.vel.iter_mut().zip(&acc) {
            *v += 0.5 * h * a;
        }
    }

    pub fn min_pairwise_distance(&self) -> f64 {
        let n = self.masses.len();
        let mut min = f64::INFINITY;
        for i in 0..n {
            for j in (i + 1)..n {
                let dx = self.pos[2 * i] - self.pos[2 * j];
                let dy = self.pos[2 * i + 1] - self.pos[2 * j + 1];
                min = min.min((dx * dx + dy * dy).sqrt());
            }
        }
        min
    }
}

/// Total mechanical energy (kinetic + star potential + pair potential).
pub fn total_energy(s: &NBodyState) -> f64 {
    let n = s.masses.len();
    let mut e = 0.0;
    for i in 0..n {
        let m = s.masses[i];
        let v2 = s.vel[2 * i] * s.vel[2 * i] + s.vel[2 * i + 1] * s.vel[2 * i + 1];
        e += 0.5 * m * v2;
        let r = (s.pos[2 * i] * s.pos[2 * i] + s.pos[2 * i + 1] * s.pos[2 * i + 1]).sqrt();
        e -= m / r;
        for j in (i + 1)..n {
            let dx = s.pos[2 * i] - s.pos[2 * j];
            let dy = s.pos[2 * i + 1] - s.pos[2 * j + 1];
            e -= m * s.masses[j] / (dx * dx + dy * dy).sqrt();
        }
    }
    e
}

/// Integrate and sample `(x, y)` per planet every `stepsize`, including the
/// initial state. Errors on a close encounter.
pub fn simulate_system(params: &SystemParams, n_outputs: usize) -> Result<Vec<Vec<(f64, f64)>>> {
    let mut state = NBodyState::from_elements(params);
    let n = params.masses.len();
    let h = params.stepsize / params.substeps as f64;
    let mut out: Vec<Vec<(f64, f64)>> = Vec::with_capacity(n_outputs);
    let snapshot = |s: &NBodyState| {
        (0..n)
            .map(|i| (s.pos[2 * i], s.pos[2 * i + 1]))
            .collect::<Vec<_>>()
    };
    out.push(snapshot(&state));
    for _ in 1..n_outputs {
        for _ in 0..params.substeps {
            state.leapfrog_step(h);
        }
        if n > 1 && state.min_pairwise_distance() < CLOSE_ENCOUNTER_DIST {
            return Err(DatagenError::Unstable(1));
        }
        out.push(snapshot(&state));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn circular_params(substeps: usize) -> SystemParams {
        SystemParams {
            masses: vec![0.0],
            axes: vec![1.0],
            eccentricities: vec![0.0],
            thetas: vec![0.0],
            stepsize: 0.2,
            substeps,
        }
    }

    #[test]
    fn circular_orbit_period_is_two_pi() {
        // massless planet at a = 1 around a unit star: period 2*pi
        let params = circular_params(100);
        let mut state = NBodyState::from_elements(&params);
        let h = params.stepsize / params.substeps as f64;
        let mut t = 0.0;
        let mut crossings = Vec::new();
        let mut prev_y = state.pos[1];
        while t < 20.0 {
            state.leapfrog_step(h);
            t += h;
            let y = state.pos[1];
            if prev_y < 0.0 && y >= 0.0 && state.vel[1] > 0.0 {
                crossings.push(t - h * y.abs() / (y - prev_y).abs());
            }
            prev_y = y;
        }
        assert!(crossings.len() >= 2, "no complete orbits");
        let period = crossings[1] - crossings[0];
        let two_pi = std::f64::consts::TAU;
        assert!(
            (period - two_pi).abs() / two_pi < 0.01,
            "period {period} vs {two_pi}"
        );
    }

    #[test]
    fn circular_orbit_radius_constant() {
        let params = circular_params(100);
        let traj = simulate_system(&params, 50).unwrap();
        for step in &traj {
            let (x, y) = step[0];
            let r = (x * x + y * y).sqrt();
            assert!((r - 1.0).abs() < 1e-4, "radius {r}");
        }
    }

    #[test]
    fn energy_drift_below_threshold() {
        let params = SystemParams {
            masses: vec![3e-5, 2e-5, 4e-5],
            axes: vec![1.0, 1.75, 2.5],
            eccentricities: vec![0.1, 0.05, 0.08],
            thetas: vec![0.0, 0.4, -0.3],
            stepsize: 0.8,
            substeps: 250,
        };
        let mut state = NBodyState::from_elements(&params);
        let e0 = total_energy(&state);
        let h = params.stepsize / params.substeps as f64;
        let mut max_drift = 0.0f64;
        for _ in 0..8 * params.substeps {
            state.leapfrog_step(h);
            let drift = ((total_energy(&state) - e0) / e0).abs();
            max_drift = max_drift.max(drift);
        }
        assert!(max_drift < 1e-6, "relative energy drift {max_drift}");
    }

    #[test]
    fn time_reversal_recovers_initial_state() {
        let params = SystemParams {
            masses: vec![3e-5, 2e-5],
            axes: vec![1.0, 2.0],
            eccentricities: vec![0.1, 0.03],
            thetas: vec![0.2, -0.1],
            stepsize: 0.5,
            substeps: 250,
        };
        let mut state = NBodyState::from_elements(&params);
        let start = state.clone();
        let h = params.stepsize / params.substeps as f64;
        let steps = 2000;
        for _ in 0..steps {
            state.leapfrog_step(h);
        }
        for _ in 0..steps {
            state.leapfrog_step(-h);
        }
        for (a, b) in state.pos.iter().zip(&start.pos) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
        for (a, b) in state.vel.iter().zip(&start.vel) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }
}
