//! Brownian driving paths on a fixed time grid.
//!
//! One `NoisePath` carries the increments of `L` independent scalar
//! Brownian motions, shared by every spatial point advanced under it; that
//! sharing is what makes a simulated point cloud a sample of a *flow*
//! rather than `P` independent diffusions. Increments are generated by the
//! counter RNG keyed on `(seed, stream, mode, step)`, so paths are
//! reproducible independent of evaluation order and thread count.
//!
//! Sub-step increments are defined through the piecewise-linear
//! interpolant of the discrete path: the increment over `[a, b]` is the
//! grid increments it covers plus proportional fractions of the partially
//! covered steps. Increments over adjacent intervals therefore add exactly,
//! and an interval aligned with the grid reproduces the raw increments bit
//! for bit.

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone)]
pub struct NoisePath {
    t0: f64,
    dt: f64,
    /// `increments[l * n_steps + k]` is the increment of mode `l` over step
    /// `k`, distributed N(0, dt).
    increments: Vec<f64>,
    n_modes: usize,
    n_steps: usize,
    seed: u64,
    stream: u64,
}

impl NoisePath {
    /// Samples a path of `n_steps` increments for `n_modes` modes starting
    /// at `t0`. `stream` distinguishes independent Monte Carlo replicas
    /// drawn from the same seed.
    pub fn generate(
        seed: u64,
        stream: u64,
        n_modes: usize,
        n_steps: usize,
        dt: f64,
        t0: f64,
    ) -> Result<Self> {
        if !(dt > 0.0) || n_steps == 0 {
            return Err(Error::Config(format!(
                "noise grid needs dt > 0 and at least one step (dt={dt}, steps={n_steps})"
            )));
        }
        let sqrt_dt = dt.sqrt();
        let mut increments = vec![0.0; n_modes * n_steps];
        for l in 0..n_modes {
            for k in 0..n_steps {
                increments[l * n_steps + k] =
                    sqrt_dt * rng::standard_normal(seed, stream, l as u64, k as u64);
            }
        }
        Ok(Self { t0, dt, increments, n_modes, n_steps, seed, stream })
    }

    /// An all-zero path on the same kind of grid, for deterministic runs.
    pub fn zeros(n_modes: usize, n_steps: usize, dt: f64, t0: f64) -> Result<Self> {
        if !(dt > 0.0) || n_steps == 0 {
            return Err(Error::Config("noise grid needs dt > 0 and at least one step".into()));
        }
        Ok(Self {
            t0,
            dt,
            increments: vec![0.0; n_modes * n_steps],
            n_modes,
            n_steps,
            seed: 0,
            stream: 0,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn t_end(&self) -> f64 {
        self.t0 + self.dt * self.n_steps as f64
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Raw grid increment of mode `l` over step `k`.
    pub fn raw_increment(&self, l: usize, k: usize) -> f64 {
        self.increments[l * self.n_steps + k]
    }

    pub fn covers(&self, a: f64, b: f64) -> bool {
        let tol = 1e-9 * self.dt;
        a >= self.t0 - tol && b <= self.t_end() + tol
    }

    /// Locates `a` on the grid as (step index, fractional offset), snapping
    /// to grid points within a relative 1e-9 tolerance so aligned queries
    /// stay exact.
    fn locate(&self, a: f64) -> (usize, f64) {
        let pos = (a - self.t0) / self.dt;
        let idx = pos.floor();
        let mut j = idx as isize;
        let mut frac = pos - idx;
        let tol = 1e-9;
        if frac > 1.0 - tol {
            j += 1;
            frac = 0.0;
        } else if frac < tol {
            frac = 0.0;
        }
        let j = j.clamp(0, self.n_steps as isize) as usize;
        (j, frac)
    }

    /// Increment of the linearly interpolated Brownian path of mode `l`
    /// over `[a, b]`. Requires the path to cover `[a, b]`.
    pub fn increment(&self, l: usize, a: f64, b: f64) -> Result<f64> {
        if b < a {
            return Err(Error::Config(format!("increment interval reversed: [{a}, {b}]")));
        }
        if !self.covers(a, b) {
            return Err(Error::Config(format!(
                "noise grid [{}, {}] does not cover [{a}, {b}]",
                self.t0,
                self.t_end()
            )));
        }
        let (ja, fa) = self.locate(a);
        let (jb, fb) = self.locate(b);
        if ja == jb {
            if fa == 0.0 && fb == 0.0 {
                return Ok(0.0);
            }
            return Ok(self.raw_increment(l, ja) * (fb - fa));
        }
        let mut s = if fa > 0.0 { self.raw_increment(l, ja) * (1.0 - fa) } else { self.raw_increment(l, ja) };
        for k in (ja + 1)..jb {
            s += self.raw_increment(l, k);
        }
        if fb > 0.0 {
            s += self.raw_increment(l, jb) * fb;
        }
        Ok(s)
    }

    /// Total increment over the whole grid (the terminal Brownian value
    /// when the path starts at zero).
    pub fn total(&self, l: usize) -> f64 {
        (0..self.n_steps).map(|k| self.raw_increment(l, k)).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn aligned_increment_is_bit_exact() {
        let p = NoisePath::generate(9, 0, 2, 50, 0.02, 0.0).unwrap();
        let inc = p.increment(1, 0.02 * 10.0, 0.02 * 11.0).unwrap();
        assert_eq!(inc.to_bits(), p.raw_increment(1, 10).to_bits());
    }

    #[test]
    fn increments_add_over_a_split() {
        let p = NoisePath::generate(3, 0, 1, 100, 0.01, 0.0).unwrap();
        let whole = p.increment(0, 0.0, 1.0).unwrap();
        // split at an off-grid time
        let t = 0.3337;
        let sum = p.increment(0, 0.0, t).unwrap() + p.increment(0, t, 1.0).unwrap();
        assert_relative_eq!(whole, sum, epsilon = 1e-12);
    }

    #[test]
    fn rejects_uncovered_interval() {
        let p = NoisePath::generate(1, 0, 1, 10, 0.1, 0.0).unwrap();
        assert!(p.increment(0, 0.5, 1.5).is_err());
    }

    #[test]
    fn variance_scales_with_dt() {
        let p = NoisePath::generate(11, 0, 1, 20_000, 0.25, 0.0).unwrap();
        let var: f64 =
            (0..p.n_steps()).map(|k| p.raw_increment(0, k).powi(2)).sum::<f64>() / 20_000.0;
        assert_relative_eq!(var, 0.25, max_relative = 0.05);
    }
}
