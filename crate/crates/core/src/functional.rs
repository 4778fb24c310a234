//! Registry of endpoint functionals.
//!
//! Monte Carlo and variational runs take their test functionals from this
//! closed set (with parameters) instead of arbitrary code, so that
//! config-driven experiments stay reproducible. Every entry is evaluated
//! on the flat endpoint vector of the advanced point set and declares a
//! lower bound, which the Laplace estimators rely on.

use crate::error::{Error, Result};
use crate::optim::TerminalObjective;

#[derive(Debug, Clone, PartialEq)]
pub enum EndpointFunctional {
    /// `F = c`.
    Constant { value: f64 },
    /// `F(z) = (w/2) sum_p |z_p - c_p|^2`.
    Quadratic { centers: Vec<Vec<f64>>, weight: f64 },
    /// One-dimensional `F(z) = 1/2 (log z - center)^2`, extended below
    /// `floor` by the second-order Taylor polynomial so it stays smooth on
    /// all of R.
    LogSquared1d { center: f64, floor: f64 },
}

impl EndpointFunctional {
    pub fn quadratic_to_point(center: Vec<f64>, weight: f64) -> Self {
        Self::Quadratic { centers: vec![center], weight }
    }

    pub fn validate(&self, n_points: usize, dim: usize) -> Result<()> {
        match self {
            Self::Constant { .. } => Ok(()),
            Self::Quadratic { centers, weight } => {
                if centers.len() != n_points || centers.iter().any(|c| c.len() != dim) {
                    return Err(Error::Config(format!(
                        "quadratic functional expects {} centers of dim {dim}",
                        n_points
                    )));
                }
                if !weight.is_finite() || *weight < 0.0 {
                    return Err(Error::Config("quadratic weight must be finite and >= 0".into()));
                }
                Ok(())
            }
            Self::LogSquared1d { floor, .. } => {
                if dim != 1 || n_points != 1 {
                    return Err(Error::Config(
                        "log-squared functional applies to a single 1-d endpoint".into(),
                    ));
                }
                if !(*floor > 0.0) {
                    return Err(Error::Config("log-squared floor must be positive".into()));
                }
                Ok(())
            }
        }
    }

    pub fn lower_bound(&self) -> f64 {
        match self {
            Self::Constant { value } => *value,
            Self::Quadratic { .. } => 0.0,
            Self::LogSquared1d { .. } => 0.0,
        }
    }

    pub fn eval(&self, endpoints: &[f64]) -> f64 {
        match self {
            Self::Constant { value } => *value,
            Self::Quadratic { centers, weight } => {
                let d = centers[0].len();
                let mut s = 0.0;
                for (p, c) in centers.iter().enumerate() {
                    for i in 0..d {
                        let r = endpoints[p * d + i] - c[i];
                        s += r * r;
                    }
                }
                0.5 * weight * s
            }
            Self::LogSquared1d { center, floor } => {
                let z = endpoints[0];
                if z >= *floor {
                    let l = z.ln() - center;
                    0.5 * l * l
                } else {
                    // second-order continuation around the floor
                    let l0 = floor.ln() - center;
                    let v0 = 0.5 * l0 * l0;
                    let d1 = l0 / floor;
                    let d2 = (1.0 - l0) / (floor * floor);
                    let dz = z - floor;
                    v0 + d1 * dz + 0.5 * d2 * dz * dz
                }
            }
        }
    }

    pub fn eval_grad(&self, endpoints: &[f64], grad: &mut [f64]) -> f64 {
        match self {
            Self::Constant { value } => {
                grad.fill(0.0);
                *value
            }
            Self::Quadratic { centers, weight } => {
                let d = centers[0].len();
                for (p, c) in centers.iter().enumerate() {
                    for i in 0..d {
                        grad[p * d + i] = weight * (endpoints[p * d + i] - c[i]);
                    }
                }
                self.eval(endpoints)
            }
            Self::LogSquared1d { center, floor } => {
                let z = endpoints[0];
                grad[0] = if z >= *floor {
                    (z.ln() - center) / z
                } else {
                    let l0 = floor.ln() - center;
                    l0 / floor + (1.0 - l0) / (floor * floor) * (z - floor)
                };
                self.eval(endpoints)
            }
        }
    }
}

impl TerminalObjective for EndpointFunctional {
    fn value(&self, endpoints: &[f64]) -> f64 {
        self.eval(endpoints)
    }
    fn value_and_grad(&self, endpoints: &[f64], grad: &mut [f64]) -> f64 {
        self.eval_grad(endpoints, grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn quadratic_value_and_gradient() {
        let f = EndpointFunctional::Quadratic { centers: vec![vec![1.0, 0.0]], weight: 2.0 };
        let z = [1.5, -0.5];
        assert_relative_eq!(f.eval(&z), 0.5 * 2.0 * (0.25 + 0.25));
        let mut g = [0.0; 2];
        f.eval_grad(&z, &mut g);
        assert_eq!(g, [1.0, -1.0]);
    }

    #[test]
    fn log_squared_smooth_extension() {
        let f = EndpointFunctional::LogSquared1d { center: 0.0, floor: 1e-3 };
        assert_relative_eq!(f.eval(&[1.0]), 0.0);
        assert_relative_eq!(f.eval(&[std::f64::consts::E]), 0.5);
        // continuity across the floor
        let below = f.eval(&[1e-3 - 1e-9]);
        let above = f.eval(&[1e-3 + 1e-9]);
        assert!((below - above).abs() < 1e-4);
        // gradient against finite differences on both branches
        for z in [0.5, 2.0, 5e-4] {
            let h = 1e-7;
            let fd = (f.eval(&[z + h]) - f.eval(&[z - h])) / (2.0 * h);
            let mut g = [0.0];
            f.eval_grad(&[z], &mut g);
            assert_relative_eq!(g[0], fd, max_relative = 1e-5);
        }
    }
}
