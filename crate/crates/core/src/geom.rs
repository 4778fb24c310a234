//! Small geometric helpers: axis-aligned boxes and dimension-generic
//! dense kernels for d <= 3 (points are flat `&[f64]` slices).

use crate::error::{Error, Result};

/// Axis-aligned box, `lo[i] <= x[i] <= hi[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AaBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl AaBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::Construction("box bounds must share a nonzero dimension".into()));
        }
        if lo.iter().zip(&hi).any(|(a, b)| !(a < b)) {
            return Err(Error::Construction(format!(
                "box must have lo < hi per axis, got lo={lo:?} hi={hi:?}"
            )));
        }
        Ok(Self { lo, hi })
    }

    /// Unit box `[0,1]^dim`.
    pub fn unit(dim: usize) -> Self {
        Self { lo: vec![0.0; dim], hi: vec![1.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(a, b)| b - a).product()
    }

    /// Closed-box membership.
    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(xi, (lo, hi))| *xi >= *lo && *xi <= *hi)
    }

    /// Strict interior membership.
    pub fn contains_interior(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(xi, (lo, hi))| *xi > *lo && *xi < *hi)
    }

    /// Signed distance of `x` outside the box (0 when inside).
    pub fn exit_distance(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(xi, (lo, hi))| (lo - xi).max(xi - hi).max(0.0))
            .fold(0.0, f64::max)
    }
}

/// `out = A x` for a row-major d x d matrix.
#[inline]
pub fn matvec(a: &[f64], x: &[f64], out: &mut [f64], d: usize) {
    for i in 0..d {
        let mut s = 0.0;
        for j in 0..d {
            s += a[i * d + j] * x[j];
        }
        out[i] = s;
    }
}

/// `c = a b` for row-major d x d matrices.
#[inline]
pub fn matmul(a: &[f64], b: &[f64], c: &mut [f64], d: usize) {
    for i in 0..d {
        for j in 0..d {
            let mut s = 0.0;
            for k in 0..d {
                s += a[i * d + k] * b[k * d + j];
            }
            c[i * d + j] = s;
        }
    }
}

/// Determinant of a row-major d x d matrix, d <= 3.
pub fn det(a: &[f64], d: usize) -> f64 {
    match d {
        1 => a[0],
        2 => a[0] * a[3] - a[1] * a[2],
        3 => {
            a[0] * (a[4] * a[8] - a[5] * a[7]) - a[1] * (a[3] * a[8] - a[5] * a[6])
                + a[2] * (a[3] * a[7] - a[4] * a[6])
        }
        _ => panic!("det supports d <= 3, got {d}"),
    }
}

/// Solve `A x = b` for d <= 3 by the adjugate; returns None when A is
/// numerically singular.
pub fn solve_small(a: &[f64], b: &[f64], d: usize) -> Option<Vec<f64>> {
    let da = det(a, d);
    if da.abs() < 1e-300 {
        return None;
    }
    let mut x = vec![0.0; d];
    match d {
        1 => x[0] = b[0] / da,
        2 => {
            x[0] = (a[3] * b[0] - a[1] * b[1]) / da;
            x[1] = (-a[2] * b[0] + a[0] * b[1]) / da;
        }
        3 => {
            let inv = [
                a[4] * a[8] - a[5] * a[7],
                a[2] * a[7] - a[1] * a[8],
                a[1] * a[5] - a[2] * a[4],
                a[5] * a[6] - a[3] * a[8],
                a[0] * a[8] - a[2] * a[6],
                a[2] * a[3] - a[0] * a[5],
                a[3] * a[7] - a[4] * a[6],
                a[1] * a[6] - a[0] * a[7],
                a[0] * a[4] - a[1] * a[3],
            ];
            for i in 0..3 {
                x[i] = (inv[i * 3] * b[0] + inv[i * 3 + 1] * b[1] + inv[i * 3 + 2] * b[2]) / da;
            }
        }
        _ => return None,
    }
    Some(x)
}

/// Euclidean norm of a slice.
#[inline]
pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Euclidean distance between equal-length slices.
#[inline]
pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn box_membership() {
        let b = AaBox::unit(2);
        assert!(b.contains(&[0.0, 1.0]));
        assert!(!b.contains_interior(&[0.0, 0.5]));
        assert_relative_eq!(b.exit_distance(&[1.25, 0.5]), 0.25);
    }

    #[test]
    fn solve3_roundtrip() {
        let a = [2.0, 1.0, 0.5, 0.0, 3.0, 1.0, 1.0, 0.0, 4.0];
        let x_true = [1.0, -2.0, 0.5];
        let mut b = [0.0; 3];
        matvec(&a, &x_true, &mut b, 3);
        let x = solve_small(&a, &b, 3).unwrap();
        for i in 0..3 {
            assert_relative_eq!(x[i], x_true[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn det_identity() {
        assert_relative_eq!(det(&[1.0, 0.0, 0.0, 1.0], 2), 1.0);
    }
}
