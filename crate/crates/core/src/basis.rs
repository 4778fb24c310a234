//! Finite mode families realizing local characteristics `(a, b)`.
//!
//! A basis family holds a drift field `b` and an ordered list of mode
//! fields `f_1..f_L`, each mapping `(x, t)` to a velocity in R^d. The
//! spatial covariance they induce is
//!
//! ```text
//! a(x, y, t) = sum_l f_l(x, t) f_l(y, t)'
//! ```
//!
//! which is symmetric under `(x, y)` exchange plus transposition by
//! construction, and positive semidefinite as a sum of outer products.
//! The infinite mode sum of the underlying representation is truncated to
//! `L` user-chosen modes; `L` is part of the model definition, not a
//! tolerance knob. All shipped constructors produce time-independent
//! fields, but every evaluation takes `t` so time-varying families fit the
//! same interface.

use crate::error::{Error, Result};
use crate::geom::AaBox;

/// Relative width of the boundary ramp of the smooth cutoff: the cutoff is
/// exactly 1 on the inner 90% of the support box and exactly 0 on its
/// boundary.
const CUTOFF_MARGIN: f64 = 0.05;

/// Quintic smoothstep on [0, 1] with vanishing first and second
/// derivatives at both ends.
#[inline]
fn smoothstep(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else if t >= 1.0 {
        1.0
    } else {
        t * t * t * (10.0 + t * (-15.0 + 6.0 * t))
    }
}

#[inline]
fn smoothstep_deriv(t: f64) -> f64 {
    if t <= 0.0 || t >= 1.0 {
        0.0
    } else {
        30.0 * t * t * (1.0 - t) * (1.0 - t)
    }
}

/// Smooth cutoff for a support box: product over axes of a ramp that rises
/// from 0 on the boundary to 1 at 5% of the axis width, so the inner 90%
/// of the box is untouched.
pub fn smooth_cutoff(support: &AaBox, x: &[f64]) -> f64 {
    let mut chi = 1.0;
    for j in 0..support.dim() {
        let w = support.hi[j] - support.lo[j];
        let xi = (x[j] - support.lo[j]) / w;
        chi *= smoothstep(xi / CUTOFF_MARGIN) * smoothstep((1.0 - xi) / CUTOFF_MARGIN);
        if chi == 0.0 {
            return 0.0;
        }
    }
    chi
}

/// Gradient of [`smooth_cutoff`] with respect to `x`, written into `out`.
fn smooth_cutoff_grad(support: &AaBox, x: &[f64], out: &mut [f64]) {
    let d = support.dim();
    let mut ramps = vec![0.0; d];
    let mut dramps = vec![0.0; d];
    for j in 0..d {
        let w = support.hi[j] - support.lo[j];
        let xi = (x[j] - support.lo[j]) / w;
        let a = smoothstep(xi / CUTOFF_MARGIN);
        let b = smoothstep((1.0 - xi) / CUTOFF_MARGIN);
        ramps[j] = a * b;
        let da = smoothstep_deriv(xi / CUTOFF_MARGIN) / (CUTOFF_MARGIN * w);
        let db = -smoothstep_deriv((1.0 - xi) / CUTOFF_MARGIN) / (CUTOFF_MARGIN * w);
        dramps[j] = da * b + a * db;
    }
    for j in 0..d {
        let mut g = dramps[j];
        for k in 0..d {
            if k != j {
                g *= ramps[k];
            }
        }
        out[j] = g;
    }
}

/// A velocity field `R^d x [0, T] -> R^d` with an analytic gradient.
///
/// Fields are closed enum variants rather than trait objects so that basis
/// families stay `Clone + Send + Sync`, are exactly reconstructible from a
/// config file, and evaluate without indirection in the integrator loops.
#[derive(Debug, Clone, PartialEq)]
pub enum Field {
    Zero,
    /// `f(x, t) = v`.
    Constant(Vec<f64>),
    /// `f(x, t) = A x`, row-major `A`.
    Linear { matrix: Vec<f64> },
    /// Gaussian bump along one coordinate axis, smoothly cut off so it
    /// vanishes outside (and on the boundary of) `support`:
    /// `f(x, t) = amp * exp(-|x - c|^2 / (2 w^2)) * chi(x) * e_axis`.
    GaussianBump {
        center: Vec<f64>,
        width: f64,
        amplitude: f64,
        axis: usize,
        support: AaBox,
    },
}

impl Field {
    /// Writes `f(x, t)` into `out` (length d).
    pub fn eval(&self, x: &[f64], _t: f64, out: &mut [f64]) {
        match self {
            Field::Zero => out.fill(0.0),
            Field::Constant(v) => out.copy_from_slice(v),
            Field::Linear { matrix } => crate::geom::matvec(matrix, x, out, x.len()),
            Field::GaussianBump { center, width, amplitude, axis, support } => {
                out.fill(0.0);
                if !support.contains(x) {
                    return;
                }
                let r2: f64 =
                    x.iter().zip(center).map(|(xi, ci)| (xi - ci) * (xi - ci)).sum();
                let bump = amplitude * (-r2 / (2.0 * width * width)).exp();
                out[*axis] = bump * smooth_cutoff(support, x);
            }
        }
    }

    /// Writes the Jacobian `[df_i/dx_j]` (row-major d x d) into `out`.
    pub fn grad(&self, x: &[f64], _t: f64, out: &mut [f64]) {
        let d = x.len();
        match self {
            Field::Zero | Field::Constant(_) => out.fill(0.0),
            Field::Linear { matrix } => out.copy_from_slice(matrix),
            Field::GaussianBump { center, width, amplitude, axis, support } => {
                out.fill(0.0);
                if !support.contains(x) {
                    return;
                }
                let r2: f64 =
                    x.iter().zip(center).map(|(xi, ci)| (xi - ci) * (xi - ci)).sum();
                let bump = amplitude * (-r2 / (2.0 * width * width)).exp();
                let chi = smooth_cutoff(support, x);
                let mut dchi = vec![0.0; d];
                smooth_cutoff_grad(support, x, &mut dchi);
                for j in 0..d {
                    let dbump = bump * (-(x[j] - center[j]) / (width * width));
                    out[*axis * d + j] = dbump * chi + bump * dchi[j];
                }
            }
        }
    }

    fn check_dim(&self, dim: usize) -> Result<()> {
        let ok = match self {
            Field::Zero => true,
            Field::Constant(v) => v.len() == dim,
            Field::Linear { matrix } => matrix.len() == dim * dim,
            Field::GaussianBump { center, axis, support, .. } => {
                center.len() == dim && *axis < dim && support.dim() == dim
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Construction(format!("field shape does not match dim {dim}")))
        }
    }
}

/// Drift field `b` plus mode fields `f_1..f_L`; the computational
/// realization of local characteristics `(a, b)`.
#[derive(Debug, Clone)]
pub struct BasisFamily {
    dim: usize,
    t_max: f64,
    modes: Vec<Field>,
    drift: Field,
    support_box: Option<AaBox>,
}

impl BasisFamily {
    pub fn new(
        dim: usize,
        t_max: f64,
        modes: Vec<Field>,
        drift: Field,
        support_box: Option<AaBox>,
    ) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::Construction(format!("dim must be 1, 2 or 3, got {dim}")));
        }
        if !(t_max > 0.0) {
            return Err(Error::Construction(format!("t_max must be positive, got {t_max}")));
        }
        for m in &modes {
            m.check_dim(dim)?;
        }
        drift.check_dim(dim)?;
        if let Some(b) = &support_box {
            if b.dim() != dim {
                return Err(Error::Construction("support_box dimension mismatch".into()));
            }
        }
        Ok(Self { dim, t_max, modes, drift, support_box })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    pub fn n_modes(&self) -> usize {
        self.modes.len()
    }

    pub fn modes(&self) -> &[Field] {
        &self.modes
    }

    pub fn drift(&self) -> &Field {
        &self.drift
    }

    pub fn support_box(&self) -> Option<&AaBox> {
        self.support_box.as_ref()
    }

    pub fn check_time(&self, t: f64) -> Result<()> {
        if t < 0.0 || t > self.t_max {
            return Err(Error::Domain(format!("t = {t} outside [0, {}]", self.t_max)));
        }
        Ok(())
    }

    /// Mode value; outside the support box (when set) this is exactly zero.
    pub fn eval_mode(&self, l: usize, x: &[f64], t: f64, out: &mut [f64]) {
        if let Some(b) = &self.support_box {
            if !b.contains(x) {
                out.fill(0.0);
                return;
            }
        }
        self.modes[l].eval(x, t, out);
    }

    pub fn grad_mode(&self, l: usize, x: &[f64], t: f64, out: &mut [f64]) {
        if let Some(b) = &self.support_box {
            if !b.contains(x) {
                out.fill(0.0);
                return;
            }
        }
        self.modes[l].grad(x, t, out);
    }

    pub fn eval_drift(&self, x: &[f64], t: f64, out: &mut [f64]) {
        self.drift.eval(x, t, out);
    }

    pub fn grad_drift(&self, x: &[f64], t: f64, out: &mut [f64]) {
        self.drift.grad(x, t, out);
    }
}

/// Spatial covariance `a(x, y, t)` as a dense d x d matrix (row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceMatrix {
    pub dim: usize,
    pub entries: Vec<f64>,
}

/// `a(x, y, t) = sum_l f_l(x, t) f_l(y, t)'`.
pub fn evaluate_covariance(
    basis: &BasisFamily,
    x: &[f64],
    y: &[f64],
    t: f64,
) -> Result<CovarianceMatrix> {
    basis.check_time(t)?;
    let d = basis.dim();
    let mut entries = vec![0.0; d * d];
    let mut fx = vec![0.0; d];
    let mut fy = vec![0.0; d];
    for l in 0..basis.n_modes() {
        basis.eval_mode(l, x, t, &mut fx);
        basis.eval_mode(l, y, t, &mut fy);
        for i in 0..d {
            for j in 0..d {
                entries[i * d + j] += fx[i] * fy[j];
            }
        }
    }
    Ok(CovarianceMatrix { dim: d, entries })
}

/// Report-only diagnostics for a basis family. Nothing here is enforced;
/// the quantities are empirical surrogates for the regularity hypotheses
/// that have no finite computational certificate.
#[derive(Debug, Clone)]
pub struct ValidationReport {
    /// `sup over samples of sum_l |f_l(x, t)|^2`, the finite-trace bound.
    pub sup_mode_energy: f64,
    /// Max over samples of `|trace a(x,x,t) - sum_l |f_l(x,t)|^2|`, which is
    /// zero up to roundoff by construction.
    pub trace_defect: f64,
    /// Divided-difference Lipschitz estimate per mode.
    pub mode_lipschitz: Vec<f64>,
    /// Divided-difference Lipschitz estimate for the drift.
    pub drift_lipschitz: f64,
    /// Extreme eigenvalues of the blockwise Gram matrix `[a(x_i, x_j, t)]`,
    /// worst case over the time grid.
    pub gram_min_eigenvalue: f64,
    pub gram_max_eigenvalue: f64,
    /// Number of spatial derivatives the fields provide analytically
    /// (recorded, never enforced).
    pub k_effective: u32,
}

/// Samples trace, Lipschitz and Gram-spectrum diagnostics on the given
/// grids. The Gram matrix is the nd x nd block matrix of covariance
/// evaluations over the sample points; its min eigenvalue certifies
/// positive semidefiniteness up to roundoff.
pub fn validate_basis(
    basis: &BasisFamily,
    sample_grid: &[Vec<f64>],
    t_grid: &[f64],
) -> Result<ValidationReport> {
    if sample_grid.is_empty() || t_grid.is_empty() {
        return Err(Error::Config("validate_basis needs nonempty sample and time grids".into()));
    }
    let d = basis.dim();
    let n = sample_grid.len();
    let nmodes = basis.n_modes();
    let mut buf = vec![0.0; d];
    let mut buf2 = vec![0.0; d];

    let mut sup_energy = 0.0f64;
    let mut trace_defect = 0.0f64;
    for &t in t_grid {
        basis.check_time(t)?;
        for x in sample_grid {
            let mut energy = 0.0;
            for l in 0..nmodes {
                basis.eval_mode(l, x, t, &mut buf);
                energy += buf.iter().map(|v| v * v).sum::<f64>();
            }
            sup_energy = sup_energy.max(energy);
            let cov = evaluate_covariance(basis, x, x, t)?;
            let trace: f64 = (0..d).map(|i| cov.entries[i * d + i]).sum();
            trace_defect = trace_defect.max((trace - energy).abs());
        }
    }

    let mut mode_lipschitz = vec![0.0f64; nmodes];
    let mut drift_lipschitz = 0.0f64;
    for &t in t_grid {
        for i in 0..n {
            for j in (i + 1)..n {
                let sep = crate::geom::dist(&sample_grid[i], &sample_grid[j]);
                if sep < 1e-14 {
                    continue;
                }
                for l in 0..nmodes {
                    basis.eval_mode(l, &sample_grid[i], t, &mut buf);
                    basis.eval_mode(l, &sample_grid[j], t, &mut buf2);
                    mode_lipschitz[l] = mode_lipschitz[l].max(crate::geom::dist(&buf, &buf2) / sep);
                }
                basis.eval_drift(&sample_grid[i], t, &mut buf);
                basis.eval_drift(&sample_grid[j], t, &mut buf2);
                drift_lipschitz = drift_lipschitz.max(crate::geom::dist(&buf, &buf2) / sep);
            }
        }
    }

    let mut gram_min = f64::INFINITY;
    let mut gram_max = f64::NEG_INFINITY;
    for &t in t_grid {
        let mut gram = nalgebra::DMatrix::<f64>::zeros(n * d, n * d);
        for i in 0..n {
            for j in 0..n {
                let cov = evaluate_covariance(basis, &sample_grid[i], &sample_grid[j], t)?;
                for r in 0..d {
                    for c in 0..d {
                        gram[(i * d + r, j * d + c)] = cov.entries[r * d + c];
                    }
                }
            }
        }
        // enforce exact symmetry before the eigensolve
        let sym = (&gram + gram.transpose()) * 0.5;
        let eig = sym.symmetric_eigenvalues();
        for e in eig.iter() {
            gram_min = gram_min.min(*e);
            gram_max = gram_max.max(*e);
        }
    }

    Ok(ValidationReport {
        sup_mode_energy: sup_energy,
        trace_defect,
        mode_lipschitz,
        drift_lipschitz,
        gram_min_eigenvalue: gram_min,
        gram_max_eigenvalue: gram_max,
        k_effective: 1,
    })
}

/// Builds a compactly supported bump family: one mode per (center, axis)
/// pair, ordered center-major, each a Gaussian bump times the smooth
/// support-box cutoff.
pub fn make_gaussian_bump_basis(
    dim: usize,
    centers: &[Vec<f64>],
    width: f64,
    amplitude: f64,
    support_box: AaBox,
    t_max: f64,
) -> Result<BasisFamily> {
    if !(width > 0.0) {
        return Err(Error::Construction(format!("width must be positive, got {width}")));
    }
    if support_box.dim() != dim {
        return Err(Error::Construction("support_box dimension mismatch".into()));
    }
    for c in centers {
        if c.len() != dim {
            return Err(Error::Construction("center dimension mismatch".into()));
        }
        if !support_box.contains_interior(c) {
            return Err(Error::Construction(format!(
                "center {c:?} is not strictly inside the support box"
            )));
        }
    }
    let mut modes = Vec::with_capacity(centers.len() * dim);
    for c in centers {
        for axis in 0..dim {
            modes.push(Field::GaussianBump {
                center: c.clone(),
                width,
                amplitude,
                axis,
                support: support_box.clone(),
            });
        }
    }
    BasisFamily::new(dim, t_max, modes, Field::Zero, Some(support_box))
}
