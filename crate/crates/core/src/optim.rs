//! Discrete-adjoint gradients for controlled endpoint maps, and the
//! quasi-Newton driver shared by the rate-function, Laplace and matching
//! solvers.
//!
//! The minimized functionals all have the shape
//!
//! ```text
//! Phi(u) = G(endpoints(u)) + 1/2 int ||u||^2 dt,
//! ```
//!
//! where `endpoints(u)` advances a fixed point set under the deterministic
//! controlled flow with the classical fourth-order one-step method and `u`
//! is piecewise constant per step. The gradient differentiates the
//! implemented recursion rather than the continuous equation, so it is
//! exact for the discrete objective: reverse sweeps replay the stage
//! states from a per-point tape of step starts and accumulate
//! vector-Jacobian products stage by stage.

use crate::basis::BasisFamily;
use crate::control::ControlPath;
use crate::error::{Error, Result};
use crate::geom;
use crate::rng;
use rayon::prelude::*;

/// Terminal cost over the flat endpoint vector (point-major, length P*d).
pub trait TerminalObjective: Sync {
    fn value(&self, endpoints: &[f64]) -> f64;
    /// Writes dG/d(endpoints) into `grad` and returns the value.
    fn value_and_grad(&self, endpoints: &[f64], grad: &mut [f64]) -> f64;
}

/// The controlled endpoint map: advance `points` from `t0` to `t1` in
/// `n_steps` uniform RK4 steps under mode coefficients `u` (one value per
/// mode per step, step-major layout `u[l * n_steps + k]`).
#[derive(Clone)]
pub struct EndpointMap<'a> {
    pub basis: &'a BasisFamily,
    pub points: &'a [Vec<f64>],
    pub t0: f64,
    pub t1: f64,
    pub n_steps: usize,
}

impl<'a> EndpointMap<'a> {
    pub fn dt(&self) -> f64 {
        (self.t1 - self.t0) / self.n_steps as f64
    }

    pub fn n_controls(&self) -> usize {
        self.basis.n_modes() * self.n_steps
    }

    pub fn control_path(&self, u: &[f64]) -> Result<ControlPath> {
        ControlPath::new(self.t0, self.dt(), self.basis.n_modes(), u.to_vec())
    }

    /// `1/2 sum u^2 dt`.
    pub fn control_cost(&self, u: &[f64]) -> f64 {
        0.5 * self.dt() * u.iter().map(|v| v * v).sum::<f64>()
    }

    fn velocity(&self, u: &[f64], k: usize, x: &[f64], t: f64, out: &mut [f64], scratch: &mut [f64]) {
        self.basis.eval_drift(x, t, out);
        for l in 0..self.basis.n_modes() {
            let ul = u[l * self.n_steps + k];
            if ul == 0.0 {
                continue;
            }
            self.basis.eval_mode(l, x, t, scratch);
            for c in 0..out.len() {
                out[c] += ul * scratch[c];
            }
        }
    }

    /// Forward sweep for one point; optionally records the step-start tape.
    fn advance_point(
        &self,
        u: &[f64],
        start: &[f64],
        mut tape: Option<&mut Vec<f64>>,
    ) -> Result<Vec<f64>> {
        let d = self.basis.dim();
        let h = self.dt();
        let mut x = start.to_vec();
        let mut k1 = vec![0.0; d];
        let mut k2 = vec![0.0; d];
        let mut k3 = vec![0.0; d];
        let mut k4 = vec![0.0; d];
        let mut xs = vec![0.0; d];
        let mut scratch = vec![0.0; d];
        for k in 0..self.n_steps {
            if let Some(tape) = tape.as_deref_mut() {
                tape.extend_from_slice(&x);
            }
            let t = self.t0 + k as f64 * h;
            self.velocity(u, k, &x, t, &mut k1, &mut scratch);
            for c in 0..d {
                xs[c] = x[c] + 0.5 * h * k1[c];
            }
            self.velocity(u, k, &xs, t + 0.5 * h, &mut k2, &mut scratch);
            for c in 0..d {
                xs[c] = x[c] + 0.5 * h * k2[c];
            }
            self.velocity(u, k, &xs, t + 0.5 * h, &mut k3, &mut scratch);
            for c in 0..d {
                xs[c] = x[c] + h * k3[c];
            }
            self.velocity(u, k, &xs, t + h, &mut k4, &mut scratch);
            for c in 0..d {
                x[c] += h / 6.0 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c]);
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::BlowUp {
                    step: k,
                    detail: "controlled endpoint map diverged".into(),
                });
            }
        }
        Ok(x)
    }

    /// Flat endpoints (point-major) under control `u`.
    pub fn endpoints(&self, u: &[f64]) -> Result<Vec<f64>> {
        let d = self.basis.dim();
        let results: Vec<Result<Vec<f64>>> = self
            .points
            .par_iter()
            .map(|p| self.advance_point(u, p, None))
            .collect();
        let mut flat = vec![0.0; self.points.len() * d];
        for (i, r) in results.into_iter().enumerate() {
            flat[i * d..(i + 1) * d].copy_from_slice(&r?);
        }
        Ok(flat)
    }

    /// `Phi(u) = G(endpoints(u)) + cost(u)` without gradients.
    pub fn objective(&self, u: &[f64], terminal: &dyn TerminalObjective) -> Result<f64> {
        let ends = self.endpoints(u)?;
        Ok(terminal.value(&ends) + self.control_cost(u))
    }

    /// Value and exact gradient of the discrete objective by the reverse
    /// sweep. `grad` has one entry per control coefficient.
    pub fn objective_grad(
        &self,
        u: &[f64],
        terminal: &dyn TerminalObjective,
        grad: &mut [f64],
    ) -> Result<f64> {
        let d = self.basis.dim();
        let p = self.points.len();
        let h = self.dt();
        let n_modes = self.basis.n_modes();

        // forward with tapes
        let fwd: Vec<Result<(Vec<f64>, Vec<f64>)>> = self
            .points
            .par_iter()
            .map(|pt| {
                let mut tape = Vec::with_capacity(self.n_steps * d);
                let end = self.advance_point(u, pt, Some(&mut tape))?;
                Ok((end, tape))
            })
            .collect();
        let mut ends = vec![0.0; p * d];
        let mut tapes = Vec::with_capacity(p);
        for (i, r) in fwd.into_iter().enumerate() {
            let (end, tape) = r?;
            ends[i * d..(i + 1) * d].copy_from_slice(&end);
            tapes.push(tape);
        }

        let mut gends = vec![0.0; p * d];
        let gval = terminal.value_and_grad(&ends, &mut gends);

        // reverse sweep per point, then an index-ordered reduction so the
        // result does not depend on the thread schedule
        let partials: Vec<Vec<f64>> = (0..p)
            .into_par_iter()
            .map(|i| {
                let mut gu = vec![0.0; u.len()];
                let mut lambda = gends[i * d..(i + 1) * d].to_vec();
                let mut k1 = vec![0.0; d];
                let mut k2 = vec![0.0; d];
                let mut k3 = vec![0.0; d];
                let mut k4 = vec![0.0; d];
                let mut x2 = vec![0.0; d];
                let mut x3 = vec![0.0; d];
                let mut x4 = vec![0.0; d];
                let mut scratch = vec![0.0; d];
                let mut gmat = vec![0.0; d * d];
                let mut gscratch = vec![0.0; d * d];
                let mut bk = vec![0.0; d];
                let mut bx = vec![0.0; d];
                let mut fbuf = vec![0.0; d];
                for k in (0..self.n_steps).rev() {
                    let t = self.t0 + k as f64 * h;
                    let x = &tapes[i][k * d..(k + 1) * d];
                    // replay the stages
                    self.velocity(u, k, x, t, &mut k1, &mut scratch);
                    for c in 0..d {
                        x2[c] = x[c] + 0.5 * h * k1[c];
                    }
                    self.velocity(u, k, &x2, t + 0.5 * h, &mut k2, &mut scratch);
                    for c in 0..d {
                        x3[c] = x[c] + 0.5 * h * k2[c];
                    }
                    self.velocity(u, k, &x3, t + 0.5 * h, &mut k3, &mut scratch);
                    for c in 0..d {
                        x4[c] = x[c] + h * k3[c];
                    }
                    self.velocity(u, k, &x4, t + h, &mut k4, &mut scratch);
                    let _ = (&k1, &k2, &k3, &k4);

                    let mut new_lambda = lambda.clone();
                    // stage 4
                    for c in 0..d {
                        bk[c] = h / 6.0 * lambda[c];
                    }
                    let bx4 = self.stage_vjp(u, k, &x4, t + h, &bk, &mut gmat, &mut gscratch, &mut fbuf, &mut gu);
                    for c in 0..d {
                        new_lambda[c] += bx4[c];
                    }
                    // stage 3
                    for c in 0..d {
                        bk[c] = h / 3.0 * lambda[c] + h * bx4[c];
                    }
                    let bx3 = self.stage_vjp(u, k, &x3, t + 0.5 * h, &bk, &mut gmat, &mut gscratch, &mut fbuf, &mut gu);
                    for c in 0..d {
                        new_lambda[c] += bx3[c];
                    }
                    // stage 2
                    for c in 0..d {
                        bk[c] = h / 3.0 * lambda[c] + 0.5 * h * bx3[c];
                    }
                    let bx2 = self.stage_vjp(u, k, &x2, t + 0.5 * h, &bk, &mut gmat, &mut gscratch, &mut fbuf, &mut gu);
                    for c in 0..d {
                        new_lambda[c] += bx2[c];
                    }
                    // stage 1
                    for c in 0..d {
                        bk[c] = h / 6.0 * lambda[c] + 0.5 * h * bx2[c];
                    }
                    let bx1 = self.stage_vjp(u, k, x, t, &bk, &mut gmat, &mut gscratch, &mut fbuf, &mut gu);
                    for c in 0..d {
                        new_lambda[c] += bx1[c];
                    }
                    let _ = &mut bx;
                    lambda = new_lambda;
                }
                gu
            })
            .collect();

        for g in grad.iter_mut() {
            *g = 0.0;
        }
        for gu in &partials {
            for (g, v) in grad.iter_mut().zip(gu) {
                *g += v;
            }
        }
        // cost term
        for l in 0..n_modes {
            for k in 0..self.n_steps {
                grad[l * self.n_steps + k] += h * u[l * self.n_steps + k];
            }
        }
        Ok(gval + self.control_cost(u))
    }

    /// VJP of one stage `k_i = v(x_i, t_i; u_k)`: given the cotangent
    /// `bar_k`, accumulates the control gradient and returns
    /// `bar_x = A_i' bar_k`.
    #[allow(clippy::too_many_arguments)]
    fn stage_vjp(
        &self,
        u: &[f64],
        k: usize,
        x_stage: &[f64],
        t_stage: f64,
        bar_k: &[f64],
        gmat: &mut [f64],
        gscratch: &mut [f64],
        fbuf: &mut [f64],
        gu: &mut [f64],
    ) -> Vec<f64> {
        let d = x_stage.len();
        // control sensitivities: dv/du_l = f_l(x_stage)
        for l in 0..self.basis.n_modes() {
            self.basis.eval_mode(l, x_stage, t_stage, fbuf);
            let mut dot = 0.0;
            for c in 0..d {
                dot += fbuf[c] * bar_k[c];
            }
            gu[l * self.n_steps + k] += dot;
        }
        // spatial VJP: A' bar_k with A = grad_x v
        self.basis.grad_drift(x_stage, t_stage, gmat);
        for l in 0..self.basis.n_modes() {
            let ul = u[l * self.n_steps + k];
            if ul == 0.0 {
                continue;
            }
            self.basis.grad_mode(l, x_stage, t_stage, gscratch);
            for e in 0..d * d {
                gmat[e] += ul * gscratch[e];
            }
        }
        let mut bar_x = vec![0.0; d];
        for c in 0..d {
            let mut s = 0.0;
            for r in 0..d {
                s += gmat[r * d + c] * bar_k[r];
            }
            bar_x[c] = s;
        }
        bar_x
    }
}

/// Options for the limited-memory quasi-Newton loop.
#[derive(Debug, Clone)]
pub struct LbfgsOptions {
    pub max_iters: usize,
    pub grad_tol: f64,
    pub history: usize,
    pub max_line_search: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self { max_iters: 200, grad_tol: 1e-8, history: 8, max_line_search: 40 }
    }
}

#[derive(Debug, Clone)]
pub struct LbfgsOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// L-BFGS with Armijo backtracking. The callable returns the value and
/// fills the gradient, or `None` when the point is infeasible (treated as
/// +inf by the line search).
pub fn lbfgs(
    mut eval: impl FnMut(&[f64], &mut [f64]) -> Option<f64>,
    x0: &[f64],
    opts: &LbfgsOptions,
) -> LbfgsOutcome {
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut grad = vec![0.0; n];
    let Some(mut value) = eval(&x, &mut grad) else {
        return LbfgsOutcome { x, value: f64::INFINITY, grad_norm: f64::INFINITY, iterations: 0, converged: false };
    };
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut rho_hist: Vec<f64> = Vec::new();
    let mut iterations = 0;

    for _ in 0..opts.max_iters {
        let gnorm = geom::norm(&grad);
        if gnorm <= opts.grad_tol {
            return LbfgsOutcome { x, value, grad_norm: gnorm, iterations, converged: true };
        }
        // two-loop recursion
        let mut q = grad.clone();
        let mut alphas = vec![0.0; s_hist.len()];
        for j in (0..s_hist.len()).rev() {
            let a = rho_hist[j] * dot(&s_hist[j], &q);
            alphas[j] = a;
            axpy(-a, &y_hist[j], &mut q);
        }
        if let (Some(s), Some(y)) = (s_hist.last(), y_hist.last()) {
            let gamma = dot(s, y) / dot(y, y).max(1e-300);
            for v in q.iter_mut() {
                *v *= gamma;
            }
        }
        for j in 0..s_hist.len() {
            let b = rho_hist[j] * dot(&y_hist[j], &q);
            axpy(alphas[j] - b, &s_hist[j], &mut q);
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut slope = dot(&grad, &dir);
        if !(slope < 0.0) {
            dir = grad.iter().map(|v| -v).collect();
            slope = -dot(&grad, &grad);
        }

        // Armijo backtracking
        let mut step = 1.0;
        let mut accepted = None;
        let mut xt = vec![0.0; n];
        let mut gt = vec![0.0; n];
        for _ in 0..opts.max_line_search {
            for i in 0..n {
                xt[i] = x[i] + step * dir[i];
            }
            if let Some(vt) = eval(&xt, &mut gt) {
                if vt <= value + 1e-4 * step * slope {
                    accepted = Some(vt);
                    break;
                }
            }
            step *= 0.5;
        }
        let Some(vt) = accepted else {
            // no descent step found: report the stationary-ish point
            return LbfgsOutcome {
                x,
                value,
                grad_norm: gnorm,
                iterations,
                converged: gnorm <= opts.grad_tol,
            };
        };

        let s: Vec<f64> = (0..n).map(|i| xt[i] - x[i]).collect();
        let y: Vec<f64> = (0..n).map(|i| gt[i] - grad[i]).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * geom::norm(&s) * geom::norm(&y) {
            s_hist.push(s);
            y_hist.push(y);
            rho_hist.push(1.0 / sy);
            if s_hist.len() > opts.history {
                s_hist.remove(0);
                y_hist.remove(0);
                rho_hist.remove(0);
            }
        }
        x.copy_from_slice(&xt);
        grad.copy_from_slice(&gt);
        value = vt;
        iterations += 1;
    }
    let gnorm = geom::norm(&grad);
    LbfgsOutcome { x, value, grad_norm: gnorm, iterations, converged: gnorm <= opts.grad_tol }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Deterministic multistart initial controls: start 0 is the zero control,
/// later starts are counter-RNG perturbations at the given scale.
pub fn multistart_inits(n_controls: usize, count: usize, scale: f64, seed: u64) -> Vec<Vec<f64>> {
    (0..count.max(1))
        .map(|s| {
            if s == 0 {
                vec![0.0; n_controls]
            } else {
                (0..n_controls)
                    .map(|i| scale * rng::standard_normal(seed, s as u64, 0, i as u64))
                    .collect()
            }
        })
        .collect()
}
