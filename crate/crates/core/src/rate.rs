//! Finite-point projections of the rate function: the minimal control
//! cost that steers the deterministic controlled flow through prescribed
//! endpoints.
//!
//! The projected value is computed by quadratic penalty continuation,
//!
//! ```text
//! J_pen(u) = 1/2 int ||u||^2 dt + (w/2) sum_p |phi_T^{0,u}(x_p) - y_p|^2,
//! ```
//!
//! minimized with discrete-adjoint gradients over an increasing penalty
//! schedule and a deterministic multistart. The endpoint miss is reported
//! verbatim in the result: an unreachable target shows up as a large
//! residual with `converged = false`, never as a silently inflated value
//! (the underlying infimum is infinite off the reachable set).

use crate::basis::BasisFamily;
use crate::control::ControlPath;
use crate::error::{Error, Result};
use crate::optim::{lbfgs, multistart_inits, EndpointMap, LbfgsOptions, TerminalObjective};

/// An endpoint-constrained minimal-cost problem.
#[derive(Clone)]
pub struct EndpointProblem<'a> {
    pub basis: &'a BasisFamily,
    pub starts: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
    /// Horizon; the flow runs on `[0, T]`.
    pub horizon: f64,
    pub n_steps: usize,
    pub penalty_schedule: Vec<f64>,
    pub multistart: usize,
    /// Optimizer gradient tolerance.
    pub tol_grad: f64,
    /// Endpoint residual below which a run counts as feasible.
    pub tol_endpoint: f64,
    pub max_iters: usize,
    pub seed: u64,
}

impl<'a> EndpointProblem<'a> {
    pub fn new(
        basis: &'a BasisFamily,
        starts: Vec<Vec<f64>>,
        targets: Vec<Vec<f64>>,
        horizon: f64,
        n_steps: usize,
    ) -> Self {
        Self {
            basis,
            starts,
            targets,
            horizon,
            n_steps,
            penalty_schedule: vec![1e1, 1e2, 1e3, 1e4],
            multistart: 5,
            tol_grad: 1e-7,
            tol_endpoint: 1e-3,
            max_iters: 400,
            seed: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        let d = self.basis.dim();
        if self.starts.is_empty() || self.starts.len() != self.targets.len() {
            return Err(Error::Config("starts and targets must be nonempty and equal-length".into()));
        }
        if self.starts.iter().chain(&self.targets).any(|p| p.len() != d) {
            return Err(Error::Config("start/target dimension mismatch".into()));
        }
        if !(self.horizon > 0.0) || self.horizon > self.basis.t_max() {
            return Err(Error::Config(format!(
                "horizon {} must lie in (0, {}]",
                self.horizon,
                self.basis.t_max()
            )));
        }
        if self.n_steps == 0 || self.penalty_schedule.is_empty() {
            return Err(Error::Config("need at least one step and one penalty weight".into()));
        }
        Ok(())
    }

    fn flat_targets(&self) -> Vec<f64> {
        self.targets.iter().flatten().copied().collect()
    }
}

/// A converged (or best-effort) projected rate value.
#[derive(Debug, Clone)]
pub struct RateResult {
    /// `1/2 int ||u*||^2` of the best control found.
    pub value: f64,
    pub u_star: ControlPath,
    /// Max endpoint miss over the constrained points.
    pub residual: f64,
    pub converged: bool,
    pub grad_norm: f64,
}

struct Penalty {
    targets: Vec<f64>,
    weight: f64,
}

impl TerminalObjective for Penalty {
    fn value(&self, endpoints: &[f64]) -> f64 {
        0.5 * self.weight
            * endpoints.iter().zip(&self.targets).map(|(e, t)| (e - t) * (e - t)).sum::<f64>()
    }
    fn value_and_grad(&self, endpoints: &[f64], grad: &mut [f64]) -> f64 {
        for (i, (e, t)) in endpoints.iter().zip(&self.targets).enumerate() {
            grad[i] = self.weight * (e - t);
        }
        self.value(endpoints)
    }
}

fn max_endpoint_miss(endpoints: &[f64], targets: &[f64], d: usize) -> f64 {
    endpoints
        .chunks_exact(d)
        .zip(targets.chunks_exact(d))
        .map(|(e, t)| crate::geom::dist(e, t))
        .fold(0.0, f64::max)
}

/// Minimal-cost control steering every start to its target, by penalty
/// continuation over the problem's schedule and the best of `multistart`
/// deterministic initializations.
pub fn endpoint_rate(problem: &EndpointProblem) -> Result<RateResult> {
    problem.validate()?;
    let d = problem.basis.dim();
    let map = EndpointMap {
        basis: problem.basis,
        points: &problem.starts,
        t0: 0.0,
        t1: problem.horizon,
        n_steps: problem.n_steps,
    };
    let targets = problem.flat_targets();
    let init_scale = 0.5;
    let inits = multistart_inits(map.n_controls(), problem.multistart, init_scale, problem.seed);

    struct Candidate {
        u: Vec<f64>,
        cost: f64,
        residual: f64,
        grad_norm: f64,
        converged: bool,
    }

    let mut candidates: Vec<Candidate> = Vec::new();
    for init in &inits {
        let mut u = init.clone();
        let mut grad_norm = f64::INFINITY;
        let mut lbfgs_ok = false;
        for &w in &problem.penalty_schedule {
            let terminal = Penalty { targets: targets.clone(), weight: w };
            let opts = LbfgsOptions {
                max_iters: problem.max_iters,
                grad_tol: problem.tol_grad,
                ..Default::default()
            };
            let out = lbfgs(|x, g| map.objective_grad(x, &terminal, g).ok(), &u, &opts);
            u = out.x;
            grad_norm = out.grad_norm;
            lbfgs_ok = out.converged;
        }
        let Ok(ends) = map.endpoints(&u) else { continue };
        let residual = max_endpoint_miss(&ends, &targets, d);
        candidates.push(Candidate {
            cost: map.control_cost(&u),
            u,
            residual,
            grad_norm,
            converged: lbfgs_ok && residual <= problem.tol_endpoint,
        });
    }
    if candidates.is_empty() {
        return Err(Error::BlowUp { step: 0, detail: "every multistart run diverged".into() });
    }

    // prefer feasible runs by cost, fall back to the smallest residual;
    // ties keep the earliest start for determinism
    let feasible_cutoff = 10.0 * problem.tol_endpoint;
    let pick = |c: &[Candidate]| -> usize {
        let mut best: Option<usize> = None;
        for (i, cand) in c.iter().enumerate() {
            let better = match best {
                None => true,
                Some(j) => {
                    let b = &c[j];
                    let cand_feasible = cand.residual <= feasible_cutoff;
                    let b_feasible = b.residual <= feasible_cutoff;
                    match (cand_feasible, b_feasible) {
                        (true, false) => true,
                        (false, true) => false,
                        (true, true) => cand.cost < b.cost,
                        (false, false) => cand.residual < b.residual,
                    }
                }
            };
            if better {
                best = Some(i);
            }
        }
        best.unwrap()
    };
    let best = &candidates[pick(&candidates)];
    let any_feasible = candidates.iter().any(|c| c.residual <= feasible_cutoff);

    Ok(RateResult {
        value: best.cost,
        u_star: map.control_path(&best.u)?,
        residual: best.residual,
        converged: best.converged && any_feasible,
        grad_norm: best.grad_norm,
    })
}

/// One row of the constant-control lattice scan.
#[derive(Debug, Clone)]
pub struct ScanRow {
    pub control: Vec<f64>,
    pub cost: f64,
    pub residual: f64,
}

#[derive(Debug, Clone)]
pub struct ScanResult {
    pub best: ScanRow,
    pub rows: Vec<ScanRow>,
}

/// Exhaustive evaluation over constant-in-time controls on a tensor grid
/// of per-mode values. The best feasible row is an upper-bound certificate
/// for [`endpoint_rate`]. Only small mode counts are tractable.
pub fn rate_lower_bound_scan(
    problem: &EndpointProblem,
    per_mode_values: &[f64],
) -> Result<ScanResult> {
    problem.validate()?;
    let n_modes = problem.basis.n_modes();
    if n_modes > 3 {
        return Err(Error::Size(format!(
            "constant-control scan supports at most 3 modes, basis has {n_modes}"
        )));
    }
    if per_mode_values.is_empty() {
        return Err(Error::Config("scan needs at least one lattice value".into()));
    }
    let total = per_mode_values.len().pow(n_modes as u32);
    if total > 2_000_000 {
        return Err(Error::Size(format!("scan lattice of {total} points is too large")));
    }
    let d = problem.basis.dim();
    let map = EndpointMap {
        basis: problem.basis,
        points: &problem.starts,
        t0: 0.0,
        t1: problem.horizon,
        n_steps: problem.n_steps,
    };
    let targets = problem.flat_targets();

    let mut rows = Vec::with_capacity(total);
    let mut idx = vec![0usize; n_modes];
    loop {
        let consts: Vec<f64> = idx.iter().map(|&i| per_mode_values[i]).collect();
        let mut u = vec![0.0; map.n_controls()];
        for l in 0..n_modes {
            for k in 0..problem.n_steps {
                u[l * problem.n_steps + k] = consts[l];
            }
        }
        if let Ok(ends) = map.endpoints(&u) {
            rows.push(ScanRow {
                control: consts,
                cost: map.control_cost(&u),
                residual: max_endpoint_miss(&ends, &targets, d),
            });
        }
        let mut axis = 0;
        loop {
            if axis == n_modes {
                break;
            }
            idx[axis] += 1;
            if idx[axis] < per_mode_values.len() {
                break;
            }
            idx[axis] = 0;
            axis += 1;
        }
        if axis == n_modes {
            break;
        }
    }
    if rows.is_empty() {
        return Err(Error::BlowUp { step: 0, detail: "every lattice control diverged".into() });
    }
    // rank by residual first (feasibility certificate), then cost
    let mut best = 0;
    for (i, r) in rows.iter().enumerate() {
        let b = &rows[best];
        let r_feas = r.residual <= 10.0 * problem.tol_endpoint;
        let b_feas = b.residual <= 10.0 * problem.tol_endpoint;
        let better = match (r_feas, b_feas) {
            (true, false) => true,
            (false, true) => false,
            (true, true) => r.cost < b.cost,
            (false, false) => r.residual < b.residual,
        };
        if better {
            best = i;
        }
    }
    Ok(ScanResult { best: rows[best].clone(), rows })
}
