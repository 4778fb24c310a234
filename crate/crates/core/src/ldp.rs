//! Laplace-principle experiments: Monte Carlo estimates of
//!
//! ```text
//! -eps log E[ exp(-F(X^eps)/eps) ]
//! ```
//!
//! over endpoint functionals `F`, against the variational value
//! `inf_u { F(endpoint(phi^{0,u})) + 1/2 int ||u||^2 }`. Plain Monte Carlo
//! with a log-sum-exp stabilized reduction; samples are drawn from
//! counter-keyed noise streams and reduced in a fixed order, so estimates
//! are identical for every thread count. The delta-method standard error
//! accompanies every estimate, and the sample extremes of `F` bracket the
//! log-mean-exp by construction, which the callers use as a sanity band.

use crate::basis::BasisFamily;
use crate::error::{Error, Result};
use crate::functional::EndpointFunctional;
use crate::noise::NoisePath;
use crate::optim::{lbfgs, multistart_inits, EndpointMap, LbfgsOptions};
use rayon::prelude::*;

#[derive(Debug, Clone)]
pub struct LaplaceEstimate {
    pub estimate: f64,
    pub stderr: f64,
    /// Sample extremes of `F`, bracketing the estimate.
    pub min_f: f64,
    pub max_f: f64,
    pub n_samples: usize,
}

/// Log-sum-exp-stabilized `-eps log mean exp(-g_i / eps)` with a
/// delta-method standard error. `g` is reduced in index order.
pub(crate) fn log_mean_exp_estimate(g: &[f64], eps: f64) -> Result<(f64, f64)> {
    let n = g.len();
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Underflow("non-finite functional values in the sample".into()));
    }
    let a_max = g.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(-v / eps));
    if !a_max.is_finite() {
        return Err(Error::Underflow("all Monte Carlo weights vanished".into()));
    }
    let mut s1 = 0.0;
    let mut s2 = 0.0;
    for &v in g {
        let w = (-v / eps - a_max).exp();
        s1 += w;
        s2 += w * w;
    }
    s1 /= n as f64;
    s2 /= n as f64;
    if s1 <= 0.0 || !s1.is_finite() {
        return Err(Error::Underflow("all Monte Carlo weights vanished".into()));
    }
    let estimate = -eps * (a_max + s1.ln());
    let rel_var = (s2 / (s1 * s1) - 1.0).max(0.0);
    let stderr = eps * (rel_var / n as f64).sqrt();
    Ok((estimate, stderr))
}

/// Draws `n_samples` independent flows of the point set and returns the
/// stabilized Laplace functional of `F` at the terminal time.
#[allow(clippy::too_many_arguments)]
pub fn laplace_estimate(
    basis: &BasisFamily,
    eps: f64,
    n_samples: usize,
    functional: &EndpointFunctional,
    points: &[Vec<f64>],
    horizon: f64,
    n_steps: usize,
    seed: u64,
) -> Result<LaplaceEstimate> {
    if n_samples < 100 {
        return Err(Error::Config(format!("need at least 100 samples, got {n_samples}")));
    }
    if !(eps > 0.0) {
        return Err(Error::Config("laplace_estimate needs eps > 0".into()));
    }
    if n_steps == 0 || !(horizon > 0.0) {
        return Err(Error::Config("need a positive horizon and at least one step".into()));
    }
    basis.check_time(horizon)?;
    functional.validate(points.len(), basis.dim())?;

    let d = basis.dim();
    let mut flat = vec![0.0; points.len() * d];
    for (i, p) in points.iter().enumerate() {
        flat[i * d..(i + 1) * d].copy_from_slice(p);
    }
    let dt = horizon / n_steps as f64;
    let lower = functional.lower_bound();

    let g: Vec<f64> = (0..n_samples)
        .into_par_iter()
        .map(|i| -> Result<f64> {
            let noise = NoisePath::generate(seed, i as u64, basis.n_modes(), n_steps, dt, 0.0)?;
            let ends = crate::flow::simulate_endpoints(
                basis, None, eps, &flat, 0.0, horizon, &noise, n_steps,
            )?;
            let v = functional.eval(&ends);
            if v < lower - 1e-9 {
                return Err(Error::Config(format!(
                    "functional dipped below its declared lower bound ({v} < {lower})"
                )));
            }
            Ok(v)
        })
        .collect::<Result<Vec<f64>>>()?;

    let (estimate, stderr) = log_mean_exp_estimate(&g, eps)?;
    let min_f = g.iter().copied().fold(f64::INFINITY, f64::min);
    let max_f = g.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(LaplaceEstimate { estimate, stderr, min_f, max_f, n_samples })
}

#[derive(Debug, Clone)]
pub struct VariationalValue {
    pub value: f64,
    pub u_star: crate::control::ControlPath,
    pub converged: bool,
    pub grad_norm: f64,
}

/// `inf_u { F(endpoints(u)) + cost(u) }` with the shared adjoint/L-BFGS
/// machinery and deterministic multistart. Non-convergence is flagged,
/// never hidden; the best value found is still reported.
pub fn variational_value(
    basis: &BasisFamily,
    functional: &EndpointFunctional,
    points: &[Vec<f64>],
    horizon: f64,
    n_steps: usize,
    multistart: usize,
    seed: u64,
) -> Result<VariationalValue> {
    basis.check_time(horizon)?;
    functional.validate(points.len(), basis.dim())?;
    if n_steps == 0 {
        return Err(Error::Config("need at least one step".into()));
    }
    let map = EndpointMap { basis, points, t0: 0.0, t1: horizon, n_steps };
    let opts = LbfgsOptions { max_iters: 500, grad_tol: 1e-9, ..Default::default() };
    let inits = multistart_inits(map.n_controls(), multistart, 0.5, seed);

    let mut best: Option<(f64, Vec<f64>, bool, f64)> = None;
    for init in &inits {
        let out = lbfgs(|x, g| map.objective_grad(x, functional, g).ok(), init, &opts);
        if !out.value.is_finite() {
            continue;
        }
        let replace = match &best {
            None => true,
            Some((v, ..)) => out.value < *v,
        };
        if replace {
            best = Some((out.value, out.x, out.converged, out.grad_norm));
        }
    }
    let Some((value, u, converged, grad_norm)) = best else {
        return Err(Error::BlowUp { step: 0, detail: "every variational start diverged".into() });
    };
    Ok(VariationalValue { value, u_star: map.control_path(&u)?, converged, grad_norm })
}

#[derive(Debug, Clone)]
pub struct ConvergenceRow {
    pub eps: f64,
    pub estimate: f64,
    pub stderr: f64,
    pub gap: f64,
}

#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    pub variational: f64,
    pub rows: Vec<ConvergenceRow>,
}

impl ConvergenceReport {
    /// CSV with a header row naming every column.
    pub fn to_csv_string(&self) -> String {
        let mut s = String::from("eps,laplace_estimate,stderr,variational_value,gap\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                r.eps, r.estimate, r.stderr, self.variational, r.gap
            ));
        }
        s
    }

    /// Plot-ready `[eps, gap]` pairs as a JSON array.
    pub fn gap_series_json(&self) -> String {
        let pairs: Vec<String> =
            self.rows.iter().map(|r| format!("[{},{}]", r.eps, r.gap)).collect();
        format!("[{}]", pairs.join(","))
    }
}

/// One row per `eps`: the Monte Carlo Laplace estimate, its standard error
/// and the gap to the variational value. Assertions live with the callers.
#[allow(clippy::too_many_arguments)]
pub fn ldp_convergence_report(
    basis: &BasisFamily,
    functional: &EndpointFunctional,
    eps_list: &[f64],
    n_samples: usize,
    points: &[Vec<f64>],
    horizon: f64,
    n_steps: usize,
    multistart: usize,
    seed: u64,
) -> Result<ConvergenceReport> {
    if eps_list.len() < 3 {
        return Err(Error::Config("eps list needs at least 3 entries".into()));
    }
    if eps_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Config("eps list must be strictly decreasing".into()));
    }
    let variational =
        variational_value(basis, functional, points, horizon, n_steps, multistart, seed)?;
    let mut rows = Vec::with_capacity(eps_list.len());
    for (i, &eps) in eps_list.iter().enumerate() {
        let est = laplace_estimate(
            basis,
            eps,
            n_samples,
            functional,
            points,
            horizon,
            n_steps,
            seed.wrapping_add(1 + i as u64),
        )?;
        rows.push(ConvergenceRow {
            eps,
            estimate: est.estimate,
            stderr: est.stderr,
            gap: (est.estimate - variational.value).abs(),
        });
    }
    Ok(ConvergenceReport { variational: variational.value, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::Field;
    use approx::assert_relative_eq;

    fn translation_basis() -> BasisFamily {
        BasisFamily::new(1, 1.0, vec![Field::Constant(vec![1.0])], Field::Zero, None).unwrap()
    }

    #[test]
    fn constant_functional_is_exact() {
        let basis = translation_basis();
        let f = EndpointFunctional::Constant { value: 2.5 };
        let est =
            laplace_estimate(&basis, 0.1, 200, &f, &[vec![0.0]], 1.0, 20, 7).unwrap();
        assert!((est.estimate - 2.5).abs() <= 1e-12);
        assert_eq!(est.stderr, 0.0);
    }

    #[test]
    fn zero_functional_gives_zero() {
        let basis = translation_basis();
        let f = EndpointFunctional::Constant { value: 0.0 };
        let est =
            laplace_estimate(&basis, 0.05, 150, &f, &[vec![0.0]], 1.0, 10, 3).unwrap();
        assert_eq!(est.estimate, 0.0);
    }

    #[test]
    fn zero_mode_basis_reduces_to_deterministic_functional() {
        // no randomness: the estimate equals F at the drift endpoint
        let basis =
            BasisFamily::new(1, 1.0, vec![], Field::Constant(vec![0.5]), None).unwrap();
        let f = EndpointFunctional::quadratic_to_point(vec![1.0], 1.0);
        let est = laplace_estimate(&basis, 0.1, 100, &f, &[vec![0.0]], 1.0, 20, 1).unwrap();
        // endpoint 0.5, F = 1/2 (0.5 - 1)^2 = 0.125
        assert_relative_eq!(est.estimate, 0.125, epsilon = 1e-12);
        assert_eq!(est.stderr, 0.0);
    }

    #[test]
    fn estimate_brackets_between_sample_extremes() {
        let basis = translation_basis();
        let f = EndpointFunctional::quadratic_to_point(vec![1.0], 1.0);
        for eps in [0.3, 0.1] {
            let est =
                laplace_estimate(&basis, eps, 500, &f, &[vec![0.0]], 1.0, 25, 11).unwrap();
            assert!(est.min_f <= est.estimate + 1e-12);
            assert!(est.estimate <= est.max_f + 1e-12);
        }
    }

    #[test]
    fn determinism_under_fixed_seed() {
        let basis = translation_basis();
        let f = EndpointFunctional::quadratic_to_point(vec![1.0], 1.0);
        let a = laplace_estimate(&basis, 0.1, 300, &f, &[vec![0.0]], 1.0, 20, 42).unwrap();
        let b = laplace_estimate(&basis, 0.1, 300, &f, &[vec![0.0]], 1.0, 20, 42).unwrap();
        assert_eq!(a.estimate.to_bits(), b.estimate.to_bits());
        assert_eq!(a.stderr.to_bits(), b.stderr.to_bits());
    }

    #[test]
    fn variational_translation_quarter() {
        // inf_z { (z-1)^2/2 + z^2/2 } = 1/4 via the constant-mode flow
        let basis = translation_basis();
        let f = EndpointFunctional::quadratic_to_point(vec![1.0], 1.0);
        let v = variational_value(&basis, &f, &[vec![0.0]], 1.0, 25, 3, 5).unwrap();
        assert!(v.converged);
        assert_relative_eq!(v.value, 0.25, max_relative = 1e-6);
    }

    #[test]
    fn variational_zero_functional() {
        let basis = translation_basis();
        let f = EndpointFunctional::Constant { value: 0.0 };
        let v = variational_value(&basis, &f, &[vec![0.0]], 1.0, 20, 2, 5).unwrap();
        assert!(v.value.abs() <= 1e-12);
    }

    #[test]
    fn variational_log_squared_linear_flow() {
        // substitute w = log z: reduces to the translation case, value 1/4
        let basis =
            BasisFamily::new(1, 1.0, vec![Field::Linear { matrix: vec![1.0] }], Field::Zero, None)
                .unwrap();
        let f = EndpointFunctional::LogSquared1d { center: 1.0, floor: 1e-3 };
        let v = variational_value(&basis, &f, &[vec![1.0]], 1.0, 25, 4, 5).unwrap();
        assert_relative_eq!(v.value, 0.25, max_relative = 1e-3);
    }

    #[test]
    fn laplace_matches_gaussian_quadrature_within_three_stderr() {
        // translation flow endpoint is exactly N(0, eps); the quadrature
        // oracle integrates the same functional against that law
        let basis = translation_basis();
        let f = EndpointFunctional::quadratic_to_point(vec![1.0], 1.0);
        for eps in [0.2, 0.1] {
            let est =
                laplace_estimate(&basis, eps, 30_000, &f, &[vec![0.0]], 1.0, 20, 31).unwrap();
            let truth = gaussian_quadrature_truth(eps, 0.0, 1.0, |z| 0.5 * (z - 1.0) * (z - 1.0));
            assert!(
                (est.estimate - truth).abs() <= 3.0 * est.stderr,
                "eps {eps}: estimate {} truth {truth} stderr {}",
                est.estimate,
                est.stderr
            );
        }
    }

    #[test]
    fn convergence_report_validates_eps_list() {
        let basis = translation_basis();
        let f = EndpointFunctional::Constant { value: 0.0 };
        assert!(ldp_convergence_report(&basis, &f, &[0.1, 0.2, 0.3], 100, &[vec![0.0]], 1.0, 10, 1, 1)
            .is_err());
        assert!(ldp_convergence_report(&basis, &f, &[0.2, 0.1], 100, &[vec![0.0]], 1.0, 10, 1, 1)
            .is_err());
        let rep = ldp_convergence_report(
            &basis,
            &f,
            &[0.3, 0.2, 0.1],
            100,
            &[vec![0.0]],
            1.0,
            10,
            1,
            1,
        )
        .unwrap();
        assert_eq!(rep.rows.len(), 3);
        for r in &rep.rows {
            assert_eq!(r.estimate, 0.0);
            assert_eq!(r.gap, 0.0);
        }
    }

    /// Simpson-rule oracle for `-eps log int e^{-F(z)/eps} N(x0, eps T)(dz)`.
    pub(crate) fn gaussian_quadrature_truth(
        eps: f64,
        x0: f64,
        horizon: f64,
        f: impl Fn(f64) -> f64,
    ) -> f64 {
        let sigma = (eps * horizon).sqrt();
        let lo = x0 - 12.0 * sigma;
        let hi = x0 + 12.0 * sigma;
        let n = 4000; // even
        let h = (hi - lo) / n as f64;
        let density = |z: f64| {
            let u = (z - x0) / sigma;
            (-0.5 * u * u).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
        };
        let integrand = |z: f64| (-f(z) / eps).exp() * density(z);
        let mut s = integrand(lo) + integrand(hi);
        for i in 1..n {
            let z = lo + i as f64 * h;
            s += integrand(z) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        let integral = s * h / 3.0;
        -eps * integral.ln()
    }
}
