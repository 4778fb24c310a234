//! Deterministic controls and the controlled flow they generate.
//!
//! A control is an `l2`-valued step function of time: mode coefficients
//! `u_l(t_j)` that replace the Brownian increments of the noisy flow. The
//! controlled drift is
//!
//! ```text
//! b_u(x, t) = sum_l u_l(t) f_l(x, t),      b_hat = b + b_u,
//! ```
//!
//! the accumulated driver is `F(x, t) = int_0^t (b_u + b)(x, s) ds`, and
//! the control's cost `1/2 int ||u||^2 dt` is the large-deviations
//! currency. Piecewise-constant controls make the cost sum exact and turn
//! the cost minimization downstream into a finite-dimensional problem.
//!
//! Deterministic (`eps = 0`) trajectories are integrated with the
//! classical fourth-order one-step method; the noisy integrator lives in
//! [`crate::flow`].

use crate::basis::BasisFamily;
use crate::error::{Error, Result};
use crate::flow::{FlowTrajectory, TrajectoryMeta};

/// Piecewise-constant-in-time mode coefficients on a uniform grid.
/// `values[l * n_steps + k]` applies on `[t0 + k dt, t0 + (k+1) dt)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlPath {
    t0: f64,
    dt: f64,
    values: Vec<f64>,
    n_modes: usize,
    n_steps: usize,
    bound: Option<f64>,
}

impl ControlPath {
    pub fn new(t0: f64, dt: f64, n_modes: usize, values: Vec<f64>) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::Config(format!("control grid needs dt > 0, got {dt}")));
        }
        if n_modes == 0 || values.len() % n_modes != 0 || values.is_empty() {
            return Err(Error::Config(format!(
                "control values (len {}) must be a nonempty multiple of n_modes {n_modes}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("control values must be finite".into()));
        }
        let n_steps = values.len() / n_modes;
        Ok(Self { t0, dt, values, n_modes, n_steps, bound: None })
    }

    pub fn zeros(t0: f64, dt: f64, n_modes: usize, n_steps: usize) -> Result<Self> {
        Self::new(t0, dt, n_modes, vec![0.0; n_modes * n_steps])
    }

    /// Declares membership in the cost ball `int ||u||^2 <= bound`;
    /// violating controls are rejected.
    pub fn with_bound(mut self, bound: f64) -> Result<Self> {
        let energy = 2.0 * self.cost();
        if energy > bound {
            return Err(Error::Config(format!(
                "control energy {energy} exceeds declared bound {bound}"
            )));
        }
        self.bound = Some(bound);
        Ok(self)
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn dt(&self) -> f64 {
        self.dt
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

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, l: usize, k: usize) -> f64 {
        self.values[l * self.n_steps + k]
    }

    pub fn covers(&self, a: f64, b: f64) -> bool {
        let tol = 1e-9 * self.dt;
        a >= self.t0 - tol && b <= self.t_end() + tol
    }

    /// Step index holding time `t`; the right endpoint maps to the last
    /// interval.
    pub fn step_index(&self, t: f64) -> Result<usize> {
        if !self.covers(t, t) {
            return Err(Error::Domain(format!(
                "t = {t} outside control grid [{}, {}]",
                self.t0,
                self.t_end()
            )));
        }
        let k = ((t - self.t0) / self.dt).floor() as isize;
        Ok(k.clamp(0, self.n_steps as isize - 1) as usize)
    }

    pub fn value_at(&self, l: usize, t: f64) -> Result<f64> {
        Ok(self.value(l, self.step_index(t)?))
    }

    /// `1/2 int ||u(s)||^2 ds`, exact for the step-function representation.
    pub fn cost(&self) -> f64 {
        0.5 * self.dt * self.values.iter().map(|v| v * v).sum::<f64>()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            t0: self.t0,
            dt: self.dt,
            values: self.values.iter().map(|v| v * factor).collect(),
            n_modes: self.n_modes,
            n_steps: self.n_steps,
            bound: None,
        }
    }

    /// CSV rows `t_j, u_1, .., u_L` with a header.
    pub fn to_csv_string(&self) -> String {
        let mut s = String::from("t");
        for l in 0..self.n_modes {
            s.push_str(&format!(",u_{}", l + 1));
        }
        s.push('\n');
        for k in 0..self.n_steps {
            s.push_str(&format!("{}", self.t0 + k as f64 * self.dt));
            for l in 0..self.n_modes {
                s.push_str(&format!(",{}", self.value(l, k)));
            }
            s.push('\n');
        }
        s
    }

    /// Parses the format written by [`Self::to_csv_string`]. The time grid
    /// must be uniform.
    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut times = Vec::new();
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if i == 0 || line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split(',');
            let t: f64 = fields
                .next()
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::Config(format!("bad control csv row {i}")))?;
            let vals: std::result::Result<Vec<f64>, _> =
                fields.map(|s| s.trim().parse::<f64>()).collect();
            let vals = vals.map_err(|_| Error::Config(format!("bad control csv row {i}")))?;
            times.push(t);
            rows.push(vals);
        }
        if rows.len() < 1 {
            return Err(Error::Config("control csv has no data rows".into()));
        }
        let n_modes = rows[0].len();
        if n_modes == 0 || rows.iter().any(|r| r.len() != n_modes) {
            return Err(Error::Config("control csv rows have inconsistent widths".into()));
        }
        let dt = if times.len() > 1 { times[1] - times[0] } else { 1.0 };
        for w in times.windows(2) {
            if ((w[1] - w[0]) - dt).abs() > 1e-9 * dt.abs().max(1.0) {
                return Err(Error::Config("control csv time grid is not uniform".into()));
            }
        }
        let n_steps = rows.len();
        let mut values = vec![0.0; n_modes * n_steps];
        for (k, row) in rows.iter().enumerate() {
            for (l, v) in row.iter().enumerate() {
                values[l * n_steps + k] = *v;
            }
        }
        Self::new(times[0], dt, n_modes, values)
    }
}

fn check_mode_count(basis: &BasisFamily, u: &ControlPath) -> Result<()> {
    if u.n_modes() != basis.n_modes() {
        return Err(Error::Config(format!(
            "control has {} modes but basis has {}",
            u.n_modes(),
            basis.n_modes()
        )));
    }
    Ok(())
}

/// Writes `b_hat(x, t) = b(x, t) + sum_l u_l(t) f_l(x, t)` into `out`,
/// with the control coefficients frozen at step `k` of the control grid.
/// `scratch` must have length d.
pub(crate) fn controlled_velocity_at_step(
    basis: &BasisFamily,
    u: Option<&ControlPath>,
    k: usize,
    x: &[f64],
    t: f64,
    out: &mut [f64],
    scratch: &mut [f64],
) {
    basis.eval_drift(x, t, out);
    if let Some(u) = u {
        for l in 0..basis.n_modes() {
            let ul = u.value(l, k);
            if ul == 0.0 {
                continue;
            }
            basis.eval_mode(l, x, t, scratch);
            for i in 0..out.len() {
                out[i] += ul * scratch[i];
            }
        }
    }
}

/// Jacobian counterpart of [`controlled_velocity_at_step`]; `out` is
/// row-major d x d and `scratch` must have length d*d.
pub(crate) fn controlled_velocity_grad_at_step(
    basis: &BasisFamily,
    u: Option<&ControlPath>,
    k: usize,
    x: &[f64],
    t: f64,
    out: &mut [f64],
    scratch: &mut [f64],
) {
    basis.grad_drift(x, t, out);
    if let Some(u) = u {
        for l in 0..basis.n_modes() {
            let ul = u.value(l, k);
            if ul == 0.0 {
                continue;
            }
            basis.grad_mode(l, x, t, scratch);
            for i in 0..out.len() {
                out[i] += ul * scratch[i];
            }
        }
    }
}

/// `b_hat(x, t) = b(x, t) + sum_l u_l(t) f_l(x, t)`.
pub fn controlled_drift(
    basis: &BasisFamily,
    u: &ControlPath,
    x: &[f64],
    t: f64,
) -> Result<Vec<f64>> {
    check_mode_count(basis, u)?;
    let k = u.step_index(t)?;
    let d = basis.dim();
    let mut out = vec![0.0; d];
    let mut scratch = vec![0.0; d];
    controlled_velocity_at_step(basis, Some(u), k, x, t, &mut out, &mut scratch);
    Ok(out)
}

/// One classical fourth-order step of `dx/dt = b_hat(x, t)` over `[t, t+h]`
/// with the control frozen at step `k`.
pub(crate) fn rk4_step(
    basis: &BasisFamily,
    u: Option<&ControlPath>,
    k: usize,
    x: &mut [f64],
    t: f64,
    h: f64,
    scratch: &mut Rk4Scratch,
) {
    let d = x.len();
    let Rk4Scratch { k1, k2, k3, k4, xs, field } = scratch;
    controlled_velocity_at_step(basis, u, k, x, t, k1, field);
    for i in 0..d {
        xs[i] = x[i] + 0.5 * h * k1[i];
    }
    controlled_velocity_at_step(basis, u, k, xs, t + 0.5 * h, k2, field);
    for i in 0..d {
        xs[i] = x[i] + 0.5 * h * k2[i];
    }
    controlled_velocity_at_step(basis, u, k, xs, t + 0.5 * h, k3, field);
    for i in 0..d {
        xs[i] = x[i] + h * k3[i];
    }
    controlled_velocity_at_step(basis, u, k, xs, t + h, k4, field);
    for i in 0..d {
        x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

pub(crate) struct Rk4Scratch {
    pub k1: Vec<f64>,
    pub k2: Vec<f64>,
    pub k3: Vec<f64>,
    pub k4: Vec<f64>,
    pub xs: Vec<f64>,
    pub field: Vec<f64>,
}

impl Rk4Scratch {
    pub fn new(d: usize) -> Self {
        Self {
            k1: vec![0.0; d],
            k2: vec![0.0; d],
            k3: vec![0.0; d],
            k4: vec![0.0; d],
            xs: vec![0.0; d],
            field: vec![0.0; d],
        }
    }
}

/// Integrates the deterministic controlled flow from `t0` to `t1` on the
/// control grid (classical RK4, control frozen per step). Pass `None` for
/// the drift-only flow.
pub fn solve_controlled_flow(
    basis: &BasisFamily,
    u: Option<&ControlPath>,
    points: &[Vec<f64>],
    t0: f64,
    t1: f64,
) -> Result<FlowTrajectory> {
    let d = basis.dim();
    basis.check_time(t0)?;
    basis.check_time(t1)?;
    if t1 < t0 {
        return Err(Error::Config(format!("t1 = {t1} precedes t0 = {t0}")));
    }
    if let Some(u) = u {
        check_mode_count(basis, u)?;
        if !u.covers(t0, t1) {
            return Err(Error::Config(format!(
                "control grid [{}, {}] does not cover [{t0}, {t1}]",
                u.t0(),
                u.t_end()
            )));
        }
    }
    let dt = match u {
        Some(u) => u.dt(),
        // drift-only flows get a fixed desk-scale resolution
        None => ((t1 - t0) / 256.0).max(1e-6),
    };
    let n_steps = if t1 > t0 { ((t1 - t0) / dt - 1e-9).floor() as usize + 1 } else { 0 };

    let p = points.len();
    let mut times = Vec::with_capacity(n_steps + 1);
    times.push(t0);
    let mut positions = vec![0.0; (n_steps + 1) * p * d];
    for (i, pt) in points.iter().enumerate() {
        if pt.len() != d {
            return Err(Error::Config("point dimension mismatch".into()));
        }
        positions[i * d..(i + 1) * d].copy_from_slice(pt);
    }

    let mut scratch = Rk4Scratch::new(d);
    let mut x = vec![0.0; d];
    let mut t = t0;
    for step in 0..n_steps {
        let h = (t1 - t).min(dt);
        let k = match u {
            Some(u) => u.step_index(t + 0.5 * h)?,
            None => 0,
        };
        let (prev, next) = positions.split_at_mut((step + 1) * p * d);
        let prev = &prev[step * p * d..];
        for i in 0..p {
            x.copy_from_slice(&prev[i * d..(i + 1) * d]);
            rk4_step(basis, u, k, &mut x, t, h, &mut scratch);
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::BlowUp {
                    step,
                    detail: format!("point {i} left the finite range under the controlled flow"),
                });
            }
            next[i * d..(i + 1) * d].copy_from_slice(&x);
        }
        t += h;
        times.push(t);
    }

    Ok(FlowTrajectory {
        dim: d,
        points: points.to_vec(),
        times,
        positions,
        jacobians: None,
        eps: 0.0,
        meta: TrajectoryMeta::default(),
    })
}

/// Accumulated driver `int_{t0}^{t} (b_u + b)(x, s) ds` at a fixed spatial
/// point, using the same Simpson-weighted per-step quadrature as the RK4
/// integrator. The lower limit is the control grid origin.
pub fn accumulate_f0u(
    basis: &BasisFamily,
    u: &ControlPath,
    x: &[f64],
    t: f64,
) -> Result<Vec<f64>> {
    check_mode_count(basis, u)?;
    if !u.covers(u.t0(), t) {
        return Err(Error::Domain(format!(
            "t = {t} outside control grid [{}, {}]",
            u.t0(),
            u.t_end()
        )));
    }
    let d = basis.dim();
    let mut acc = vec![0.0; d];
    let mut val = vec![0.0; d];
    let mut scratch = vec![0.0; d];
    let mut s = u.t0();
    while s < t - 1e-12 {
        let h = (t - s).min(u.dt());
        let k = u.step_index(s + 0.5 * h)?;
        let mut add = |tau: f64, w: f64, acc: &mut Vec<f64>, val: &mut Vec<f64>| {
            controlled_velocity_at_step(basis, Some(u), k, x, tau, val, &mut scratch);
            for i in 0..d {
                acc[i] += w * h * val[i];
            }
        };
        add(s, 1.0 / 6.0, &mut acc, &mut val);
        add(s + 0.5 * h, 4.0 / 6.0, &mut acc, &mut val);
        add(s + h, 1.0 / 6.0, &mut acc, &mut val);
        s += h;
    }
    Ok(acc)
}

/// `1/2 int_0^T ||u(s)||^2 ds`; exact for step functions.
pub fn control_cost(u: &ControlPath) -> f64 {
    u.cost()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::Field;
    use crate::geom::AaBox;
    use approx::assert_relative_eq;

    fn constant_mode_basis_1d() -> BasisFamily {
        BasisFamily::new(1, 1.0, vec![Field::Constant(vec![1.0])], Field::Zero, None).unwrap()
    }

    fn linear_mode_basis_1d() -> BasisFamily {
        BasisFamily::new(1, 1.0, vec![Field::Linear { matrix: vec![1.0] }], Field::Zero, None)
            .unwrap()
    }

    #[test]
    fn zero_control_returns_drift() {
        let basis =
            BasisFamily::new(1, 1.0, vec![Field::Constant(vec![1.0])], Field::Constant(vec![-2.5]), None)
                .unwrap();
        let u = ControlPath::zeros(0.0, 0.1, 1, 10).unwrap();
        let v = controlled_drift(&basis, &u, &[0.3], 0.55).unwrap();
        assert_eq!(v, vec![-2.5]);
    }

    #[test]
    fn constant_mode_constant_control() {
        let basis = constant_mode_basis_1d();
        let u = ControlPath::new(0.0, 0.25, 1, vec![2.0; 4]).unwrap();
        for t in [0.0, 0.3, 0.99] {
            let v = controlled_drift(&basis, &u, &[7.0], t).unwrap();
            assert_eq!(v, vec![2.0]);
        }
        assert!(controlled_drift(&basis, &u, &[0.0], 1.5).is_err());
    }

    #[test]
    fn controlled_drift_matches_direct_summation() {
        // independent oracle: sum u_l f_l by hand over public mode values
        let centers: Vec<Vec<f64>> = (0..4).map(|i| vec![0.2 + 0.2 * i as f64]).collect();
        let basis = crate::basis::make_gaussian_bump_basis(
            1,
            &centers,
            0.15,
            1.0,
            AaBox::unit(1),
            1.0,
        )
        .unwrap();
        let vals = vec![0.7, -1.3, 0.2, 2.4];
        let u = ControlPath::new(0.0, 1.0, 4, vals.clone()).unwrap();
        let x = [0.53];
        let t = 0.4;
        let mut expected = 0.0;
        let mut f = [0.0];
        for l in 0..4 {
            basis.eval_mode(l, &x, t, &mut f);
            expected += vals[l] * f[0];
        }
        let got = controlled_drift(&basis, &u, &x, t).unwrap();
        assert_relative_eq!(got[0], expected, epsilon = 1e-12);
    }

    #[test]
    fn identity_flow_without_control_or_drift() {
        let basis = BasisFamily::new(2, 1.0, vec![], Field::Zero, None).unwrap();
        let traj =
            solve_controlled_flow(&basis, None, &[vec![0.2, -0.4]], 0.0, 1.0).unwrap();
        let last = traj.position(traj.n_times() - 1, 0);
        assert_eq!(last, &[0.2, -0.4]);
    }

    #[test]
    fn constant_mode_flow_translates() {
        let basis = constant_mode_basis_1d();
        let c = 3.0;
        let u = ControlPath::new(0.0, 0.01, 1, vec![c; 100]).unwrap();
        let traj = solve_controlled_flow(&basis, Some(&u), &[vec![0.5]], 0.0, 1.0).unwrap();
        let end = traj.position(traj.n_times() - 1, 0)[0];
        assert_relative_eq!(end, 0.5 + c, epsilon = 1e-12);
    }

    #[test]
    fn linear_mode_flow_is_exponential() {
        // dx/dt = c x  =>  x(T) = x0 e^{cT}; RK4 at dt = 1e-3 is well
        // inside 1e-8
        let basis = linear_mode_basis_1d();
        let c = 0.8;
        let u = ControlPath::new(0.0, 1e-3, 1, vec![c; 1000]).unwrap();
        let traj = solve_controlled_flow(&basis, Some(&u), &[vec![1.0]], 0.0, 1.0).unwrap();
        let end = traj.position(traj.n_times() - 1, 0)[0];
        assert_relative_eq!(end, c.exp(), epsilon = 1e-8);
    }

    #[test]
    fn accumulated_driver_constant_mode() {
        let basis = constant_mode_basis_1d();
        let u = ControlPath::new(0.0, 0.1, 1, vec![1.5; 10]).unwrap();
        let f = accumulate_f0u(&basis, &u, &[9.0], 0.6).unwrap();
        assert_relative_eq!(f[0], 1.5 * 0.6, epsilon = 1e-12);
        let zero = ControlPath::zeros(0.0, 0.1, 1, 10).unwrap();
        let f0 = accumulate_f0u(&basis, &zero, &[9.0], 0.6).unwrap();
        assert_eq!(f0, vec![0.0]);
    }

    #[test]
    fn accumulated_driver_matches_riemann_oracle() {
        // independent oracle: midpoint Riemann sum at 10x resolution
        let centers: Vec<Vec<f64>> = (0..3).map(|i| vec![0.25 + 0.25 * i as f64]).collect();
        let basis = crate::basis::make_gaussian_bump_basis(
            1,
            &centers,
            0.2,
            0.9,
            AaBox::unit(1),
            1.0,
        )
        .unwrap();
        let vals: Vec<f64> = (0..30).map(|i| ((i * 7 % 11) as f64 - 5.0) / 3.0).collect();
        let u = ControlPath::new(0.0, 0.1, 3, vals).unwrap();
        let x = [0.4];
        let t = 1.0;

        let mut oracle = 0.0;
        let fine = 1000;
        let h = t / fine as f64;
        for j in 0..fine {
            let s = (j as f64 + 0.5) * h;
            let k = (s / 0.1).floor() as usize;
            let mut f = [0.0];
            let mut v = 0.0;
            for l in 0..3 {
                basis.eval_mode(l, &x, s, &mut f);
                v += u.value(l, k.min(9)) * f[0];
            }
            oracle += h * v;
        }
        let got = accumulate_f0u(&basis, &u, &x, t).unwrap();
        assert_relative_eq!(got[0], oracle, epsilon = 1e-10);
    }

    #[test]
    fn cost_values_and_scaling() {
        let zero = ControlPath::zeros(0.0, 0.01, 2, 100).unwrap();
        assert_eq!(control_cost(&zero), 0.0);

        let u = ControlPath::new(0.0, 0.01, 1, vec![2.0; 100]).unwrap();
        assert_relative_eq!(control_cost(&u), 2.0, epsilon = 1e-12);

        let vals: Vec<f64> = (0..400).map(|i| ((i % 13) as f64 - 6.0) / 5.0).collect();
        let u = ControlPath::new(0.0, 0.01, 4, vals.clone()).unwrap();
        let direct: f64 = 0.5 * 0.01 * vals.iter().map(|v| v * v).sum::<f64>();
        assert_relative_eq!(control_cost(&u), direct, epsilon = 1e-12);
        for alpha in [0.5f64, 2.0, -3.0] {
            assert_relative_eq!(
                control_cost(&u.scaled(alpha)),
                alpha * alpha * control_cost(&u),
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn endpoint_affine_in_control_for_constant_modes() {
        let basis = constant_mode_basis_1d();
        let mk = |vals: Vec<f64>| ControlPath::new(0.0, 0.1, 1, vals).unwrap();
        let ua = mk((0..10).map(|i| 0.3 * i as f64).collect());
        let ub = mk((0..10).map(|i| 1.0 - 0.1 * i as f64).collect());
        let sum = mk((0..10).map(|i| 0.3 * i as f64 + 1.0 - 0.1 * i as f64).collect());
        let end = |u: &ControlPath| {
            let t = solve_controlled_flow(&basis, Some(u), &[vec![0.0]], 0.0, 1.0).unwrap();
            t.position(t.n_times() - 1, 0)[0]
        };
        assert_relative_eq!(end(&ua) + end(&ub), end(&sum), epsilon = 1e-12);
    }

    #[test]
    fn driver_differs_from_flow_endpoint_for_spatially_varying_fields() {
        // regression guard: the accumulated driver at fixed x equals the
        // flow endpoint displacement only for spatially constant fields
        let basis = linear_mode_basis_1d();
        let u = ControlPath::new(0.0, 1e-3, 1, vec![1.0; 1000]).unwrap();
        let x = [1.0];
        let driver = accumulate_f0u(&basis, &u, &x, 1.0).unwrap();
        assert_relative_eq!(driver[0], 1.0, epsilon = 1e-12); // int_0^1 x dt at frozen x
        let traj = solve_controlled_flow(&basis, Some(&u), &[x.to_vec()], 0.0, 1.0).unwrap();
        let displacement = traj.position(traj.n_times() - 1, 0)[0] - x[0];
        assert!((displacement - driver[0]).abs() > 0.5);

        let const_basis = constant_mode_basis_1d();
        let driver_c = accumulate_f0u(&const_basis, &u, &x, 1.0).unwrap();
        let traj_c =
            solve_controlled_flow(&const_basis, Some(&u), &[x.to_vec()], 0.0, 1.0).unwrap();
        let disp_c = traj_c.position(traj_c.n_times() - 1, 0)[0] - x[0];
        assert_relative_eq!(driver_c[0], disp_c, epsilon = 1e-12);
    }

    #[test]
    fn csv_roundtrip() {
        let vals: Vec<f64> = (0..20).map(|i| (i as f64).sin()).collect();
        let u = ControlPath::new(0.0, 0.05, 2, vals).unwrap();
        let text = u.to_csv_string();
        let back = ControlPath::from_csv_str(&text).unwrap();
        assert_eq!(u, back);
    }

    #[test]
    fn bound_membership_checked() {
        let u = ControlPath::new(0.0, 1.0, 1, vec![2.0]).unwrap();
        assert!(u.clone().with_bound(4.0).is_ok());
        assert!(u.with_bound(3.9).is_err());
    }
}
