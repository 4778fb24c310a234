//! Euler-Maruyama integration of the noisy controlled flow
//!
//! ```text
//! x <- x + b_hat_u(x, t) dt + sqrt(eps) sum_l f_l(x, t) dbeta_l(t)
//! ```
//!
//! for a finite set of initial points that all share one driving
//! `NoisePath`, together with the first-variation (Jacobian) system
//!
//! ```text
//! J <- J + grad b_hat_u(x, t) J dt + sqrt(eps) sum_l grad f_l(x, t) J dbeta_l(t)
//! ```
//!
//! and the discrete semigroup check. A trajectory records positions at
//! every grid time; a blow-up aborts with the offending step index rather
//! than clamping, since a clamped sample would silently corrupt any
//! large-deviations statistics computed from it.

use crate::basis::BasisFamily;
use crate::control::ControlPath;
use crate::error::{Error, Result};
use crate::geom;
use crate::noise::NoisePath;

/// Provenance labels carried along with a trajectory.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrajectoryMeta {
    pub basis_label: Option<String>,
    pub control_label: Option<String>,
    pub seed: u64,
}

/// Time-indexed positions (and optionally Jacobians) of a point set under
/// one flow realization.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowTrajectory {
    pub dim: usize,
    /// The P initial points.
    pub points: Vec<Vec<f64>>,
    /// M+1 grid times.
    pub times: Vec<f64>,
    /// Row-major (time, point, coordinate), length (M+1) * P * dim.
    pub positions: Vec<f64>,
    /// Row-major (time, point, d x d entries) when requested.
    pub jacobians: Option<Vec<f64>>,
    pub eps: f64,
    pub meta: TrajectoryMeta,
}

impl FlowTrajectory {
    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    pub fn n_points(&self) -> usize {
        self.points.len()
    }

    pub fn position(&self, time_idx: usize, point_idx: usize) -> &[f64] {
        let d = self.dim;
        let off = (time_idx * self.n_points() + point_idx) * d;
        &self.positions[off..off + d]
    }

    pub fn jacobian(&self, time_idx: usize, point_idx: usize) -> Option<&[f64]> {
        let d = self.dim;
        self.jacobians.as_ref().map(|j| {
            let off = (time_idx * self.n_points() + point_idx) * d * d;
            &j[off..off + d * d]
        })
    }

    /// Terminal positions, flat (point-major).
    pub fn endpoints(&self) -> &[f64] {
        let d = self.dim;
        let p = self.n_points();
        let off = (self.n_times() - 1) * p * d;
        &self.positions[off..off + p * d]
    }

    pub fn det_jacobian(&self, time_idx: usize, point_idx: usize) -> Option<f64> {
        self.jacobian(time_idx, point_idx).map(|j| geom::det(j, self.dim))
    }

    /// CSV rows `time, point_id, x_0.., [j_00, j_01, ..]`.
    pub fn to_csv_string(&self) -> String {
        let d = self.dim;
        let mut s = String::from("time,point_id");
        for i in 0..d {
            s.push_str(&format!(",x{i}"));
        }
        if self.jacobians.is_some() {
            for r in 0..d {
                for c in 0..d {
                    s.push_str(&format!(",j{r}{c}"));
                }
            }
        }
        s.push('\n');
        for (k, t) in self.times.iter().enumerate() {
            for p in 0..self.n_points() {
                s.push_str(&format!("{t},{p}"));
                for v in self.position(k, p) {
                    s.push_str(&format!(",{v}"));
                }
                if let Some(j) = self.jacobian(k, p) {
                    for v in j {
                        s.push_str(&format!(",{v}"));
                    }
                }
                s.push('\n');
            }
        }
        s
    }

    /// Compact little-endian dump. Layout after the 8-byte magic
    /// `SFLOWTRJ`: version u32, dim u32, P u64, M u64, eps f64, seed u64,
    /// times f64[M+1], positions f64[(M+1)*P*dim], has_jacobians u8,
    /// then jacobians f64[(M+1)*P*dim*dim] when the flag is 1.
    pub fn to_binary(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(b"SFLOWTRJ");
        out.extend_from_slice(&1u32.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.n_points() as u64).to_le_bytes());
        out.extend_from_slice(&((self.n_times() - 1) as u64).to_le_bytes());
        out.extend_from_slice(&self.eps.to_le_bytes());
        out.extend_from_slice(&self.meta.seed.to_le_bytes());
        for t in &self.times {
            out.extend_from_slice(&t.to_le_bytes());
        }
        for v in &self.positions {
            out.extend_from_slice(&v.to_le_bytes());
        }
        match &self.jacobians {
            None => out.push(0),
            Some(j) => {
                out.push(1);
                for v in j {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_binary(data: &[u8]) -> Result<Self> {
        fn bad(what: &str) -> Error {
            Error::Config(format!("trajectory dump: {what}"))
        }
        struct Reader<'a> {
            data: &'a [u8],
            off: usize,
        }
        impl<'a> Reader<'a> {
            fn take(&mut self, n: usize) -> Result<&'a [u8]> {
                if self.off + n > self.data.len() {
                    return Err(bad("truncated"));
                }
                let s = &self.data[self.off..self.off + n];
                self.off += n;
                Ok(s)
            }
            fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
                let raw = self.take(n * 8)?;
                Ok(raw
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect())
            }
        }
        if data.len() < 8 + 4 + 4 + 8 + 8 + 8 + 8 || &data[0..8] != b"SFLOWTRJ" {
            return Err(bad("missing or wrong magic"));
        }
        let mut r = Reader { data, off: 8 };
        let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
        if version != 1 {
            return Err(bad("unsupported version"));
        }
        let dim = u32::from_le_bytes(r.take(4)?.try_into().unwrap()) as usize;
        let p = u64::from_le_bytes(r.take(8)?.try_into().unwrap()) as usize;
        let m = u64::from_le_bytes(r.take(8)?.try_into().unwrap()) as usize;
        let eps = f64::from_le_bytes(r.take(8)?.try_into().unwrap());
        let seed = u64::from_le_bytes(r.take(8)?.try_into().unwrap());
        let times = r.f64s(m + 1)?;
        let positions = r.f64s((m + 1) * p * dim)?;
        let flag = r.take(1)?[0];
        let jacobians =
            if flag == 1 { Some(r.f64s((m + 1) * p * dim * dim)?) } else { None };
        let points: Vec<Vec<f64>> =
            (0..p).map(|i| positions[i * dim..(i + 1) * dim].to_vec()).collect();
        Ok(Self {
            dim,
            points,
            times,
            positions,
            jacobians,
            eps,
            meta: TrajectoryMeta { seed, ..Default::default() },
        })
    }
}

fn validate_inputs(
    basis: &BasisFamily,
    control: Option<&ControlPath>,
    eps: f64,
    points: &[Vec<f64>],
    t0: f64,
    t1: f64,
    noise: &NoisePath,
) -> Result<()> {
    basis.check_time(t0)?;
    basis.check_time(t1)?;
    if t1 < t0 {
        return Err(Error::Config(format!("t1 = {t1} precedes t0 = {t0}")));
    }
    if !(eps >= 0.0) {
        return Err(Error::Config(format!("eps must be >= 0, got {eps}")));
    }
    if noise.n_modes() != basis.n_modes() {
        return Err(Error::Config(format!(
            "noise carries {} modes but basis has {}",
            noise.n_modes(),
            basis.n_modes()
        )));
    }
    if !noise.covers(t0, t1) {
        return Err(Error::Config(format!(
            "noise grid [{}, {}] does not cover [{t0}, {t1}]",
            noise.t0(),
            noise.t_end()
        )));
    }
    if let Some(u) = control {
        if u.n_modes() != basis.n_modes() {
            return Err(Error::Config(format!(
                "control carries {} modes but basis has {}",
                u.n_modes(),
                basis.n_modes()
            )));
        }
        if !u.covers(t0, t1) {
            return Err(Error::Config(format!(
                "control grid [{}, {}] does not cover [{t0}, {t1}]",
                u.t0(),
                u.t_end()
            )));
        }
        if (u.dt() - noise.dt()).abs() > 1e-9 * noise.dt() {
            return Err(Error::Config(format!(
                "control dt {} and noise dt {} must share the time grid",
                u.dt(),
                noise.dt()
            )));
        }
    }
    for pt in points {
        if pt.len() != basis.dim() {
            return Err(Error::Config("point dimension mismatch".into()));
        }
    }
    Ok(())
}

/// Shared inner loop: advances all points (and Jacobians) over `n_steps`
/// uniform steps from `t0` to `t1`, drawing increments from the
/// interpolated Brownian path. `record` receives the state after every
/// step.
pub(crate) fn euler_maruyama_sweep(
    basis: &BasisFamily,
    control: Option<&ControlPath>,
    eps: f64,
    positions: &mut [f64],
    jacobians: Option<&mut [f64]>,
    t0: f64,
    t1: f64,
    noise: &NoisePath,
    n_steps: usize,
    mut record: impl FnMut(usize, f64, &[f64], Option<&[f64]>),
) -> Result<()> {
    let d = basis.dim();
    let n_modes = basis.n_modes();
    let p = positions.len() / d;
    let h = if n_steps > 0 { (t1 - t0) / n_steps as f64 } else { 0.0 };
    let sqrt_eps = eps.sqrt();

    let mut jac = jacobians;
    let mut incs = vec![0.0; n_modes];
    let mut drift = vec![0.0; d];
    let mut fbuf = vec![0.0; d];
    let mut amat = vec![0.0; d * d];
    let mut gbuf = vec![0.0; d * d];
    let mut jnew = vec![0.0; d * d];
    let mut dx = vec![0.0; d];

    for step in 0..n_steps {
        let ta = t0 + step as f64 * h;
        let tb = if step + 1 == n_steps { t1 } else { t0 + (step + 1) as f64 * h };
        for l in 0..n_modes {
            incs[l] = if sqrt_eps > 0.0 { noise.increment(l, ta, tb)? } else { 0.0 };
        }
        let k_ctrl = match control {
            Some(u) => u.step_index(0.5 * (ta + tb))?,
            None => 0,
        };
        for i in 0..p {
            let x = &mut positions[i * d..(i + 1) * d];
            // displacement from the current state
            basis.eval_drift(x, ta, &mut drift);
            if let Some(u) = control {
                for l in 0..n_modes {
                    let ul = u.value(l, k_ctrl);
                    if ul == 0.0 {
                        continue;
                    }
                    basis.eval_mode(l, x, ta, &mut fbuf);
                    for c in 0..d {
                        drift[c] += ul * fbuf[c];
                    }
                }
            }
            for c in 0..d {
                dx[c] = drift[c] * (tb - ta);
            }
            if sqrt_eps > 0.0 {
                for l in 0..n_modes {
                    if incs[l] == 0.0 {
                        continue;
                    }
                    basis.eval_mode(l, x, ta, &mut fbuf);
                    for c in 0..d {
                        dx[c] += sqrt_eps * fbuf[c] * incs[l];
                    }
                }
            }
            // first-variation update uses gradients at the pre-step state
            if let Some(jall) = jac.as_deref_mut() {
                let jslice = &mut jall[i * d * d..(i + 1) * d * d];
                amat.fill(0.0);
                basis.grad_drift(x, ta, &mut gbuf);
                for e in 0..d * d {
                    amat[e] += gbuf[e] * (tb - ta);
                }
                if let Some(u) = control {
                    for l in 0..n_modes {
                        let ul = u.value(l, k_ctrl);
                        if ul == 0.0 {
                            continue;
                        }
                        basis.grad_mode(l, x, ta, &mut gbuf);
                        for e in 0..d * d {
                            amat[e] += ul * gbuf[e] * (tb - ta);
                        }
                    }
                }
                if sqrt_eps > 0.0 {
                    for l in 0..n_modes {
                        if incs[l] == 0.0 {
                            continue;
                        }
                        basis.grad_mode(l, x, ta, &mut gbuf);
                        for e in 0..d * d {
                            amat[e] += sqrt_eps * gbuf[e] * incs[l];
                        }
                    }
                }
                geom::matmul(&amat, jslice, &mut jnew, d);
                for e in 0..d * d {
                    jslice[e] += jnew[e];
                }
            }
            for c in 0..d {
                x[c] += dx[c];
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::BlowUp {
                    step,
                    detail: format!("point {i} became non-finite at t = {tb}"),
                });
            }
        }
        record(step, tb, positions, jac.as_deref());
    }
    Ok(())
}

fn identity_jacobians(p: usize, d: usize) -> Vec<f64> {
    let mut j = vec![0.0; p * d * d];
    for i in 0..p {
        for r in 0..d {
            j[i * d * d + r * d + r] = 1.0;
        }
    }
    j
}

/// Integrates the noisy controlled flow for all `points` over `[t0, t1]`
/// with increments from `noise`; every point sees the same increments.
/// The step count is taken from the noise grid resolution.
pub fn simulate_flow(
    basis: &BasisFamily,
    control: Option<&ControlPath>,
    eps: f64,
    points: &[Vec<f64>],
    t0: f64,
    t1: f64,
    noise: &NoisePath,
    with_jacobians: bool,
) -> Result<FlowTrajectory> {
    validate_inputs(basis, control, eps, points, t0, t1, noise)?;
    let d = basis.dim();
    let p = points.len();
    let n_steps =
        if t1 > t0 { (((t1 - t0) / noise.dt()).round() as usize).max(1) } else { 0 };

    let mut positions = vec![0.0; (n_steps + 1) * p * d];
    for (i, pt) in points.iter().enumerate() {
        positions[i * d..(i + 1) * d].copy_from_slice(pt);
    }
    let mut jacobians =
        if with_jacobians { Some(identity_jacobians(p, d).repeat(n_steps + 1)) } else { None };
    // repeat() above tiles the identity blocks across all time rows; rows
    // past the first get overwritten as the sweep records them
    let mut times = Vec::with_capacity(n_steps + 1);
    times.push(t0);

    let mut cur_pos = positions[0..p * d].to_vec();
    let mut cur_jac = jacobians.as_ref().map(|_| identity_jacobians(p, d));
    euler_maruyama_sweep(
        basis,
        control,
        eps,
        &mut cur_pos,
        cur_jac.as_deref_mut(),
        t0,
        t1,
        noise,
        n_steps,
        |step, t, pos, jac| {
            times.push(t);
            positions[(step + 1) * p * d..(step + 2) * p * d].copy_from_slice(pos);
            if let (Some(all), Some(j)) = (jacobians.as_deref_mut(), jac) {
                all[(step + 1) * p * d * d..(step + 2) * p * d * d].copy_from_slice(j);
            }
        },
    )?;

    Ok(FlowTrajectory {
        dim: d,
        points: points.to_vec(),
        times,
        positions,
        jacobians,
        eps,
        meta: TrajectoryMeta { seed: noise.seed(), ..Default::default() },
    })
}

/// Endpoint-only variant of [`simulate_flow`] for Monte Carlo loops; skips
/// trajectory storage entirely.
pub(crate) fn simulate_endpoints(
    basis: &BasisFamily,
    control: Option<&ControlPath>,
    eps: f64,
    start_flat: &[f64],
    t0: f64,
    t1: f64,
    noise: &NoisePath,
    n_steps: usize,
) -> Result<Vec<f64>> {
    let mut pos = start_flat.to_vec();
    euler_maruyama_sweep(basis, control, eps, &mut pos, None, t0, t1, noise, n_steps, |_, _, _, _| {})?;
    Ok(pos)
}

/// Max-over-points defect of the two-leg composition against the single
/// pass, `max_p |phi_{s,u}(x_p) - phi_{t,u}(phi_{s,t}(x_p))|`, with all
/// three integrations driven by the same Brownian path. Each leg uses
/// `resolution` uniform steps, so restarted grids generally do not line up
/// with the single-pass grid and the defect decays linearly in the step
/// size; with spatially constant modes the interpolated increments add
/// exactly and the defect vanishes.
pub fn check_flow_property(
    basis: &BasisFamily,
    control: Option<&ControlPath>,
    eps: f64,
    points: &[Vec<f64>],
    s: f64,
    t: f64,
    u: f64,
    noise: &NoisePath,
    resolution: usize,
) -> Result<f64> {
    if !(s <= t && t <= u) {
        return Err(Error::Config(format!("need s <= t <= u, got {s}, {t}, {u}")));
    }
    validate_inputs(basis, control, eps, points, s, u, noise)?;
    if resolution == 0 {
        return Err(Error::Config("resolution must be at least 1".into()));
    }
    let d = basis.dim();
    let p = points.len();
    let mut flat = vec![0.0; p * d];
    for (i, pt) in points.iter().enumerate() {
        flat[i * d..(i + 1) * d].copy_from_slice(pt);
    }

    let single = simulate_endpoints(basis, control, eps, &flat, s, u, noise, resolution)?;
    let mid = if t > s {
        simulate_endpoints(basis, control, eps, &flat, s, t, noise, resolution)?
    } else {
        flat.clone()
    };
    let composed = if u > t {
        simulate_endpoints(basis, control, eps, &mid, t, u, noise, resolution)?
    } else {
        mid
    };

    let mut worst = 0.0f64;
    for i in 0..p {
        worst = worst.max(geom::dist(&single[i * d..(i + 1) * d], &composed[i * d..(i + 1) * d]));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::Field;
    use approx::assert_relative_eq;

    fn basis_1d(mode: Field, drift: Field) -> BasisFamily {
        BasisFamily::new(1, 1.0, vec![mode], drift, None).unwrap()
    }

    #[test]
    fn zero_everything_is_identity() {
        let basis = basis_1d(Field::Zero, Field::Zero);
        let noise = NoisePath::generate(5, 0, 1, 50, 0.02, 0.0).unwrap();
        let traj =
            simulate_flow(&basis, None, 0.0, &[vec![0.4], vec![-1.0]], 0.0, 1.0, &noise, true)
                .unwrap();
        for k in 0..traj.n_times() {
            assert_eq!(traj.position(k, 0), &[0.4]);
            assert_eq!(traj.position(k, 1), &[-1.0]);
            assert_eq!(traj.jacobian(k, 0).unwrap(), &[1.0]);
        }
    }

    #[test]
    fn constant_drift_translates_linearly() {
        let basis = basis_1d(Field::Zero, Field::Constant(vec![2.0]));
        let noise = NoisePath::zeros(1, 100, 0.01, 0.0).unwrap();
        let traj = simulate_flow(&basis, None, 0.0, &[vec![1.0]], 0.0, 1.0, &noise, false).unwrap();
        for (k, t) in traj.times.iter().enumerate() {
            assert_relative_eq!(traj.position(k, 0)[0], 1.0 + 2.0 * t, epsilon = 1e-12);
        }
    }

    #[test]
    fn geometric_brownian_strong_error() {
        // dx = x dbeta has the exact solution x exp(beta(T) - T/2); the
        // Euler endpoint driven by the identical increments must land
        // within the strong-error budget
        let basis = basis_1d(Field::Linear { matrix: vec![1.0] }, Field::Zero);
        let noise = NoisePath::generate(1234, 0, 1, 10_000, 1e-4, 0.0).unwrap();
        let traj = simulate_flow(&basis, None, 1.0, &[vec![1.0]], 0.0, 1.0, &noise, false).unwrap();
        let exact = (noise.total(0) - 0.5).exp();
        let got = traj.endpoints()[0];
        assert!((got - exact).abs() < 5e-2, "euler {got} vs exact {exact}");
    }

    #[test]
    fn jacobian_is_identity_for_constant_modes() {
        let basis = basis_1d(Field::Constant(vec![1.0]), Field::Zero);
        let noise = NoisePath::generate(7, 0, 1, 200, 0.005, 0.0).unwrap();
        let traj = simulate_flow(&basis, None, 0.3, &[vec![0.0]], 0.0, 1.0, &noise, true).unwrap();
        for k in 0..traj.n_times() {
            assert_eq!(traj.jacobian(k, 0).unwrap(), &[1.0]);
        }
    }

    #[test]
    fn jacobian_equals_position_ratio_for_linear_mode() {
        // both recursions multiply the same per-step factors
        let basis = basis_1d(Field::Linear { matrix: vec![1.0] }, Field::Zero);
        let noise = NoisePath::generate(99, 0, 1, 500, 0.002, 0.0).unwrap();
        let x0 = 0.7;
        let traj = simulate_flow(&basis, None, 1.0, &[vec![x0]], 0.0, 1.0, &noise, true).unwrap();
        for k in 0..traj.n_times() {
            let j = traj.jacobian(k, 0).unwrap()[0];
            let ratio = traj.position(k, 0)[0] / x0;
            assert_relative_eq!(j, ratio, max_relative = 1e-12);
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let centers = vec![vec![0.3], vec![0.7]];
        let basis = crate::basis::make_gaussian_bump_basis(
            1,
            &centers,
            0.2,
            0.8,
            crate::geom::AaBox::unit(1),
            1.0,
        )
        .unwrap();
        let noise = NoisePath::generate(21, 0, 2, 1000, 1e-3, 0.0).unwrap();
        let x0 = 0.45;
        let delta = 1e-5;
        let run = |x: f64, jac: bool| {
            simulate_flow(&basis, None, 0.1, &[vec![x]], 0.0, 1.0, &noise, jac).unwrap()
        };
        let j = run(x0, true).jacobian(1000, 0).unwrap()[0];
        let plus = run(x0 + delta, false).endpoints()[0];
        let minus = run(x0 - delta, false).endpoints()[0];
        let fd = (plus - minus) / (2.0 * delta);
        assert_relative_eq!(j, fd, max_relative = 1e-3);
    }

    #[test]
    fn semigroup_defect_halves_with_resolution() {
        let basis = basis_1d(Field::Zero, Field::Linear { matrix: vec![1.0] });
        let noise = NoisePath::zeros(1, 1000, 1e-3, 0.0).unwrap();
        let pts = vec![vec![1.0], vec![0.5]];
        let d1 = check_flow_property(&basis, None, 0.0, &pts, 0.0, 0.4, 1.0, &noise, 100).unwrap();
        let d2 = check_flow_property(&basis, None, 0.0, &pts, 0.0, 0.4, 1.0, &noise, 200).unwrap();
        let ratio = d1 / d2;
        assert!(d1 > 0.0);
        assert!((1.7..=2.3).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn semigroup_exact_for_additive_noise() {
        let basis = basis_1d(Field::Constant(vec![1.0]), Field::Zero);
        let noise = NoisePath::generate(3, 0, 1, 100, 0.01, 0.0).unwrap();
        let pts = vec![vec![0.0]];
        let d = check_flow_property(&basis, None, 0.5, &pts, 0.0, 0.37, 1.0, &noise, 100).unwrap();
        assert!(d <= 1e-12, "defect {d}");
    }

    #[test]
    fn semigroup_identity_at_coincident_times() {
        let basis = basis_1d(Field::Constant(vec![1.0]), Field::Zero);
        let noise = NoisePath::generate(3, 0, 1, 100, 0.01, 0.0).unwrap();
        let d =
            check_flow_property(&basis, None, 0.5, &[vec![1.0]], 0.4, 0.4, 0.4, &noise, 50).unwrap();
        assert_eq!(d, 0.0);
    }

    #[test]
    fn determinism_bitwise() {
        let basis = basis_1d(Field::Linear { matrix: vec![0.5] }, Field::Constant(vec![0.1]));
        let run = || {
            let noise = NoisePath::generate(77, 0, 1, 128, 1.0 / 128.0, 0.0).unwrap();
            simulate_flow(&basis, None, 0.2, &[vec![0.3]], 0.0, 1.0, &noise, true).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a, b);
    }

    #[test]
    fn blowup_reports_step() {
        // dx/dt = x^2-style blow-up is not expressible with linear fields,
        // but a huge drift overflows quickly
        let basis = basis_1d(Field::Zero, Field::Linear { matrix: vec![1e308] });
        let noise = NoisePath::zeros(1, 10, 0.1, 0.0).unwrap();
        let err = simulate_flow(&basis, None, 0.0, &[vec![1.0]], 0.0, 1.0, &noise, false)
            .unwrap_err();
        match err {
            Error::BlowUp { .. } => {}
            other => panic!("expected blow-up, got {other}"),
        }
    }

    #[test]
    fn misaligned_grids_rejected() {
        let basis = basis_1d(Field::Constant(vec![1.0]), Field::Zero);
        let noise = NoisePath::generate(1, 0, 1, 100, 0.01, 0.0).unwrap();
        let u = ControlPath::zeros(0.0, 0.02, 1, 50).unwrap();
        let err =
            simulate_flow(&basis, Some(&u), 0.1, &[vec![0.0]], 0.0, 1.0, &noise, false).unwrap_err();
        match err {
            Error::Config(msg) => assert!(msg.contains("dt")),
            other => panic!("expected config error, got {other}"),
        }
    }

    #[test]
    fn binary_roundtrip() {
        let basis = basis_1d(Field::Linear { matrix: vec![1.0] }, Field::Zero);
        let noise = NoisePath::generate(5, 0, 1, 20, 0.05, 0.0).unwrap();
        let traj =
            simulate_flow(&basis, None, 0.3, &[vec![1.0], vec![2.0]], 0.0, 1.0, &noise, true)
                .unwrap();
        let bin = traj.to_binary();
        let back = FlowTrajectory::from_binary(&bin).unwrap();
        assert_eq!(traj.positions, back.positions);
        assert_eq!(traj.jacobians, back.jacobians);
        assert_eq!(traj.times, back.times);
        assert_eq!(traj.eps, back.eps);
    }
}
