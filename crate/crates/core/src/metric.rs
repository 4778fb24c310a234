//! Sampled distances on the diffeomorphism group.
//!
//! The group metric combines forward and inverse discrepancies,
//!
//! ```text
//! d_m(phi, psi) = lambda_m(phi, psi) + lambda_m(phi^-1, psi^-1),
//! lambda_m      = sum_{|alpha| <= m} rho(d^alpha phi, d^alpha psi),
//! rho(f, g)     = sum_N 2^-N s_N / (1 + s_N),   s_N = sup_{|x| <= N} |f - g|,
//! ```
//!
//! and the computable surrogate truncates the ball sum at `N_max`, replaces
//! each sup by a max over a fixed per-ball lattice, and takes the sup over
//! the shared trajectory time grid. Inverse maps are sampled either by
//! integrating the deterministic flow in reversed time (exact surrogate for
//! `eps = 0`) or by inverting the forward samples on the lattice
//! (nearest-neighbour seeding plus Newton steps on the frozen local
//! linearization; monotone piecewise-linear inversion in one dimension).

use crate::basis::BasisFamily;
use crate::control::ControlPath;
use crate::error::{Error, Result};
use crate::flow::FlowTrajectory;
use crate::geom;

/// Union of per-ball cube lattices: ball `N` carries `per_axis^d` points
/// spanning `[-N, N]^d`, filtered to `|x| <= N`.
#[derive(Debug, Clone)]
pub struct BallLattice {
    dim: usize,
    n_max: usize,
    points: Vec<Vec<f64>>,
    /// Index ranges of `points` belonging to each ball, smallest first.
    ball_ranges: Vec<std::ops::Range<usize>>,
}

impl BallLattice {
    pub const DEFAULT_PER_AXIS: usize = 16;

    pub fn new(dim: usize, n_max: usize, per_axis: usize) -> Result<Self> {
        if n_max == 0 || per_axis < 2 || dim == 0 || dim > 3 {
            return Err(Error::Config(format!(
                "ball lattice needs n_max >= 1, per_axis >= 2, 1 <= dim <= 3 (got {n_max}, {per_axis}, {dim})"
            )));
        }
        let mut points = Vec::new();
        let mut ball_ranges = Vec::new();
        for n in 1..=n_max {
            let start = points.len();
            let r = n as f64;
            let mut idx = vec![0usize; dim];
            loop {
                let pt: Vec<f64> = idx
                    .iter()
                    .map(|&i| -r + 2.0 * r * i as f64 / (per_axis - 1) as f64)
                    .collect();
                if geom::norm(&pt) <= r + 1e-12 {
                    points.push(pt);
                }
                // odometer over the cube lattice
                let mut axis = 0;
                loop {
                    idx[axis] += 1;
                    if idx[axis] < per_axis {
                        break;
                    }
                    idx[axis] = 0;
                    axis += 1;
                    if axis == dim {
                        break;
                    }
                }
                if axis == dim {
                    break;
                }
            }
            ball_ranges.push(start..points.len());
        }
        Ok(Self { dim, n_max, points, ball_ranges })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn ball_indices(&self, n: usize) -> std::ops::Range<usize> {
        self.ball_ranges[n - 1].clone()
    }
}

/// Inverse-map samples aligned with a trajectory: `positions[k]` holds the
/// flat per-lattice-point samples of `phi_{t0,t_k}^{-1}`, and `jacobians`
/// the matching inverse-map Jacobians when available.
#[derive(Debug, Clone, PartialEq)]
pub struct InverseSamples {
    pub dim: usize,
    pub positions: Vec<Vec<f64>>,
    pub jacobians: Option<Vec<Vec<f64>>>,
}

/// Inverse samples for a deterministic trajectory by integrating the flow
/// in reversed time from every stored grid time back to the start.
pub fn invert_by_time_reversal(
    basis: &BasisFamily,
    control: Option<&ControlPath>,
    traj: &FlowTrajectory,
    with_jacobians: bool,
) -> Result<InverseSamples> {
    if traj.eps != 0.0 {
        return Err(Error::Config(
            "time-reversal inversion applies to eps = 0 trajectories; use grid inversion".into(),
        ));
    }
    let d = traj.dim;
    let p = traj.n_points();
    let times = &traj.times;
    let mut positions = Vec::with_capacity(times.len());
    let mut jacobians = if with_jacobians { Some(Vec::with_capacity(times.len())) } else { None };

    for k in 0..times.len() {
        // start from the lattice points themselves and flow back to t_0
        let mut pos = vec![0.0; p * d];
        for (i, pt) in traj.points.iter().enumerate() {
            pos[i * d..(i + 1) * d].copy_from_slice(pt);
        }
        let mut jac = if with_jacobians {
            let mut j = vec![0.0; p * d * d];
            for i in 0..p {
                for r in 0..d {
                    j[i * d * d + r * d + r] = 1.0;
                }
            }
            Some(j)
        } else {
            None
        };
        for step in (0..k).rev() {
            let ta = times[step + 1];
            let tb = times[step];
            let h = tb - ta; // negative
            let kc = match control {
                Some(u) => u.step_index(0.5 * (ta + tb))?,
                None => 0,
            };
            for i in 0..p {
                let x = &mut pos[i * d..(i + 1) * d];
                let jslice = jac.as_deref_mut().map(|j| &mut j[i * d * d..(i + 1) * d * d]);
                rk4_augmented(basis, control, kc, x, jslice, ta, h);
                if x.iter().any(|v| !v.is_finite()) {
                    return Err(Error::BlowUp {
                        step,
                        detail: format!("inverse integration of point {i} diverged"),
                    });
                }
            }
        }
        positions.push(pos);
        if let (Some(all), Some(j)) = (jacobians.as_mut(), jac) {
            all.push(j);
        }
    }
    Ok(InverseSamples { dim: d, positions, jacobians })
}

/// RK4 step of the position together with its Jacobian (first variation).
fn rk4_augmented(
    basis: &BasisFamily,
    control: Option<&ControlPath>,
    kc: usize,
    x: &mut [f64],
    jac: Option<&mut [f64]>,
    t: f64,
    h: f64,
) {
    let d = x.len();
    let dd = d * d;
    let mut scratch = vec![0.0; d];
    let mut gscratch = vec![0.0; dd];
    let eval = |x: &[f64], t: f64, v: &mut [f64], scr: &mut [f64]| {
        crate::control::controlled_velocity_at_step(basis, control, kc, x, t, v, scr);
    };
    let geval = |x: &[f64], t: f64, g: &mut [f64], scr: &mut [f64]| {
        crate::control::controlled_velocity_grad_at_step(basis, control, kc, x, t, g, scr);
    };

    let mut kx = vec![vec![0.0; d]; 4];
    let mut kj = vec![vec![0.0; dd]; 4];
    let mut xs = vec![0.0; d];
    let mut js = vec![0.0; dd];
    let stage_t = [t, t + 0.5 * h, t + 0.5 * h, t + h];
    let stage_w = [0.0, 0.5, 0.5, 1.0];
    let j0: Option<Vec<f64>> = jac.as_ref().map(|j| j.to_vec());

    for s in 0..4 {
        for c in 0..d {
            xs[c] = x[c] + if s == 0 { 0.0 } else { stage_w[s] * h * kx[s - 1][c] };
        }
        let (a, b) = kx.split_at_mut(s);
        eval(&xs, stage_t[s], &mut b[0], &mut scratch);
        let _ = a;
        if let Some(j0) = &j0 {
            for e in 0..dd {
                js[e] = j0[e] + if s == 0 { 0.0 } else { stage_w[s] * h * kj[s - 1][e] };
            }
            let mut g = vec![0.0; dd];
            geval(&xs, stage_t[s], &mut g, &mut gscratch);
            let (_, bj) = kj.split_at_mut(s);
            geom::matmul(&g, &js, &mut bj[0], d);
        }
    }
    for c in 0..d {
        x[c] += h / 6.0 * (kx[0][c] + 2.0 * kx[1][c] + 2.0 * kx[2][c] + kx[3][c]);
    }
    if let Some(j) = jac {
        for e in 0..dd {
            j[e] += h / 6.0 * (kj[0][e] + 2.0 * kj[1][e] + 2.0 * kj[2][e] + kj[3][e]);
        }
    }
}

/// Inverse samples from the forward samples alone. One dimension uses
/// exact inversion of the monotone piecewise-linear interpolant of the
/// sampled map; higher dimensions use nearest-neighbour seeding plus
/// Newton steps on the frozen local linearization, which needs stored
/// Jacobians.
pub fn invert_on_grid(traj: &FlowTrajectory) -> Result<InverseSamples> {
    let d = traj.dim;
    let p = traj.n_points();
    let with_jac = traj.jacobians.is_some();
    if d > 1 && !with_jac {
        return Err(Error::Capability(
            "grid inversion in d > 1 needs trajectory Jacobians".into(),
        ));
    }
    let mut positions = Vec::with_capacity(traj.n_times());
    let mut jacobians = if with_jac { Some(Vec::with_capacity(traj.n_times())) } else { None };

    for k in 0..traj.n_times() {
        let mut inv_pos = vec![0.0; p * d];
        let mut inv_jac = if with_jac { Some(vec![0.0; p * d * d]) } else { None };

        if d == 1 {
            // sort sample pairs (phi(x_i), x_i) once per time
            let mut pairs: Vec<(f64, f64, usize)> = (0..p)
                .map(|i| (traj.position(k, i)[0], traj.points[i][0], i))
                .collect();
            pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            for (q, target) in traj.points.iter().enumerate() {
                let y = target[0];
                let hi = pairs.partition_point(|pr| pr.0 < y).min(p - 1).max(1);
                let (y0, x0, i0) = pairs[hi - 1];
                let (y1, x1, _) = pairs[hi];
                let x = if (y1 - y0).abs() > 1e-300 {
                    x0 + (y - y0) * (x1 - x0) / (y1 - y0)
                } else {
                    x0
                };
                inv_pos[q] = x;
                if let Some(j) = inv_jac.as_deref_mut() {
                    let jf = traj.jacobian(k, i0).unwrap()[0];
                    j[q] = if jf.abs() > 1e-300 { 1.0 / jf } else { 0.0 };
                }
            }
        } else {
            for (q, target) in traj.points.iter().enumerate() {
                // nearest-neighbour seed in image space
                let mut best = 0usize;
                let mut best_d = f64::INFINITY;
                for i in 0..p {
                    let dd = geom::dist(traj.position(k, i), target);
                    if dd < best_d {
                        best_d = dd;
                        best = i;
                    }
                }
                let mut x: Vec<f64> = traj.points[best].clone();
                let mut anchor = best;
                for _ in 0..8 {
                    let img = traj.position(k, anchor);
                    let jf = traj.jacobian(k, anchor).unwrap();
                    let mut rhs = vec![0.0; d];
                    for c in 0..d {
                        rhs[c] = target[c] - img[c];
                    }
                    let Some(step) = geom::solve_small(jf, &rhs, d) else { break };
                    for c in 0..d {
                        x[c] = traj.points[anchor][c] + step[c];
                    }
                    // re-seed on the sample nearest to the refined preimage
                    let mut nb = anchor;
                    let mut nd = f64::INFINITY;
                    for i in 0..p {
                        let dd = geom::dist(&traj.points[i], &x);
                        if dd < nd {
                            nd = dd;
                            nb = i;
                        }
                    }
                    if nb == anchor {
                        break;
                    }
                    anchor = nb;
                }
                inv_pos[q * d..(q + 1) * d].copy_from_slice(&x);
                if let Some(j) = inv_jac.as_deref_mut() {
                    let jf = traj.jacobian(k, anchor).unwrap();
                    // inverse-map Jacobian = J^-1 at the anchored sample
                    for col in 0..d {
                        let mut e = vec![0.0; d];
                        e[col] = 1.0;
                        if let Some(sol) = geom::solve_small(jf, &e, d) {
                            for r in 0..d {
                                j[(q * d + r) * d + col] = sol[r];
                            }
                        }
                    }
                }
            }
        }
        positions.push(inv_pos);
        if let (Some(all), Some(j)) = (jacobians.as_mut(), inv_jac) {
            all.push(j);
        }
    }
    Ok(InverseSamples { dim: d, positions, jacobians })
}

/// `rho` truncated at the lattice's largest ball: per-ball max of the
/// pointwise discrepancy `value(point index)`.
fn rho_hat(lattice: &BallLattice, value: impl Fn(usize) -> f64) -> f64 {
    let mut total = 0.0;
    for n in 1..=lattice.n_max() {
        let mut s = 0.0f64;
        for i in lattice.ball_indices(n) {
            s = s.max(value(i));
        }
        total += 0.5f64.powi(n as i32) * s / (1.0 + s);
    }
    total
}

/// One side of the distance: trajectory plus its inverse samples.
#[derive(Clone, Copy)]
pub struct SampledFlow<'a> {
    pub traj: &'a FlowTrajectory,
    pub inverse: &'a InverseSamples,
}

/// Truncated sampled metric `d_m` between two flows evaluated on the same
/// ball lattice and time grid; `m` is the derivative order (0 or 1).
pub fn flow_distance(
    a: SampledFlow,
    b: SampledFlow,
    m: usize,
    lattice: &BallLattice,
) -> Result<f64> {
    let d = lattice.dim();
    if m > 1 {
        return Err(Error::Config(format!("derivative order m must be 0 or 1, got {m}")));
    }
    for side in [&a, &b] {
        if side.traj.dim != d {
            return Err(Error::Config("trajectory dimension does not match lattice".into()));
        }
        if side.traj.points != lattice.points() {
            return Err(Error::Config("trajectory points must be the lattice points".into()));
        }
        if side.inverse.positions.len() != side.traj.n_times() {
            return Err(Error::Config("inverse samples do not cover the time grid".into()));
        }
        if m == 1 && (side.traj.jacobians.is_none() || side.inverse.jacobians.is_none()) {
            return Err(Error::Capability("m = 1 distance needs Jacobians on both sides".into()));
        }
    }
    if a.traj.times.len() != b.traj.times.len()
        || a.traj
            .times
            .iter()
            .zip(&b.traj.times)
            .any(|(x, y)| (x - y).abs() > 1e-12)
    {
        return Err(Error::Config("trajectories must share the time grid".into()));
    }

    let p = lattice.points().len();
    let mut sup_t = 0.0f64;
    for k in 0..a.traj.n_times() {
        let mut lam = rho_hat(lattice, |i| geom::dist(a.traj.position(k, i), b.traj.position(k, i)));
        let ainv = &a.inverse.positions[k];
        let binv = &b.inverse.positions[k];
        lam += rho_hat(lattice, |i| geom::dist(&ainv[i * d..(i + 1) * d], &binv[i * d..(i + 1) * d]));
        if m == 1 {
            let ja = a.traj.jacobians.as_ref().unwrap();
            let jb = b.traj.jacobians.as_ref().unwrap();
            let jia = &a.inverse.jacobians.as_ref().unwrap()[k];
            let jib = &b.inverse.jacobians.as_ref().unwrap()[k];
            for col in 0..d {
                lam += rho_hat(lattice, |i| {
                    let off = (k * p + i) * d * d;
                    column_dist(&ja[off..off + d * d], &jb[off..off + d * d], col, d)
                });
                lam += rho_hat(lattice, |i| {
                    let off = i * d * d;
                    column_dist(&jia[off..off + d * d], &jib[off..off + d * d], col, d)
                });
            }
        }
        sup_t = sup_t.max(lam);
    }
    Ok(sup_t)
}

fn column_dist(ja: &[f64], jb: &[f64], col: usize, d: usize) -> f64 {
    (0..d).map(|r| (ja[r * d + col] - jb[r * d + col]).powi(2)).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::Field;
    use crate::noise::NoisePath;
    use approx::assert_relative_eq;

    fn identity_inverse(lattice: &BallLattice, n_times: usize) -> InverseSamples {
        let d = lattice.dim();
        let flat: Vec<f64> = lattice.points().iter().flatten().copied().collect();
        InverseSamples {
            dim: d,
            positions: vec![flat; n_times],
            jacobians: Some(vec![identity_jacs(lattice.points().len(), d); n_times]),
        }
    }

    fn identity_jacs(p: usize, d: usize) -> Vec<f64> {
        let mut j = vec![0.0; p * d * d];
        for i in 0..p {
            for r in 0..d {
                j[i * d * d + r * d + r] = 1.0;
            }
        }
        j
    }

    #[test]
    fn lattice_point_counts() {
        let l1 = BallLattice::new(1, 4, 16).unwrap();
        assert_eq!(l1.points().len(), 4 * 16);
        let l2 = BallLattice::new(2, 2, 8).unwrap();
        for n in 1..=2 {
            assert!(l2.ball_indices(n).len() > 0);
            for i in l2.ball_indices(n) {
                assert!(geom::norm(&l2.points()[i]) <= n as f64 + 1e-9);
            }
        }
    }

    #[test]
    fn identical_flows_have_zero_distance() {
        let lattice = BallLattice::new(1, 3, 8).unwrap();
        let basis = BasisFamily::new(
            1,
            1.0,
            vec![Field::Linear { matrix: vec![0.4] }],
            Field::Zero,
            None,
        )
        .unwrap();
        let noise = NoisePath::generate(5, 0, 1, 50, 0.02, 0.0).unwrap();
        let traj = crate::flow::simulate_flow(
            &basis,
            None,
            0.1,
            lattice.points(),
            0.0,
            1.0,
            &noise,
            true,
        )
        .unwrap();
        let inv = invert_on_grid(&traj).unwrap();
        let d0 = flow_distance(
            SampledFlow { traj: &traj, inverse: &inv },
            SampledFlow { traj: &traj, inverse: &inv },
            1,
            &lattice,
        )
        .unwrap();
        assert_eq!(d0, 0.0);
    }

    #[test]
    fn translation_against_identity_closed_form() {
        let lattice = BallLattice::new(1, 4, 16).unwrap();
        let basis_shift =
            BasisFamily::new(1, 1.0, vec![], Field::Constant(vec![1.0]), None).unwrap();
        let basis_id = BasisFamily::new(1, 1.0, vec![], Field::Zero, None).unwrap();
        let noise = NoisePath::zeros(0, 1, 1.0, 0.0).unwrap();
        // one Euler step: exact translation by 1
        let phi = crate::flow::simulate_flow(
            &basis_shift,
            None,
            0.0,
            lattice.points(),
            0.0,
            1.0,
            &noise,
            false,
        )
        .unwrap();
        let psi = crate::flow::simulate_flow(
            &basis_id,
            None,
            0.0,
            lattice.points(),
            0.0,
            1.0,
            &noise,
            false,
        )
        .unwrap();
        // exact inverses: x - 1 for the translation, x for the identity
        let shifted: Vec<f64> = lattice.points().iter().map(|p| p[0] - 1.0).collect();
        let phi_inv = InverseSamples {
            dim: 1,
            positions: vec![
                lattice.points().iter().map(|p| p[0]).collect(),
                shifted,
            ],
            jacobians: None,
        };
        let psi_inv = identity_inverse(&lattice, 2);
        let d0 = flow_distance(
            SampledFlow { traj: &phi, inverse: &phi_inv },
            SampledFlow { traj: &psi, inverse: &psi_inv },
            0,
            &lattice,
        )
        .unwrap();
        assert_relative_eq!(d0, 0.9375, epsilon = 1e-12);
    }

    #[test]
    fn distance_matches_reimplementation_oracle() {
        // independent double loop over (time, ball, lattice) on the same
        // samples
        let lattice = BallLattice::new(1, 4, 16).unwrap();
        let centers = vec![vec![0.3], vec![0.6]];
        let basis = crate::basis::make_gaussian_bump_basis(
            1,
            &centers,
            0.15,
            0.9,
            crate::geom::AaBox::unit(1),
            1.0,
        )
        .unwrap();
        let mk = |seed: u64| {
            let noise = NoisePath::generate(seed, 0, 2, 80, 1.0 / 80.0, 0.0).unwrap();
            crate::flow::simulate_flow(&basis, None, 0.1, lattice.points(), 0.0, 1.0, &noise, true)
                .unwrap()
        };
        let ta = mk(101);
        let tb = mk(202);
        let ia = invert_on_grid(&ta).unwrap();
        let ib = invert_on_grid(&tb).unwrap();
        let got = flow_distance(
            SampledFlow { traj: &ta, inverse: &ia },
            SampledFlow { traj: &tb, inverse: &ib },
            0,
            &lattice,
        )
        .unwrap();

        let mut oracle = 0.0f64;
        for k in 0..ta.n_times() {
            let mut lam = 0.0;
            for n in 1..=4usize {
                let mut s_fwd = 0.0f64;
                let mut s_inv = 0.0f64;
                for i in lattice.ball_indices(n) {
                    s_fwd = s_fwd.max((ta.position(k, i)[0] - tb.position(k, i)[0]).abs());
                    s_inv = s_inv
                        .max((ia.positions[k][i] - ib.positions[k][i]).abs());
                }
                lam += 0.5f64.powi(n as i32) * (s_fwd / (1.0 + s_fwd) + s_inv / (1.0 + s_inv));
            }
            oracle = oracle.max(lam);
        }
        assert!(got > 0.0);
        assert_relative_eq!(got, oracle, epsilon = 1e-12);
    }

    #[test]
    fn time_reversal_inverts_deterministic_flow() {
        let lattice = BallLattice::new(1, 1, 16).unwrap();
        let basis = crate::basis::make_gaussian_bump_basis(
            1,
            &[vec![0.5]],
            0.2,
            0.6,
            crate::geom::AaBox::unit(1),
            1.0,
        )
        .unwrap();
        let u = crate::control::ControlPath::new(0.0, 0.01, 1, vec![1.0; 100]).unwrap();
        let traj = crate::control::solve_controlled_flow(
            &basis,
            Some(&u),
            lattice.points(),
            0.0,
            1.0,
        )
        .unwrap();
        let inv = invert_by_time_reversal(&basis, Some(&u), &traj, true).unwrap();
        // composing inverse samples with the forward map returns the start
        let k = traj.n_times() - 1;
        for (i, pt) in lattice.points().iter().enumerate() {
            if pt[0] <= 0.0 || pt[0] >= 1.0 {
                continue; // fixed outside the bump support
            }
            let fwd = traj.position(k, i)[0];
            // flow the inverse sample forward again
            let back = crate::control::solve_controlled_flow(
                &basis,
                Some(&u),
                &[vec![inv.positions[k][i]]],
                0.0,
                1.0,
            )
            .unwrap();
            let roundtrip = back.position(back.n_times() - 1, 0)[0];
            assert_relative_eq!(roundtrip, pt[0], epsilon = 1e-8);
            let _ = fwd;
        }
    }

    #[test]
    fn mismatched_grids_rejected() {
        let lattice = BallLattice::new(1, 2, 8).unwrap();
        let basis = BasisFamily::new(1, 1.0, vec![], Field::Zero, None).unwrap();
        let noise = NoisePath::zeros(0, 10, 0.1, 0.0).unwrap();
        let t1 = crate::flow::simulate_flow(&basis, None, 0.0, lattice.points(), 0.0, 1.0, &noise, false)
            .unwrap();
        let t2 = crate::flow::simulate_flow(&basis, None, 0.0, lattice.points(), 0.0, 0.5, &noise, false)
            .unwrap();
        let inv1 = invert_on_grid(&t1).unwrap();
        let inv2 = invert_on_grid(&t2).unwrap();
        assert!(flow_distance(
            SampledFlow { traj: &t1, inverse: &inv1 },
            SampledFlow { traj: &t2, inverse: &inv2 },
            0,
            &lattice,
        )
        .is_err());
    }
}
