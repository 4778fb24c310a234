//! Cross-module property tests: structural invariants under randomized
//! bases, controls and point sets.

use flowlab::basis::{evaluate_covariance, make_gaussian_bump_basis, validate_basis};
use flowlab::control::{control_cost, ControlPath};
use flowlab::geom::AaBox;
use flowlab::noise::NoisePath;
use proptest::prelude::*;

fn bump_basis_1d(centers: Vec<f64>, width: f64) -> flowlab::basis::BasisFamily {
    let centers: Vec<Vec<f64>> = centers.into_iter().map(|c| vec![c]).collect();
    make_gaussian_bump_basis(1, &centers, width, 1.0, AaBox::unit(1), 1.0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn covariance_is_transpose_symmetric_2d(
        cx in 0.2f64..0.8, cy in 0.2f64..0.8,
        px in 0.0f64..1.0, py in 0.0f64..1.0,
        qx in 0.0f64..1.0, qy in 0.0f64..1.0,
        width in 0.05f64..0.4,
    ) {
        let basis = make_gaussian_bump_basis(
            2, &[vec![cx, cy]], width, 1.0, AaBox::unit(2), 1.0,
        ).unwrap();
        let a_xy = evaluate_covariance(&basis, &[px, py], &[qx, qy], 0.0).unwrap();
        let a_yx = evaluate_covariance(&basis, &[qx, qy], &[px, py], 0.0).unwrap();
        let d = 2;
        for i in 0..d {
            for j in 0..d {
                prop_assert_eq!(a_xy.entries[i * d + j], a_yx.entries[j * d + i]);
            }
        }
    }

    #[test]
    fn gram_matrix_is_psd_up_to_roundoff(
        seed in 0u64..1000,
        width in 0.05f64..0.3,
        n_centers in 2usize..6,
    ) {
        let centers: Vec<f64> = (0..n_centers)
            .map(|i| 0.15 + 0.7 * (i as f64 + (seed % 7) as f64 / 7.0) / n_centers as f64)
            .collect();
        let basis = bump_basis_1d(centers, width);
        let grid: Vec<Vec<f64>> = (0..12).map(|i| vec![(i as f64 + 0.5) / 12.0]).collect();
        let report = validate_basis(&basis, &grid, &[0.0]).unwrap();
        prop_assert!(
            report.gram_min_eigenvalue >= -1e-8 * report.gram_max_eigenvalue.max(1e-30),
            "min {} vs max {}", report.gram_min_eigenvalue, report.gram_max_eigenvalue
        );
        // trace identity at a sample point
        prop_assert!(report.trace_defect <= 1e-12 * report.sup_mode_energy.max(1.0));
    }

    #[test]
    fn control_cost_is_quadratic_in_scaling(
        values in prop::collection::vec(-3.0f64..3.0, 10..40),
        alpha in -4.0f64..4.0,
    ) {
        let u = ControlPath::new(0.0, 0.05, 1, values).unwrap();
        let scaled = u.scaled(alpha);
        let lhs = control_cost(&scaled);
        let rhs = alpha * alpha * control_cost(&u);
        prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs().max(1.0));
        prop_assert!(control_cost(&u) >= 0.0);
    }

    #[test]
    fn simulated_flows_are_deterministic_and_anchored(
        seed in 0u64..500,
        eps in 0.0f64..0.3,
        x0 in 0.1f64..0.9,
    ) {
        let basis = bump_basis_1d(vec![0.4, 0.7], 0.15);
        let run = || {
            let noise = NoisePath::generate(seed, 0, 2, 64, 1.0 / 64.0, 0.0).unwrap();
            flowlab::flow::simulate_flow(&basis, None, eps, &[vec![x0]], 0.0, 1.0, &noise, true)
                .unwrap()
        };
        let a = run();
        let b = run();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.position(0, 0), &[x0][..]);
        prop_assert_eq!(a.jacobian(0, 0).unwrap(), &[1.0][..]);
    }
}

#[test]
fn boundary_points_never_move_under_matching_flows() {
    let basis = bump_basis_1d(vec![0.3, 0.6], 0.2);
    let template = flowlab::imaging::Template::Affine { offset: 0.5, slope: vec![1.0] };
    for k in 0..20 {
        let vals: Vec<f64> = (0..10).map(|i| ((i * 7 + k * 13) % 9) as f64 / 3.0 - 1.3).collect();
        let vals2 = vals.clone();
        let u = ControlPath::new(0.0, 0.1, 2, [vals, vals2].concat()).unwrap();
        for x in [0.0, 1.0] {
            let got = flowlab::imaging::transport_template(
                &template,
                &basis,
                &u,
                &AaBox::unit(1),
                &[x],
            )
            .unwrap();
            assert_eq!(got, template.eval(&[x]));
        }
    }
}
