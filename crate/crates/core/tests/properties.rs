//! Property tests over the algebraic invariants.

mod common;

use kktnn::{apply_projection, build_projection, spd_solve, violation, Mat};
use proptest::prelude::*;

fn mat_strategy(rows: usize, cols: usize) -> impl Strategy<Value = Mat> {
    proptest::collection::vec(-10.0..10.0f64, rows * cols)
        .prop_map(move |data| Mat::from_vec(rows, cols, data).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matmul_is_associative(
        a in mat_strategy(4, 3),
        b in mat_strategy(3, 5),
        c in mat_strategy(5, 2),
    ) {
        let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
        let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
        let scale = left.max_abs().max(1.0);
        prop_assert!(common::max_abs_diff(&left, &right) < 1e-10 * scale);
    }

    #[test]
    fn transpose_distributes_over_products(
        a in mat_strategy(4, 3),
        b in mat_strategy(3, 5),
    ) {
        let lhs = a.matmul(&b).unwrap().transpose();
        let rhs = b.transpose().matmul(&a.transpose()).unwrap();
        prop_assert!(common::max_abs_diff(&lhs, &rhs) < 1e-14 * lhs.max_abs().max(1.0));
    }

    #[test]
    fn spd_solve_multiplies_back(
        g in mat_strategy(6, 8),
        rhs in mat_strategy(6, 3),
    ) {
        // G·Gᵀ + I is safely positive definite
        let mut s = g.matmul(&g.transpose()).unwrap();
        for i in 0..6 {
            s[(i, i)] += 1.0;
        }
        let x = spd_solve(&s, &rhs).unwrap();
        let back = s.matmul(&x).unwrap();
        let scale = rhs.max_abs().max(1.0);
        prop_assert!(common::max_abs_diff(&back, &rhs) < 1e-10 * scale);
    }

    #[test]
    fn projection_feasible_and_idempotent_on_random_systems(
        seed in 0u64..5000,
        m in 1usize..=3,
        extra in 0usize..=5,
        x_raw in proptest::collection::vec(-2.0..2.0f64, 4),
        y_raw in proptest::collection::vec(-2.0..2.0f64, 10),
    ) {
        let nl = m + 2 + extra; // keep rank(B) = m possible
        let spec = common::random_constraints(seed, m, 4, nl);
        let p = build_projection(&spec).unwrap();
        let y_hat = &y_raw[..nl];
        let projected = apply_projection(&p, &x_raw, y_hat).unwrap();
        let rhs_inf = spec.rhs().iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
        prop_assert!(violation(&spec, &x_raw, &projected).unwrap() <= 1e-10 * (1.0 + rhs_inf));
        let again = apply_projection(&p, &x_raw, &projected).unwrap();
        for (a, b) in projected.iter().zip(&again) {
            prop_assert!((a - b).abs() < 1e-10);
        }
    }
}
