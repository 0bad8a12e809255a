mod common;

use common::{random_vec, random_volume, random_weights, relative_gap};
use proptest::prelude::*;
use tdv::diff_ops::{
    apply_m, cell_average, power_iteration_norm_sq, stacked_gradient, CellField6, GradientOperator, Plane,
};
use tdv::{apply_k, apply_k_adjoint, operator_norm_sq, Dims, LinearOperator, TdvOperator, Volume};

fn dims_strategy(max: (usize, usize, usize)) -> impl Strategy<Value = Dims> {
    (2..=max.0, 2..=max.1, 2..=max.2).prop_map(|(r, c, t)| Dims::new(r, c, t))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn adjoint_identity(dims in dims_strategy((6, 7, 5)), seed in any::<u64>()) {
        let u = random_volume(dims, seed, 100.0);
        let w = random_weights(dims, seed ^ 0xabc);
        let y = CellField6::new(dims.cells(), random_vec(6 * dims.cells().len(), seed ^ 0x123)).unwrap();
        let lhs = apply_k(&u, &w).unwrap().dot(&y);
        let rhs = u.dot(&apply_k_adjoint(&y, &w).unwrap());
        prop_assert!(relative_gap(lhs, rhs) <= 1e-12, "{lhs} vs {rhs}");
    }

    #[test]
    fn k_is_linear(dims in dims_strategy((5, 5, 4)), seed in any::<u64>(), alpha in -3.0f64..3.0) {
        let u = random_volume(dims, seed, 10.0);
        let v = random_volume(dims, seed.wrapping_add(1), 10.0);
        let w = random_weights(dims, seed);
        let combo = Volume::new(dims, u.as_slice().iter().zip(v.as_slice()).map(|(a, b)| alpha * a + b).collect()).unwrap();
        let ku = apply_k(&u, &w).unwrap();
        let kv = apply_k(&v, &w).unwrap();
        let kc = apply_k(&combo, &w).unwrap();
        for ((c, a), b) in kc.as_slice().iter().zip(ku.as_slice()).zip(kv.as_slice()) {
            prop_assert!((c - (alpha * a + b)).abs() <= 1e-9 * (1.0 + c.abs()));
        }
    }

    #[test]
    fn fused_k_matches_composition(dims in dims_strategy((6, 6, 5)), seed in any::<u64>()) {
        let u = random_volume(dims, seed, 50.0);
        let w = random_weights(dims, !seed);
        let fused = apply_k(&u, &w).unwrap();
        let composed = apply_m(&cell_average(&stacked_gradient(&u)), &w).unwrap();
        for (a, b) in fused.as_slice().iter().zip(composed.as_slice()) {
            prop_assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn constants_are_in_the_kernel(dims in dims_strategy((5, 6, 4)), c in -500.0f64..500.0, seed in any::<u64>()) {
        let w = random_weights(dims, seed);
        let k = apply_k(&Volume::filled(dims, c).unwrap(), &w).unwrap();
        prop_assert!(k.norm() == 0.0);
    }

    #[test]
    fn linear_ramp_gives_directional_derivatives(
        g in prop::array::uniform3(-5.0f64..5.0),
        seed in any::<u64>(),
    ) {
        let dims = Dims::new(5, 4, 3);
        let u = Volume::from_fn(dims, |i, j, k| g[0] * i as f64 + g[1] * j as f64 + g[2] * k as f64).unwrap();
        let w = random_weights(dims, seed);
        let ku = apply_k(&u, &w).unwrap();
        let cells = dims.cells();
        for k in 0..cells.frames {
            for j in 0..cells.cols {
                for i in 0..cells.rows {
                    let blocks = w.block(i, j, k);
                    let out = ku.cell(i, j, k);
                    for (p, plane) in Plane::ALL.iter().enumerate() {
                        let (a, b) = plane.axes();
                        let d = [g[a], g[b]];
                        for row in 0..2 {
                            let want = blocks[p][row][0] * d[0] + blocks[p][row][1] * d[1];
                            prop_assert!((out[2 * p + row] - want).abs() <= 1e-10);
                        }
                    }
                }
            }
        }
    }
}

#[test]
fn norm_bound_on_random_admissible_weights() {
    let dims = Dims::new(8, 8, 8);
    for seed in 0..5 {
        let w = random_weights(dims, 100 + seed);
        let n = operator_norm_sq(&w, dims).unwrap();
        assert!(n > 0.0 && n <= 24.0 + 1e-6, "seed {seed}: {n}");
    }
    let g = power_iteration_norm_sq(&GradientOperator::new(dims), 1e-6).unwrap();
    assert!(g <= 12.0 + 1e-6);
}

#[test]
fn trait_adjoint_for_tdv_operator() {
    let dims = Dims::new(4, 6, 3);
    let w = random_weights(dims, 5);
    let op = TdvOperator::new(&w);
    let u = random_volume(dims, 6, 1.0);
    let y = random_vec(op.codomain_len(), 7);
    let lhs: f64 = op.apply(&u).iter().zip(&y).map(|(a, b)| a * b).sum();
    let rhs = u.dot(&op.apply_adjoint(&y));
    assert!(relative_gap(lhs, rhs) <= 1e-12);
    assert_eq!(op.group_size(), 6);
}
