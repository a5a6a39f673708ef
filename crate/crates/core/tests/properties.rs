use approx::assert_relative_eq;
use lowrank::io::{matrix_bytes, parse_matrix, MatrixFormat};
use lowrank::measurements::gaussian_operator;
use lowrank::rng::{normal_matrix, stream, Purpose};
use lowrank::schatten::{block_split, schatten_norm, tail_blocks, weak_schatten_norm};
use lowrank::solvers::{recover_nuclear, SolveOptions};
use lowrank::{svd, Mat};
use proptest::prelude::*;

fn random(n: usize, rank: usize, seed: u64) -> Mat {
    let mut rng = stream(seed, Purpose::Test, 7);
    let a = normal_matrix(&mut rng, n, rank);
    let b = normal_matrix(&mut rng, n, rank);
    Mat::new(a * b.transpose()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn p_triangle(n in 1usize..9, seed in any::<u64>(), p in 0.05f64..=1.0) {
        let a = random(n, n, seed);
        let b = random(n, (seed % n as u64) as usize + 1, seed ^ 1);
        let lhs = schatten_norm(&(&a + &b), p).unwrap().powf(p);
        let rhs = schatten_norm(&a, p).unwrap().powf(p) + schatten_norm(&b, p).unwrap().powf(p);
        prop_assert!(lhs <= rhs * (1.0 + 1e-12));
    }

    #[test]
    fn weak_norm_below_strong(n in 1usize..9, seed in any::<u64>(), p in 0.05f64..=1.0) {
        let x = random(n, n, seed);
        prop_assert!(weak_schatten_norm(&x, p).unwrap() <= schatten_norm(&x, p).unwrap() * (1.0 + 1e-12));
    }

    #[test]
    fn norms_are_absolutely_homogeneous(n in 1usize..7, seed in any::<u64>(), p in 0.1f64..=2.0, c in -50.0f64..50.0) {
        let x = random(n, n, seed);
        let lhs = schatten_norm(&x.scale(c), p).unwrap();
        assert_relative_eq!(lhs, c.abs() * schatten_norm(&x, p).unwrap(), max_relative = 1e-12, epsilon = 1e-300);
    }

    /// ‖Z_{T_k}‖₂ ≤ t^{1/2−1/p}‖Z_{T_{k−1}}‖_p for consecutive tail blocks.
    #[test]
    fn tail_blocks_step_inequality(n in 3usize..9, seed in any::<u64>(), p in 0.1f64..=1.0, s in 1usize..3, t in 1usize..4) {
        prop_assume!(s < n);
        let x = random(n, n, seed);
        let z = random(n, n, seed.wrapping_add(17));
        let frame = svd(&x).unwrap();
        let split = block_split(&z, &frame, s).unwrap();
        let tb = tail_blocks(&split.tail, &frame, s, t).unwrap();
        for k in 1..tb.blocks.len() {
            let lhs = tb.blocks[k].frobenius();
            let rhs = (t as f64).powf(0.5 - 1.0 / p) * schatten_norm(&tb.blocks[k - 1], p).unwrap();
            prop_assert!(lhs <= rhs * (1.0 + 1e-10) + 1e-14);
        }
    }

    #[test]
    fn smat_round_trip_is_bit_exact(rows in 0usize..6, cols in 0usize..6, seed in any::<u64>()) {
        let mut rng = stream(seed, Purpose::Test, 3);
        let a = normal_matrix(&mut rng, rows, cols).map(|v| v * 1e-300_f64.powf(v.abs().min(1.0)));
        let back = parse_matrix(&matrix_bytes(&a, MatrixFormat::Smat).unwrap()).unwrap();
        prop_assert_eq!(back, a);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn nuclear_solution_is_feasible_and_minimal(seed in 0u64..1_000_000, m in 6usize..17) {
        let n = 4;
        let op = gaussian_operator(n, m, seed).unwrap();
        let x = random(n, 1, seed);
        let y = op.apply(&x).unwrap();
        let res = recover_nuclear(&op, &y, 0.0, 1.0, &SolveOptions::default()).unwrap();
        let ynorm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!(res.residual <= 1e-6 * ynorm);
        prop_assert!(res.objective <= schatten_norm(&x, 1.0).unwrap() * (1.0 + 1e-6));
    }

    #[test]
    fn nuclear_solver_is_scale_equivariant(seed in 0u64..1_000_000, c in prop_oneof![1e-6f64..1e-3, 1e3f64..1e6]) {
        let n = 3;
        let op = gaussian_operator(n, 5, seed).unwrap();
        let y: Vec<f64> = op.apply(&random(n, 2, seed)).unwrap();
        let yc: Vec<f64> = y.iter().map(|v| v * c).collect();
        let opts = SolveOptions::default();
        let a = recover_nuclear(&op, &y, 0.0, 1.0, &opts).unwrap();
        let b = recover_nuclear(&op, &yc, 0.0, 1.0, &opts).unwrap();
        prop_assert!((&b.minimizer - &a.minimizer.scale(c)).frobenius() <= 1e-9 * c * a.minimizer.frobenius());
        assert_relative_eq!(b.objective, c * a.objective, max_relative = 1e-9);
    }
}
