use irbp::diagnostics::*;
use irbp::sparse::from_dense;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// `min over |S| = k of ‖x - x_S‖_p`, by enumerating every support.
fn sigma_oracle(x: &[f64], k: usize, p: f64) -> f64 {
    let n = x.len();
    let mut best = f64::INFINITY;
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != k {
            continue;
        }
        let rest: Vec<f64> = (0..n).filter(|i| mask & (1 << i) == 0).map(|i| x[i].abs()).collect();
        let v = if p.is_infinite() {
            rest.iter().fold(0.0f64, |m, v| m.max(*v))
        } else {
            rest.iter().map(|v| v.powf(p)).sum::<f64>().powf(1.0 / p)
        };
        best = best.min(v);
    }
    best
}

/// δ_k straight from the definition: all supports of size ≤ k, dense eigensolver.
fn rip_oracle(a: &DMatrix<f64>, k: usize) -> f64 {
    let n = a.ncols();
    let mut a = a.clone();
    for mut c in a.column_iter_mut() {
        let s = c.norm();
        c /= s;
    }
    let mut best = 0.0f64;
    for mask in 1u32..(1 << n) {
        if mask.count_ones() as usize > k {
            continue;
        }
        let cols: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        let sub = DMatrix::from_fn(a.nrows(), cols.len(), |i, j| a[(i, cols[j])]);
        let ev = (sub.transpose() * &sub).symmetric_eigenvalues();
        best = best.max(ev.max() - 1.0).max(1.0 - ev.min());
    }
    best
}

fn small_matrix() -> impl Strategy<Value = DMatrix<f64>> {
    (2usize..=6, 2usize..=9).prop_flat_map(|(m, n)| {
        proptest::collection::vec(-2.0f64..2.0, m * n)
            .prop_map(move |v| DMatrix::from_row_slice(m, n, &v))
            .prop_filter("no zero columns", |a| a.column_iter().all(|c| c.norm() > 1e-3))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sigma_equals_brute_force(x in proptest::collection::vec(-10.0f64..10.0, 1..=12), kf in 0.0f64..1.0) {
        let k = ((x.len() as f64) * kf) as usize;
        for p in [0.5, 1.0, 2.0, f64::INFINITY] {
            let got = best_k_term_error(&x, k, p);
            let want = sigma_oracle(&x, k, p);
            prop_assert!((got - want).abs() <= 1e-12 * (1.0 + want), "p={} k={} got {} want {}", p, k, got, want);
        }
    }

    #[test]
    fn sigma_is_subadditive(
        x in proptest::collection::vec(-10.0f64..10.0, 8),
        z in proptest::collection::vec(-10.0f64..10.0, 8),
        k in 0usize..=4,
    ) {
        let s: Vec<f64> = x.iter().zip(&z).map(|(a, b)| a + b).collect();
        for p in [1.0, 2.0] {
            let lhs = best_k_term_error(&s, 2 * k, p);
            let rhs = best_k_term_error(&x, k, p) + best_k_term_error(&z, k, p);
            prop_assert!(lhs <= rhs + 1e-12);
        }
    }

    #[test]
    fn incoherence_ignores_permutation_and_signs(a in small_matrix(), seed in any::<u64>()) {
        let n = a.ncols();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let perm = rand::seq::index::sample(&mut rng, n, n).into_vec();
        let b = DMatrix::from_fn(a.nrows(), n, |i, j| if (seed >> (j % 64)) & 1 == 1 { -a[(i, perm[j])] } else { a[(i, perm[j])] });
        let mu_a = mutual_incoherence(&from_dense(&a)).unwrap().mu;
        let mu_b = mutual_incoherence(&from_dense(&b)).unwrap().mu;
        prop_assert!((mu_a - mu_b).abs() < 1e-12);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&mu_a));
    }

    #[test]
    fn rip_matches_definition_and_is_monotone(a in small_matrix()) {
        let sa = from_dense(&a);
        let mut prev = 0.0;
        for k in 1..=a.ncols().min(4) {
            let est = rip_constant(&sa, k, RipOptions::default()).unwrap();
            prop_assert_eq!(est.method, RipMethod::Exhaustive);
            prop_assert!((est.delta_k - rip_oracle(&a, k)).abs() < 1e-9);
            prop_assert!(est.delta_k >= prev - 1e-12);
            prev = est.delta_k;
        }
    }

    #[test]
    fn rip_bounded_by_coherence(a in small_matrix()) {
        for k in 1..=a.ncols().min(4) {
            let r = check_rip_mu_bound(&from_dense(&a), k).unwrap();
            prop_assert!(r.holds, "{:?}", r);
        }
    }
}

#[test]
fn two_columns_with_inner_product() {
    for rho in [-0.9, -0.3, 0.0, 0.25, 0.99] {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, rho, 0.0, (1.0f64 - rho * rho).sqrt()]);
        let d = rip_constant(&from_dense(&a), 2, RipOptions::default()).unwrap().delta_k;
        assert!((d - f64::abs(rho)).abs() < 1e-14);
    }
}

#[test]
fn orthonormal_mutual_bound_is_tight() {
    let q = DMatrix::from_fn(6, 6, |i, j| ((i * 7 + j * 3) as f64).sin()).qr().q();
    let r = check_mutual_bound(&from_dense(&q), 200, 1).unwrap();
    assert_eq!(r.violations, 0);
    assert!(r.mu < 1e-12);
    assert!(r.max_violation.abs() < 1e-12);
}

#[test]
fn mutual_bound_random_and_hat_matrices() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = random_unit_columns(10, 20, &mut rng);
    assert_eq!(check_mutual_bound(&from_dense(&a), 1000, 3).unwrap().violations, 0);
    let h = hat1d_level_matrix(4);
    assert_eq!(check_mutual_bound(&h, 1000, 4).unwrap().violations, 0);
}

#[test]
fn rip_mu_bound_examples() {
    let id = from_dense(&DMatrix::identity(4, 4));
    let r = check_rip_mu_bound(&id, 3).unwrap();
    assert_eq!((r.delta_k, r.bound), (0.0, 0.0));
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    assert!(check_rip_mu_bound(&from_dense(&gaussian_matrix(8, 12, &mut rng)), 3).unwrap().holds);
    let r = check_rip_mu_bound(&hat1d_level_matrix(4), 2).unwrap();
    assert!(r.holds);
    assert!((r.delta_k - r.mu).abs() < 1e-12);
}

#[test]
fn support_mass_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(34);
    for t in 0..100 {
        let a = gaussian_matrix(6, 12, &mut rng);
        let x = random_sparse(12, 1 + t % 6, &mut rng);
        let r = check_support_mass(&a, &x).unwrap();
        assert!(r.holds, "trial {t}: {r:?}");
    }
}

#[test]
fn energy_identities_random_spd_blocks() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..10 {
        let a = random_spd(14, 0.1, &mut rng);
        let b: Vec<f64> = gaussian_matrix(14, 1, &mut rng).iter().copied().collect();
        let r = check_energy_identity_blocks(&a, &b, 6, 10).unwrap();
        assert!(r.max_rel_diff() < 1e-8, "{r:?}");
    }
}

#[test]
fn energy_identity_without_refinement() {
    let r = check_energy_identity(&irbp::problems::arctan2(), 3, 3, 5).unwrap();
    assert_eq!((r.z_identity.lhs, r.z_identity.rhs), (0.0, 0.0));
    assert!(r.x_identity.rel_diff < 1e-8);
}

#[test]
fn decode_level_pair_recovers_energy() {
    // A = BᵀB with B = [A21 A22] of the (3, 4) step; b = A x for 2-sparse x
    let b1 = irbp::sparse::to_dense(&hat1d_level_matrix(4));
    let a = b1.transpose() * &b1;
    let mut x = vec![0.0; a.ncols()];
    x[3] = 1.5;
    x[20] = -0.75;
    let b = (&a * DVector::from_column_slice(&x)).as_slice().to_vec();
    let split = Split::Factors {
        b1,
        b2: DMatrix::zeros(0, a.ncols()),
    };
    let r = two_stage_decode(&a, &b, split, Some(&x)).unwrap();
    assert!(r.rel_energy_error.unwrap() <= 1e-16, "{:?}", r.rel_energy_error);
}

#[test]
fn decode_with_sparse_corruption() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (n, m, k) = (60, 30, 2);
    let b1 = gaussian_matrix(m, n, &mut rng);
    let x = random_sparse(n, k, &mut rng);
    // B2 made of scaled unit rows at k coordinates: B2ᵀB2 x is k-sparse
    let picks = rand::seq::index::sample(&mut rng, n, k).into_vec();
    let b2 = DMatrix::from_fn(k, n, |r, c| if c == picks[r] { 0.3 } else { 0.0 });
    let a = b1.transpose() * &b1 + b2.transpose() * &b2;
    let e = b2.transpose() * (&b2 * DVector::from_column_slice(&x));
    assert!(e.iter().filter(|v| **v != 0.0).count() <= k);
    let b = (&a * DVector::from_column_slice(&x)).as_slice().to_vec();
    let r = two_stage_decode(&a, &b, Split::Factors { b1, b2 }, Some(&x)).unwrap();
    assert!(r.rel_energy_error.unwrap() <= 1e-16, "{:?}", r.rel_energy_error);
    assert!((r.b2_norm - 0.3).abs() < 1e-12);
}

#[test]
fn decode_with_computed_factor() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let g = gaussian_matrix(5, 5, &mut rng) + DMatrix::identity(5, 5);
    let a = g.transpose() * &g;
    let x = [0.5, -1.0, 0.0, 2.0, 0.25];
    let b = (&a * DVector::from_column_slice(&x)).as_slice().to_vec();
    let r = two_stage_decode(&a, &b, Split::Leading(5), Some(&x)).unwrap();
    assert_eq!(r.b2_norm, 0.0);
    assert!(r.rel_energy_error.unwrap() < 1e-20);
}
