//! Basis pursuit and ℓ1 regression against brute-force vertex enumeration.

use irbp::lp::{basis_pursuit_dense, l1_regression_dense, least_squares, LpStatus};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::new();
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    rec(0, n, k, &mut cur, &mut out);
    out
}

/// Every basic solution of `A z = b` uses `m` independent columns, and the
/// ℓ1 optimum is attained at one of them.
fn bp_by_vertices(a: &DMatrix<f64>, b: &[f64]) -> Option<f64> {
    let (m, n) = a.shape();
    let mut best: Option<f64> = None;
    for s in subsets(n, m) {
        let sub = DMatrix::from_fn(m, m, |i, j| a[(i, s[j])]);
        let lu = sub.clone().lu();
        if sub.clone().svd(false, false).singular_values.min() < 1e-9 {
            continue;
        }
        let z = lu.solve(&DVector::from_column_slice(b)).unwrap();
        let obj = z.iter().map(|v| v.abs()).sum::<f64>();
        best = Some(best.map_or(obj, |o: f64| o.min(obj)));
    }
    best
}

/// An optimal `y` interpolates `m` of the `n` data rows exactly.
fn l1_regression_by_vertices(bt: &DMatrix<f64>, b: &[f64]) -> Option<f64> {
    let (n, m) = bt.shape();
    let mut best: Option<f64> = None;
    for s in subsets(n, m) {
        let sub = DMatrix::from_fn(m, m, |i, j| bt[(s[i], j)]);
        if sub.clone().svd(false, false).singular_values.min() < 1e-9 {
            continue;
        }
        let rhs = DVector::from_iterator(m, s.iter().map(|&i| b[i]));
        let y = sub.lu().solve(&rhs).unwrap();
        let r = DVector::from_column_slice(b) - bt * y;
        let obj = r.iter().map(|v| v.abs()).sum::<f64>();
        best = Some(best.map_or(obj, |o: f64| o.min(obj)));
    }
    best
}

fn matrix(m: usize, n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    proptest::collection::vec(-3.0f64..3.0, m * n).prop_map(move |v| DMatrix::from_row_slice(m, n, &v))
}

fn bp_case() -> impl Strategy<Value = (DMatrix<f64>, Vec<f64>)> {
    (1usize..=4, 1usize..=6).prop_flat_map(|(m, extra)| {
        let n = (m + extra).min(12);
        (matrix(m, n), proptest::collection::vec(-5.0f64..5.0, m))
    })
}

fn regression_case() -> impl Strategy<Value = (DMatrix<f64>, Vec<f64>)> {
    (1usize..=3, 1usize..=6).prop_flat_map(|(m, extra)| {
        let n = m + extra;
        (matrix(n, m), proptest::collection::vec(-5.0f64..5.0, n))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn basis_pursuit_matches_vertex_enumeration((a, b) in bp_case()) {
        // full row rank is generic for continuous draws; skip the rare exceptions
        prop_assume!(a.clone().svd(false, false).singular_values.min() > 1e-6);
        let oracle = bp_by_vertices(&a, &b).unwrap();
        let sol = basis_pursuit_dense(&a, &b).unwrap();
        prop_assert_eq!(sol.status, LpStatus::Optimal);
        prop_assert!((sol.objective - oracle).abs() <= 1e-8 * (1.0 + oracle), "lp {} oracle {}", sol.objective, oracle);
        let r = &a * DVector::from_column_slice(&sol.solution) - DVector::from_column_slice(&b);
        prop_assert!(r.amax() <= 1e-9 * (1.0 + b.iter().fold(0.0f64, |m, v| m.max(v.abs()))));
        let l1: f64 = sol.solution.iter().map(|v| v.abs()).sum();
        prop_assert!((l1 - sol.objective).abs() <= 1e-9 * (1.0 + l1));
    }

    #[test]
    fn l1_regression_matches_vertex_enumeration((bt, b) in regression_case()) {
        prop_assume!(bt.clone().svd(false, false).singular_values.min() > 1e-6);
        let oracle = l1_regression_by_vertices(&bt, &b).unwrap();
        let sol = l1_regression_dense(&bt, &b).unwrap();
        prop_assert_eq!(sol.status, LpStatus::Optimal);
        prop_assert!((sol.objective - oracle).abs() <= 1e-8 * (1.0 + oracle), "lp {} oracle {}", sol.objective, oracle);
    }

    #[test]
    fn least_squares_satisfies_normal_equations((a, b) in bp_case()) {
        let x = DVector::from_vec(least_squares(&a, &b));
        let r = &a * &x - DVector::from_column_slice(&b);
        let g = a.transpose() * r;
        prop_assert!(g.amax() <= 1e-8 * (1.0 + a.amax() * b.iter().fold(0.0f64, |m, v| m.max(v.abs()))));
    }
}

#[test]
fn counterexample_against_vertices() {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let a = DMatrix::from_row_slice(3, 4, &[0.0, 1.0, -0.5, 0.0, r, -0.5, 1.0, -0.5, 0.0, 0.0, -0.5, 1.0]);
    let b = [6.0, -1.5, -1.0];
    let oracle = bp_by_vertices(&a, &b).unwrap();
    assert!((oracle - (7.0 + 2f64.sqrt())).abs() < 1e-12);
    let sol = basis_pursuit_dense(&a, &b).unwrap();
    assert!((sol.objective - oracle).abs() < 1e-12);
}

#[test]
fn degenerate_and_rank_deficient_systems() {
    // duplicated row and a zero right-hand side
    let a = DMatrix::from_row_slice(3, 4, &[1.0, 2.0, 0.0, 1.0, 1.0, 2.0, 0.0, 1.0, 0.0, 1.0, 1.0, -1.0]);
    let sol = basis_pursuit_dense(&a, &[2.0, 2.0, 1.0]).unwrap();
    assert_eq!(sol.status, LpStatus::Optimal);
    let sub = DMatrix::from_row_slice(2, 4, &[1.0, 2.0, 0.0, 1.0, 0.0, 1.0, 1.0, -1.0]);
    let oracle = bp_by_vertices(&sub, &[2.0, 1.0]).unwrap();
    assert!((sol.objective - oracle).abs() < 1e-10);
    let zero = basis_pursuit_dense(&sub, &[0.0, 0.0]).unwrap();
    assert_eq!(zero.objective, 0.0);
}
