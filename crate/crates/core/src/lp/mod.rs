//! ℓ1 minimization through an in-house sparse simplex.
//!
//! * [`basis_pursuit`]: `min ‖z‖₁ s.t. A z = b`, split as `z = z⁺ - z⁻`.
//! * [`l1_regression`]: `min_y ‖b - Bᵀ y‖₁`.
//! * [`least_squares`]: minimum-norm least-squares baseline.
//!
//! Basis pursuit starts from a crash basis of independent columns chosen by a
//! rectangular LU; the sign of each basic column is picked from `B⁻¹ b`, so the
//! start is primal feasible and phase one is skipped whenever `A` has full row
//! rank. Dependent rows are absorbed by fixed-at-zero artificials.

mod lu;
pub mod simplex;

pub use simplex::{LpProblem, SimplexOptions};

use crate::sparse::{csc_from_triplets, mul_vec};
use crate::util::norm_inf;
use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::CscMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterLimit,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LpSolution {
    pub solution: Vec<f64>,
    pub objective: f64,
    pub status: LpStatus,
    pub iterations: usize,
    /// `‖A z - b‖∞` of the returned point.
    pub primal_residual: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum LpError {
    #[error("right-hand side has length {got}, matrix has {rows} rows")]
    Dimension { rows: usize, got: usize },
    #[error("input contains a non-finite value")]
    NonFinite,
}

#[derive(Debug, Clone, Copy)]
pub struct LpOptions {
    pub feas_tol: f64,
    /// Defaults to `50 (m + n)` for the original problem size.
    pub max_iter: Option<usize>,
}

impl Default for LpOptions {
    fn default() -> Self {
        LpOptions {
            feas_tol: 1e-9,
            max_iter: None,
        }
    }
}

impl LpOptions {
    fn simplex(&self, m: usize, n: usize) -> SimplexOptions {
        let mut s = SimplexOptions::for_size(m, n);
        s.feas_tol = self.feas_tol;
        if let Some(k) = self.max_iter {
            s.max_iter = k;
        }
        s
    }
}

fn check(a_rows: usize, b: &[f64], values: &[f64]) -> Result<(), LpError> {
    if b.len() != a_rows {
        return Err(LpError::Dimension {
            rows: a_rows,
            got: b.len(),
        });
    }
    if b.iter().chain(values).any(|v| !v.is_finite()) {
        return Err(LpError::NonFinite);
    }
    Ok(())
}

pub fn basis_pursuit(a: &CscMatrix<f64>, b: &[f64]) -> Result<LpSolution, LpError> {
    basis_pursuit_with(a, b, LpOptions::default())
}

pub fn basis_pursuit_with(a: &CscMatrix<f64>, b: &[f64], opts: LpOptions) -> Result<LpSolution, LpError> {
    check(a.nrows(), b, a.values())?;
    let (m, n) = (a.nrows(), a.ncols());
    let mut t: Vec<(usize, usize, f64)> = a.triplet_iter().map(|(i, j, v)| (i, j, *v)).collect();
    t.extend(a.triplet_iter().map(|(i, j, v)| (i, j + n, -*v)));
    let problem = LpProblem {
        a: csc_from_triplets(m, 2 * n, &t),
        b: b.to_vec(),
        c: vec![1.0; 2 * n],
        lower: vec![0.0; 2 * n],
        upper: vec![f64::INFINITY; 2 * n],
    };
    let mut crash: Vec<usize> = (0..n).collect();
    let off = a.col_offsets();
    crash.sort_by_key(|&j| off[j + 1] - off[j]);
    let mirror = |j: usize| if j < n { j + n } else { j - n };
    let out = simplex::solve(&problem, &crash, Some(&mirror), opts.simplex(m, n));
    if !out.dependent_rows.is_empty() {
        log::debug!("basis pursuit: {} dependent rows absorbed", out.dependent_rows.len());
    }
    let z: Vec<f64> = (0..n).map(|j| out.x[j] - out.x[j + n]).collect();
    let az = mul_vec(a, &z);
    let residual = az.iter().zip(b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
    Ok(LpSolution {
        objective: z.iter().map(|v| v.abs()).sum(),
        solution: z,
        status: out.status,
        iterations: out.iterations,
        primal_residual: residual,
    })
}

/// `min_y ‖b - Bᵀ y‖₁` for `Bᵀ` of shape `n × m`.
pub fn l1_regression(bt: &CscMatrix<f64>, b: &[f64]) -> Result<LpSolution, LpError> {
    l1_regression_with(bt, b, LpOptions::default())
}

pub fn l1_regression_with(bt: &CscMatrix<f64>, b: &[f64], opts: LpOptions) -> Result<LpSolution, LpError> {
    check(bt.nrows(), b, bt.values())?;
    let (n, m) = (bt.nrows(), bt.ncols());
    let mut t: Vec<(usize, usize, f64)> = bt.triplet_iter().map(|(i, j, v)| (i, j, *v)).collect();
    for i in 0..n {
        t.push((i, m + i, 1.0));
        t.push((i, m + n + i, -1.0));
    }
    let mut lower = vec![f64::NEG_INFINITY; m];
    lower.extend(std::iter::repeat(0.0).take(2 * n));
    let mut c = vec![0.0; m];
    c.extend(std::iter::repeat(1.0).take(2 * n));
    let problem = LpProblem {
        a: csc_from_triplets(n, m + 2 * n, &t),
        b: b.to_vec(),
        c,
        lower,
        upper: vec![f64::INFINITY; m + 2 * n],
    };
    let crash: Vec<usize> = (0..n).map(|i| if b[i] >= 0.0 { m + i } else { m + n + i }).collect();
    let out = simplex::solve(&problem, &crash, None, opts.simplex(n, m));
    let y = out.x[..m].to_vec();
    let fit = mul_vec(bt, &y);
    let lp_res: Vec<f64> = (0..n)
        .map(|i| fit[i] + out.x[m + i] - out.x[m + n + i] - b[i])
        .collect();
    Ok(LpSolution {
        objective: fit.iter().zip(b).map(|(p, q)| (q - p).abs()).sum(),
        solution: y,
        status: out.status,
        iterations: out.iterations,
        primal_residual: norm_inf(&lp_res),
    })
}

pub fn l1_regression_dense(bt: &DMatrix<f64>, b: &[f64]) -> Result<LpSolution, LpError> {
    l1_regression(&crate::sparse::from_dense(bt), b)
}

pub fn basis_pursuit_dense(a: &DMatrix<f64>, b: &[f64]) -> Result<LpSolution, LpError> {
    basis_pursuit(&crate::sparse::from_dense(a), b)
}

/// Solves a square sparse system by LU; `None` if it is numerically singular.
pub fn sparse_solve(a: &CscMatrix<f64>, b: &[f64]) -> Option<Vec<f64>> {
    let n = a.ncols();
    if a.nrows() != n || b.len() != n {
        return None;
    }
    let mut row_count = vec![0; n];
    for &i in a.row_indices() {
        row_count[i] += 1;
    }
    let off = a.col_offsets();
    let order: Vec<usize> = (0..n).collect();
    let out = lu::SparseLu::factor(
        n,
        &order,
        |j| (&a.row_indices()[off[j]..off[j + 1]], &a.values()[off[j]..off[j + 1]]),
        &row_count,
    );
    if !out.rejected.is_empty() || out.lu.rank() < n {
        return None;
    }
    let mut x = b.to_vec();
    out.lu.ftran(&mut x);
    Some(x)
}

/// Minimum-norm least-squares solution through the SVD.
pub fn least_squares(a: &DMatrix<f64>, b: &[f64]) -> Vec<f64> {
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return vec![0.0; n];
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let eps = f64::EPSILON * m.max(n) as f64 * smax;
    let rank = svd.singular_values.iter().filter(|&&s| s > eps).count();
    if rank < m.min(n) {
        log::debug!("least squares: numerical rank {rank} of {}", m.min(n));
    }
    svd.solve(&DVector::from_column_slice(b), eps)
        .expect("both factors computed")
        .as_slice()
        .to_vec()
}
