//! Compressed-sensing quantities for stiffness dictionaries, plus numerical
//! checks of the inequalities and identities the refinement analysis rests on.
//!
//! Gram-based quantities normalize columns to unit ℓ2 norm unless told not to.

use crate::assembly::{assemble_block, assemble_load, AssemblyError};
use crate::dictionary::{Family, IndexSet, Role};
use crate::lp::{basis_pursuit, basis_pursuit_dense, l1_regression_dense, least_squares, LpError, LpStatus};
use crate::problems::ProblemSpec;
use crate::sparse::{from_dense, mul_vec};
use crate::util::{norm1, norm2, par_map};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use nalgebra_sparse::CscMatrix;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error("column {0} is zero")]
    ZeroColumn(usize),
    #[error("k = {k} is out of range for {n} columns")]
    InvalidK { k: usize, n: usize },
    #[error("C({n}, {k}) = {count:.3e} supports exceeds the exhaustive budget {budget}; use sampled mode")]
    Combinatorial { n: usize, k: usize, count: f64, budget: u64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    LpInput(#[from] LpError),
    #[error("linear program ended with status {0:?}")]
    Lp(LpStatus),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
}

pub type Result<T> = std::result::Result<T, DiagnosticsError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncoherenceReport {
    pub mu: f64,
    /// Column pair attaining `mu` (`i < j`), lowest pair on ties.
    pub pair: (usize, usize),
    pub normalized: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RipMethod {
    Exhaustive,
    /// A lower bound from randomly drawn supports.
    Sampled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RipEstimate {
    pub k: usize,
    pub delta_k: f64,
    pub witness_support: Vec<usize>,
    pub method: RipMethod,
    pub supports_checked: u64,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RipMode {
    /// Exhaustive when `C(n, k)` fits the budget, sampled otherwise.
    Auto,
    Exhaustive,
    Sampled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RipOptions {
    pub budget: u64,
    pub seed: u64,
    pub normalize: bool,
    pub mode: RipMode,
}

impl Default for RipOptions {
    fn default() -> Self {
        RipOptions {
            budget: 2_000_000,
            seed: 42,
            normalize: true,
            mode: RipMode::Auto,
        }
    }
}

fn column_norms(a: &CscMatrix<f64>) -> Vec<f64> {
    a.col_iter().map(|c| norm2(c.values())).collect()
}

/// Copy of `a` with unit-norm columns.
pub fn normalize_columns(a: &CscMatrix<f64>) -> Result<CscMatrix<f64>> {
    let norms = column_norms(a);
    if let Some(j) = norms.iter().position(|&s| s == 0.0) {
        return Err(DiagnosticsError::ZeroColumn(j));
    }
    let mut out = a.clone();
    let off = a.col_offsets().to_vec();
    let vals = out.values_mut();
    for j in 0..norms.len() {
        for v in &mut vals[off[j]..off[j + 1]] {
            *v /= norms[j];
        }
    }
    Ok(out)
}

/// Sparse Gram matrix `AᵀA`.
pub fn gram(a: &CscMatrix<f64>) -> CscMatrix<f64> {
    let at = a.transpose();
    &at * a
}

fn entry(g: &CscMatrix<f64>, i: usize, j: usize) -> f64 {
    let col = g.col(j);
    match col.row_indices().binary_search(&i) {
        Ok(k) => col.values()[k],
        Err(_) => 0.0,
    }
}

pub fn mutual_incoherence(a: &CscMatrix<f64>) -> Result<IncoherenceReport> {
    mutual_incoherence_with(a, true)
}

/// `max_{i≠j} |⟨a_i, a_j⟩|`, over unit-norm columns when `normalize` is set.
pub fn mutual_incoherence_with(a: &CscMatrix<f64>, normalize: bool) -> Result<IncoherenceReport> {
    let a = if normalize {
        normalize_columns(a)?
    } else {
        a.clone()
    };
    let g = gram(&a);
    let mut best = (0.0, (0, 1.min(a.ncols().saturating_sub(1))));
    for (j, col) in g.col_iter().enumerate() {
        for (&i, &v) in col.row_indices().iter().zip(col.values()) {
            if i < j {
                let cand = (v.abs(), (i, j));
                if cand.0 > best.0 || (cand.0 == best.0 && cand.1 < best.1) {
                    best = cand;
                }
            }
        }
    }
    Ok(IncoherenceReport {
        mu: best.0,
        pair: best.1,
        normalized: normalize,
    })
}

/// `C(n, k)` as a float (exact below 2⁵³).
pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64).round()
}

/// Advances `c` to the next `k`-subset of `0..n` in lexicographic order.
fn next_combination(c: &mut [usize], n: usize) -> bool {
    let k = c.len();
    for i in (0..k).rev() {
        if c[i] < n - k + i {
            c[i] += 1;
            for j in i + 1..k {
                c[j] = c[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// `max(λ_max - 1, 1 - λ_min)` of the Gram submatrix on `s`.
fn support_delta(g: &CscMatrix<f64>, s: &[usize]) -> f64 {
    let k = s.len();
    if k == 1 {
        return (entry(g, s[0], s[0]) - 1.0).abs();
    }
    if k == 2 {
        let (a, b, c) = (entry(g, s[0], s[0]), entry(g, s[0], s[1]), entry(g, s[1], s[1]));
        let (m, r) = (0.5 * (a + c), (0.25 * (a - c) * (a - c) + b * b).sqrt());
        return (m + r - 1.0).max(1.0 - (m - r));
    }
    let sub = DMatrix::from_fn(k, k, |i, j| entry(g, s[i], s[j]));
    let ev = SymmetricEigen::new(sub).eigenvalues;
    (ev.max() - 1.0).max(1.0 - ev.min())
}

fn better(cand: (f64, &[usize]), best: (f64, &[usize])) -> bool {
    cand.0 > best.0 || (cand.0 == best.0 && cand.1 < best.1)
}

/// Restricted isometry constant `δ_k`: the largest deviation from 1 of the
/// extreme eigenvalues of any `k`-column Gram submatrix. Subsets of size
/// below `k` never exceed it (eigenvalue interlacing), so only size `k` is
/// enumerated.
pub fn rip_constant(a: &CscMatrix<f64>, k: usize, opts: RipOptions) -> Result<RipEstimate> {
    let n = a.ncols();
    if k == 0 || k > n {
        return Err(DiagnosticsError::InvalidK { k, n });
    }
    let a = if opts.normalize {
        normalize_columns(a)?
    } else {
        a.clone()
    };
    let g = gram(&a);
    let count = binomial(n, k);
    let exhaustive = match opts.mode {
        RipMode::Exhaustive => {
            if count > opts.budget as f64 {
                return Err(DiagnosticsError::Combinatorial {
                    n,
                    k,
                    count,
                    budget: opts.budget,
                });
            }
            true
        }
        RipMode::Auto => count <= opts.budget as f64,
        RipMode::Sampled => false,
    };
    if exhaustive {
        // one task per leading index; each scans its subsets in lexicographic order
        let heads: Vec<usize> = (0..=n - k).collect();
        let parts = par_map(&heads, |&h| {
            let mut c: Vec<usize> = (h..h + k).collect();
            let mut best = (f64::NEG_INFINITY, c.clone());
            loop {
                let d = support_delta(&g, &c);
                if better((d, &c), (best.0, &best.1)) {
                    best = (d, c.clone());
                }
                if !next_combination(&mut c[1..], n) {
                    break;
                }
            }
            best
        });
        let mut best = (f64::NEG_INFINITY, Vec::new());
        for p in parts {
            if better((p.0, &p.1), (best.0, &best.1)) {
                best = p;
            }
        }
        Ok(RipEstimate {
            k,
            delta_k: best.0.max(0.0),
            witness_support: best.1,
            method: RipMethod::Exhaustive,
            supports_checked: count as u64,
            seed: None,
        })
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let supports: Vec<Vec<usize>> = (0..opts.budget)
            .map(|_| {
                let mut s = sample(&mut rng, n, k).into_vec();
                s.sort_unstable();
                s
            })
            .collect();
        let deltas = par_map(&supports, |s| support_delta(&g, s));
        let mut best = 0;
        for i in 1..supports.len() {
            if better((deltas[i], &supports[i]), (deltas[best], &supports[best])) {
                best = i;
            }
        }
        Ok(RipEstimate {
            k,
            delta_k: deltas.get(best).copied().unwrap_or(0.0).max(0.0),
            witness_support: supports.get(best).cloned().unwrap_or_default(),
            method: RipMethod::Sampled,
            supports_checked: opts.budget,
            seed: Some(opts.seed),
        })
    }
}

/// Best `k`-term approximation error `σ_k(x)_p`: the `p`-(quasi)norm of what
/// remains after keeping the `k` largest entries (lowest index on ties).
/// `p` must be positive; `f64::INFINITY` gives the max norm.
pub fn best_k_term_error(x: &[f64], k: usize, p: f64) -> f64 {
    assert!(p > 0.0, "p must be positive");
    assert!(k <= x.len(), "k exceeds the vector length");
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&i, &j| x[j].abs().total_cmp(&x[i].abs()).then(i.cmp(&j)));
    let rest = order[k..].iter().map(|&i| x[i].abs());
    if p.is_infinite() {
        rest.fold(0.0, f64::max)
    } else {
        rest.map(|v| v.powf(p)).sum::<f64>().powf(1.0 / p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MutualBoundReport {
    pub mu: f64,
    pub trials: usize,
    pub violations: usize,
    /// Largest `lhs - rhs`; negative when the bound holds everywhere.
    pub max_violation: f64,
    pub seed: u64,
}

pub const MUTUAL_BOUND_SLACK: f64 = 1e-10;

/// Checks `‖Φx‖₂² ≤ (1 - μ)‖x‖₂² + μ‖x‖₁²` on random `x` (unit-norm columns).
pub fn check_mutual_bound(phi: &CscMatrix<f64>, trials: usize, seed: u64) -> Result<MutualBoundReport> {
    let phi = normalize_columns(phi)?;
    let mu = mutual_incoherence_with(&phi, false)?.mu;
    let n = phi.ncols();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = 0;
    let mut worst = f64::NEG_INFINITY;
    for t in 0..trials {
        // alternate dense and sparse test vectors
        let nnz = if t % 2 == 0 { n } else { rng.gen_range(1..=n.min(4)) };
        let mut x = vec![0.0; n];
        for i in sample(&mut rng, n, nnz) {
            x[i] = rng.sample(StandardNormal);
        }
        let lhs = norm2(&mul_vec(&phi, &x)).powi(2);
        let rhs = (1.0 - mu) * norm2(&x).powi(2) + mu * norm1(&x).powi(2);
        let gap = lhs - rhs;
        if gap > MUTUAL_BOUND_SLACK * rhs.max(1.0) {
            violations += 1;
        }
        worst = worst.max(gap);
    }
    Ok(MutualBoundReport {
        mu,
        trials,
        violations,
        max_violation: worst,
        seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RipMuReport {
    pub k: usize,
    pub delta_k: f64,
    pub mu: f64,
    pub bound: f64,
    pub holds: bool,
}

/// Compares `δ_k` (exhaustive) against `(k - 1) μ`.
pub fn check_rip_mu_bound(phi: &CscMatrix<f64>, k: usize) -> Result<RipMuReport> {
    let mu = mutual_incoherence(phi)?.mu;
    let opts = RipOptions {
        mode: RipMode::Exhaustive,
        ..RipOptions::default()
    };
    let delta_k = rip_constant(phi, k, opts)?.delta_k;
    let bound = (k as f64 - 1.0) * mu;
    Ok(RipMuReport {
        k,
        delta_k,
        mu,
        bound,
        holds: delta_k <= bound + 1e-12,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityCheck {
    pub lhs: f64,
    pub rhs: f64,
    /// `|lhs - rhs| / max(|lhs|, |rhs|, energy)` with `energy = (xᴺ)ᵀAᴺxᴺ`;
    /// both sides can vanish exactly, so the solution energy sets the floor.
    pub rel_diff: f64,
}

impl IdentityCheck {
    fn new(lhs: f64, rhs: f64, energy: f64) -> Self {
        let scale = lhs.abs().max(rhs.abs()).max(energy.abs());
        let rel_diff = if scale == 0.0 { 0.0 } else { (lhs - rhs).abs() / scale };
        IdentityCheck { lhs, rhs, rel_diff }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyIdentityReport {
    /// Block sizes `n < N < L`.
    pub sizes: (usize, usize, usize),
    /// `(x̂ᴺ - xᴸ)ᵀAᴸ(x̂ᴺ - xᴸ) = (x₃ᴸ)ᵀ(b₃ - [A31 A32] xᴺ)`.
    pub x_identity: IdentityCheck,
    /// `(ẑᴺ - x̂ᴺ)ᵀAᴸ(ẑᴺ - x̂ᴺ) = (x₁ᴺ - z₁ᴺ)ᵀ(b₁ - [A11 A12] zᴺ)`.
    pub z_identity: IdentityCheck,
}

impl EnergyIdentityReport {
    pub fn max_rel_diff(&self) -> f64 {
        self.x_identity.rel_diff.max(self.z_identity.rel_diff)
    }
}

fn quad(a: &DMatrix<f64>, v: &[f64]) -> f64 {
    let v = DVector::from_column_slice(v);
    v.dot(&(a * &v))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Checks both energy identities for a symmetric system `Aᴸ x = bᴸ`
/// partitioned after `n` and `big_n` unknowns. The leading `big_n` block
/// plays `Aᴺ`, rows `n..big_n` the refinement rows. Singular (redundant)
/// systems use minimum-norm solutions. With `n == big_n` there is nothing to
/// refine and `zᴺ` is taken to be `xᴺ`.
pub fn check_energy_identity_blocks(a: &DMatrix<f64>, b: &[f64], n: usize, big_n: usize) -> Result<EnergyIdentityReport> {
    let l = a.nrows();
    if a.ncols() != l || b.len() != l || !(n <= big_n && big_n <= l) {
        return Err(DiagnosticsError::Dimension(format!(
            "matrix {}x{}, rhs {}, split {n}/{big_n}",
            a.nrows(),
            a.ncols(),
            b.len()
        )));
    }
    let x_l = least_squares(a, b);
    let a_n = a.view((0, 0), (big_n, big_n)).into_owned();
    let x_n = least_squares(&a_n, &b[..big_n]);
    let z_n = if n == big_n {
        x_n.clone()
    } else {
        let lower = a.view((n, 0), (big_n - n, big_n)).into_owned();
        let sol = basis_pursuit_dense(&lower, &b[n..big_n])?;
        if sol.status != LpStatus::Optimal {
            return Err(DiagnosticsError::Lp(sol.status));
        }
        sol.solution
    };
    let pad = |v: &[f64]| {
        let mut w = v.to_vec();
        w.resize(l, 0.0);
        w
    };
    let (x_hat, z_hat) = (pad(&x_n), pad(&z_n));

    let d: Vec<f64> = x_hat.iter().zip(&x_l).map(|(p, q)| p - q).collect();
    let a3 = a.view((big_n, 0), (l - big_n, big_n));
    let r3: Vec<f64> = (&b[big_n..])
        .iter()
        .zip((a3 * DVector::from_column_slice(&x_n)).iter())
        .map(|(p, q)| p - q)
        .collect();
    let energy = quad(&a_n, &x_n);
    let x_identity = IdentityCheck::new(quad(a, &d), dot(&x_l[big_n..], &r3), energy);

    let e: Vec<f64> = z_hat.iter().zip(&x_hat).map(|(p, q)| p - q).collect();
    let a1 = a.view((0, 0), (n, big_n));
    let r1: Vec<f64> = (&b[..n])
        .iter()
        .zip((a1 * DVector::from_column_slice(&z_n)).iter())
        .map(|(p, q)| p - q)
        .collect();
    let w: Vec<f64> = x_n[..n].iter().zip(&z_n[..n]).map(|(p, q)| p - q).collect();
    let z_identity = IdentityCheck::new(quad(a, &e), dot(&w, &r1), energy);

    Ok(EnergyIdentityReport {
        sizes: (n, big_n, l),
        x_identity,
        z_identity,
    })
}

/// The energy identities for `problem` on the hat dictionary, with blocks
/// `1..=coarse`, `coarse+1..=fine` and `fine+1..=deep` (levels).
pub fn check_energy_identity(problem: &ProblemSpec, coarse: u32, fine: u32, deep: u32) -> Result<EnergyIdentityReport> {
    if !(1 <= coarse && coarse <= fine && fine <= deep) {
        return Err(DiagnosticsError::Dimension(format!(
            "levels must satisfy 1 <= {coarse} <= {fine} <= {deep}"
        )));
    }
    let family = problem.family;
    let ids = IndexSet::levels(family, 1, deep, Role::S);
    let a = assemble_block(&ids, &ids)?.to_dense();
    let b = assemble_load(problem, &ids)?.values;
    let n = family.count_through(coarse) as usize;
    let big_n = family.count_through(fine) as usize;
    check_energy_identity_blocks(&a, &b, n, big_n)
}

/// Random symmetric positive definite matrix `MᵀM + shift·I`.
pub fn random_spd(n: usize, shift: f64, rng: &mut impl Rng) -> DMatrix<f64> {
    let m = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    m.transpose() * &m + DMatrix::identity(n, n) * shift
}

/// Matrix with i.i.d. `N(0, 1/m)` entries.
pub fn gaussian_matrix(m: usize, n: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let s = 1.0 / (m as f64).sqrt();
    DMatrix::from_fn(m, n, |_, _| s * rng.sample::<f64, _>(StandardNormal))
}

/// Gaussian matrix with unit-norm columns.
pub fn random_unit_columns(m: usize, n: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let mut a = gaussian_matrix(m, n, rng);
    for mut c in a.column_iter_mut() {
        let s = c.norm();
        c /= s;
    }
    a
}

/// Vector with `k` random nonzero standard-normal entries.
pub fn random_sparse(n: usize, k: usize, rng: &mut impl Rng) -> Vec<f64> {
    let mut x = vec![0.0; n];
    for i in sample(rng, n, k) {
        let v: f64 = rng.sample(StandardNormal);
        x[i] = v + v.signum() * 0.1;
    }
    x
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportMassReport {
    /// `‖δ_S‖₁` with `S = supp(x)` and `δ = z - x`.
    pub on_support: f64,
    pub total: f64,
    pub holds: bool,
}

pub const SUPPORT_MASS_SLACK: f64 = 1e-9;

/// For the basis-pursuit solution `z` of `A z = A x`, checks that at least
/// half the ℓ1 mass of `z - x` sits on the support of `x`.
pub fn check_support_mass(a: &DMatrix<f64>, x: &[f64]) -> Result<SupportMassReport> {
    let b = (a * DVector::from_column_slice(x)).as_slice().to_vec();
    let sol = basis_pursuit_dense(a, &b)?;
    if sol.status != LpStatus::Optimal {
        return Err(DiagnosticsError::Lp(sol.status));
    }
    let (mut on, mut total) = (0.0, 0.0);
    for (zi, xi) in sol.solution.iter().zip(x) {
        let d = (zi - xi).abs();
        total += d;
        if *xi != 0.0 {
            on += d;
        }
    }
    Ok(SupportMassReport {
        on_support: on,
        total,
        holds: on >= 0.5 * total - SUPPORT_MASS_SLACK,
    })
}

/// The 3×4 refinement block, right-hand side and dense solution of the
/// example where the ℓ1 minimizer has more nonzeros than the Galerkin
/// solution `(0, 7, 2, 0)`.
pub fn l0_l1_counterexample() -> (DMatrix<f64>, Vec<f64>, Vec<f64>) {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let a = DMatrix::from_row_slice(3, 4, &[0.0, 1.0, -0.5, 0.0, r, -0.5, 1.0, -0.5, 0.0, 0.0, -0.5, 1.0]);
    (a, vec![6.0, -1.5, -1.0], vec![0.0, 7.0, 2.0, 0.0])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryFailure {
    pub trial: usize,
    pub error: f64,
    /// Sampled lower bound on `δ_{2k}` for the trial's matrix.
    pub delta_2k: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub m: usize,
    pub n: usize,
    pub k: usize,
    pub trials: usize,
    pub successes: usize,
    pub rate: f64,
    pub tol: f64,
    pub seed: u64,
    pub failures: Vec<RecoveryFailure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryTrial {
    pub planted: Vec<f64>,
    pub recovered: Vec<f64>,
    /// `‖x - x₀‖∞`.
    pub error: f64,
    pub recovered_exactly: bool,
}

/// One recovery trial: Gaussian `m × n` matrix and `k`-sparse `x₀` drawn from
/// stream `stream` of `seed`, then basis pursuit on `A x = A x₀`.
pub fn recovery_trial(m: usize, n: usize, k: usize, tol: f64, seed: u64, stream: u64) -> Result<(DMatrix<f64>, RecoveryTrial)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let a = gaussian_matrix(m, n, &mut rng);
    let x0 = random_sparse(n, k, &mut rng);
    let b = (&a * DVector::from_column_slice(&x0)).as_slice().to_vec();
    let sol = basis_pursuit(&from_dense(&a), &b)?;
    let error = sol.solution.iter().zip(&x0).fold(0.0f64, |e, (p, q)| e.max((p - q).abs()));
    let scale = x0.iter().fold(1.0f64, |s, v| s.max(v.abs()));
    let trial = RecoveryTrial {
        recovered_exactly: sol.status == LpStatus::Optimal && error <= tol * scale,
        planted: x0,
        recovered: sol.solution,
        error,
    };
    Ok((a, trial))
}

/// Repeats [`recovery_trial`] and counts exact recoveries
/// (`‖x - x₀‖∞ ≤ tol·max(1, ‖x₀‖∞)`); failures carry a sampled `δ_{2k}`.
pub fn recovery_experiment(m: usize, n: usize, k: usize, trials: usize, tol: f64, seed: u64) -> Result<RecoveryReport> {
    let idx: Vec<usize> = (0..trials).collect();
    let outcomes = par_map(&idx, |&t| -> Result<Option<RecoveryFailure>> {
        let (a, trial) = recovery_trial(m, n, k, tol, seed, t as u64)?;
        if trial.recovered_exactly {
            return Ok(None);
        }
        let opts = RipOptions {
            budget: 2000,
            seed: seed.wrapping_add(t as u64),
            mode: RipMode::Sampled,
            ..RipOptions::default()
        };
        let delta_2k = rip_constant(&from_dense(&a), (2 * k).min(n), opts)?.delta_k;
        log::info!("recovery trial {t} failed: error {:.3e}, sampled delta_2k >= {delta_2k:.3}", trial.error);
        Ok(Some(RecoveryFailure {
            trial: t,
            error: trial.error,
            delta_2k,
        }))
    });
    let mut failures = Vec::new();
    for o in outcomes {
        if let Some(f) = o? {
            failures.push(f);
        }
    }
    let successes = trials - failures.len();
    Ok(RecoveryReport {
        m,
        n,
        k,
        trials,
        successes,
        rate: successes as f64 / trials.max(1) as f64,
        tol,
        seed,
        failures,
    })
}

/// Pivoted Cholesky `PᵀAP = LLᵀ`, stopped when the largest remaining pivot
/// drops below `tol · trace(A)`. Returns `B` (rank × n) with `A ≈ BᵀB`.
pub fn full_rank_factor(a: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let n = a.nrows();
    let tol = rel_tol * a.trace().abs();
    let mut w = a.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut l = DMatrix::<f64>::zeros(n, n);
    let mut rank = 0;
    for k in 0..n {
        let (mut piv, mut best) = (k, f64::NEG_INFINITY);
        for i in k..n {
            if w[(i, i)] > best {
                best = w[(i, i)];
                piv = i;
            }
        }
        if best <= tol {
            break;
        }
        w.swap_rows(k, piv);
        w.swap_columns(k, piv);
        l.swap_rows(k, piv);
        perm.swap(k, piv);
        let d = best.sqrt();
        l[(k, k)] = d;
        for i in k + 1..n {
            l[(i, k)] = w[(i, k)] / d;
        }
        for j in k + 1..n {
            for i in j..n {
                let v = w[(i, j)] - l[(i, k)] * l[(j, k)];
                w[(i, j)] = v;
                w[(j, i)] = v;
            }
        }
        rank += 1;
    }
    // A[perm[i], perm[j]] = (L Lᵀ)[i, j]  ⇒  B[:, perm[i]] = L[i, :]ᵀ
    let mut b = DMatrix::zeros(rank, n);
    for i in 0..n {
        for r in 0..rank {
            b[(r, perm[i])] = l[(i, r)];
        }
    }
    b
}

pub const FACTOR_TOL: f64 = 1e-12;

/// How `A = B₁ᵀB₁ + B₂ᵀB₂` is obtained for the two-stage decoder.
#[derive(Debug, Clone)]
pub enum Split {
    Factors { b1: DMatrix<f64>, b2: DMatrix<f64> },
    /// Pivoted-Cholesky factor of `A`; its first rows form `B₁`, the rest `B₂`.
    Leading(usize),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecodeReport {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub b2_norm: f64,
    /// `(x - x̃)ᵀA(x - x̃)` for the supplied reference.
    pub energy_error: Option<f64>,
    /// Energy error divided by `xᵀAx`.
    pub rel_energy_error: Option<f64>,
}

/// `ỹ = argmin ‖b - B₁ᵀy‖₁`, then `x̃ = argmin {‖x‖₁ : B₁x = ỹ}`.
pub fn two_stage_decode(a: &DMatrix<f64>, b: &[f64], split: Split, reference: Option<&[f64]>) -> Result<DecodeReport> {
    let n = a.nrows();
    if a.ncols() != n || b.len() != n {
        return Err(DiagnosticsError::Dimension(format!("matrix {}x{}, rhs {}", a.nrows(), a.ncols(), b.len())));
    }
    let (b1, b2) = match split {
        Split::Factors { b1, b2 } => (b1, b2),
        Split::Leading(r1) => {
            let f = full_rank_factor(a, FACTOR_TOL);
            let r1 = r1.min(f.nrows());
            (f.rows(0, r1).into_owned(), f.rows(r1, f.nrows() - r1).into_owned())
        }
    };
    if b1.ncols() != n || (b2.nrows() > 0 && b2.ncols() != n) {
        return Err(DiagnosticsError::Dimension("factor width differs from the system size".into()));
    }
    let stage1 = l1_regression_dense(&b1.transpose(), b)?;
    if stage1.status != LpStatus::Optimal {
        return Err(DiagnosticsError::Lp(stage1.status));
    }
    let y = stage1.solution;
    let stage2 = basis_pursuit_dense(&b1, &y)?;
    if stage2.status != LpStatus::Optimal {
        return Err(DiagnosticsError::Lp(stage2.status));
    }
    let x = stage2.solution;
    let b2_norm = if b2.nrows() == 0 {
        0.0
    } else {
        b2.clone().svd(false, false).singular_values.max()
    };
    let (energy_error, rel_energy_error) = match reference {
        Some(r) => {
            let d: Vec<f64> = r.iter().zip(&x).map(|(p, q)| p - q).collect();
            let e = quad(a, &d);
            let s = quad(a, r);
            (Some(e), Some(if s > 0.0 { e / s } else { e }))
        }
        None => (None, None),
    };
    Ok(DecodeReport {
        x,
        y,
        b2_norm,
        energy_error,
        rel_energy_error,
    })
}

/// `[A21 A22]` of the 1D dictionary with rows at `level` and columns through it,
/// as used for the incoherence and isometry figures.
pub fn hat1d_level_matrix(level: u32) -> CscMatrix<f64> {
    crate::assembly::level_system(Family::Hat1D, level).to_csc()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn dense(a: &DMatrix<f64>) -> CscMatrix<f64> {
        from_dense(a)
    }

    #[test]
    fn identity_is_incoherent_and_isometric() {
        let id = dense(&DMatrix::identity(5, 5));
        assert_eq!(mutual_incoherence(&id).unwrap().mu, 0.0);
        for k in 1..=5 {
            assert_eq!(rip_constant(&id, k, RipOptions::default()).unwrap().delta_k, 0.0);
        }
    }

    #[test]
    fn two_columns_at_an_angle() {
        let t: f64 = 0.7;
        let a = dense(&DMatrix::from_row_slice(2, 2, &[1.0, t.cos(), 0.0, t.sin()]));
        let r = mutual_incoherence(&a).unwrap();
        assert_abs_diff_eq!(r.mu, t.cos(), epsilon = 1e-15);
        assert_eq!(r.pair, (0, 1));
        let d = rip_constant(&a, 2, RipOptions::default()).unwrap();
        assert_abs_diff_eq!(d.delta_k, t.cos(), epsilon = 1e-15);
        assert_eq!(d.witness_support, vec![0, 1]);
    }

    #[test]
    fn zero_column_is_named() {
        let a = dense(&DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 1.0, 0.0, 0.0, 1.0]));
        assert!(matches!(mutual_incoherence(&a), Err(DiagnosticsError::ZeroColumn(1))));
    }

    #[test]
    fn combinations_enumerate_all_subsets() {
        let mut c = vec![0, 1, 2];
        let mut count = 1;
        while next_combination(&mut c, 6) {
            count += 1;
        }
        assert_eq!(count, 20);
        assert_eq!(binomial(6, 3), 20.0);
        assert_eq!(binomial(60, 3), 34220.0);
    }

    #[test]
    fn exhaustive_budget_is_enforced() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = dense(&gaussian_matrix(5, 40, &mut rng));
        let opts = RipOptions {
            budget: 100,
            mode: RipMode::Exhaustive,
            ..RipOptions::default()
        };
        assert!(matches!(rip_constant(&a, 3, opts), Err(DiagnosticsError::Combinatorial { .. })));
        let auto = RipOptions {
            budget: 100,
            ..RipOptions::default()
        };
        let est = rip_constant(&a, 3, auto).unwrap();
        assert_eq!(est.method, RipMethod::Sampled);
        assert_eq!(est, rip_constant(&a, 3, auto).unwrap());
    }

    #[test]
    fn sigma_small_case() {
        assert_eq!(best_k_term_error(&[3.0, -2.0, 1.0], 1, 1.0), 3.0);
        assert_eq!(best_k_term_error(&[3.0, -2.0, 1.0], 3, 2.0), 0.0);
        assert_eq!(best_k_term_error(&[1.0, -1.0, 0.5], 1, f64::INFINITY), 1.0);
    }

    #[test]
    fn counterexample_optimum() {
        let (a, b, x) = l0_l1_counterexample();
        let sol = basis_pursuit_dense(&a, &b).unwrap();
        assert_abs_diff_eq!(sol.objective, 7.0 + 2f64.sqrt(), epsilon = 1e-12);
        assert!(norm1(&sol.solution) < norm1(&x));
    }

    #[test]
    fn pivoted_cholesky_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = gaussian_matrix(4, 7, &mut rng);
        let a = g.transpose() * &g;
        let b = full_rank_factor(&a, FACTOR_TOL);
        assert_eq!(b.nrows(), 4);
        assert!((b.transpose() * &b - &a).amax() < 1e-12);
    }

    #[test]
    fn decode_square_invertible() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let b1 = gaussian_matrix(6, 6, &mut rng) + DMatrix::identity(6, 6) * 2.0;
        let a = b1.transpose() * &b1;
        let x: Vec<f64> = (0..6).map(|i| i as f64 - 2.5).collect();
        let b = (&a * DVector::from_column_slice(&x)).as_slice().to_vec();
        let split = Split::Factors {
            b1,
            b2: DMatrix::zeros(0, 6),
        };
        let r = two_stage_decode(&a, &b, split, Some(&x)).unwrap();
        for (p, q) in r.x.iter().zip(&x) {
            assert_abs_diff_eq!(p, q, epsilon = 1e-9);
        }
    }

    #[test]
    fn energy_identities_on_random_spd() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random_spd(14, 0.1, &mut rng);
        let b: Vec<f64> = (0..14).map(|_| rng.sample(StandardNormal)).collect();
        let r = check_energy_identity_blocks(&a, &b, 6, 10).unwrap();
        assert!(r.max_rel_diff() < 1e-8, "{r:?}");
        let r = check_energy_identity_blocks(&a, &b, 10, 10).unwrap();
        assert_eq!((r.z_identity.lhs, r.z_identity.rhs), (0.0, 0.0));
    }
}
