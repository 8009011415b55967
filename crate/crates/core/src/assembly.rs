//! Stiffness and load entries for `-Δ` in the hierarchical dictionaries, and
//! the block partition used by one refinement step.
//!
//! Stiffness entries are exact: 1D hats have piecewise-constant derivatives,
//! and in 2D the finer hat's triangles always sit inside single triangles of
//! the coarser mesh, so both gradients are constant per fine triangle. Loads
//! use adaptive Gauss–Legendre quadrature.

use crate::dictionary::{
    hat2d_piece, BasisId, DictionaryError, Family, IndexSet, RefinementTree, Role, HAT2D_PIECES,
    HAT2D_TRIANGLES,
};
use crate::problems::ProblemSpec;
use crate::quadrature::{integrate, integrate_triangle, IntegrationError, Tolerance};
use crate::sparse::{self, csc_from_triplets};
use crate::util::par_map;
use nalgebra_sparse::CscMatrix;
use serde::Serialize;
use std::collections::HashMap;
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AssemblyError {
    #[error("{a} and {b} belong to different families")]
    FamilyMismatch { a: BasisId, b: BasisId },
    #[error("problem {problem} is posed for {expected:?}, not {got:?}")]
    ProblemFamily {
        problem: String,
        expected: Family,
        got: Family,
    },
    #[error(transparent)]
    Dictionary(#[from] DictionaryError),
    #[error("load entry for {id}: {source}")]
    Integration {
        id: BasisId,
        #[source]
        source: IntegrationError,
    },
    #[error("cannot refine an empty column set")]
    EmptyColumns,
}

/// Exact `a(φ_i, φ_j)`, or `None` when the supports meet in a null set.
pub fn stiffness_pair(i: &BasisId, j: &BasisId) -> Option<f64> {
    match i.family {
        Family::Hat1D => stiffness_1d(i, j),
        Family::Hat2D => stiffness_2d(i, j),
    }
}

pub fn stiffness_entry(i: &BasisId, j: &BasisId) -> Result<f64, AssemblyError> {
    if i.family != j.family {
        return Err(AssemblyError::FamilyMismatch { a: *i, b: *j });
    }
    Ok(stiffness_pair(i, j).unwrap_or(0.0))
}

/// The two linear pieces of a 1D hat as `(start, end, slope)`.
fn pieces_1d(id: &BasisId) -> [(f64, f64, f64); 2] {
    let h = id.half_width();
    let c = id.center()[0];
    let s = id.peak() / h;
    [(c - h, c, s), (c, c + h, -s)]
}

fn stiffness_1d(i: &BasisId, j: &BasisId) -> Option<f64> {
    let (bi, bj) = (i.support_box(), j.support_box());
    if bi[1] <= bj[0] || bj[1] <= bi[0] {
        return None;
    }
    let mut sum = 0.0;
    for (a0, a1, sa) in pieces_1d(i) {
        for (b0, b1, sb) in pieces_1d(j) {
            let len = a1.min(b1) - a0.max(b0);
            if len > 0.0 {
                sum += len * sa * sb;
            }
        }
    }
    Some(sum)
}

fn stiffness_2d(i: &BasisId, j: &BasisId) -> Option<f64> {
    let (fine, coarse) = if i.level >= j.level { (i, j) } else { (j, i) };
    let (hf, hc) = (fine.half_width(), coarse.half_width());
    let (cf, cc) = (fine.center(), coarse.center());
    if (cf[0] - cc[0]).abs() >= hf + hc || (cf[1] - cc[1]).abs() >= hf + hc {
        return None;
    }
    let area = 0.5 * hf * hf;
    let mut overlap = false;
    let mut sum = 0.0;
    for (t, tri) in HAT2D_TRIANGLES.iter().enumerate() {
        let gx = tri.iter().map(|v| v.0).sum::<f64>() / 3.0;
        let gy = tri.iter().map(|v| v.1).sum::<f64>() / 3.0;
        let x = (cf[0] + hf * gx - cc[0]) / hc;
        let y = (cf[1] + hf * gy - cc[1]) / hc;
        if let Some(pc) = hat2d_piece(x, y) {
            overlap = true;
            let (fx, fy) = HAT2D_PIECES[t];
            let (cx, cy) = HAT2D_PIECES[pc];
            sum += area * (0.25 / (hf * hc)) * (fx * cx + fy * cy);
        }
    }
    overlap.then_some(sum)
}

/// `⟨f, φ_j⟩` by adaptive quadrature over each linear piece of `φ_j`.
pub fn load_entry(problem: &ProblemSpec, id: &BasisId) -> Result<f64, AssemblyError> {
    load_entry_with(problem, id, Tolerance::default())
}

pub fn load_entry_with(problem: &ProblemSpec, id: &BasisId, tol: Tolerance) -> Result<f64, AssemblyError> {
    if problem.family != id.family {
        return Err(AssemblyError::ProblemFamily {
            problem: problem.name.clone(),
            expected: problem.family,
            got: id.family,
        });
    }
    let wrap = |source| AssemblyError::Integration { id: *id, source };
    match id.family {
        Family::Hat1D => {
            let c = id.center()[0];
            let h = id.half_width();
            let peak = id.peak();
            let mut total = 0.0;
            for (a, b, sign) in [(c - h, c, 1.0), (c, c + h, -1.0)] {
                let phi = |x: f64| peak * (1.0 + sign * (x - c) / h);
                let mut cuts = vec![a];
                cuts.extend(problem.breakpoints().into_iter().filter(|&p| p > a && p < b));
                cuts.push(b);
                for w in cuts.windows(2) {
                    total += integrate(|x| problem.rhs(&[x]) * phi(x), w[0], w[1], tol).map_err(wrap)?;
                }
            }
            Ok(total)
        }
        Family::Hat2D => {
            let c = id.center();
            let h = id.half_width();
            let mut total = 0.0;
            for (t, tri) in HAT2D_TRIANGLES.iter().enumerate() {
                let (dx, dy) = HAT2D_PIECES[t];
                let v = tri.map(|(x, y)| (c[0] + h * x, c[1] + h * y));
                let phi = |x: f64, y: f64| 0.5 * (1.0 + dx * (x - c[0]) / h + dy * (y - c[1]) / h);
                total += integrate_triangle(|x, y| problem.rhs(&[x, y]) * phi(x, y), v, tol).map_err(wrap)?;
            }
            Ok(total)
        }
    }
}

/// Rectangular slice `A[rows, cols]` in coordinate form.
///
/// Every pair of overlapping supports contributes an entry, even when the
/// integral happens to vanish (in 1D a coarse hat is linear across most of a
/// fine hat's support, so many such entries are exactly zero).
#[derive(Debug, Clone, Serialize)]
pub struct StiffnessBlock {
    pub row_ids: IndexSet,
    pub col_ids: IndexSet,
    pub entries: Vec<(usize, usize, f64)>,
}

impl StiffnessBlock {
    pub fn nrows(&self) -> usize {
        self.row_ids.len()
    }

    pub fn ncols(&self) -> usize {
        self.col_ids.len()
    }

    pub fn to_csc(&self) -> CscMatrix<f64> {
        csc_from_triplets(self.nrows(), self.ncols(), &self.entries)
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut d = nalgebra::DMatrix::zeros(self.nrows(), self.ncols());
        for &(i, j, v) in &self.entries {
            d[(i, j)] = v;
        }
        d
    }

    pub fn write_matrix_market<W: Write>(&self, w: W) -> std::io::Result<()> {
        sparse::write_matrix_market(w, self.nrows(), self.ncols(), &self.entries)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LoadVector {
    pub ids: IndexSet,
    pub values: Vec<f64>,
}

/// Candidate lattice positions on `level` whose support box meets `[lo, hi]`
/// (coordinates in units of the mesh width) with positive length.
fn lattice_range(lo: f64, hi: f64, n: u32) -> std::ops::RangeInclusive<u32> {
    let first = ((lo - 1.0).floor() + 1.0).max(1.0);
    let last = ((hi + 1.0).ceil() - 1.0).min(n as f64);
    if first > last {
        #[allow(clippy::reversed_empty_ranges)]
        return 1..=0;
    }
    first as u32..=last as u32
}

/// Assembles `A[rows, cols]`.
pub fn assemble_block(rows: &IndexSet, cols: &IndexSet) -> Result<StiffnessBlock, AssemblyError> {
    if let (Some(r), Some(c)) = (rows.iter().next(), cols.iter().next()) {
        if r.family != c.family {
            return Err(AssemblyError::FamilyMismatch { a: *r, b: *c });
        }
    }
    let lookup: HashMap<BasisId, usize> = rows.iter().enumerate().map(|(i, id)| (*id, i)).collect();
    let mut levels: Vec<u32> = rows.iter().map(|id| id.level).collect();
    levels.dedup();
    let per_col = par_map(cols.as_slice(), |col| {
        let mut out = Vec::new();
        let b = col.support_box();
        for &level in &levels {
            let probe = BasisId {
                level,
                p: 1,
                q: 1,
                ..*col
            };
            let h = probe.half_width();
            let n = (1u32 << level) - 1;
            match col.family {
                Family::Hat1D => {
                    for p in lattice_range((b[0] + 1.0) / h, (b[1] + 1.0) / h, n) {
                        let id = BasisId { p, q: 0, ..probe };
                        if let Some(&r) = lookup.get(&id) {
                            if let Some(v) = stiffness_pair(&id, col) {
                                out.push((r, v));
                            }
                        }
                    }
                }
                Family::Hat2D => {
                    for q in lattice_range(b[2] / h, b[3] / h, n) {
                        for p in lattice_range(b[0] / h, b[1] / h, n) {
                            let id = BasisId { p, q, ..probe };
                            if let Some(&r) = lookup.get(&id) {
                                if let Some(v) = stiffness_pair(&id, col) {
                                    out.push((r, v));
                                }
                            }
                        }
                    }
                }
            }
        }
        out.sort_by_key(|e| e.0);
        out
    });
    let entries = per_col
        .into_iter()
        .enumerate()
        .flat_map(|(j, col)| col.into_iter().map(move |(i, v)| (i, j, v)))
        .collect();
    Ok(StiffnessBlock {
        row_ids: rows.clone(),
        col_ids: cols.clone(),
        entries,
    })
}

pub fn assemble_load(problem: &ProblemSpec, ids: &IndexSet) -> Result<LoadVector, AssemblyError> {
    let values: Result<Vec<f64>, _> = par_map(ids.as_slice(), |id| load_entry(problem, id))
        .into_iter()
        .collect();
    Ok(LoadVector {
        ids: ids.clone(),
        values: values?,
    })
}

/// Blocks of one refinement step:
///
/// ```text
/// [ A11 A12 ] [ z1 ]   [ b1 ]    rows R_prev, R_hat
/// [ A21 A22 ] [ z2 ] = [ b2 ]    cols C_prev, C_hat
/// ```
#[derive(Debug, Clone, Serialize)]
pub struct BlockSystem {
    pub a11: StiffnessBlock,
    pub a12: StiffnessBlock,
    pub a21: StiffnessBlock,
    pub a22: StiffnessBlock,
    pub b1: LoadVector,
    pub b2: LoadVector,
    pub c_prev: IndexSet,
    pub c_hat: IndexSet,
    pub r_prev: IndexSet,
    pub r_hat: IndexSet,
}

impl BlockSystem {
    /// Columns of `[A21 A22]`: `C_prev` followed by `C_hat`.
    pub fn columns(&self) -> Vec<BasisId> {
        self.c_prev.iter().chain(self.c_hat.iter()).copied().collect()
    }

    /// `(rows, cols)` of `[A21 A22]`.
    pub fn lower_dims(&self) -> (usize, usize) {
        (self.r_hat.len(), self.c_prev.len() + self.c_hat.len())
    }

    /// `[A21 A22]` as one CSC matrix (explicit zeros dropped).
    pub fn lower(&self) -> CscMatrix<f64> {
        let off = self.c_prev.len();
        let mut t = self.a21.entries.clone();
        t.extend(self.a22.entries.iter().map(|&(i, j, v)| (i, j + off, v)));
        csc_from_triplets(self.r_hat.len(), off + self.c_hat.len(), &t)
    }
}

/// Builds the blocks for the step that refines `c_prev` (rows `r_prev` equal
/// the columns): `C_hat = Ref(C_prev) \ C_prev` and `R_hat = Ref(R_prev) \ R_prev`.
pub fn build_block_system(
    c_prev: &IndexSet,
    tree: &RefinementTree,
    problem: &ProblemSpec,
) -> Result<BlockSystem, AssemblyError> {
    build_with_rows(c_prev, c_prev, tree, problem)
}

pub fn build_with_rows(
    c_prev: &IndexSet,
    r_prev: &IndexSet,
    tree: &RefinementTree,
    problem: &ProblemSpec,
) -> Result<BlockSystem, AssemblyError> {
    if c_prev.is_empty() {
        return Err(AssemblyError::EmptyColumns);
    }
    let c_prev = c_prev.clone().with_role(Role::C);
    let r_prev = r_prev.clone().with_role(Role::R);
    let c_hat = crate::dictionary::refine(&c_prev, tree)?
        .difference(&c_prev)
        .with_role(Role::CHat);
    let r_hat = crate::dictionary::refine(&r_prev, tree)?
        .difference(&r_prev)
        .with_role(Role::RHat);
    Ok(BlockSystem {
        a11: assemble_block(&r_prev, &c_prev)?,
        a12: assemble_block(&r_prev, &c_hat)?,
        a21: assemble_block(&r_hat, &c_prev)?,
        a22: assemble_block(&r_hat, &c_hat)?,
        b1: assemble_load(problem, &r_prev)?,
        b2: assemble_load(problem, &r_hat)?,
        c_prev,
        c_hat,
        r_prev,
        r_hat,
    })
}

/// `[A21 A22]` for the full step from levels `1..level` to `level`: rows are
/// the level-`level` hats, columns all hats through `level`.
pub fn level_system(family: Family, level: u32) -> StiffnessBlock {
    let rows = IndexSet::level(family, level, Role::RHat);
    let cols = IndexSet::levels(family, 1, level, Role::C);
    assemble_block(&rows, &cols).expect("rows and columns share a family")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{arctan2, problem_1d_constant, problem_1d_multi_arctan, problem_2d_polynomial};
    use approx::assert_abs_diff_eq;

    fn h1(k: u32, l: u32) -> BasisId {
        BasisId::hat1d(k, l).unwrap()
    }

    fn h2(j: u32, p: u32, q: u32) -> BasisId {
        BasisId::hat2d(j, p, q).unwrap()
    }

    /// Midpoint-rule oracle for `∫ φ_i' φ_j'` using finite differences of eval.
    fn stiffness_oracle_1d(i: &BasisId, j: &BasisId) -> f64 {
        let n = 1 << 14;
        let h = 2.0 / n as f64;
        let d = |id: &BasisId, x: f64| {
            (crate::dictionary::eval_basis(id, &[x + 1e-7]).unwrap()
                - crate::dictionary::eval_basis(id, &[x - 1e-7]).unwrap())
                / 2e-7
        };
        (0..n)
            .map(|k| {
                let x = -1.0 + (k as f64 + 0.5) * h;
                d(i, x) * d(j, x) * h
            })
            .sum()
    }

    #[test]
    fn diagonal_is_one() {
        for k in 1..=10 {
            for l in [1, (1 << k) - 1] {
                assert_abs_diff_eq!(stiffness_entry(&h1(k, l), &h1(k, l)).unwrap(), 1.0, epsilon = 1e-14);
            }
        }
        for j in 1..=6 {
            assert_abs_diff_eq!(stiffness_entry(&h2(j, 1, 1), &h2(j, 1, 1)).unwrap(), 1.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn one_d_entries_match_quadrature_oracle() {
        let ids: Vec<BasisId> = IndexSet::levels(Family::Hat1D, 1, 4, Role::S).iter().copied().collect();
        for i in &ids {
            for j in &ids {
                let e = stiffness_entry(i, j).unwrap();
                assert_abs_diff_eq!(e, stiffness_oracle_1d(i, j), epsilon = 1e-6);
                assert_eq!(e, stiffness_entry(j, i).unwrap());
            }
        }
        assert_eq!(stiffness_entry(&h1(2, 1), &h1(2, 3)).unwrap(), 0.0);
        assert!(stiffness_pair(&h1(2, 1), &h1(2, 3)).is_none());
    }

    #[test]
    fn two_d_known_entries() {
        let c = h2(2, 2, 2);
        assert_abs_diff_eq!(stiffness_entry(&c, &h2(2, 1, 2)).unwrap(), -0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(stiffness_entry(&c, &h2(2, 3, 2)).unwrap(), -0.25, epsilon = 1e-15);
        // diagonal neighbours along the mesh diagonal share an edge but the
        // entry vanishes for the right-angled mesh
        assert_abs_diff_eq!(stiffness_entry(&c, &h2(2, 3, 3)).unwrap(), 0.0, epsilon = 1e-15);
        assert!(stiffness_pair(&c, &h2(2, 3, 3)).is_some());
        // off-diagonal corners do not overlap
        assert!(stiffness_pair(&c, &h2(2, 3, 1)).is_none());
        // the level-1 hat is linear around the level-2 centre except along the kinks
        assert_abs_diff_eq!(stiffness_entry(&h2(1, 1, 1), &c).unwrap(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn two_d_entries_match_quadrature_oracle() {
        // gradient by central differences, midpoint rule on a fine grid
        let oracle = |i: &BasisId, j: &BasisId| {
            let n = 256;
            let h = 1.0 / n as f64;
            let e = 1e-7;
            let grad = |id: &BasisId, x: f64, y: f64| {
                let f = |x: f64, y: f64| crate::dictionary::eval_unchecked(id, &[x, y]);
                ((f(x + e, y) - f(x - e, y)) / (2.0 * e), (f(x, y + e) - f(x, y - e)) / (2.0 * e))
            };
            let mut s = 0.0;
            for a in 0..n {
                for b in 0..n {
                    // offset avoids sampling exactly on mesh lines
                    let (x, y) = ((a as f64 + 0.31) * h, (b as f64 + 0.57) * h);
                    let (gi, gj) = (grad(i, x, y), grad(j, x, y));
                    s += (gi.0 * gj.0 + gi.1 * gj.1) * h * h;
                }
            }
            s
        };
        let ids: Vec<BasisId> = vec![h2(1, 1, 1), h2(2, 1, 1), h2(2, 2, 3), h2(3, 3, 3), h2(3, 4, 2), h2(3, 5, 5)];
        for i in &ids {
            for j in &ids {
                assert_abs_diff_eq!(stiffness_entry(i, j).unwrap(), oracle(i, j), epsilon = 2e-2);
            }
        }
    }

    #[test]
    fn mixed_families_rejected() {
        assert!(matches!(
            stiffness_entry(&h1(1, 1), &h2(1, 1, 1)),
            Err(AssemblyError::FamilyMismatch { .. })
        ));
    }

    #[test]
    fn load_examples() {
        let zero = problem_1d_multi_arctan("zero", &[], 1.0);
        assert_eq!(load_entry(&zero, &h1(3, 2)).unwrap(), 0.0);
        let p = problem_2d_polynomial();
        let id = h2(1, 1, 1);
        let n = 1 << 12;
        let h = 1.0 / n as f64;
        let mut brute = 0.0;
        for a in 0..n {
            for b in 0..n {
                let (x, y) = ((a as f64 + 0.5) * h, (b as f64 + 0.5) * h);
                brute += p.rhs(&[x, y]) * crate::dictionary::eval_unchecked(&id, &[x, y]) * h * h;
            }
        }
        assert_abs_diff_eq!(load_entry(&p, &id).unwrap(), brute, epsilon = 1e-6);
    }

    #[test]
    fn load_of_constant_is_hat_area() {
        let one = problem_1d_constant(1.0);
        for k in 1..=8 {
            for l in [1, (1 << k) - 1, 1 << (k - 1)] {
                let expected = 2f64.powf(-(k as f64) / 2.0) * 2f64.powi(1 - k as i32);
                assert_abs_diff_eq!(load_entry(&one, &h1(k, l)).unwrap(), expected, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn steep_load_matches_midpoint_oracle() {
        let p = arctan2();
        for id in [h1(1, 1), h1(4, 8), h1(8, 128), h1(8, 129)] {
            let h = id.half_width();
            let c = id.center()[0];
            let n = 200_000;
            let dx = 2.0 * h / n as f64;
            let brute: f64 = (0..n)
                .map(|k| {
                    let x = c - h + (k as f64 + 0.5) * dx;
                    p.rhs(&[x]) * crate::dictionary::eval_unchecked(&id, &[x]) * dx
                })
                .sum();
            let q = load_entry(&p, &id).unwrap();
            assert_abs_diff_eq!(q, brute, epsilon = 1e-5 * (1.0 + brute.abs()));
        }
    }

    #[test]
    fn load_family_must_match() {
        assert!(matches!(
            load_entry(&arctan2(), &h2(1, 1, 1)),
            Err(AssemblyError::ProblemFamily { .. })
        ));
    }

    #[test]
    fn block_sizes() {
        let tree = RefinementTree::new(Family::Hat1D);
        let c = IndexSet::levels(Family::Hat1D, 1, 3, Role::C);
        let bs = build_block_system(&c, &tree, &arctan2()).unwrap();
        assert_eq!(bs.lower_dims(), (15, 26));
        assert_eq!((bs.a21.nrows(), bs.a21.ncols()), (15, 11));
        assert_eq!((bs.a22.nrows(), bs.a22.ncols()), (15, 15));

        let c = IndexSet::levels(Family::Hat1D, 1, 7, Role::C);
        let bs = build_block_system(&c, &tree, &arctan2()).unwrap();
        assert_eq!(bs.lower_dims(), (255, 502));

        let tree = RefinementTree::new(Family::Hat2D);
        let c = IndexSet::level(Family::Hat2D, 1, Role::C);
        let bs = build_block_system(&c, &tree, &problem_2d_polynomial()).unwrap();
        assert_eq!(bs.lower_dims(), (9, 10));
    }

    #[test]
    fn block_matches_pairwise_entries() {
        for family in [Family::Hat1D, Family::Hat2D] {
            let all = IndexSet::levels(family, 1, 3, Role::S);
            let blk = assemble_block(&all, &all).unwrap();
            let d = blk.to_dense();
            for (i, a) in all.iter().enumerate() {
                for (j, b) in all.iter().enumerate() {
                    assert_eq!(d[(i, j)], stiffness_entry(a, b).unwrap());
                    assert_eq!(d[(i, j)], d[(j, i)]);
                }
            }
            // every overlapping pair is present, including structural zeros
            let expected = all
                .iter()
                .flat_map(|a| all.iter().filter(move |b| stiffness_pair(a, b).is_some()))
                .count();
            assert_eq!(blk.entries.len(), expected);
        }
    }

    #[test]
    fn galerkin_single_level_reproduces_interpolant() {
        // -u'' = 1 with u = (1 - x^2)/2: linear FE is nodally exact
        let level = 5;
        let ids = IndexSet::level(Family::Hat1D, level, Role::S);
        let a = assemble_block(&ids, &ids).unwrap().to_dense();
        let b = nalgebra::DVector::from_vec(assemble_load(&problem_1d_constant(1.0), &ids).unwrap().values);
        let x = a.lu().solve(&b).unwrap();
        for (k, id) in ids.iter().enumerate() {
            let c = id.center()[0];
            assert_abs_diff_eq!(x[k] * id.peak(), 0.5 * (1.0 - c * c), epsilon = 1e-12);
        }
    }
}
