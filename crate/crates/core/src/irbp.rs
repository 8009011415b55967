//! The refinement loop: refine → assemble → basis pursuit → keep the support.
//!
//! Each step refines the current column set `C`, solves
//! `min ‖z‖₁ s.t. [A21 A22] z = b2` over the old and new columns, and admits
//! the new columns on which `z` is supported. Rows always equal columns.

use crate::assembly::{assemble_block, assemble_load, build_block_system, AssemblyError};
use crate::dictionary::{eval_unchecked, BasisId, Family, IndexSet, RefinementTree, Role};
use crate::lp::{basis_pursuit_with, least_squares, sparse_solve, LpError, LpOptions, LpStatus};
use crate::problems::{default_grid, relative_l2_error, ProblemSpec};
use crate::sparse::select_columns;
use crate::util::norm_inf;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::Write;
use std::path::Path;
use web_time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IrbpError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("step {step}: {source}")]
    Assembly {
        step: usize,
        #[source]
        source: AssemblyError,
    },
    #[error("step {step}: {source}")]
    LpInput {
        step: usize,
        #[source]
        source: LpError,
    },
    #[error("step {step}: basis pursuit ended with status {status:?}")]
    Lp { step: usize, status: LpStatus },
    #[error("step {step}: error {current:.4e} did not decrease from {previous:.4e} and no fallback is enabled")]
    Stagnated { step: usize, previous: f64, current: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Fallback {
    None,
    FullRefine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrbpConfig {
    /// Level of the first refined rows; columns start with all coarser levels.
    pub start_level: u32,
    pub max_steps: usize,
    pub eps_term: f64,
    /// Entry `i` is in the support when `|z_i| > support_tol · max(1, ‖z‖∞)`.
    pub support_tol: f64,
    pub fallback: Fallback,
    pub problem: ProblemSpec,
    pub max_level: u32,
    /// Also solve the Galerkin system on the selected columns and report its error.
    pub galerkin: bool,
}

pub const DEFAULT_SUPPORT_TOL: f64 = 1e-2;

impl IrbpConfig {
    pub fn new(problem: ProblemSpec) -> Self {
        let start_level = match problem.family {
            Family::Hat1D => 4,
            Family::Hat2D => 2,
        };
        IrbpConfig {
            start_level,
            max_steps: 5,
            eps_term: 1e-6,
            support_tol: DEFAULT_SUPPORT_TOL,
            fallback: Fallback::FullRefine,
            max_level: problem.family.default_max_level(),
            problem,
            galerkin: false,
        }
    }

    pub fn validate(&self) -> Result<(), IrbpError> {
        let bad = |m: &str| Err(IrbpError::Config(m.to_string()));
        if self.start_level < 2 {
            return bad("start_level must be at least 2");
        }
        if self.max_steps == 0 {
            return bad("max_steps must be positive");
        }
        if !(self.eps_term > 0.0) {
            return bad("eps_term must be positive");
        }
        if !(self.support_tol >= 0.0) || !self.support_tol.is_finite() {
            return bad("support_tol must be a nonnegative number");
        }
        if self.start_level > self.max_level {
            return bad("start_level exceeds max_level");
        }
        Ok(())
    }
}

/// One row of the step table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub step: usize,
    pub l1_rows: usize,
    pub l1_cols: usize,
    pub z_nnz: usize,
    pub fem_rows: usize,
    pub fem_cols: usize,
    pub x_nnz: usize,
    pub ratio: f64,
    pub rel_error: f64,
    pub wall_ms: f64,
}

/// Extra per-step diagnostics kept in the JSON report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDetail {
    pub step: usize,
    /// Columns of `A21` (the previous column set).
    pub a21_cols: usize,
    /// Columns of `A22` (new candidates).
    pub a22_cols: usize,
    pub selected: usize,
    pub objective: f64,
    pub lp_iterations: usize,
    pub primal_residual: f64,
    pub fem_level: u32,
    pub fem_rel_error: f64,
    /// `‖z^k - z^{k-1}‖₂` after zero extension.
    pub delta: f64,
    pub fallback_used: bool,
    /// `‖A22⁻¹ A21‖₁`, computed when `z` is supported on old columns.
    pub coupling_norm: Option<f64>,
    pub galerkin_rel_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: IrbpConfig,
    pub rows: Vec<ReportRow>,
    pub details: Vec<StepDetail>,
    pub steps: usize,
    pub converged: bool,
    pub total_ms: f64,
}

#[derive(Debug, Clone)]
pub struct IrbpState {
    pub step: usize,
    pub c_prev: IndexSet,
    pub r_prev: IndexSet,
    pub c_cur: IndexSet,
    pub r_cur: IndexSet,
    /// Columns carrying `z` (`C_prev ∪ C_hat` of the last step).
    pub z_ids: Vec<BasisId>,
    pub z: Vec<f64>,
    pub history: Vec<(ReportRow, StepDetail)>,
}

impl IrbpState {
    pub fn initial(cfg: &IrbpConfig) -> Self {
        let c = IndexSet::levels(cfg.problem.family, 1, cfg.start_level - 1, Role::C);
        IrbpState {
            step: 0,
            c_prev: c.clone(),
            r_prev: c.clone().with_role(Role::R),
            r_cur: c.clone().with_role(Role::R),
            c_cur: c,
            z_ids: Vec::new(),
            z: Vec::new(),
            history: Vec::new(),
        }
    }

    pub fn expansion(&self) -> Expansion {
        Expansion::new(&self.z_ids, &self.z)
    }
}

/// A finite combination `Σ c_i φ_i` with fast point evaluation.
#[derive(Debug, Clone, Default)]
pub struct Expansion {
    coef: HashMap<BasisId, f64>,
    levels: Vec<(Family, u32)>,
}

impl Expansion {
    pub fn new(ids: &[BasisId], coef: &[f64]) -> Self {
        let mut map = HashMap::new();
        for (id, c) in ids.iter().zip(coef) {
            if *c != 0.0 {
                *map.entry(*id).or_insert(0.0) += c;
            }
        }
        let mut levels: Vec<(Family, u32)> = map.keys().map(|id| (id.family, id.level)).collect();
        levels.sort();
        levels.dedup();
        Expansion { coef: map, levels }
    }

    pub fn eval(&self, p: &[f64]) -> f64 {
        let mut s = 0.0;
        for &(family, level) in &self.levels {
            match family {
                Family::Hat1D => {
                    let t = 2f64.powi(level as i32 - 1) * (p[0] + 1.0);
                    let f = t.floor() as i64;
                    for pos in [f, f + 1] {
                        if pos < 1 {
                            continue;
                        }
                        let id = BasisId {
                            family,
                            level,
                            p: pos as u32,
                            q: 0,
                        };
                        if let Some(c) = self.coef.get(&id) {
                            s += c * eval_unchecked(&id, p);
                        }
                    }
                }
                Family::Hat2D => {
                    let scale = 2f64.powi(level as i32);
                    let (fx, fy) = ((p[0] * scale).floor() as i64, (p[1] * scale).floor() as i64);
                    for qy in [fy, fy + 1] {
                        for px in [fx, fx + 1] {
                            if px < 1 || qy < 1 {
                                continue;
                            }
                            let id = BasisId {
                                family,
                                level,
                                p: px as u32,
                                q: qy as u32,
                            };
                            if let Some(c) = self.coef.get(&id) {
                                s += c * eval_unchecked(&id, p);
                            }
                        }
                    }
                }
            }
        }
        s
    }
}

/// Evaluates the current approximation at `points`.
pub fn reconstruct(state: &IrbpState, points: &[Vec<f64>]) -> Vec<f64> {
    let e = state.expansion();
    points.iter().map(|p| e.eval(p)).collect()
}

fn support_threshold(z: &[f64], tol: f64) -> f64 {
    tol * norm_inf(z).max(1.0)
}

/// Number of entries above the support threshold.
pub fn support_size(z: &[f64], tol: f64) -> usize {
    let t = support_threshold(z, tol);
    z.iter().filter(|v| v.abs() > t).count()
}

/// `‖a - b‖₂` after extending both by zero to the union of their index sets.
pub fn zero_extended_distance(a_ids: &[BasisId], a: &[f64], b_ids: &[BasisId], b: &[f64]) -> f64 {
    let mut m: HashMap<BasisId, f64> = HashMap::new();
    for (id, v) in a_ids.iter().zip(a) {
        *m.entry(*id).or_insert(0.0) += v;
    }
    for (id, v) in b_ids.iter().zip(b) {
        *m.entry(*id).or_insert(0.0) -= v;
    }
    let mut vals: Vec<(BasisId, f64)> = m.into_iter().collect();
    vals.sort_by(|x, y| x.0.cmp(&y.0));
    vals.iter().map(|(_, v)| v * v).sum::<f64>().sqrt()
}

/// Single-level finite-element solution at `level`: coefficients and error.
pub struct FemSolution {
    pub ids: IndexSet,
    pub x: Vec<f64>,
    pub rel_error: f64,
}

pub fn fem_solve(problem: &ProblemSpec, level: u32) -> Result<FemSolution, AssemblyError> {
    let ids = IndexSet::level(problem.family, level, Role::S);
    let a = assemble_block(&ids, &ids)?.to_csc();
    let b = assemble_load(problem, &ids)?.values;
    let x = sparse_solve(&a, &b).unwrap_or_else(|| vec![f64::NAN; b.len()]);
    let e = Expansion::new(ids.as_slice(), &x);
    let rel_error = relative_l2_error(|p| e.eval(p), |p| problem.exact(p), problem.family, default_grid(problem.family));
    Ok(FemSolution { ids, x, rel_error })
}

/// `‖A22⁻¹ A21‖₁` (maximum absolute column sum), or `None` if `A22` is singular.
pub fn coupling_norm(a21: &nalgebra_sparse::CscMatrix<f64>, a22: &nalgebra_sparse::CscMatrix<f64>) -> Option<f64> {
    let mut best: f64 = 0.0;
    for col in a21.col_iter() {
        let mut rhs = vec![0.0; a21.nrows()];
        for (&i, &v) in col.row_indices().iter().zip(col.values()) {
            rhs[i] = v;
        }
        let x = sparse_solve(a22, &rhs)?;
        best = best.max(x.iter().map(|v| v.abs()).sum());
    }
    Some(best)
}

/// Runs one refinement step.
pub fn irbp_step(state: &IrbpState, cfg: &IrbpConfig, tree: &RefinementTree) -> Result<IrbpState, IrbpError> {
    let step = state.step + 1;
    let t0 = Instant::now();
    let asm = |source| IrbpError::Assembly { step, source };
    let bs = build_block_system(&state.c_cur, tree, &cfg.problem).map_err(asm)?;
    let a = bs.lower();
    let sol = basis_pursuit_with(&a, &bs.b2.values, LpOptions::default())
        .map_err(|source| IrbpError::LpInput { step, source })?;
    if sol.status != LpStatus::Optimal {
        return Err(IrbpError::Lp {
            step,
            status: sol.status,
        });
    }
    let z = sol.solution;
    let cols = bs.columns();
    let thr = support_threshold(&z, cfg.support_tol);
    let n_prev = bs.c_prev.len();
    let z_nnz = z.iter().filter(|v| v.abs() > thr).count();
    let selected: Vec<BasisId> = (n_prev..cols.len())
        .filter(|&k| z[k].abs() > thr)
        .map(|k| cols[k])
        .collect();

    let expansion = Expansion::new(&cols, &z);
    let problem = &cfg.problem;
    let grid = default_grid(problem.family);
    let rel_error = relative_l2_error(|p| expansion.eval(p), |p| problem.exact(p), problem.family, grid);

    let mut fallback_used = false;
    let mut c_new = bs.c_prev.union(&IndexSet::new(Role::C, selected.iter().copied()));
    if let Some((prev, _)) = state.history.last() {
        if rel_error >= prev.rel_error {
            match cfg.fallback {
                Fallback::FullRefine => {
                    log::info!("step {step}: error did not decrease, refining fully");
                    c_new = bs.c_prev.union(&bs.c_hat);
                    fallback_used = true;
                }
                Fallback::None => {
                    return Err(IrbpError::Stagnated {
                        step,
                        previous: prev.rel_error,
                        current: rel_error,
                    })
                }
            }
        }
    }
    let c_new = c_new.with_role(Role::C);

    let coupling = if z[..n_prev].iter().any(|v| v.abs() > thr) {
        let a21 = select_columns(&a, &(0..n_prev).collect::<Vec<_>>());
        let a22 = select_columns(&a, &(n_prev..cols.len()).collect::<Vec<_>>());
        coupling_norm(&a21, &a22)
    } else {
        None
    };

    let fem_level = cfg.start_level + step as u32 - 1;
    let fem = fem_solve(problem, fem_level).map_err(asm)?;
    let x_nnz = support_size(&fem.x, cfg.support_tol);

    let galerkin_rel_error = if cfg.galerkin {
        let blk = assemble_block(&c_new, &c_new).map_err(asm)?;
        let load = assemble_load(problem, &c_new).map_err(asm)?;
        let x = least_squares(&blk.to_dense(), &load.values);
        let e = Expansion::new(c_new.as_slice(), &x);
        Some(relative_l2_error(|p| e.eval(p), |p| problem.exact(p), problem.family, grid))
    } else {
        None
    };

    let delta = zero_extended_distance(&cols, &z, &state.z_ids, &state.z);
    let (l1_rows, l1_cols) = bs.lower_dims();
    let row = ReportRow {
        step,
        l1_rows,
        l1_cols,
        z_nnz,
        fem_rows: fem.ids.len(),
        fem_cols: fem.ids.len(),
        x_nnz,
        ratio: z_nnz as f64 / x_nnz.max(1) as f64,
        rel_error,
        wall_ms: t0.elapsed().as_secs_f64() * 1e3,
    };
    let detail = StepDetail {
        step,
        a21_cols: bs.c_prev.len(),
        a22_cols: bs.c_hat.len(),
        selected: selected.len(),
        objective: sol.objective,
        lp_iterations: sol.iterations,
        primal_residual: sol.primal_residual,
        fem_level,
        fem_rel_error: fem.rel_error,
        delta,
        fallback_used,
        coupling_norm: coupling,
        galerkin_rel_error,
    };
    log::info!(
        "step {step}: {}x{} z0={} ratio={:.3} err={:.4e} lp_iter={}",
        l1_rows,
        l1_cols,
        z_nnz,
        row.ratio,
        rel_error,
        sol.iterations
    );
    let mut history = state.history.clone();
    history.push((row, detail));
    Ok(IrbpState {
        step,
        c_prev: bs.c_prev,
        r_prev: bs.r_prev,
        r_cur: c_new.clone().with_role(Role::R),
        c_cur: c_new,
        z_ids: cols,
        z,
        history,
    })
}

/// Iterates [`irbp_step`] until the coefficient change drops below `eps_term`
/// or `max_steps` steps have run.
pub fn irbp_run(cfg: &IrbpConfig) -> Result<(IrbpState, RunReport), IrbpError> {
    irbp_run_with(cfg, |_| {})
}

/// As [`irbp_run`], calling `on_step` after every step.
pub fn irbp_run_with(cfg: &IrbpConfig, mut on_step: impl FnMut(&IrbpState)) -> Result<(IrbpState, RunReport), IrbpError> {
    cfg.validate()?;
    let t0 = Instant::now();
    let tree = RefinementTree::with_max_level(cfg.problem.family, cfg.max_level);
    let mut state = IrbpState::initial(cfg);
    let mut converged = false;
    while state.step < cfg.max_steps {
        state = irbp_step(&state, cfg, &tree)?;
        on_step(&state);
        if state.history.last().map(|h| h.1.delta).unwrap_or(f64::INFINITY) <= cfg.eps_term {
            converged = true;
            break;
        }
    }
    let report = RunReport {
        config: cfg.clone(),
        rows: state.history.iter().map(|h| h.0.clone()).collect(),
        details: state.history.iter().map(|h| h.1.clone()).collect(),
        steps: state.step,
        converged,
        total_ms: t0.elapsed().as_secs_f64() * 1e3,
    };
    Ok((state, report))
}

impl RunReport {
    pub fn write_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for r in &self.rows {
            wr.serialize(r)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv_rows<R: std::io::Read>(r: R) -> csv::Result<Vec<ReportRow>> {
        csv::Reader::from_reader(r).deserialize().collect()
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }

    pub fn from_json(s: &str) -> serde_json::Result<Self> {
        serde_json::from_str(s)
    }

    pub fn save(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        self.write_csv(std::fs::File::create(dir.join("report.csv"))?)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::Other, e))?;
        std::fs::write(dir.join("report.json"), self.to_json()?)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionRow {
    pub family: String,
    pub level: u32,
    pub p: u32,
    pub q: u32,
    pub coefficient: f64,
}

/// `(BasisId, coefficient)` pairs as CSV.
pub fn write_solution_csv<W: Write>(w: W, ids: &[BasisId], z: &[f64]) -> csv::Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for (id, c) in ids.iter().zip(z) {
        wr.serialize(SolutionRow {
            family: id.family.as_str().to_string(),
            level: id.level,
            p: id.p,
            q: id.q,
            coefficient: *c,
        })?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_solution_csv<R: std::io::Read>(r: R) -> csv::Result<Vec<SolutionRow>> {
    csv::Reader::from_reader(r).deserialize().collect()
}

/// One-shot ℓ1 solve of the full step to `level` (rows at `level`, columns
/// through `level`) compared with the minimum-norm least-squares solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelExperiment {
    pub problem: String,
    pub level: u32,
    pub rows: usize,
    pub cols: usize,
    pub support_tol: f64,
    pub l1_nnz: usize,
    pub ls_nnz: usize,
    pub l1_objective: f64,
    pub l1_rel_error: f64,
    pub ls_rel_error: f64,
    pub lp_iterations: usize,
    pub wall_ms: f64,
}

pub fn level_experiment(problem: &ProblemSpec, level: u32, support_tol: f64) -> Result<LevelExperiment, IrbpError> {
    let t0 = Instant::now();
    let asm = |source| IrbpError::Assembly { step: 1, source };
    let family = problem.family;
    let rows = IndexSet::level(family, level, Role::RHat);
    let cols = IndexSet::levels(family, 1, level, Role::C);
    let blk = assemble_block(&rows, &cols).map_err(asm)?;
    let b = assemble_load(problem, &rows).map_err(asm)?.values;
    let a = blk.to_csc();
    let sol = basis_pursuit_with(&a, &b, LpOptions::default()).map_err(|source| IrbpError::LpInput { step: 1, source })?;
    if sol.status != LpStatus::Optimal {
        return Err(IrbpError::Lp {
            step: 1,
            status: sol.status,
        });
    }
    let ls = least_squares(&blk.to_dense(), &b);
    let grid = default_grid(family);
    let err = |x: &[f64]| {
        let e = Expansion::new(cols.as_slice(), x);
        relative_l2_error(|p| e.eval(p), |p| problem.exact(p), family, grid)
    };
    Ok(LevelExperiment {
        problem: problem.name.clone(),
        level,
        rows: rows.len(),
        cols: cols.len(),
        support_tol,
        l1_nnz: support_size(&sol.solution, support_tol),
        ls_nnz: support_size(&ls, support_tol),
        l1_objective: sol.objective,
        l1_rel_error: err(&sol.solution),
        ls_rel_error: err(&ls),
        lp_iterations: sol.iterations,
        wall_ms: t0.elapsed().as_secs_f64() * 1e3,
    })
}

/// Timing of basis pursuit on the full step to one level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub level: u32,
    pub m: usize,
    pub n: usize,
    pub time_ms: f64,
    pub z_nnz: usize,
}

/// Assembles `[A21 A22]` and the load at `level`, then times the LP alone.
pub fn bench_level(problem: &ProblemSpec, level: u32, support_tol: f64) -> Result<BenchRow, IrbpError> {
    let asm = |source| IrbpError::Assembly { step: 1, source };
    let family = problem.family;
    let rows = IndexSet::level(family, level, Role::RHat);
    let cols = IndexSet::levels(family, 1, level, Role::C);
    let a = assemble_block(&rows, &cols).map_err(asm)?.to_csc();
    let b = assemble_load(problem, &rows).map_err(asm)?.values;
    let t0 = Instant::now();
    let sol = basis_pursuit_with(&a, &b, LpOptions::default()).map_err(|source| IrbpError::LpInput { step: 1, source })?;
    let time_ms = t0.elapsed().as_secs_f64() * 1e3;
    if sol.status != LpStatus::Optimal {
        return Err(IrbpError::Lp {
            step: 1,
            status: sol.status,
        });
    }
    Ok(BenchRow {
        level,
        m: a.nrows(),
        n: a.ncols(),
        time_ms,
        z_nnz: support_size(&sol.solution, support_tol),
    })
}

/// Least-squares slope of `log(time)` against `log(n)`.
pub fn loglog_slope(rows: &[BenchRow]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.time_ms > 0.0)
        .map(|r| ((r.n as f64).ln(), r.time_ms.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let k = pts.len() as f64;
    let (mx, my) = (pts.iter().map(|p| p.0).sum::<f64>() / k, pts.iter().map(|p| p.1).sum::<f64>() / k);
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}
