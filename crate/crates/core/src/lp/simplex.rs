//! Bounded-variable revised primal simplex.
//!
//! Solves `min cᵀx  s.t.  A x = b,  l ≤ x ≤ u` where bounds may be infinite.
//! One artificial column `±e_i` per row is kept implicitly; artificials carry
//! the phase-one objective and are fixed at zero afterwards, so they also
//! absorb dependent rows without any explicit row removal.
//!
//! Pricing is Dantzig's rule; the ratio test is Harris's two-pass test. After
//! a run of degenerate pivots the solver switches to Bland's rule until it
//! makes progress again.

use super::lu::SparseLu;
use super::LpStatus;
use nalgebra_sparse::CscMatrix;

const NONE: usize = usize::MAX;

#[derive(Debug, Clone)]
pub struct LpProblem {
    pub a: CscMatrix<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct SimplexOptions {
    /// Primal feasibility tolerance.
    pub feas_tol: f64,
    /// Reduced-cost tolerance.
    pub opt_tol: f64,
    pub max_iter: usize,
    pub refactor_every: usize,
    /// Consecutive degenerate pivots before switching to Bland's rule.
    pub bland_after: usize,
}

impl SimplexOptions {
    pub fn for_size(m: usize, n: usize) -> Self {
        SimplexOptions {
            feas_tol: 1e-9,
            opt_tol: 1e-9,
            max_iter: 50 * (m + n),
            refactor_every: 100,
            bland_after: 50,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimplexOutcome {
    pub x: Vec<f64>,
    pub status: LpStatus,
    pub iterations: usize,
    pub objective: f64,
    /// Structural variables in the final basis.
    pub basis: Vec<usize>,
    /// Rows whose artificial stayed basic (dependent constraints).
    pub dependent_rows: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum State {
    Basic,
    Lower,
    Upper,
    Free,
}

struct Solver<'p> {
    p: &'p LpProblem,
    m: usize,
    n: usize,
    opts: SimplexOptions,
    art_rows: Vec<usize>,
    art_sign: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    cost: Vec<f64>,
    x: Vec<f64>,
    state: Vec<State>,
    basis: Vec<usize>,
    row_count: Vec<usize>,
    lu: Option<SparseLu>,
    iterations: usize,
}

/// Runs the simplex from a crash basis.
///
/// `crash` lists structural columns to try first. `mirror`, if given, maps a
/// column to one whose coefficients are its exact negation; basic columns that
/// start out negative are swapped for their mirror.
pub fn solve(
    p: &LpProblem,
    crash: &[usize],
    mirror: Option<&dyn Fn(usize) -> usize>,
    opts: SimplexOptions,
) -> SimplexOutcome {
    let mut s = Solver::new(p, opts);
    s.crash(crash, mirror);
    let status = s.run();
    s.outcome(status)
}

impl<'p> Solver<'p> {
    fn new(p: &'p LpProblem, opts: SimplexOptions) -> Self {
        let m = p.a.nrows();
        let n = p.a.ncols();
        let total = n + m;
        let mut lower = p.lower.clone();
        let mut upper = p.upper.clone();
        lower.extend(std::iter::repeat(0.0).take(m));
        upper.extend(std::iter::repeat(0.0).take(m));
        let mut row_count = vec![0; m];
        for &i in p.a.row_indices() {
            row_count[i] += 1;
        }
        let mut state = Vec::with_capacity(total);
        let mut x = Vec::with_capacity(total);
        for j in 0..total {
            let (l, u) = (lower[j], upper[j]);
            if l.is_finite() {
                state.push(State::Lower);
                x.push(l);
            } else if u.is_finite() {
                state.push(State::Upper);
                x.push(u);
            } else {
                state.push(State::Free);
                x.push(0.0);
            }
        }
        Solver {
            p,
            m,
            n,
            opts,
            art_rows: (0..m).collect(),
            art_sign: vec![1.0; m],
            lower,
            upper,
            cost: vec![0.0; total],
            x,
            state,
            basis: Vec::new(),
            row_count,
            lu: None,
            iterations: 0,
        }
    }

    fn column(&self, j: usize) -> (&[usize], &[f64]) {
        if j < self.n {
            let off = self.p.a.col_offsets();
            let r = off[j]..off[j + 1];
            (&self.p.a.row_indices()[r.clone()], &self.p.a.values()[r])
        } else {
            let i = j - self.n;
            (&self.art_rows[i..i + 1], &self.art_sign[i..i + 1])
        }
    }

    fn dot_column(&self, j: usize, y: &[f64]) -> f64 {
        let (idx, val) = self.column(j);
        idx.iter().zip(val).map(|(&i, &v)| v * y[i]).sum()
    }

    /// Picks an initial basis: crash columns first, artificials for the rest.
    fn crash(&mut self, crash: &[usize], mirror: Option<&dyn Fn(usize) -> usize>) {
        let mut order: Vec<usize> = crash.to_vec();
        order.extend(self.n..self.n + self.m);
        let outcome = SparseLu::factor(self.m, &order, |j| self.column(j), &self.row_count);
        self.basis = outcome.lu.col_of_step.clone();
        for &j in &self.basis {
            self.state[j] = State::Basic;
        }
        self.refactor();
        self.compute_basic_values();
        if let Some(mirror) = mirror {
            let mut swapped = false;
            for slot in 0..self.m {
                let j = self.basis[slot];
                if j < self.n && self.x[j] < 0.0 {
                    let k = mirror(j);
                    self.reset_nonbasic(j);
                    self.state[k] = State::Basic;
                    self.basis[slot] = k;
                    swapped = true;
                }
            }
            if swapped {
                self.refactor();
                self.compute_basic_values();
            }
        }
    }

    fn reset_nonbasic(&mut self, j: usize) {
        let (l, u) = (self.lower[j], self.upper[j]);
        let (st, v) = if l.is_finite() {
            (State::Lower, l)
        } else if u.is_finite() {
            (State::Upper, u)
        } else {
            (State::Free, 0.0)
        };
        self.state[j] = st;
        self.x[j] = v;
    }

    /// Factorizes the current basis, replacing dependent columns by artificials.
    fn refactor(&mut self) {
        loop {
            let mut order: Vec<usize> = (0..self.m).collect();
            order.sort_by_key(|&s| self.column(self.basis[s]).0.len());
            let basis = &self.basis;
            let outcome = SparseLu::factor(self.m, &order, |s| self.column(basis[s]), &self.row_count);
            if outcome.rejected.is_empty() {
                self.lu = Some(outcome.lu);
                return;
            }
            log::debug!("singular basis: repairing {} columns", outcome.rejected.len());
            let rows = outcome.lu.unpivoted_rows();
            for (&slot, &row) in outcome.rejected.iter().zip(&rows) {
                let old = self.basis[slot];
                self.reset_nonbasic(old);
                let art = self.n + row;
                self.state[art] = State::Basic;
                self.basis[slot] = art;
            }
        }
    }

    fn lu(&self) -> &SparseLu {
        self.lu.as_ref().expect("basis factorized")
    }

    fn compute_basic_values(&mut self) {
        let mut r = self.p.b.clone();
        for j in 0..self.n + self.m {
            if self.state[j] != State::Basic && self.x[j] != 0.0 {
                let xj = self.x[j];
                let (idx, val) = self.column(j);
                for (&i, &v) in idx.iter().zip(val) {
                    r[i] -= v * xj;
                }
            }
        }
        self.lu().ftran(&mut r);
        for slot in 0..self.m {
            self.x[self.basis[slot]] = r[slot];
        }
    }

    fn max_infeasibility(&self) -> f64 {
        self.basis
            .iter()
            .map(|&j| (self.lower[j] - self.x[j]).max(self.x[j] - self.upper[j]).max(0.0))
            .fold(0.0, f64::max)
    }

    fn feas_scale(&self) -> f64 {
        self.opts.feas_tol * (1.0 + self.p.b.iter().fold(0.0f64, |m, v| m.max(v.abs())))
    }

    fn run(&mut self) -> LpStatus {
        for _round in 0..4 {
            if self.max_infeasibility() > self.feas_scale() {
                match self.phase_one() {
                    LpStatus::Optimal => {}
                    other => return other,
                }
            }
            self.cost[..self.n].copy_from_slice(&self.p.c);
            for j in self.n..self.n + self.m {
                self.cost[j] = 0.0;
            }
            let status = self.iterate();
            if status != LpStatus::Optimal || self.max_infeasibility() <= self.feas_scale() {
                return status;
            }
            log::debug!("lost feasibility after refactorization, restarting phase one");
        }
        LpStatus::Optimal
    }

    /// Minimizes the sum of artificials, with structural bounds enforced.
    fn phase_one(&mut self) -> LpStatus {
        // orient each basic artificial so its value is nonnegative
        let mut flipped = false;
        for slot in 0..self.m {
            let j = self.basis[slot];
            if j >= self.n && self.x[j] < 0.0 {
                self.art_sign[j - self.n] = -self.art_sign[j - self.n];
                flipped = true;
            }
        }
        if flipped {
            self.refactor();
            self.compute_basic_values();
        }
        if self.basis.iter().any(|&j| {
            j < self.n && (self.x[j] < self.lower[j] - self.feas_scale() || self.x[j] > self.upper[j] + self.feas_scale())
        }) {
            // structural basics out of bounds: restart from the artificial basis
            for j in self.basis.clone() {
                self.reset_nonbasic(j);
            }
            self.basis = (self.n..self.n + self.m).collect();
            for &j in &self.basis {
                self.state[j] = State::Basic;
            }
            let mut r = self.p.b.clone();
            for j in 0..self.n {
                if self.x[j] != 0.0 {
                    let xj = self.x[j];
                    let (idx, val) = self.column(j);
                    for (&i, &v) in idx.iter().zip(val) {
                        r[i] -= v * xj;
                    }
                }
            }
            for i in 0..self.m {
                self.art_sign[i] = if r[i] < 0.0 { -1.0 } else { 1.0 };
            }
            self.refactor();
            self.compute_basic_values();
        }
        for j in self.n..self.n + self.m {
            self.upper[j] = f64::INFINITY;
            self.cost[j] = 1.0;
        }
        for j in 0..self.n {
            self.cost[j] = 0.0;
        }
        let status = self.iterate();
        let infeas: f64 = (self.n..self.n + self.m).map(|j| self.x[j].abs()).sum();
        for j in self.n..self.n + self.m {
            self.upper[j] = 0.0;
            if self.state[j] != State::Basic {
                self.state[j] = State::Lower;
                self.x[j] = 0.0;
            }
        }
        match status {
            LpStatus::Optimal if infeas <= self.feas_scale() * (1 + self.m) as f64 => LpStatus::Optimal,
            LpStatus::Optimal => LpStatus::Infeasible,
            other => other,
        }
    }

    fn iterate(&mut self) -> LpStatus {
        let m = self.m;
        let total = self.n + self.m;
        let mut degenerate = 0usize;
        let mut bland = false;
        let mut fresh = false;
        let mut y = vec![0.0; m];
        let mut alpha = vec![0.0; m];
        loop {
            if self.iterations >= self.opts.max_iter {
                return LpStatus::IterLimit;
            }
            let lu = self.lu();
            if lu.eta_count() >= self.opts.refactor_every || lu.eta_nnz() > 2 * lu.factor_nnz() + 4 * m {
                self.refactor();
                self.compute_basic_values();
                fresh = true;
            }
            for slot in 0..m {
                y[slot] = self.cost[self.basis[slot]];
            }
            self.lu().btran(&mut y);

            // pricing
            let tol = self.opts.opt_tol;
            let mut enter = NONE;
            let mut best = 0.0;
            let mut dir = 0.0;
            for j in 0..total {
                let st = self.state[j];
                if st == State::Basic || (self.lower[j] == self.upper[j]) {
                    continue;
                }
                let d = self.cost[j] - self.dot_column(j, &y);
                let (ok, s) = match st {
                    State::Lower => (d < -tol, 1.0),
                    State::Upper => (d > tol, -1.0),
                    State::Free => (d.abs() > tol, if d < 0.0 { 1.0 } else { -1.0 }),
                    State::Basic => unreachable!(),
                };
                if !ok {
                    continue;
                }
                if bland {
                    enter = j;
                    dir = s;
                    break;
                }
                if d.abs() > best {
                    best = d.abs();
                    enter = j;
                    dir = s;
                }
            }
            if enter == NONE {
                if fresh || self.lu().eta_count() == 0 {
                    return LpStatus::Optimal;
                }
                self.refactor();
                self.compute_basic_values();
                fresh = true;
                continue;
            }

            alpha.iter_mut().for_each(|a| *a = 0.0);
            {
                let (idx, val) = self.column(enter);
                for (&i, &v) in idx.iter().zip(val) {
                    alpha[i] = v;
                }
            }
            self.lu().ftran(&mut alpha);

            // Harris ratio test
            let amax = alpha.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let piv_tol = 1e-9 * amax.max(1.0);
            let delta = self.opts.feas_tol;
            let mut theta_max = f64::INFINITY;
            for slot in 0..m {
                let a = alpha[slot];
                if a.abs() <= piv_tol {
                    continue;
                }
                let j = self.basis[slot];
                let rate = -dir * a;
                let r = if rate < 0.0 {
                    (self.x[j] - self.lower[j] + delta) / -rate
                } else {
                    (self.upper[j] - self.x[j] + delta) / rate
                };
                theta_max = theta_max.min(r);
            }
            let span = self.upper[enter] - self.lower[enter];
            if theta_max.is_infinite() && span.is_infinite() {
                return LpStatus::Unbounded;
            }
            let mut leave = NONE;
            let mut leave_ratio = f64::INFINITY;
            let mut leave_bound = 0.0;
            let mut leave_state = State::Lower;
            let mut best_piv = 0.0;
            for slot in 0..m {
                let a = alpha[slot];
                if a.abs() <= piv_tol {
                    continue;
                }
                let j = self.basis[slot];
                let rate = -dir * a;
                let (bound, st) = if rate < 0.0 {
                    (self.lower[j], State::Lower)
                } else {
                    (self.upper[j], State::Upper)
                };
                if bound.is_infinite() {
                    continue;
                }
                let r = (bound - self.x[j]) / rate;
                if r > theta_max {
                    continue;
                }
                let better = if bland {
                    leave == NONE || r < leave_ratio - 1e-12 || (r <= leave_ratio + 1e-12 && j < self.basis[leave])
                } else {
                    a.abs() > best_piv
                };
                if better {
                    leave = slot;
                    leave_ratio = r;
                    leave_bound = bound;
                    leave_state = st;
                    best_piv = a.abs();
                }
            }
            self.iterations += 1;
            fresh = false;
            let theta;
            if span <= leave_ratio.max(0.0) || leave == NONE {
                // bound flip of the entering variable
                theta = span;
                for slot in 0..m {
                    self.x[self.basis[slot]] -= dir * theta * alpha[slot];
                }
                if dir > 0.0 {
                    self.x[enter] = self.upper[enter];
                    self.state[enter] = State::Upper;
                } else {
                    self.x[enter] = self.lower[enter];
                    self.state[enter] = State::Lower;
                }
            } else {
                theta = leave_ratio.max(0.0);
                for slot in 0..m {
                    self.x[self.basis[slot]] -= dir * theta * alpha[slot];
                }
                self.x[enter] += dir * theta;
                let out = self.basis[leave];
                self.x[out] = leave_bound;
                self.state[out] = if self.lower[out] == self.upper[out] {
                    State::Lower
                } else {
                    leave_state
                };
                self.state[enter] = State::Basic;
                self.basis[leave] = enter;
                self.lu.as_mut().expect("basis factorized").push_eta(leave, &alpha);
            }
            if theta <= 1e-12 {
                degenerate += 1;
                if degenerate >= self.opts.bland_after {
                    bland = true;
                }
            } else {
                degenerate = 0;
                bland = false;
            }
        }
    }

    fn outcome(&self, status: LpStatus) -> SimplexOutcome {
        let x: Vec<f64> = self.x[..self.n].to_vec();
        let objective = x.iter().zip(&self.p.c).map(|(a, b)| a * b).sum();
        SimplexOutcome {
            x,
            status,
            iterations: self.iterations,
            objective,
            basis: self.basis.iter().copied().filter(|&j| j < self.n).collect(),
            dependent_rows: self
                .basis
                .iter()
                .filter(|&&j| j >= self.n)
                .map(|&j| j - self.n)
                .collect(),
        }
    }
}
