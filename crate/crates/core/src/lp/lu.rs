//! Left-looking sparse LU (Gilbert–Peierls) with threshold partial pivoting,
//! plus a product-form eta file for basis updates.
//!
//! Factorizing the columns `B[:, col_of_step[k]]` in step order produces
//! `B Q = L̃ U` where `L̃` has unit entries at the pivot rows and `U` is upper
//! triangular in step coordinates. Rows keep their original numbering inside
//! `L̃`; `pivot_row` / `row_step` translate between the two.

const NONE: usize = usize::MAX;

/// Relative pivot threshold: candidates within this factor of the column's
/// largest entry are eligible, and the sparsest row among them wins.
const THRESHOLD: f64 = 0.1;

pub(crate) struct SparseLu {
    m: usize,
    l_start: Vec<usize>,
    l_idx: Vec<usize>,
    l_val: Vec<f64>,
    u_start: Vec<usize>,
    u_idx: Vec<usize>,
    u_val: Vec<f64>,
    u_diag: Vec<f64>,
    pub(crate) pivot_row: Vec<usize>,
    pub(crate) row_step: Vec<usize>,
    /// Caller's column label for each step.
    pub(crate) col_of_step: Vec<usize>,
    etas: Vec<Eta>,
    eta_nnz: usize,
}

struct Eta {
    slot: usize,
    pivot: f64,
    idx: Vec<usize>,
    val: Vec<f64>,
}

/// Work space for one factorization.
struct Workspace {
    x: Vec<f64>,
    mark: Vec<u32>,
    generation: u32,
    stack: Vec<(usize, usize)>,
    reach: Vec<usize>,
}

impl Workspace {
    fn new(m: usize) -> Self {
        Workspace {
            x: vec![0.0; m],
            mark: vec![0; m],
            generation: 0,
            stack: Vec::new(),
            reach: Vec::new(),
        }
    }
}

pub(crate) struct FactorOutcome {
    pub lu: SparseLu,
    /// Candidate labels that were rejected as numerically dependent.
    pub rejected: Vec<usize>,
}

impl SparseLu {
    /// Factorizes candidate columns in the given order, skipping any column
    /// that is dependent on those already accepted, until `m` pivots are found
    /// or the candidates are exhausted.
    ///
    /// `column(label)` yields `(row indices, values)`.
    pub(crate) fn factor<'a, F>(m: usize, order: &[usize], column: F, row_count: &[usize]) -> FactorOutcome
    where
        F: Fn(usize) -> (&'a [usize], &'a [f64]),
    {
        let mut lu = SparseLu {
            m,
            l_start: vec![0],
            l_idx: Vec::new(),
            l_val: Vec::new(),
            u_start: vec![0],
            u_idx: Vec::new(),
            u_val: Vec::new(),
            u_diag: Vec::new(),
            pivot_row: Vec::with_capacity(m),
            row_step: vec![NONE; m],
            col_of_step: Vec::with_capacity(m),
            etas: Vec::new(),
            eta_nnz: 0,
        };
        let mut ws = Workspace::new(m);
        let mut rejected = Vec::new();
        for &label in order {
            if lu.pivot_row.len() == m {
                break;
            }
            let (idx, val) = column(label);
            if !lu.push_column(idx, val, row_count, &mut ws) {
                rejected.push(label);
            } else {
                lu.col_of_step.push(label);
            }
        }
        FactorOutcome { lu, rejected }
    }

    pub(crate) fn rank(&self) -> usize {
        self.pivot_row.len()
    }

    pub(crate) fn unpivoted_rows(&self) -> Vec<usize> {
        (0..self.m).filter(|&r| self.row_step[r] == NONE).collect()
    }

    /// Rows reachable from the pattern of `idx` in the graph of `L̃`, in
    /// topological order (left in `ws.reach`).
    fn reach(&self, idx: &[usize], ws: &mut Workspace) {
        ws.generation = ws.generation.wrapping_add(1);
        if ws.generation == 0 {
            ws.mark.iter_mut().for_each(|m| *m = 0);
            ws.generation = 1;
        }
        let gen = ws.generation;
        ws.reach.clear();
        for &start in idx {
            if ws.mark[start] == gen {
                continue;
            }
            ws.mark[start] = gen;
            ws.stack.push((start, 0));
            while let Some(&(node, next)) = ws.stack.last() {
                let step = self.row_step[node];
                let children: &[usize] = if step == NONE {
                    &[]
                } else {
                    &self.l_idx[self.l_start[step]..self.l_start[step + 1]]
                };
                if next < children.len() {
                    let child = children[next];
                    if let Some(top) = ws.stack.last_mut() {
                        top.1 += 1;
                    }
                    if ws.mark[child] != gen {
                        ws.mark[child] = gen;
                        ws.stack.push((child, 0));
                    }
                } else {
                    ws.stack.pop();
                    ws.reach.push(node);
                }
            }
        }
        ws.reach.reverse();
    }

    fn push_column(&mut self, idx: &[usize], val: &[f64], row_count: &[usize], ws: &mut Workspace) -> bool {
        self.reach(idx, ws);
        let mut bmax: f64 = 0.0;
        for (&i, &v) in idx.iter().zip(val) {
            ws.x[i] += v;
            bmax = bmax.max(v.abs());
        }
        for k in 0..ws.reach.len() {
            let i = ws.reach[k];
            let step = self.row_step[i];
            if step == NONE {
                continue;
            }
            let xi = ws.x[i];
            if xi == 0.0 {
                continue;
            }
            for t in self.l_start[step]..self.l_start[step + 1] {
                ws.x[self.l_idx[t]] -= self.l_val[t] * xi;
            }
        }
        let mut amax: f64 = 0.0;
        for &i in &ws.reach {
            if self.row_step[i] == NONE {
                amax = amax.max(ws.x[i].abs());
            }
        }
        let accept = amax > 1e-11 * bmax.max(1e-300);
        if accept {
            let mut piv = NONE;
            for &i in &ws.reach {
                if self.row_step[i] != NONE || ws.x[i].abs() < THRESHOLD * amax {
                    continue;
                }
                let better = piv == NONE
                    || row_count[i] < row_count[piv]
                    || (row_count[i] == row_count[piv] && ws.x[i].abs() > ws.x[piv].abs());
                if better {
                    piv = i;
                }
            }
            let k = self.pivot_row.len();
            let d = ws.x[piv];
            for &i in &ws.reach {
                let v = ws.x[i];
                if v == 0.0 {
                    continue;
                }
                let step = self.row_step[i];
                if step != NONE {
                    self.u_idx.push(step);
                    self.u_val.push(v);
                } else if i != piv {
                    self.l_idx.push(i);
                    self.l_val.push(v / d);
                }
            }
            self.u_start.push(self.u_idx.len());
            self.l_start.push(self.l_idx.len());
            self.u_diag.push(d);
            self.row_step[piv] = k;
            self.pivot_row.push(piv);
        }
        for &i in &ws.reach {
            ws.x[i] = 0.0;
        }
        accept
    }

    /// Solves `B x = a` in place. On entry `a` is indexed by row; on exit by
    /// step-order slot of the basis the factor was built from, then mapped
    /// through the eta file. Requires a full-rank factor.
    pub(crate) fn ftran(&self, a: &mut [f64]) {
        let m = self.m;
        let mut y = vec![0.0; m];
        for p in 0..m {
            let yp = a[self.pivot_row[p]];
            y[p] = yp;
            if yp != 0.0 {
                for t in self.l_start[p]..self.l_start[p + 1] {
                    a[self.l_idx[t]] -= self.l_val[t] * yp;
                }
            }
        }
        for k in (0..m).rev() {
            let w = y[k] / self.u_diag[k];
            y[k] = w;
            if w != 0.0 {
                for t in self.u_start[k]..self.u_start[k + 1] {
                    y[self.u_idx[t]] -= self.u_val[t] * w;
                }
            }
        }
        for k in 0..m {
            a[self.col_of_step[k]] = y[k];
        }
        for eta in &self.etas {
            let xr = a[eta.slot] / eta.pivot;
            if xr != 0.0 {
                for (&i, &v) in eta.idx.iter().zip(&eta.val) {
                    a[i] -= v * xr;
                }
            }
            a[eta.slot] = xr;
        }
    }

    /// Solves `Bᵀ y = c` in place: `c` indexed by slot on entry, by row on exit.
    pub(crate) fn btran(&self, c: &mut [f64]) {
        let m = self.m;
        for eta in self.etas.iter().rev() {
            let mut s = c[eta.slot];
            for (&i, &v) in eta.idx.iter().zip(&eta.val) {
                s -= v * c[i];
            }
            c[eta.slot] = s / eta.pivot;
        }
        let mut v = vec![0.0; m];
        for k in 0..m {
            let mut s = c[self.col_of_step[k]];
            for t in self.u_start[k]..self.u_start[k + 1] {
                s -= self.u_val[t] * v[self.u_idx[t]];
            }
            v[k] = s / self.u_diag[k];
        }
        for p in (0..m).rev() {
            let mut s = v[p];
            for t in self.l_start[p]..self.l_start[p + 1] {
                s -= self.l_val[t] * c[self.l_idx[t]];
            }
            c[self.pivot_row[p]] = s;
        }
    }

    /// Records that slot `slot` now holds a column whose FTRAN image is `alpha`.
    pub(crate) fn push_eta(&mut self, slot: usize, alpha: &[f64]) {
        let mut idx = Vec::new();
        let mut val = Vec::new();
        for (i, &v) in alpha.iter().enumerate() {
            if i != slot && v != 0.0 {
                idx.push(i);
                val.push(v);
            }
        }
        self.eta_nnz += idx.len() + 1;
        self.etas.push(Eta {
            slot,
            pivot: alpha[slot],
            idx,
            val,
        });
    }

    pub(crate) fn eta_count(&self) -> usize {
        self.etas.len()
    }

    pub(crate) fn eta_nnz(&self) -> usize {
        self.eta_nnz
    }

    pub(crate) fn factor_nnz(&self) -> usize {
        self.l_idx.len() + self.u_idx.len() + self.m
    }
}
