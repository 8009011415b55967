//! Hierarchical hat-function dictionaries and their refinement relation.
//!
//! Two families are provided:
//!
//! * [`Family::Hat1D`]: piecewise-linear hats on `(-1, 1)`. Level `k` holds
//!   `2^k - 1` hats of half-width `2^(1-k)`, scaled by `2^(-k/2)` so that every
//!   stiffness diagonal equals one.
//! * [`Family::Hat2D`]: six-triangle P1 hats on the unit square. Level `j`
//!   holds `(2^j - 1)^2` hats centred on the lattice `2^(-j) * (p, q)`, scaled
//!   by `1/2`.
//!
//! Every level is a complete nodal basis of its own mesh, and the union of all
//! levels is a redundant generating system. The refinement map sends a hat to
//! the hats of the next level that live on its support.

use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::fmt;
use thiserror::Error;

/// Highest level for which dense indices still fit comfortably in a `u64`.
const HARD_MAX_LEVEL: u32 = 30;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DictionaryError {
    #[error("level {level} is outside 1..={max} for {family:?}")]
    InvalidLevel { family: Family, level: u32, max: u32 },
    #[error("position ({p}, {q}) is not a node of level {level} for {family:?}")]
    InvalidPosition {
        family: Family,
        level: u32,
        p: u32,
        q: u32,
    },
    #[error("point {point:?} lies outside the {family:?} domain")]
    OutsideDomain { family: Family, point: Vec<f64> },
    #[error("{id} is at the maximum refinement level {max_level}")]
    Capacity { id: BasisId, max_level: u32 },
    #[error("{got:?} basis function used where {expected:?} was required")]
    FamilyMismatch { expected: Family, got: Family },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Family {
    Hat1D,
    Hat2D,
}

impl Family {
    pub fn dim(self) -> usize {
        match self {
            Family::Hat1D => 1,
            Family::Hat2D => 2,
        }
    }

    pub fn default_max_level(self) -> u32 {
        match self {
            Family::Hat1D => 20,
            Family::Hat2D => 10,
        }
    }

    /// Number of nodes per axis on `level`.
    fn nodes_per_axis(level: u32) -> u64 {
        (1u64 << level) - 1
    }

    /// Number of basis functions living on a single level.
    pub fn count_level(self, level: u32) -> u64 {
        let per_axis = Self::nodes_per_axis(level);
        match self {
            Family::Hat1D => per_axis,
            Family::Hat2D => per_axis * per_axis,
        }
    }

    /// Number of basis functions on levels `1..=level`.
    ///
    /// For the 1D family this is `2^(N+1) - (N+2)`.
    pub fn count_through(self, level: u32) -> u64 {
        match self {
            Family::Hat1D => (1u64 << (level + 1)) - (level as u64 + 2),
            Family::Hat2D => (1..=level).map(|l| self.count_level(l)).sum(),
        }
    }

    pub fn contains(self, point: &[f64]) -> bool {
        match (self, point) {
            (Family::Hat1D, [x]) => (-1.0..=1.0).contains(x),
            (Family::Hat2D, [x, y]) => (0.0..=1.0).contains(x) && (0.0..=1.0).contains(y),
            _ => false,
        }
    }

    /// Short name used in text formats.
    pub fn as_str(self) -> &'static str {
        match self {
            Family::Hat1D => "hat1d",
            Family::Hat2D => "hat2d",
        }
    }

    pub fn parse(s: &str) -> Option<Family> {
        match s {
            "hat1d" | "Hat1D" => Some(Family::Hat1D),
            "hat2d" | "Hat2D" => Some(Family::Hat2D),
            _ => None,
        }
    }
}

/// Address of one hierarchical basis function.
///
/// For the 1D family `p` is the position `l` in `1..2^k` and `q` is zero. For the
/// 2D family `(p, q)` is the lattice position of the centre.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BasisId {
    pub family: Family,
    pub level: u32,
    pub p: u32,
    pub q: u32,
}

impl BasisId {
    pub fn hat1d(level: u32, position: u32) -> Result<Self, DictionaryError> {
        Self::new(Family::Hat1D, level, position, 0)
    }

    pub fn hat2d(level: u32, p: u32, q: u32) -> Result<Self, DictionaryError> {
        Self::new(Family::Hat2D, level, p, q)
    }

    pub fn new(family: Family, level: u32, p: u32, q: u32) -> Result<Self, DictionaryError> {
        if level == 0 || level > HARD_MAX_LEVEL {
            return Err(DictionaryError::InvalidLevel {
                family,
                level,
                max: HARD_MAX_LEVEL,
            });
        }
        let n = Family::nodes_per_axis(level);
        let ok = match family {
            Family::Hat1D => q == 0 && p >= 1 && (p as u64) <= n,
            Family::Hat2D => p >= 1 && q >= 1 && (p as u64) <= n && (q as u64) <= n,
        };
        if !ok {
            return Err(DictionaryError::InvalidPosition {
                family,
                level,
                p,
                q,
            });
        }
        Ok(BasisId {
            family,
            level,
            p,
            q,
        })
    }

    /// Unchecked constructor for positions produced by lattice arithmetic.
    fn raw(family: Family, level: u32, p: u32, q: u32) -> Self {
        BasisId {
            family,
            level,
            p,
            q,
        }
    }

    /// Level-major dense index, starting at zero.
    pub fn dense_index(&self) -> u64 {
        let offset = self.family.count_through(self.level - 1);
        let within = match self.family {
            Family::Hat1D => self.p as u64 - 1,
            Family::Hat2D => {
                (self.q as u64 - 1) * Family::nodes_per_axis(self.level) + (self.p as u64 - 1)
            }
        };
        offset + within
    }

    pub fn from_dense_index(family: Family, index: u64) -> Result<Self, DictionaryError> {
        let mut level = 1;
        loop {
            if level > HARD_MAX_LEVEL {
                return Err(DictionaryError::InvalidLevel {
                    family,
                    level,
                    max: HARD_MAX_LEVEL,
                });
            }
            if index < family.count_through(level) {
                break;
            }
            level += 1;
        }
        let within = index - family.count_through(level - 1);
        match family {
            Family::Hat1D => Self::hat1d(level, within as u32 + 1),
            Family::Hat2D => {
                let n = Family::nodes_per_axis(level);
                Self::hat2d(level, (within % n) as u32 + 1, (within / n) as u32 + 1)
            }
        }
    }

    /// Mesh width of the level this function lives on.
    ///
    /// 1D hats have half-width `2^(1-k)` on `(-1, 1)`; 2D hats have half-width
    /// `2^(-j)` on the unit square.
    pub fn half_width(&self) -> f64 {
        match self.family {
            Family::Hat1D => 2f64.powi(1 - self.level as i32),
            Family::Hat2D => 2f64.powi(-(self.level as i32)),
        }
    }

    pub fn center(&self) -> [f64; 2] {
        let h = self.half_width();
        match self.family {
            Family::Hat1D => [-1.0 + self.p as f64 * h, 0.0],
            Family::Hat2D => [self.p as f64 * h, self.q as f64 * h],
        }
    }

    /// Peak value of the scaled hat.
    pub fn peak(&self) -> f64 {
        match self.family {
            Family::Hat1D => 2f64.powf(-(self.level as f64) / 2.0),
            Family::Hat2D => 0.5,
        }
    }

    /// Axis-aligned bounding box of the support, `[xmin, xmax, ymin, ymax]`.
    pub fn support_box(&self) -> [f64; 4] {
        let h = self.half_width();
        let c = self.center();
        match self.family {
            Family::Hat1D => [c[0] - h, c[0] + h, 0.0, 0.0],
            Family::Hat2D => [c[0] - h, c[0] + h, c[1] - h, c[1] + h],
        }
    }
}

impl Ord for BasisId {
    fn cmp(&self, other: &Self) -> Ordering {
        self.family
            .cmp(&other.family)
            .then(self.level.cmp(&other.level))
            .then(self.q.cmp(&other.q))
            .then(self.p.cmp(&other.p))
    }
}

impl PartialOrd for BasisId {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for BasisId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.family {
            Family::Hat1D => write!(f, "Hat1D({}, {})", self.level, self.p),
            Family::Hat2D => write!(f, "Hat2D({}, ({}, {}))", self.level, self.p, self.q),
        }
    }
}

/// Local coordinates of the six linear pieces of a 2D hat, as the gradient
/// `(dX, dY)` of `1 + dX*X + dY*Y` with `X = (x-a)/h`, `Y = (y-b)/h`.
pub(crate) const HAT2D_PIECES: [(f64, f64); 6] = [
    (1.0, 0.0),
    (1.0, -1.0),
    (0.0, -1.0),
    (-1.0, 0.0),
    (-1.0, 1.0),
    (0.0, 1.0),
];

/// Vertices (in local units) of the six triangles matching [`HAT2D_PIECES`].
pub(crate) const HAT2D_TRIANGLES: [[(f64, f64); 3]; 6] = [
    [(0.0, 0.0), (-1.0, 0.0), (-1.0, -1.0)],
    [(0.0, 0.0), (-1.0, 0.0), (0.0, 1.0)],
    [(0.0, 0.0), (0.0, 1.0), (1.0, 1.0)],
    [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0)],
    [(0.0, 0.0), (1.0, 0.0), (0.0, -1.0)],
    [(0.0, 0.0), (0.0, -1.0), (-1.0, -1.0)],
];

/// Index of the active linear piece at local coordinates `(x, y)`, or `None`
/// outside the open support. The hat is concave on its support, so the active
/// piece is the smallest one.
pub(crate) fn hat2d_piece(x: f64, y: f64) -> Option<usize> {
    let mut best = 0;
    let mut best_val = f64::INFINITY;
    for (i, (dx, dy)) in HAT2D_PIECES.iter().enumerate() {
        let v = 1.0 + dx * x + dy * y;
        if v < best_val {
            best_val = v;
            best = i;
        }
    }
    (best_val > 0.0).then_some(best)
}

/// Evaluates `id` at `point`, including the level scaling.
pub fn eval_basis(id: &BasisId, point: &[f64]) -> Result<f64, DictionaryError> {
    if point.len() != id.family.dim() || !id.family.contains(point) {
        return Err(DictionaryError::OutsideDomain {
            family: id.family,
            point: point.to_vec(),
        });
    }
    Ok(eval_unchecked(id, point))
}

pub(crate) fn eval_unchecked(id: &BasisId, point: &[f64]) -> f64 {
    match id.family {
        Family::Hat1D => {
            let t = 2f64.powi(id.level as i32 - 1) * (point[0] + 1.0) - id.p as f64;
            id.peak() * (1.0 - t.abs()).max(0.0)
        }
        Family::Hat2D => {
            let h = id.half_width();
            let c = id.center();
            let x = (point[0] - c[0]) / h;
            let y = (point[1] - c[1]) / h;
            let v = HAT2D_PIECES
                .iter()
                .map(|(dx, dy)| 1.0 + dx * x + dy * y)
                .fold(f64::INFINITY, f64::min);
            0.5 * v.max(0.0)
        }
    }
}

/// Role of an index set inside the refinement loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    /// One generation of the full refinement sequence.
    T,
    /// Union of generations.
    S,
    /// Selected columns.
    C,
    /// Selected rows.
    R,
    /// Refined column candidates.
    CHat,
    /// Refined row candidates.
    RHat,
}

/// Sorted, duplicate-free set of basis functions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexSet {
    role: Role,
    ids: Vec<BasisId>,
}

impl IndexSet {
    pub fn new(role: Role, ids: impl IntoIterator<Item = BasisId>) -> Self {
        let mut ids: Vec<BasisId> = ids.into_iter().collect();
        ids.sort_unstable();
        ids.dedup();
        IndexSet { role, ids }
    }

    pub fn empty(role: Role) -> Self {
        IndexSet {
            role,
            ids: Vec::new(),
        }
    }

    /// All functions of one level.
    pub fn level(family: Family, level: u32, role: Role) -> Self {
        let n = Family::nodes_per_axis(level) as u32;
        let ids: Vec<BasisId> = match family {
            Family::Hat1D => (1..=n).map(|p| BasisId::raw(family, level, p, 0)).collect(),
            Family::Hat2D => (1..=n)
                .flat_map(|q| (1..=n).map(move |p| BasisId::raw(family, level, p, q)))
                .collect(),
        };
        IndexSet { role, ids }
    }

    /// All functions on levels `first..=last`.
    pub fn levels(family: Family, first: u32, last: u32, role: Role) -> Self {
        let ids = (first..=last)
            .flat_map(|l| IndexSet::level(family, l, role).ids)
            .collect();
        IndexSet { role, ids }
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn with_role(mut self, role: Role) -> Self {
        self.role = role;
        self
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn as_slice(&self) -> &[BasisId] {
        &self.ids
    }

    pub fn iter(&self) -> std::slice::Iter<'_, BasisId> {
        self.ids.iter()
    }

    pub fn contains(&self, id: &BasisId) -> bool {
        self.ids.binary_search(id).is_ok()
    }

    pub fn position(&self, id: &BasisId) -> Option<usize> {
        self.ids.binary_search(id).ok()
    }

    pub fn union(&self, other: &IndexSet) -> IndexSet {
        IndexSet::new(self.role, self.ids.iter().chain(other.ids.iter()).copied())
    }

    pub fn difference(&self, other: &IndexSet) -> IndexSet {
        IndexSet {
            role: self.role,
            ids: self
                .ids
                .iter()
                .filter(|id| !other.contains(id))
                .copied()
                .collect(),
        }
    }

    pub fn intersection(&self, other: &IndexSet) -> IndexSet {
        IndexSet {
            role: self.role,
            ids: self
                .ids
                .iter()
                .filter(|id| other.contains(id))
                .copied()
                .collect(),
        }
    }

    pub fn is_subset(&self, other: &IndexSet) -> bool {
        self.ids.iter().all(|id| other.contains(id))
    }

    pub fn max_level(&self) -> Option<u32> {
        self.ids.iter().map(|id| id.level).max()
    }
}

impl<'a> IntoIterator for &'a IndexSet {
    type Item = &'a BasisId;
    type IntoIter = std::slice::Iter<'a, BasisId>;

    fn into_iter(self) -> Self::IntoIter {
        self.ids.iter()
    }
}

/// Parent/child structure of a dictionary.
///
/// Children are generated from lattice arithmetic rather than stored, so the
/// tree is cheap to build for any depth.
///
/// * 1D: the children of `(k, l)` are `(k+1, 2l-1)`, `(k+1, 2l)`, `(k+1, 2l+1)`.
/// * 2D: the children of a level-`j` hat are the level-`j+1` nodes whose centre
///   lies in the closed square `[a-h, a+h] x [b-h, b+h]`.
///
/// Child sets of neighbouring parents overlap in both families; a child keeps
/// every parent that generates it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefinementTree {
    pub family: Family,
    pub max_level: u32,
}

impl RefinementTree {
    pub fn new(family: Family) -> Self {
        RefinementTree {
            family,
            max_level: family.default_max_level(),
        }
    }

    pub fn with_max_level(family: Family, max_level: u32) -> Self {
        RefinementTree {
            family,
            max_level: max_level.min(HARD_MAX_LEVEL),
        }
    }

    fn check(&self, id: &BasisId) -> Result<(), DictionaryError> {
        if id.family != self.family {
            return Err(DictionaryError::FamilyMismatch {
                expected: self.family,
                got: id.family,
            });
        }
        if id.level > self.max_level {
            return Err(DictionaryError::InvalidLevel {
                family: self.family,
                level: id.level,
                max: self.max_level,
            });
        }
        Ok(())
    }

    /// The set `Ref(id)`.
    pub fn children(&self, id: &BasisId) -> Result<Vec<BasisId>, DictionaryError> {
        self.check(id)?;
        if id.level >= self.max_level {
            return Err(DictionaryError::Capacity {
                id: *id,
                max_level: self.max_level,
            });
        }
        let level = id.level + 1;
        Ok(match self.family {
            Family::Hat1D => (2 * id.p - 1..=2 * id.p + 1)
                .map(|p| BasisId::raw(Family::Hat1D, level, p, 0))
                .collect(),
            Family::Hat2D => {
                let n = Family::nodes_per_axis(level) as i64;
                let range = |c: u32| {
                    let c = 2 * c as i64;
                    (c - 2).max(1)..=(c + 2).min(n)
                };
                let mut out = Vec::with_capacity(25);
                for q in range(id.q) {
                    for p in range(id.p) {
                        out.push(BasisId::raw(Family::Hat2D, level, p as u32, q as u32));
                    }
                }
                out
            }
        })
    }

    /// All functions on the previous level whose refinement contains `id`.
    pub fn parents(&self, id: &BasisId) -> Result<Vec<BasisId>, DictionaryError> {
        self.check(id)?;
        if id.level == 1 {
            return Ok(Vec::new());
        }
        let level = id.level - 1;
        let n = Family::nodes_per_axis(level) as i64;
        // parent position c satisfies |child - 2c| <= reach
        let range = |child: u32, reach: i64| {
            let child = child as i64;
            let lo = (child - reach + 1).div_euclid(2).max(1);
            let hi = (child + reach).div_euclid(2).min(n);
            lo..=hi
        };
        Ok(match self.family {
            Family::Hat1D => range(id.p, 1)
                .map(|p| BasisId::raw(Family::Hat1D, level, p as u32, 0))
                .collect(),
            Family::Hat2D => {
                let mut out = Vec::new();
                for q in range(id.q, 2) {
                    for p in range(id.p, 2) {
                        out.push(BasisId::raw(Family::Hat2D, level, p as u32, q as u32));
                    }
                }
                out
            }
        })
    }
}

/// `Ref(S)`: union of the children of every member of `ids`.
pub fn refine(ids: &IndexSet, tree: &RefinementTree) -> Result<IndexSet, DictionaryError> {
    let mut out = Vec::with_capacity(ids.len() * 3);
    for id in ids {
        out.extend(tree.children(id)?);
    }
    Ok(IndexSet::new(Role::T, out))
}

/// Every ancestor of `id` (all parent chains up to level 1).
pub fn tree_closure(
    id: &BasisId,
    tree: &RefinementTree,
    include_self: bool,
) -> Result<IndexSet, DictionaryError> {
    let mut out = Vec::new();
    if include_self {
        out.push(*id);
    }
    let mut frontier = vec![*id];
    while !frontier.is_empty() {
        let mut next = Vec::new();
        for node in &frontier {
            next.extend(tree.parents(node)?);
        }
        next.sort_unstable();
        next.dedup();
        out.extend(next.iter().copied());
        frontier = next;
    }
    Ok(IndexSet::new(Role::T, out))
}
