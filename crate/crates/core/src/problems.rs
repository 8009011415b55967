//! Model Poisson problems `-Δu = f` with homogeneous Dirichlet data, and the
//! sampled relative error used to score approximations.

use crate::dictionary::Family;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProblemKind {
    /// `u = Σ_c atan(α(x - c)) + A x + B` on `(-1, 1)`.
    MultiArctan {
        centers: Vec<f64>,
        alpha: f64,
        slope: f64,
        offset: f64,
    },
    /// `u = c (1 - x^2) / 2` on `(-1, 1)`, so `f = c`.
    Constant1D { value: f64 },
    /// `u = 10 x y (x - 1)(y - 1)` on the unit square.
    Polynomial2D,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub name: String,
    pub family: Family,
    pub kind: ProblemKind,
}

pub const ALPHA: f64 = 100.0 * PI;

pub fn problem_1d_multi_arctan(name: &str, centers: &[f64], alpha: f64) -> ProblemSpec {
    let g = |x: f64| centers.iter().map(|c| (alpha * (x - c)).atan()).sum::<f64>();
    let (gl, gr) = (g(-1.0), g(1.0));
    ProblemSpec {
        name: name.to_string(),
        family: Family::Hat1D,
        kind: ProblemKind::MultiArctan {
            centers: centers.to_vec(),
            alpha,
            slope: -(gr - gl) / 2.0,
            offset: -(gr + gl) / 2.0,
        },
    }
}

pub fn problem_1d_constant(value: f64) -> ProblemSpec {
    ProblemSpec {
        name: "constant".to_string(),
        family: Family::Hat1D,
        kind: ProblemKind::Constant1D { value },
    }
}

pub fn problem_2d_polynomial() -> ProblemSpec {
    ProblemSpec {
        name: "poly2d".to_string(),
        family: Family::Hat2D,
        kind: ProblemKind::Polynomial2D,
    }
}

/// Four steep fronts at `-1/2, 0, 1/4, 1/2`.
pub fn arctan4() -> ProblemSpec {
    problem_1d_multi_arctan("arctan4", &[-0.5, 0.0, 0.25, 0.5], ALPHA)
}

/// Two steep fronts at `0, 1/2`.
pub fn arctan2() -> ProblemSpec {
    problem_1d_multi_arctan("arctan2", &[0.0, 0.5], ALPHA)
}

pub const PROBLEM_NAMES: [&str; 3] = ["arctan4", "arctan2", "poly2d"];

pub fn problem_by_name(name: &str) -> Option<ProblemSpec> {
    match name {
        "arctan4" => Some(arctan4()),
        "arctan2" => Some(arctan2()),
        "poly2d" => Some(problem_2d_polynomial()),
        _ => None,
    }
}

impl ProblemSpec {
    /// Right-hand side `f = -Δu`.
    pub fn rhs(&self, p: &[f64]) -> f64 {
        match &self.kind {
            ProblemKind::MultiArctan { centers, alpha, .. } => {
                let a3 = alpha * alpha * alpha;
                centers
                    .iter()
                    .map(|c| {
                        let t = p[0] - c;
                        let d = 1.0 + alpha * alpha * t * t;
                        2.0 * a3 * t / (d * d)
                    })
                    .sum()
            }
            ProblemKind::Constant1D { value } => *value,
            ProblemKind::Polynomial2D => {
                let (x, y) = (p[0], p[1]);
                -20.0 * x * (x - 1.0) - 20.0 * y * (y - 1.0)
            }
        }
    }

    pub fn exact(&self, p: &[f64]) -> f64 {
        match &self.kind {
            ProblemKind::MultiArctan {
                centers,
                alpha,
                slope,
                offset,
            } => {
                let x = p[0];
                centers.iter().map(|c| (alpha * (x - c)).atan()).sum::<f64>() + slope * x + offset
            }
            ProblemKind::Constant1D { value } => value * (1.0 - p[0] * p[0]) / 2.0,
            ProblemKind::Polynomial2D => {
                let (x, y) = (p[0], p[1]);
                10.0 * x * y * (x - 1.0) * (y - 1.0)
            }
        }
    }

    /// Points where the right-hand side changes rapidly; quadrature cells are
    /// split there first.
    pub fn breakpoints(&self) -> Vec<f64> {
        match &self.kind {
            ProblemKind::MultiArctan { centers, .. } => centers.clone(),
            _ => Vec::new(),
        }
    }
}

/// Grid size used by [`relative_l2_error`] when none is given.
pub fn default_grid(family: Family) -> usize {
    match family {
        Family::Hat1D => (1 << 12) + 1,
        Family::Hat2D => (1 << 9) + 1,
    }
}

/// `‖u_h - u‖ / ‖u‖` over the interior points of a uniform grid with
/// `grid` points per axis (boundary points, where both vanish, are skipped).
pub fn relative_l2_error(
    approx: impl Fn(&[f64]) -> f64,
    exact: impl Fn(&[f64]) -> f64,
    family: Family,
    grid: usize,
) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    let mut acc = |p: &[f64]| {
        let (a, e) = (approx(p), exact(p));
        num += (a - e) * (a - e);
        den += e * e;
    };
    let step = 1.0 / (grid - 1) as f64;
    match family {
        Family::Hat1D => {
            for i in 1..grid - 1 {
                acc(&[-1.0 + 2.0 * i as f64 * step]);
            }
        }
        Family::Hat2D => {
            for j in 1..grid - 1 {
                for i in 1..grid - 1 {
                    acc(&[i as f64 * step, j as f64 * step]);
                }
            }
        }
    }
    if den == 0.0 {
        return if num == 0.0 { 0.0 } else { f64::INFINITY };
    }
    (num / den).sqrt()
}
