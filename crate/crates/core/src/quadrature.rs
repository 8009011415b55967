//! Composite Gauss–Legendre quadrature with dyadic refinement on intervals
//! and triangles.

use std::sync::OnceLock;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("quadrature did not converge after {depth} subdivisions (achieved {achieved:.3e}, wanted {wanted:.3e})")]
pub struct IntegrationError {
    pub depth: u32,
    pub achieved: f64,
    pub wanted: f64,
}

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..(n + 1) / 2 {
        // Chebyshev-like initial guess, then Newton on P_n
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// `P_n(x)` and `P_n'(x)` by the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

fn gl7() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(7))
}

/// Stopping rule shared by the interval and triangle integrators.
#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    pub rel: f64,
    pub max_depth: u32,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance {
            rel: 1e-10,
            max_depth: 40,
        }
    }
}

fn gl7_interval(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let (x, w) = gl7();
    let (m, r) = (0.5 * (a + b), 0.5 * (b - a));
    r * x.iter().zip(w).map(|(xi, wi)| wi * f(m + r * xi)).sum::<f64>()
}

/// Integrates `f` over `[a, b]`.
///
/// Each cell is halved until the one-cell and two-cell estimates agree to
/// `rel * (1 + |Q|)`, with the allowance split proportionally to cell length.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: Tolerance) -> Result<f64, IntegrationError> {
    if a == b {
        return Ok(0.0);
    }
    let coarse = gl7_interval(&f, a, b);
    let budget = tol.rel * (1.0 + coarse.abs());
    interval_rec(&f, a, b, coarse, budget / (b - a).abs(), 0, tol.max_depth)
}

fn interval_rec(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    whole: f64,
    density: f64,
    depth: u32,
    max_depth: u32,
) -> Result<f64, IntegrationError> {
    let m = 0.5 * (a + b);
    let left = gl7_interval(f, a, m);
    let right = gl7_interval(f, m, b);
    let fine = left + right;
    let err = (fine - whole).abs();
    let wanted = density * (b - a).abs();
    if err <= wanted {
        return Ok(fine);
    }
    if depth >= max_depth {
        return Err(IntegrationError {
            depth,
            achieved: err,
            wanted,
        });
    }
    Ok(interval_rec(f, a, m, left, density, depth + 1, max_depth)?
        + interval_rec(f, m, b, right, density, depth + 1, max_depth)?)
}

type Pt = (f64, f64);

fn tri_area(v: &[Pt; 3]) -> f64 {
    0.5 * ((v[1].0 - v[0].0) * (v[2].1 - v[0].1) - (v[2].0 - v[0].0) * (v[1].1 - v[0].1)).abs()
}

/// Collapsed (Duffy) 7x7 Gauss–Legendre rule on a triangle.
fn gl7_triangle(f: &impl Fn(f64, f64) -> f64, v: &[Pt; 3]) -> f64 {
    let (x, w) = gl7();
    let area2 = 2.0 * tri_area(v);
    let mut sum = 0.0;
    for (xi, wi) in x.iter().zip(w) {
        let u = 0.5 * (xi + 1.0);
        for (xj, wj) in x.iter().zip(w) {
            let t = 0.5 * (xj + 1.0);
            let px = v[0].0 + u * (v[1].0 - v[0].0) + u * t * (v[2].0 - v[1].0);
            let py = v[0].1 + u * (v[1].1 - v[0].1) + u * t * (v[2].1 - v[1].1);
            sum += 0.25 * wi * wj * u * f(px, py);
        }
    }
    sum * area2
}

fn split4(v: &[Pt; 3]) -> [[Pt; 3]; 4] {
    let mid = |a: Pt, b: Pt| (0.5 * (a.0 + b.0), 0.5 * (a.1 + b.1));
    let (m01, m12, m20) = (mid(v[0], v[1]), mid(v[1], v[2]), mid(v[2], v[0]));
    [
        [v[0], m01, m20],
        [m01, v[1], m12],
        [m20, m12, v[2]],
        [m01, m12, m20],
    ]
}

/// Integrates `f` over the triangle `v`, splitting into four congruent
/// children until the parent and child estimates agree.
pub fn integrate_triangle(
    f: impl Fn(f64, f64) -> f64,
    v: [Pt; 3],
    tol: Tolerance,
) -> Result<f64, IntegrationError> {
    let area = tri_area(&v);
    if area == 0.0 {
        return Ok(0.0);
    }
    let coarse = gl7_triangle(&f, &v);
    let budget = tol.rel * (1.0 + coarse.abs());
    triangle_rec(&f, &v, coarse, budget / area, 0, tol.max_depth.min(16))
}

fn triangle_rec(
    f: &impl Fn(f64, f64) -> f64,
    v: &[Pt; 3],
    whole: f64,
    density: f64,
    depth: u32,
    max_depth: u32,
) -> Result<f64, IntegrationError> {
    let kids = split4(v);
    let parts: Vec<f64> = kids.iter().map(|k| gl7_triangle(f, k)).collect();
    let fine: f64 = parts.iter().sum();
    let err = (fine - whole).abs();
    let wanted = density * tri_area(v);
    if err <= wanted {
        return Ok(fine);
    }
    if depth >= max_depth {
        return Err(IntegrationError {
            depth,
            achieved: err,
            wanted,
        });
    }
    let mut total = 0.0;
    for (k, p) in kids.iter().zip(parts) {
        total += triangle_rec(f, k, p, density, depth + 1, max_depth)?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn rule_is_exact_for_degree_13() {
        let (x, w) = gauss_legendre(7);
        assert_abs_diff_eq!(w.iter().sum::<f64>(), 2.0, epsilon = 1e-14);
        for d in 0..=13 {
            let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(d)).sum();
            let exact = if d % 2 == 1 { 0.0 } else { 2.0 / (d as f64 + 1.0) };
            assert_abs_diff_eq!(q, exact, epsilon = 1e-14);
        }
    }

    #[test]
    fn known_nodes() {
        let (x, w) = gauss_legendre(2);
        assert_abs_diff_eq!(x[1], 1.0 / 3f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(w[0], 1.0, epsilon = 1e-15);
        let (x, _) = gauss_legendre(3);
        assert_abs_diff_eq!(x[1], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(x[2], 0.6f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn adaptive_handles_steep_fronts() {
        let alpha = 100.0 * std::f64::consts::PI;
        // derivative of arctan(alpha x) integrates to the jump across the front
        let q = integrate(|x| alpha / (1.0 + (alpha * x).powi(2)), -1.0, 1.0, Tolerance::default()).unwrap();
        assert_abs_diff_eq!(q, 2.0 * alpha.atan(), epsilon = 1e-9);
    }

    #[test]
    fn non_convergence_is_reported() {
        let tol = Tolerance {
            rel: 1e-14,
            max_depth: 2,
        };
        let err = integrate(|x| (1.0 / (x + 1e-9)).sin(), 0.0, 1.0, tol).unwrap_err();
        assert!(err.achieved > err.wanted);
    }

    #[test]
    fn triangle_polynomials() {
        let v = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)];
        let q = integrate_triangle(|_, _| 1.0, v, Tolerance::default()).unwrap();
        assert_abs_diff_eq!(q, 0.5, epsilon = 1e-15);
        // int x^2 y over the unit simplex = 2! 1! / 5! = 1/60
        let q = integrate_triangle(|x, y| x * x * y, v, Tolerance::default()).unwrap();
        assert_abs_diff_eq!(q, 1.0 / 60.0, epsilon = 1e-15);
        let q = integrate_triangle(|x, y| (5.0 * x + y).exp(), [(0.0, 0.0), (1.0, 1.0), (0.0, 1.0)], Tolerance::default()).unwrap();
        // int_0^1 int_0^y e^{5x+y} dx dy = (e^6 - 1)/30 - (e - 1)/5
        let exact = ((6f64).exp() - 1.0) / 30.0 - (1f64.exp() - 1.0) / 5.0;
        assert_abs_diff_eq!(q, exact, epsilon = 1e-10 * exact);
    }
}
