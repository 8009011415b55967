//! Browser bindings: every export returns a JSON string for the page to draw.

use irbp::diagnostics::{hat1d_level_matrix, mutual_incoherence, recovery_trial, rip_constant, RipMode, RipOptions};
use irbp::dictionary::Family;
use irbp::irbp::{irbp_run, IrbpConfig};
use irbp::problems::problem_by_name;
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Serialize)]
struct Coefficient {
    level: u32,
    center: [f64; 2],
    value: f64,
}

#[derive(Serialize)]
struct SolveView {
    problem: String,
    dim: usize,
    rows: Vec<irbp::irbp::ReportRow>,
    /// Sample points per axis.
    samples: usize,
    approx: Vec<f64>,
    exact: Vec<f64>,
    coefficients: Vec<Coefficient>,
}

/// Runs the refinement loop and samples the result on a uniform grid.
pub fn solve_json(problem: &str, steps: usize, support_tol: f64) -> Result<String, String> {
    let spec = problem_by_name(problem).ok_or_else(|| format!("unknown problem {problem:?}"))?;
    let mut cfg = IrbpConfig::new(spec.clone());
    cfg.max_steps = steps;
    cfg.support_tol = support_tol;
    let (state, report) = irbp_run(&cfg).map_err(|e| e.to_string())?;
    let e = state.expansion();
    let (samples, points): (usize, Vec<Vec<f64>>) = match spec.family {
        Family::Hat1D => {
            let s = 1025;
            (s, (0..s).map(|i| vec![-1.0 + 2.0 * i as f64 / (s - 1) as f64]).collect())
        }
        Family::Hat2D => {
            let s = 65;
            let h = 1.0 / (s - 1) as f64;
            (s, (0..s * s).map(|k| vec![(k % s) as f64 * h, (k / s) as f64 * h]).collect())
        }
    };
    let coefficients = state
        .z_ids
        .iter()
        .zip(&state.z)
        .filter(|(_, v)| v.abs() > support_tol * state.z.iter().fold(1.0f64, |m, v| m.max(v.abs())))
        .map(|(id, v)| Coefficient {
            level: id.level,
            center: id.center(),
            value: *v,
        })
        .collect();
    let view = SolveView {
        problem: spec.name.clone(),
        dim: spec.family.dim(),
        rows: report.rows,
        samples,
        approx: points.iter().map(|p| e.eval(p)).collect(),
        exact: points.iter().map(|p| spec.exact(p)).collect(),
        coefficients,
    };
    serde_json::to_string(&view).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct DictionaryView {
    level: u32,
    rows: usize,
    cols: usize,
    mu: f64,
    delta: Vec<f64>,
}

/// Incoherence and `δ_1..δ_kmax` of the 1D full-step matrix at `level`.
pub fn dictionary_json(level: u32, kmax: usize) -> Result<String, String> {
    if !(2..=6).contains(&level) || !(1..=3).contains(&kmax) {
        return Err("level must be in 2..=6 and k in 1..=3".into());
    }
    let a = hat1d_level_matrix(level);
    let mu = mutual_incoherence(&a).map_err(|e| e.to_string())?.mu;
    let opts = RipOptions {
        mode: RipMode::Exhaustive,
        ..RipOptions::default()
    };
    let delta = (1..=kmax)
        .map(|k| rip_constant(&a, k, opts).map(|r| r.delta_k))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let view = DictionaryView {
        level,
        rows: a.nrows(),
        cols: a.ncols(),
        mu,
        delta,
    };
    serde_json::to_string(&view).map_err(|e| e.to_string())
}

/// One planted-sparse recovery with a Gaussian `m × n` matrix.
pub fn recover_json(m: usize, n: usize, k: usize, seed: u64) -> Result<String, String> {
    if m == 0 || n == 0 || k == 0 || k > n || m > 200 || n > 400 {
        return Err("need 0 < k <= n, m <= 200, n <= 400".into());
    }
    let (_, trial) = recovery_trial(m, n, k, 1e-6, seed, 0).map_err(|e| e.to_string())?;
    serde_json::to_string(&trial).map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn solve(problem: &str, steps: usize, support_tol: f64) -> Result<String, JsValue> {
    solve_json(problem, steps, support_tol).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn dictionary(level: u32, kmax: usize) -> Result<String, JsValue> {
    dictionary_json(level, kmax).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn recover(m: usize, n: usize, k: usize, seed: u64) -> Result<String, JsValue> {
    recover_json(m, n, k, seed).map_err(|e| JsValue::from_str(&e))
}
