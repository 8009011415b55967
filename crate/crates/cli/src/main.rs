use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use irbp::assembly::{assemble_load, level_system};
use irbp::diagnostics::{self, RipMode, RipOptions};
use irbp::dictionary::{Family, IndexSet, Role};
use irbp::irbp::{
    bench_level, irbp_run, level_experiment, loglog_slope, write_solution_csv, BenchRow, Fallback, IrbpConfig, IrbpError,
    DEFAULT_SUPPORT_TOL,
};
use irbp::lp::{basis_pursuit, LpStatus};
use irbp::problems::{problem_by_name, PROBLEM_NAMES};
use irbp::sparse::{load_matrix_market, load_vector, save_matrix_market, save_vector};
use serde_json::json;
use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Adaptive finite elements by iteratively refined basis pursuit.
#[derive(Parser)]
#[command(name = "irbp", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the refinement loop on a model problem.
    Solve(SolveArgs),
    /// One ℓ1 solve of the full step to a level, compared with least squares.
    Level(LevelArgs),
    /// Incoherence, isometry constants and best-k-term errors of a matrix.
    Analyze(AnalyzeArgs),
    /// Time basis pursuit on the 1D full-step matrices over a range of levels.
    Bench(BenchArgs),
    /// Basis pursuit `min ‖z‖₁ s.t. A z = b` for a MatrixMarket matrix.
    Bp(BpArgs),
    /// Write `[A21 A22]` and its load vector for one level as MatrixMarket.
    Export(ExportArgs),
    /// Exact-recovery experiment with Gaussian matrices.
    Recovery(RecoveryArgs),
}

#[derive(Args)]
struct Common {
    /// Directory for all artifacts.
    #[arg(long, default_value = "./out")]
    out_dir: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum FallbackArg {
    None,
    FullRefine,
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long, default_value = "arctan2")]
    problem: String,
    #[arg(long)]
    start_level: Option<u32>,
    #[arg(long, default_value_t = 5)]
    steps: usize,
    #[arg(long, default_value_t = 1e-6)]
    eps: f64,
    #[arg(long, default_value_t = DEFAULT_SUPPORT_TOL)]
    support_tol: f64,
    #[arg(long, value_enum, default_value = "full-refine")]
    fallback: FallbackArg,
    /// Also report the error of a Galerkin solve on the selected columns.
    #[arg(long)]
    galerkin: bool,
    #[arg(long)]
    max_level: Option<u32>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct LevelArgs {
    #[arg(long, default_value = "arctan4")]
    problem: String,
    #[arg(long, default_value_t = 8)]
    level: u32,
    #[arg(long, default_value_t = DEFAULT_SUPPORT_TOL)]
    support_tol: f64,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    matrix: PathBuf,
    #[arg(long)]
    mu: bool,
    #[arg(long)]
    rip_k: Option<usize>,
    /// Order p of σ_k(x)_p (`inf` for the max norm); needs --vector.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    vector: Option<PathBuf>,
    /// k for --sigma.
    #[arg(long, default_value_t = 1)]
    k: usize,
    /// Largest number of supports enumerated before sampling.
    #[arg(long, default_value_t = 2_000_000)]
    budget: u64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Use the raw Gram matrix instead of normalizing columns.
    #[arg(long)]
    raw: bool,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct BenchArgs {
    /// Inclusive range `a..b`.
    #[arg(long, default_value = "7..12")]
    levels: String,
    #[arg(long, default_value = "arctan4")]
    problem: String,
    #[arg(long, default_value_t = DEFAULT_SUPPORT_TOL)]
    support_tol: f64,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct BpArgs {
    #[arg(long)]
    matrix: PathBuf,
    #[arg(long)]
    rhs: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long, default_value_t = 5)]
    level: u32,
    #[arg(long, default_value = "arctan4")]
    problem: String,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct RecoveryArgs {
    #[arg(long, default_value_t = 30)]
    m: usize,
    #[arg(long, default_value_t = 60)]
    n: usize,
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, default_value_t = 200)]
    trials: usize,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[command(flatten)]
    common: Common,
}

/// Failure classes mapped to exit codes.
enum Failure {
    Usage(anyhow::Error),
    Solver(anyhow::Error),
}

type Outcome = Result<(), Failure>;

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Usage(e.into())
}

fn solver(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Solver(e.into())
}

fn main() -> ExitCode {
    env_logger::Builder::new()
        .filter_level(log::LevelFilter::Warn)
        .parse_default_env()
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Solve(a) => solve(a),
        Command::Level(a) => level(a),
        Command::Analyze(a) => analyze(a),
        Command::Bench(a) => bench(a),
        Command::Bp(a) => bp(a),
        Command::Export(a) => export(a),
        Command::Recovery(a) => recovery(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Solver(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
    }
}

fn problem(name: &str) -> Result<irbp::problems::ProblemSpec, Failure> {
    problem_by_name(name).ok_or_else(|| usage(anyhow!("unknown problem {name:?}; expected one of {PROBLEM_NAMES:?}")))
}

fn out_dir(c: &Common) -> Result<&Path, Failure> {
    fs::create_dir_all(&c.out_dir)
        .with_context(|| format!("creating {}", c.out_dir.display()))
        .map_err(solver)?;
    Ok(&c.out_dir)
}

fn write_json(path: &Path, value: &serde_json::Value) -> Outcome {
    let text = serde_json::to_string_pretty(value).map_err(solver)?;
    fs::write(path, &text)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(solver)?;
    println!("{text}");
    Ok(())
}

fn solve(a: SolveArgs) -> Outcome {
    let spec = problem(&a.problem)?;
    let mut cfg = IrbpConfig::new(spec);
    if let Some(s) = a.start_level {
        cfg.start_level = s;
    }
    if let Some(m) = a.max_level {
        cfg.max_level = m;
    }
    cfg.max_steps = a.steps;
    cfg.eps_term = a.eps;
    cfg.support_tol = a.support_tol;
    cfg.galerkin = a.galerkin;
    cfg.fallback = match a.fallback {
        FallbackArg::None => Fallback::None,
        FallbackArg::FullRefine => Fallback::FullRefine,
    };
    cfg.validate().map_err(usage)?;
    let dir = out_dir(&a.common)?;
    let (state, report) = irbp_run(&cfg).map_err(|e| match e {
        IrbpError::Config(_) => usage(e),
        _ => solver(e),
    })?;
    report.save(dir).context("writing report").map_err(solver)?;
    let f = File::create(dir.join("solution.csv")).context("writing solution.csv").map_err(solver)?;
    write_solution_csv(f, &state.z_ids, &state.z).map_err(solver)?;
    let stdout = std::io::stdout();
    report.write_csv(stdout.lock()).map_err(solver)?;
    eprintln!(
        "{} steps, converged: {}, {:.1} ms; artifacts in {}",
        report.steps,
        report.converged,
        report.total_ms,
        dir.display()
    );
    Ok(())
}

fn level(a: LevelArgs) -> Outcome {
    let spec = problem(&a.problem)?;
    if a.level < 1 || a.level > spec.family.default_max_level() {
        return Err(usage(anyhow!("level {} is out of range", a.level)));
    }
    let dir = out_dir(&a.common)?;
    let r = level_experiment(&spec, a.level, a.support_tol).map_err(solver)?;
    write_json(&dir.join("level.json"), &serde_json::to_value(&r).map_err(solver)?)
}

fn analyze(a: AnalyzeArgs) -> Outcome {
    if !a.mu && a.rip_k.is_none() && a.sigma.is_none() {
        return Err(usage(anyhow!("nothing to do: pass --mu, --rip-k or --sigma")));
    }
    let m = load_matrix_market(&a.matrix)
        .with_context(|| format!("reading {}", a.matrix.display()))
        .map_err(usage)?;
    let mut out = json!({
        "matrix": a.matrix.display().to_string(),
        "rows": m.nrows(),
        "cols": m.ncols(),
        "seed": a.seed,
    });
    if a.mu {
        let r = diagnostics::mutual_incoherence_with(&m, !a.raw).map_err(usage)?;
        out["incoherence"] = serde_json::to_value(r).map_err(solver)?;
    }
    if let Some(k) = a.rip_k {
        let opts = RipOptions {
            budget: a.budget,
            seed: a.seed,
            normalize: !a.raw,
            mode: RipMode::Auto,
        };
        let r = diagnostics::rip_constant(&m, k, opts).map_err(usage)?;
        out["rip"] = serde_json::to_value(r).map_err(solver)?;
    }
    if let Some(p) = a.sigma {
        let path = a.vector.as_ref().ok_or_else(|| usage(anyhow!("--sigma needs --vector")))?;
        let x = load_vector(path)
            .with_context(|| format!("reading {}", path.display()))
            .map_err(usage)?;
        if !(p > 0.0) || a.k > x.len() {
            return Err(usage(anyhow!("need p > 0 and k <= {}", x.len())));
        }
        out["sigma"] = json!({ "k": a.k, "p": p, "value": diagnostics::best_k_term_error(&x, a.k, p) });
    }
    let dir = out_dir(&a.common)?;
    write_json(&dir.join("analysis.json"), &out)
}

fn parse_levels(s: &str) -> Option<(u32, u32)> {
    let (a, b) = s.split_once("..")?;
    let (a, b) = (a.trim().parse().ok()?, b.trim().trim_start_matches('=').parse().ok()?);
    (a >= 2 && a <= b && b <= Family::Hat1D.default_max_level()).then_some((a, b))
}

fn bench(a: BenchArgs) -> Outcome {
    let (lo, hi) = parse_levels(&a.levels).ok_or_else(|| usage(anyhow!("--levels must look like 7..12 (levels 2..20)")))?;
    let spec = problem(&a.problem)?;
    if spec.family != Family::Hat1D {
        return Err(usage(anyhow!("bench runs on a 1D problem")));
    }
    let dir = out_dir(&a.common)?;
    let mut rows: Vec<BenchRow> = Vec::new();
    let path = dir.join("bench.csv");
    let mut wr = csv::Writer::from_path(&path).map_err(solver)?;
    println!("level,m,n,time_ms,z_nnz");
    for level in lo..=hi {
        let r = bench_level(&spec, level, a.support_tol).map_err(solver)?;
        println!("{},{},{},{:.3},{}", r.level, r.m, r.n, r.time_ms, r.z_nnz);
        wr.serialize(&r).map_err(solver)?;
        wr.flush().map_err(solver)?;
        rows.push(r);
    }
    match loglog_slope(&rows) {
        Some(s) => eprintln!("fitted slope of log(time) against log(n): {s:.3}"),
        None => eprintln!("fitted slope needs at least two levels"),
    }
    Ok(())
}

fn bp(a: BpArgs) -> Outcome {
    let m = load_matrix_market(&a.matrix)
        .with_context(|| format!("reading {}", a.matrix.display()))
        .map_err(usage)?;
    let b = load_vector(&a.rhs)
        .with_context(|| format!("reading {}", a.rhs.display()))
        .map_err(usage)?;
    let sol = basis_pursuit(&m, &b).map_err(usage)?;
    if sol.status != LpStatus::Optimal {
        return Err(solver(anyhow!("basis pursuit ended with status {:?}", sol.status)));
    }
    let dir = out_dir(&a.common)?;
    save_vector(dir.join("z.txt"), &sol.solution).map_err(solver)?;
    let nnz = sol.solution.iter().filter(|v| **v != 0.0).count();
    write_json(
        &dir.join("bp.json"),
        &json!({
            "rows": m.nrows(),
            "cols": m.ncols(),
            "objective": sol.objective,
            "iterations": sol.iterations,
            "primal_residual": sol.primal_residual,
            "nonzeros": nnz,
        }),
    )
}

fn export(a: ExportArgs) -> Outcome {
    let spec = problem(&a.problem)?;
    if spec.family != Family::Hat1D {
        return Err(usage(anyhow!("export writes the 1D full-step matrix")));
    }
    if a.level < 1 || a.level > 14 {
        return Err(usage(anyhow!("--level must be in 1..=14")));
    }
    let dir = out_dir(&a.common)?;
    let blk = level_system(Family::Hat1D, a.level);
    let rows = IndexSet::level(Family::Hat1D, a.level, Role::RHat);
    let b = assemble_load(&spec, &rows).map_err(solver)?;
    let mpath = dir.join(format!("level{}.mtx", a.level));
    let bpath = dir.join(format!("level{}_rhs.txt", a.level));
    save_matrix_market(&mpath, &blk.to_csc()).map_err(solver)?;
    save_vector(&bpath, &b.values).map_err(solver)?;
    println!("{}", mpath.display());
    println!("{}", bpath.display());
    Ok(())
}

fn recovery(a: RecoveryArgs) -> Outcome {
    if a.k == 0 || a.k > a.n || a.m == 0 {
        return Err(usage(anyhow!("need 0 < k <= n and m > 0")));
    }
    let dir = out_dir(&a.common)?;
    let r = diagnostics::recovery_experiment(a.m, a.n, a.k, a.trials, a.tol, a.seed).map_err(solver)?;
    write_json(&dir.join("recovery.json"), &serde_json::to_value(&r).map_err(solver)?)
}
