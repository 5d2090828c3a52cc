//! Command-line front end: `run`, `table`, `propagate`, and `grids`.
//!
//! Exit codes: 0 on success, 2 on configuration errors, 3 on numerical
//! failures. Failures print a machine-readable JSON object to stdout.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use projfilter_cli::config::{
    ExampleKind, ExperimentConfig, GradientChoice, SolverChoice, TableConfig,
};
use projfilter_cli::experiment::{self, ExperimentError};
use projfilter_cli::output;
use projfilter_cli::{EXIT_CONFIG, EXIT_NUMERICAL};

#[derive(Parser)]
#[command(
    name = "projfilter",
    about = "Variational Bayesian updates on exponential families with sparse-grid quadrature",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one Bayesian-update experiment and write trace, summary, and
    /// density grids.
    Run(RunArgs),
    /// Run a comparison table (gradient runs, sigma points, particles)
    /// against a shared ground truth.
    Table(TableArgs),
    /// Integrate the predictive (Fokker-Planck) step of a polynomial SDE.
    Propagate(PropagateArgs),
    /// Dump quadrature grids as CSV.
    Grids(GridArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON configuration file; flags override file keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: ConfigArgs,
    #[arg(long)]
    example: Option<ExampleKind>,
    #[arg(long = "n-o")]
    n_o: Option<u32>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long = "steps")]
    n_steps: Option<usize>,
    #[arg(long)]
    gradient: Option<GradientChoice>,
    #[arg(long)]
    solver: Option<SolverChoice>,
    #[arg(long = "quad-level")]
    quad_level: Option<u32>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long = "grad-tol")]
    grad_tol: Option<f64>,
    #[arg(long = "metric-stride")]
    metric_stride: Option<usize>,
    #[arg(long)]
    resolution: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TableArgs {
    #[command(flatten)]
    common: ConfigArgs,
    #[arg(long)]
    example: Option<ExampleKind>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct PropagateArgs {
    #[command(flatten)]
    common: ConfigArgs,
}

#[derive(Args)]
struct GridArgs {
    #[arg(long, default_value_t = 2)]
    dim: usize,
    #[arg(long, default_value_t = 6)]
    level: u32,
    /// Map the grid to R^d before dumping.
    #[arg(long, default_value_t = false)]
    transformed: bool,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn fail(kind: &str, message: &str, code: i32) -> ExitCode {
    let payload = serde_json::json!({
        "error": { "kind": kind, "message": message, "exit_code": code }
    });
    println!("{payload}");
    ExitCode::from(code as u8)
}

fn fail_experiment(e: &ExperimentError) -> ExitCode {
    match e {
        ExperimentError::Config(m) => fail("config", m, EXIT_CONFIG),
        ExperimentError::Numerical { kind, message } => fail(kind, message, EXIT_NUMERICAL),
    }
}

fn load_config(path: &Option<PathBuf>, fallback_example: Option<ExampleKind>) -> Result<ExperimentConfig, String> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| format!("cannot read {}: {e}", p.display()))?;
            ExperimentConfig::from_json(&text)
        }
        None => match fallback_example {
            Some(example) => Ok(ExperimentConfig::new(example)),
            None => Err("either --config or --example is required".into()),
        },
    }
}

fn run_cmd(args: &RunArgs) -> ExitCode {
    let mut cfg = match load_config(&args.common.config, args.example) {
        Ok(c) => c,
        Err(m) => return fail("config", &m, EXIT_CONFIG),
    };
    if let Some(e) = args.example {
        cfg.example = e;
    }
    cfg.n_o = args.n_o.or(cfg.n_o);
    cfg.alpha = args.alpha.or(cfg.alpha);
    cfg.dt = args.dt.or(cfg.dt);
    cfg.n_steps = args.n_steps.or(cfg.n_steps);
    cfg.gradient = args.gradient.or(cfg.gradient);
    cfg.solver = args.solver.or(cfg.solver);
    cfg.quad_level = args.quad_level.or(cfg.quad_level);
    cfg.delta = args.delta.or(cfg.delta);
    cfg.grad_tol = args.grad_tol.or(cfg.grad_tol);
    cfg.metric_stride = args.metric_stride.or(cfg.metric_stride);
    cfg.resolution = args.resolution.or(cfg.resolution);
    cfg.seed = args.seed.or(cfg.seed);

    let resolved = match cfg.resolve() {
        Ok(r) => r,
        Err(m) => return fail("config", &m, EXIT_CONFIG),
    };
    let artifacts = match experiment::run_update_experiment(&resolved) {
        Ok(a) => a,
        Err(e) => return fail_experiment(&e),
    };
    if let Err(e) = write_run_outputs(&args.common.out, &artifacts) {
        return fail("io", &e.to_string(), EXIT_CONFIG);
    }
    println!(
        "final hellinger {:.6e}, final kl {:.6e} ({} iterations)",
        artifacts.summary.final_hellinger, artifacts.summary.final_kl, artifacts.summary.iterations
    );
    ExitCode::SUCCESS
}

fn write_run_outputs(
    dir: &PathBuf,
    artifacts: &experiment::RunArtifacts,
) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    output::write_trace_csv(&dir.join("trace.csv"), &artifacts.trace)?;
    output::write_summary_json(&dir.join("summary.json"), &artifacts.summary)?;
    output::write_density_csv(&dir.join("density_truth.csv"), &artifacts.truth)?;
    output::write_density_csv(&dir.join("density_approx.csv"), &artifacts.approx)?;
    if !artifacts.summary.baselines.is_empty() {
        let rows: Vec<experiment::ComparisonRow> = artifacts
            .summary
            .baselines
            .iter()
            .map(|b| experiment::ComparisonRow {
                method: b.method.clone(),
                iterations: 1,
                hellinger: b.hellinger,
                op_count: b.op_count,
                seconds: b.seconds,
                note: b.note.clone(),
            })
            .collect();
        output::write_comparison_csv(&dir.join("comparison.csv"), &rows)?;
    }
    Ok(())
}

fn table_cmd(args: &TableArgs) -> ExitCode {
    let mut cfg = match &args.common.config {
        Some(p) => match fs::read_to_string(p)
            .map_err(|e| format!("cannot read {}: {e}", p.display()))
            .and_then(|t| TableConfig::from_json(&t))
        {
            Ok(c) => c,
            Err(m) => return fail("config", &m, EXIT_CONFIG),
        },
        None => match args.example {
            Some(example) => TableConfig {
                example,
                rows: None,
                quad_level: None,
                resolution: None,
                seed: None,
            },
            None => return fail("config", "either --config or --example is required", EXIT_CONFIG),
        },
    };
    if let Some(e) = args.example {
        cfg.example = e;
    }
    cfg.seed = args.seed.or(cfg.seed);

    let artifacts = match experiment::run_table(&cfg) {
        Ok(a) => a,
        Err(e) => return fail_experiment(&e),
    };
    if let Err(e) = fs::create_dir_all(&args.common.out).and_then(|_| {
        output::write_comparison_csv(&args.common.out.join("table.csv"), &artifacts.rows)
    }) {
        return fail("io", &e.to_string(), EXIT_CONFIG);
    }
    for row in &artifacts.rows {
        match row.hellinger {
            Some(h) => println!("{:<24} {:>4} iters  hellinger {:.4e}", row.method, row.iterations, h),
            None => println!("{:<24} failed: {}", row.method, row.note),
        }
    }
    ExitCode::SUCCESS
}

fn propagate_cmd(args: &PropagateArgs) -> ExitCode {
    let cfg = match load_config(&args.common.config, None) {
        Ok(c) => c,
        Err(m) => return fail("config", &m, EXIT_CONFIG),
    };
    let resolved = match cfg.resolve() {
        Ok(r) => r,
        Err(m) => return fail("config", &m, EXIT_CONFIG),
    };
    let rows = match experiment::run_propagate(&resolved) {
        Ok(r) => r,
        Err(e) => return fail_experiment(&e),
    };
    if let Err(e) = fs::create_dir_all(&args.common.out).and_then(|_| {
        output::write_propagation_csv(&args.common.out.join("propagate_trace.csv"), &rows)
    }) {
        return fail("io", &e.to_string(), EXIT_CONFIG);
    }
    let last = rows.last().expect("at least the initial row");
    println!("propagated to t = {}: mu = {:?}", last.t, last.mu);
    ExitCode::SUCCESS
}

fn grids_cmd(args: &GridArgs) -> ExitCode {
    let grid = match projfilter::quadrature::smolyak_grid(args.dim, args.level) {
        Ok(g) => g,
        Err(e) => return fail("invalid-argument", &e.to_string(), EXIT_CONFIG),
    };
    let grid = if args.transformed {
        match projfilter::quadrature::transform_to_unbounded(&grid) {
            Ok(g) => g,
            Err(e) => return fail("transform-overflow", &e.to_string(), EXIT_NUMERICAL),
        }
    } else {
        grid
    };
    let name = format!(
        "grid_d{}_l{}{}.csv",
        args.dim,
        args.level,
        if args.transformed { "_transformed" } else { "" }
    );
    if let Err(e) =
        fs::create_dir_all(&args.out).and_then(|_| output::write_grid_csv(&args.out.join(&name), &grid))
    {
        return fail("io", &e.to_string(), EXIT_CONFIG);
    }
    println!("{} nodes -> {}", grid.len(), args.out.join(&name).display());
    ExitCode::SUCCESS
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run(args) => run_cmd(&args),
        Command::Table(args) => table_cmd(&args),
        Command::Propagate(args) => propagate_cmd(&args),
        Command::Grids(args) => grids_cmd(&args),
    }
}
