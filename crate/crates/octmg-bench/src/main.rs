use clap::{Args, Parser, Subcommand};
use octmg_bench::experiments::{run, write_csv, Experiment, ExperimentConfig, GridKind, Precision};
use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

/// Accuracy and convergence experiments for the adaptive Poisson solver.
#[derive(Debug, Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Operator consistency against a smooth analytic Laplacian.
    Laplacian(Opts),
    /// Solve with a sine source and Dirichlet faces; error and convergence.
    PoissonSin(Opts),
    /// Pressure projection of a downward flow in a tank with an obstacle.
    ProjectionStatic(Opts),
    /// Iterations to tolerance for μ=2, μ=1 and geometric coarsening.
    CycleCompare(Opts),
    /// Matrix-free coarsening against the dense triple product.
    GalerkinCheck(Opts),
}

#[derive(Debug, Args)]
struct Opts {
    /// JSON file with an ExperimentConfig; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, value_delimiter = ',')]
    grid: Vec<GridKind>,
    /// Root levels to sweep, e.g. `1,2,3`.
    #[arg(long, value_delimiter = ',')]
    l0: Vec<u32>,
    #[arg(long)]
    mu: Option<u32>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long, value_enum)]
    precision: Option<Precision>,
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for metrics.csv and reports.json.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

impl Opts {
    fn config(&self) -> Result<ExperimentConfig, Box<dyn std::error::Error>> {
        let mut cfg: ExperimentConfig = match &self.config {
            Some(p) => serde_json::from_reader(File::open(p)?)?,
            None => ExperimentConfig::default(),
        };
        if !self.grid.is_empty() {
            cfg.grids = self.grid.clone();
        }
        if !self.l0.is_empty() {
            cfg.l0 = self.l0.clone();
        }
        cfg.mu = self.mu.or(cfg.mu);
        cfg.beta = self.beta.or(cfg.beta);
        cfg.tol = self.tol.or(cfg.tol);
        if let Some(m) = self.max_iters {
            cfg.max_iters = m;
        }
        if let Some(p) = self.precision {
            cfg.precision = p;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }
}

fn init_threads() -> Result<(), Box<dyn std::error::Error>> {
    if let Ok(v) = std::env::var("OCTMG_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| format!("OCTMG_THREADS={v} is not a count"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn main_inner(cli: Cli) -> Result<bool, Box<dyn std::error::Error>> {
    init_threads()?;
    let (exp, opts) = match cli.command {
        Command::Laplacian(o) => (Experiment::Laplacian, o),
        Command::PoissonSin(o) => (Experiment::PoissonSin, o),
        Command::ProjectionStatic(o) => (Experiment::ProjectionStatic, o),
        Command::CycleCompare(o) => (Experiment::CycleCompare, o),
        Command::GalerkinCheck(o) => (Experiment::GalerkinCheck, o),
    };
    let cfg = opts.config()?;
    let outcome = run(exp, &cfg)?;
    std::fs::create_dir_all(&opts.out)?;
    write_csv(
        &outcome.rows,
        BufWriter::new(File::create(opts.out.join("metrics.csv"))?),
    )?;
    serde_json::to_writer_pretty(
        BufWriter::new(File::create(opts.out.join("reports.json"))?),
        &outcome.reports,
    )?;
    for r in outcome.rows.iter().filter(|r| !r.metric.contains("_it")) {
        let l0 = r.l0.map(|l| l.to_string()).unwrap_or_else(|| "-".into());
        println!("{:<16} l0={:<2} {:<24} {:.6e}", r.grid, l0, r.metric, r.value);
    }
    for label in &outcome.unconverged {
        eprintln!("did not converge: {label}");
    }
    Ok(outcome.unconverged.is_empty())
}

fn main() -> ExitCode {
    match main_inner(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
