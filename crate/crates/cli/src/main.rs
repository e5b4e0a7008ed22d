//! `rmhmc` — experiment runner for the SoftAbs RMHMC sampler.
//!
//! Subcommands:
//! - `sample`: run one chain, write a samples CSV and a summary JSON;
//! - `trajectory`: integrate a single trajectory and dump it as CSV;
//! - `benchmark`: run a list of chain specs and assemble a comparison table.
//!
//! Exit codes: 0 success, 2 configuration error, 3 chain failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;
use rmhmc::integrate::{integrate_trajectory, PhaseState};
use rmhmc::metrics::System;
use rmhmc::sampler::run_chain;
use rmhmc::{diagnostics, Error as RmhmcError};

use rmhmc_cli::output::{self, BenchmarkRow, Summary};
use rmhmc_cli::spec::{self, ConfigError, PartialSpec, RunSpec};

#[derive(Parser)]
#[command(name = "rmhmc", version, about = "Riemannian manifold HMC with the SoftAbs metric")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one chain and write samples.csv + summary.json
    Sample(SampleArgs),
    /// Integrate one trajectory and write it as CSV
    Trajectory(TrajectoryArgs),
    /// Run every spec in a file and write a comparison table (CSV + JSON)
    Benchmark(BenchmarkArgs),
}

/// Chain parameters shared by the subcommands. Unset flags fall back to the
/// `--config` file, then to defaults.
#[derive(Args, Debug, Clone, Default)]
struct ChainArgs {
    /// Flat key=value config file supplying defaults for any flag below
    #[arg(long)]
    config: Option<PathBuf>,
    /// Target distribution: funnel | gaussian
    #[arg(long)]
    target: Option<String>,
    /// Funnel: number of x coordinates (total dimension n+1); Gaussian: dimension
    #[arg(long)]
    n: Option<usize>,
    /// Metric family: euclidean | softabs | diag-softabs | outer-softabs | diag-outer-softabs
    #[arg(long)]
    metric: Option<String>,
    /// SoftAbs regularization strength
    #[arg(long)]
    alpha: Option<f64>,
    /// Fixed integrator step size (mutually exclusive with --adapt)
    #[arg(long)]
    epsilon: Option<f64>,
    /// Adapt the step size by dual averaging during warm-up
    #[arg(long)]
    adapt: bool,
    /// Metropolis accept rate the adaptation aims for
    #[arg(long)]
    target_accept: Option<f64>,
    /// Initial step size for the adaptation
    #[arg(long)]
    epsilon_init: Option<f64>,
    /// Integration steps per trajectory
    #[arg(long)]
    steps: Option<usize>,
    /// Warm-up transitions before sampling
    #[arg(long)]
    warmup: Option<usize>,
    /// Recorded transitions after warm-up
    #[arg(long)]
    samples: Option<usize>,
    /// Seed of the ChaCha8 stream driving all randomness
    #[arg(long)]
    seed: Option<u64>,
    /// Convergence threshold of the implicit integrator's fixed points
    #[arg(long)]
    fp_threshold: Option<f64>,
    /// Iteration cap of the fixed-point solves
    #[arg(long)]
    fp_max_iters: Option<usize>,
    /// Euclidean mass-matrix diagonal, comma separated
    #[arg(long)]
    mass_diag: Option<String>,
}

impl ChainArgs {
    fn resolve(&self) -> anyhow::Result<RunSpec> {
        let mut from_flags = PartialSpec {
            target: self.target.clone(),
            n: self.n,
            metric: self.metric.clone(),
            alpha: self.alpha,
            epsilon: self.epsilon,
            adapt: self.adapt.then_some(true),
            target_accept: self.target_accept,
            epsilon_init: self.epsilon_init,
            steps: self.steps,
            warmup: self.warmup,
            samples: self.samples,
            seed: self.seed,
            fp_threshold: self.fp_threshold,
            fp_max_iters: self.fp_max_iters,
            mass_diag: None,
            name: None,
        };
        if let Some(m) = &self.mass_diag {
            from_flags.mass_diag = Some(spec::parse_mass_diag(m)?);
        }
        let merged = match &self.config {
            Some(path) => from_flags.or(spec::load_config_file(path)?),
            None => from_flags,
        };
        merged.resolve()
    }
}

#[derive(Args)]
struct SampleArgs {
    #[command(flatten)]
    chain: ChainArgs,
    /// Output directory (default: $RMHMC_OUT_DIR or the working directory)
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Samples CSV path (default: <out-dir>/samples.csv)
    #[arg(long)]
    samples_out: Option<PathBuf>,
    /// Summary JSON path (default: <out-dir>/summary.json)
    #[arg(long)]
    summary_out: Option<PathBuf>,
}

#[derive(Args)]
struct TrajectoryArgs {
    #[command(flatten)]
    chain: ChainArgs,
    /// Initial position, comma separated (default: the origin)
    #[arg(long)]
    init: Option<String>,
    /// Output directory (default: $RMHMC_OUT_DIR or the working directory)
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Trajectory CSV path (default: <out-dir>/trajectory.csv)
    #[arg(long)]
    trajectory_out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchmarkArgs {
    /// Spec file: one run per line as whitespace-separated key=value tokens
    #[arg(long)]
    specs: PathBuf,
    /// Output directory (default: $RMHMC_OUT_DIR or the working directory)
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Benchmark CSV path (default: <out-dir>/benchmark.csv)
    #[arg(long)]
    csv_out: Option<PathBuf>,
    /// Benchmark JSON path (default: <out-dir>/benchmark.json)
    #[arg(long)]
    json_out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Sample(args) => cmd_sample(args),
        Command::Trajectory(args) => cmd_trajectory(args),
        Command::Benchmark(args) => cmd_benchmark(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(classify_error(&e))
        }
    }
}

/// 2 for configuration problems, 3 for chain failures, 1 otherwise.
fn classify_error(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.is::<ConfigError>() {
            return 2;
        }
        if let Some(err) = cause.downcast_ref::<RmhmcError>() {
            return match err {
                RmhmcError::ChainFailed { .. } => 3,
                RmhmcError::Invalid(_) => 2,
                _ => 1,
            };
        }
    }
    1
}

fn out_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os("RMHMC_OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

fn resolve_out(path: Option<PathBuf>, dir: &Path, default_name: &str) -> PathBuf {
    path.unwrap_or_else(|| dir.join(default_name))
}

fn cmd_sample(args: SampleArgs) -> anyhow::Result<()> {
    let spec = args.chain.resolve()?;
    let dir = out_dir(args.out_dir);
    std::fs::create_dir_all(&dir)
        .with_context(|| format!("creating output directory {}", dir.display()))?;
    let samples_path = resolve_out(args.samples_out, &dir, "samples.csv");
    let summary_path = resolve_out(args.summary_out, &dir, "summary.json");

    let model = spec::build_model(&spec);
    let out = run_chain(model.as_ref(), &spec.chain_config())?;

    output::write_samples_csv(&samples_path, &spec, &out)?;
    let summary: Summary = output::build_summary(&spec, model.dim(), &out);
    output::write_json(&summary_path, &summary)?;

    eprintln!(
        "wrote {} ({} samples) and {} [accept {:.3}, epsilon {:.4}, divergent {}]",
        samples_path.display(),
        out.samples.nrows(),
        summary_path.display(),
        out.accept_rate,
        out.epsilon_final,
        out.n_divergent,
    );
    Ok(())
}

fn cmd_trajectory(args: TrajectoryArgs) -> anyhow::Result<()> {
    let spec = args.chain.resolve()?;
    if spec.adapt {
        return Err(ConfigError("trajectory mode needs a fixed --epsilon".into()).into());
    }
    let dir = out_dir(args.out_dir);
    std::fs::create_dir_all(&dir)?;
    let path = resolve_out(args.trajectory_out, &dir, "trajectory.csv");

    let model = spec::build_model(&spec);
    let dim = model.dim();
    let q0 = match &args.init {
        Some(text) => {
            let vals = spec::parse_mass_diag(text)?;
            if vals.len() != dim {
                return Err(ConfigError(format!(
                    "--init has {} entries, target needs {dim}",
                    vals.len()
                ))
                .into());
            }
            DVector::from_row_slice(&vals)
        }
        None => DVector::zeros(dim),
    };

    let sys = System::new(model.as_ref(), spec.metric_config());
    let mut rng = rmhmc::sampler::seeded_rng(spec.seed);
    let st = sys.refresh(&q0)?;
    let p0 = st.sample_momentum(&mut rng);
    let trajectory = integrate_trajectory(
        &sys,
        &PhaseState::new(q0, p0),
        &spec.integrator_config(),
        true,
    )?;
    let rows = trajectory.rows.as_deref().unwrap_or(&[]);
    output::write_trajectory_csv(&path, dim, rows)?;
    eprintln!(
        "wrote {} ({} rows, |dH| = {:.3e})",
        path.display(),
        rows.len(),
        trajectory.delta_h().abs()
    );
    Ok(())
}

fn cmd_benchmark(args: BenchmarkArgs) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(&args.specs)
        .map_err(|e| ConfigError(format!("cannot read {}: {e}", args.specs.display())))?;
    let mut specs = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let partial = spec::parse_spec_line(line)
            .with_context(|| format!("{}:{}", args.specs.display(), lineno + 1))?;
        specs.push(partial.resolve()?);
    }

    let dir = out_dir(args.out_dir);
    std::fs::create_dir_all(&dir)?;
    let csv_path = resolve_out(args.csv_out, &dir, "benchmark.csv");
    let json_path = resolve_out(args.json_out, &dir, "benchmark.json");

    // one worker per spec; results are merged back in spec order
    let rows: Vec<BenchmarkRow> = std::thread::scope(|scope| {
        let handles: Vec<_> = specs
            .iter()
            .map(|spec| scope.spawn(move || run_benchmark_spec(spec)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("benchmark worker panicked"))
            .collect()
    });

    output::write_benchmark_csv(&csv_path, &rows)?;
    output::write_json(&json_path, &rows)?;
    eprintln!("wrote {} and {} ({} rows)", csv_path.display(), json_path.display(), rows.len());
    Ok(())
}

fn run_benchmark_spec(spec: &RunSpec) -> BenchmarkRow {
    let model = spec::build_model(spec);
    let clock = Instant::now();
    let mut row = BenchmarkRow {
        name: spec.name.clone(),
        target: spec.target.clone(),
        metric: spec.metric.clone(),
        alpha: spec.alpha,
        warmup: spec.warmup,
        samples: spec.samples,
        epsilon: spec.epsilon.unwrap_or(spec.epsilon_init),
        accept_rate: 0.0,
        time_seconds: 0.0,
        ess: None,
        ess_per_sample: None,
        ess_per_second: None,
        error: None,
    };
    match run_chain(model.as_ref(), &spec.chain_config()) {
        Ok(out) => {
            let elapsed = clock.elapsed().as_secs_f64();
            row.epsilon = out.epsilon_final;
            row.accept_rate = out.accept_rate;
            row.time_seconds = elapsed;
            let col = spec.v_column(model.dim()).unwrap_or(model.dim() - 1);
            if out.samples.nrows() > 0 {
                let series: Vec<f64> = out.samples.column(col).iter().copied().collect();
                if let Ok(report) = diagnostics::ess(&series) {
                    row.ess = Some(report.ess);
                    row.ess_per_sample = Some(report.ess / out.samples.nrows() as f64);
                    row.ess_per_second = Some(report.ess / elapsed);
                }
            }
        }
        Err(e) => {
            row.time_seconds = clock.elapsed().as_secs_f64();
            if let RmhmcError::ChainFailed { epsilon, .. } = &e {
                row.epsilon = *epsilon;
            }
            row.error = Some(e.to_string());
        }
    }
    row
}
