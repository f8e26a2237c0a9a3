use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use bnn_core::experiment::{self, ExperimentSpec, RunOptions, StageReport};
use bnn_core::Error;

/// Bayesian neural network regression experiments.
#[derive(Parser)]
#[command(name = "bnn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit every grid cell and write draws, manifests and timings.
    Fit(RunArgs),
    /// Predictive quantiles, curves and the metrics table for a fitted run.
    Predict(StageArgs),
    /// PSIS-LOO and WAIC per fitted cell.
    Assess(StageArgs),
    /// Combination weights and combined metrics per member group.
    Combine(StageArgs),
    /// Run a named bundle end to end.
    Reproduce {
        /// Bundle name, e.g. `width-sweep`.
        name: String,
        #[command(flatten)]
        run: CommonRun,
        /// Output directory (default `runs/<name>`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct CommonRun {
    #[arg(long)]
    jobs: Option<usize>,
    /// Multiplies iteration and sample counts.
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    /// Replace an existing output directory.
    #[arg(long)]
    force: bool,
    /// Overrides the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Caps the NUTS tree depth.
    #[arg(long)]
    max_tree_depth: Option<usize>,
    /// Print the planned cells and exit.
    #[arg(long)]
    dry_run: bool,
    /// Run only these cells (run ids or group ids, comma separated).
    #[arg(long, value_delimiter = ',')]
    only: Vec<String>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    spec: PathBuf,
    /// Output directory (default: the spec's `out_dir`, else `runs/<name>`).
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    run: CommonRun,
}

#[derive(Args)]
struct StageArgs {
    #[arg(long)]
    out: PathBuf,
    /// Checked against the spec stored with the run.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    jobs: Option<usize>,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidConfig(_) | Error::Parse { .. } => 2,
        Error::MissingArtifact(_) => 3,
        e if e.is_numeric() => 4,
        _ => 1,
    }
}

fn options(out: PathBuf, run: &CommonRun) -> RunOptions {
    RunOptions {
        out,
        jobs: run.jobs,
        scale: run.scale,
        force: run.force,
        seed: run.seed,
        max_tree_depth: run.max_tree_depth,
        only: run.only.clone(),
    }
}

fn default_out(spec: &ExperimentSpec, given: Option<PathBuf>) -> PathBuf {
    given
        .or_else(|| spec.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("runs").join(&spec.name))
}

fn print_plan(spec: &ExperimentSpec, opts: &RunOptions) -> Result<Vec<StageReport>, Error> {
    let plan = experiment::plan_cells(spec, opts)?;
    println!("{} cells, master seed {}", plan.cells.len(), plan.master_seed);
    for c in &plan.cells {
        println!("{}\t{}\t{}", c.index, c.run_id, c.seed);
    }
    Ok(Vec::new())
}

fn run(cli: Cli) -> Result<Vec<StageReport>, Error> {
    match cli.command {
        Command::Fit(a) => {
            let spec = ExperimentSpec::from_file(&a.spec)?;
            let opts = options(default_out(&spec, a.out), &a.run);
            if a.run.dry_run {
                return print_plan(&spec, &opts);
            }
            Ok(vec![experiment::cmd_fit(&spec, &opts)?])
        }
        Command::Predict(a) => stage(a, experiment::cmd_predict),
        Command::Assess(a) => stage(a, experiment::cmd_assess),
        Command::Combine(a) => stage(a, experiment::cmd_combine),
        Command::Reproduce { name, run, out } => {
            let spec = experiment::bundle_spec(&name)?;
            let opts = options(default_out(&spec, out), &run);
            if run.dry_run {
                return print_plan(&spec, &opts);
            }
            experiment::cmd_reproduce(&spec, &opts)
        }
    }
}

fn stage(
    a: StageArgs,
    f: fn(&RunOptions, Option<&ExperimentSpec>) -> bnn_core::Result<StageReport>,
) -> Result<Vec<StageReport>, Error> {
    let spec = a.spec.as_deref().map(ExperimentSpec::from_file).transpose()?;
    let mut opts = RunOptions::new(a.out);
    opts.jobs = a.jobs;
    Ok(vec![f(&opts, spec.as_ref())?])
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(reports) => {
            let mut failed = false;
            for r in &reports {
                eprintln!("{}: {} completed, {} failed", r.stage, r.completed, r.failures.len());
                for (id, msg) in &r.failures {
                    eprintln!("  {id}: {msg}");
                    failed = true;
                }
            }
            if failed {
                ExitCode::from(4)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
