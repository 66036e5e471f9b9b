use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use frontlab::plot::{plot_rows, to_csv, FrameTarget, PlotKind};
use frontlab::records::write_atomically;
use frontlab::{resume, run_experiment, with_threads, CliError, CliResult, ExperimentConfig, ExperimentKind};

#[derive(Parser)]
#[command(name = "frontlab", version, about = "Stochastic front simulations and estimators")]
struct Cli {
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replicas: Option<usize>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Raw trajectories, profile snapshots, pausable runs and edge excursions.
    Simulate(RunArgs),
    /// Front speed (`deterministic_kpp`, `speed_vs_sigma`).
    Speed(RunArgs),
    /// Stationary functionals (`stationary_cf`, `voter_mass`).
    Stationary(RunArgs),
    /// Scaling-limit regressions.
    Scaling(RunArgs),
    /// Likelihood-ratio reweighting checks.
    Girsanov(RunArgs),
    /// Equality in law between the two frames.
    Frames(RunArgs),
    /// Turns result files into a CSV table with columns x,y,stderr,series.
    PlotData {
        /// Results files or output directories.
        #[arg(long, num_args = 1.., required = true)]
        results: Vec<PathBuf>,
        #[arg(long, value_enum)]
        plot: PlotKind,
        #[arg(long)]
        out: PathBuf,
        /// Express all records in this frame.
        #[arg(long, value_enum)]
        map_to: Option<FrameTarget>,
        /// Keep only these series.
        #[arg(long)]
        series: Vec<String>,
    },
    /// Continues a paused replica from its checkpoint.
    Resume {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Widen the spatial window before continuing.
        #[arg(long)]
        window: Option<f64>,
    },
}

fn accepted(command: &Command) -> &'static [ExperimentKind] {
    use ExperimentKind::*;
    match command {
        Command::Simulate(_) => &[Simulate, EdgeTail],
        Command::Speed(_) => &[DeterministicKpp, SpeedVsSigma],
        Command::Stationary(_) => &[StationaryCf, VoterMass],
        Command::Scaling(_) => &[ScalingLimit],
        Command::Girsanov(_) => &[GirsanovCheck],
        Command::Frames(_) => &[FrameCheck],
        _ => &[],
    }
}

fn load(args: &RunArgs, allowed: &[ExperimentKind]) -> CliResult<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if !allowed.contains(&cfg.experiment) {
        let names: Vec<&str> = allowed.iter().map(|k| k.name()).collect();
        return Err(CliError::Config(format!(
            "experiment {} cannot run under this subcommand (expects one of {})",
            cfg.experiment,
            names.join(", ")
        )));
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(r) = args.replicas {
        cfg.replicas = r;
    }
    if let Some(d) = &args.output_dir {
        cfg.output_dir = d.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn dispatch(cli: Cli) -> CliResult<()> {
    let allowed = accepted(&cli.command);
    match cli.command {
        Command::Simulate(a)
        | Command::Speed(a)
        | Command::Stationary(a)
        | Command::Scaling(a)
        | Command::Girsanov(a)
        | Command::Frames(a) => {
            let cfg = load(&a, allowed)?;
            let out = with_threads(cli.threads, || run_experiment(&cfg))?;
            println!("{} records written to {}", out.records.len(), out.results_path.display());
        }
        Command::PlotData { results, plot, out, map_to, series } => {
            let rows = plot_rows(&results, plot, map_to, &series)?;
            write_atomically(&out, to_csv(&rows).as_bytes())?;
            println!("{} rows written to {}", rows.len(), out.display());
        }
        Command::Resume { checkpoint, window } => {
            let out = with_threads(cli.threads, || resume(&checkpoint, window))?;
            println!("resumed; results in {}", out.results_path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
