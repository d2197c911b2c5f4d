use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ccsim::experiments::{self, ExperimentSpec};
use ccsim::{load_experiment, load_scenario, Error, ScenarioConfig};

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "ccsim", version, about = "Cloud resource allocation simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one scenario.
    Run(CommonArgs),
    /// Sweep the processing threshold under both congestion modes.
    SweepCv(CommonArgs),
    /// Pick the optimal processing threshold for each load level.
    DecisionGraph(CommonArgs),
    /// Compare fairness of plain and revised reduction across Y.
    Fairness(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Scenario file (TOML).
    #[arg(long)]
    scenario: PathBuf,
    /// Overrides the scenario's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the experiment's replication count.
    #[arg(long)]
    reps: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Print nothing on success.
    #[arg(long)]
    quiet: bool,
}

enum Failure {
    Config(Error),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_config_error() {
            Failure::Config(e)
        } else {
            Failure::Runtime(e)
        }
    }
}

fn scenario(args: &CommonArgs) -> Result<ScenarioConfig, Failure> {
    let mut config = load_scenario(&args.scenario).map_err(Failure::Config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn experiment(args: &CommonArgs) -> Result<ExperimentSpec, Failure> {
    let mut spec = load_experiment(&args.scenario).map_err(Failure::Config)?;
    if let Some(seed) = args.seed {
        spec.base.seed = seed;
    }
    if let Some(reps) = args.reps {
        spec.replications = reps;
    }
    spec.check().map_err(Failure::Config)?;
    Ok(spec)
}

fn report(quiet: bool, paths: &[&Path]) {
    if !quiet {
        for p in paths {
            println!("wrote {}", p.display());
        }
    }
}

fn execute(command: Command) -> Result<(), Failure> {
    match command {
        Command::Run(args) => {
            let config = scenario(&args)?;
            let (metrics, paths) = experiments::cmd_run(&config, &args.out)?;
            if !args.quiet {
                print!("{}", ccsim::report::summary_text(&metrics));
            }
            report(args.quiet, &paths.iter().map(PathBuf::as_path).collect::<Vec<_>>());
        }
        Command::SweepCv(args) => {
            let spec = experiment(&args)?;
            let paths = experiments::cmd_sweep_cv(&spec, &args.out)?;
            report(args.quiet, &paths.iter().map(PathBuf::as_path).collect::<Vec<_>>());
        }
        Command::DecisionGraph(args) => {
            let spec = experiment(&args)?;
            let (graph, path) = experiments::cmd_decision_graph(&spec, &args.out)?;
            if !args.quiet {
                for p in &graph.points {
                    let optimal = p.optimal.map_or_else(|| "-".to_string(), |v| v.to_string());
                    println!("load {:>10}  optimal {:>8}  area {}", p.load_level, optimal, p.area.label());
                }
            }
            report(args.quiet, &[&path]);
        }
        Command::Fairness(args) => {
            let spec = experiment(&args)?;
            let (points, path) = experiments::cmd_fairness(&spec, &args.out)?;
            if !args.quiet {
                for p in &points {
                    let row = p.row();
                    println!(
                        "Y {:>6}  F(method-a) {:.6}  F(revised) {:.6}  normalized {:.4}",
                        row.y, row.f_method_a, row.f_revised, row.f_normalized_revised
                    );
                }
            }
            report(args.quiet, &[&path]);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
