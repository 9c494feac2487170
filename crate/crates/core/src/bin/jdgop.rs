use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use jdgop::scenario::{self, load_input, Experiment, Scenario};
use jdgop::{Error, Strategy};

#[derive(Parser)]
#[command(
    name = "jdgop",
    version,
    about = "Growth optimal portfolios and deflators in jump-diffusion markets"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    global: Global,
}

#[derive(Args)]
struct Global {
    /// Number of Monte Carlo paths.
    #[arg(long, global = true)]
    paths: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Write the JSON report here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Pair every path with its Gaussian reflection.
    #[arg(long, global = true)]
    antithetic: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Check the modelling assumptions and classify the regime.
    Validate { input: String },
    /// Solve for the growth optimal portfolio on every piece.
    Gop { input: String },
    /// Simulate paths and summarize terminal values.
    Simulate {
        input: String,
        #[arg(long)]
        steps: Option<usize>,
        /// CSV file for every grid and jump event of every path.
        #[arg(long)]
        dump_paths: Option<PathBuf>,
    },
    /// Estimate E[Z_T] and test it against 1.
    TestMartingale {
        input: String,
        #[arg(long)]
        t: Option<f64>,
    },
    /// Benchmarked strategy means at increasing checkpoints.
    Sweep {
        input: String,
        #[arg(long, value_delimiter = ',')]
        checkpoints: Option<Vec<f64>>,
        /// Risky fractions, one per asset (default: all cash).
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        fractions: Option<Vec<f64>>,
    },
    /// Compare random admissible strategies with the optimal growth rate.
    Dominance {
        input: String,
        #[arg(long)]
        strategies: Option<usize>,
    },
    /// Solve for the measure-change coefficients.
    SolveDeflator { input: String },
    /// Run the experiment named in a scenario file.
    Run { input: String },
    /// List built-in scenarios.
    Scenarios,
}

fn load(input: &str, experiment: Option<Experiment>) -> Result<Scenario, Error> {
    let mut s = match input.strip_prefix("builtin:") {
        Some(name) => scenario::builtin(name)?,
        None => load_input(Path::new(input), experiment.unwrap_or(Experiment::Validate))?,
    };
    if let Some(e) = experiment {
        s.experiment = e;
    }
    Ok(s)
}

fn dispatch(command: Command, global: &Global) -> Result<Option<scenario::ScenarioReport>, Error> {
    let mut s = match command {
        Command::Scenarios => {
            emit(&(scenario::builtin_names().join("\n") + "\n"))?;
            return Ok(None);
        }
        Command::Validate { input } => load(&input, Some(Experiment::Validate))?,
        Command::Gop { input } => load(&input, Some(Experiment::Gop))?,
        Command::Simulate {
            input,
            steps,
            dump_paths,
        } => {
            let mut s = load(&input, Some(Experiment::Simulate))?;
            s.steps = steps.or(s.steps);
            s.outputs.paths_csv = dump_paths.or(s.outputs.paths_csv);
            s
        }
        Command::TestMartingale { input, t } => {
            let mut s = load(&input, Some(Experiment::MartingaleTest))?;
            s.t = t.or(s.t);
            s
        }
        Command::Sweep {
            input,
            checkpoints,
            fractions,
        } => {
            let mut s = load(&input, Some(Experiment::SupermartingaleSweep))?;
            s.checkpoints = checkpoints.or(s.checkpoints);
            if let Some(f) = fractions {
                s.strategy = Some(Strategy::constant(1.0, f));
            }
            s
        }
        Command::Dominance { input, strategies } => {
            let mut s = load(&input, Some(Experiment::Dominance))?;
            s.n_strategies = strategies.or(s.n_strategies);
            s
        }
        Command::SolveDeflator { input } => load(&input, Some(Experiment::SolveDeflator))?,
        Command::Run { input } => load(&input, None)?,
    };
    s.n_paths = global.paths.or(s.n_paths);
    s.seed = global.seed.or(s.seed);
    s.antithetic |= global.antithetic;
    if let Some(out) = &global.out {
        s.outputs.report = Some(out.clone());
    }
    let report = scenario::run(&s)?;
    let json = report.to_json_pretty();
    match &s.outputs.report {
        Some(path) => fs::write(path, json + "\n").map_err(|source| Error::Io {
            path: path.clone(),
            source,
        })?,
        None => emit(&(json + "\n"))?,
    }
    Ok(Some(report))
}

/// Writes to stdout; a closed pipe (e.g. `| head`) is not an error.
fn emit(text: &str) -> Result<(), Error> {
    match io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != io::ErrorKind::BrokenPipe => Err(Error::Io {
            path: PathBuf::from("<stdout>"),
            source: e,
        }),
        _ => Ok(()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(k) = cli.global.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match dispatch(cli.command, &cli.global) {
        Ok(Some(report)) if report.contradiction => {
            eprintln!("verdict contradicts the analytic regime");
            ExitCode::from(1)
        }
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
