mod commands;
mod config;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use dvscope::ErrorKind;

use config::CommonArgs;

/// Exit status for command-line usage errors.
const EXIT_USAGE: u8 = 64;

/// A failed run: message for the log and the process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn validation(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self {
            code: 3,
            message: message.into(),
        }
    }
}

impl From<dvscope::Error> for Failure {
    fn from(e: dvscope::Error) -> Self {
        let code = match e.kind() {
            ErrorKind::Validation => 1,
            ErrorKind::Numerical => 2,
            ErrorKind::Io => 3,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "dvscope",
    about = "Neighbourhood DV rates, alcohol-outlet visit rates and the models that relate them",
    disable_version_flag = true
)]
struct Cli {
    /// Print version information.
    #[arg(long)]
    version: bool,
    /// Worker threads (defaults to all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    PaperLike,
    Heterogeneous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Condition {
    Baseline,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CvModel {
    Rf,
    Mlp,
    All,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum, conflicts_with = "config")]
    pub preset: Option<Preset>,
    /// Generator config (JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic study area with known effects.
    Synth(SynthArgs),
    /// Load and cross-check the four input files.
    IngestCheck(CommonArgs),
    /// Derive DV and visit rates per CBG.
    Derive(CommonArgs),
    /// Correlations, Moran's I and VIF screening.
    Diagnose(CommonArgs),
    /// Global OLS for one condition.
    FitOls {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_enum, default_value = "test")]
        condition: Condition,
    },
    /// GWR with an adaptive bandwidth for one condition.
    FitGwr {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_enum, default_value = "test")]
        condition: Condition,
    },
    /// Random forest: cross-validation and a model on all rows.
    FitRf {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_enum, default_value = "test")]
        condition: Condition,
        /// Tune tree count and split rule first.
        #[arg(long)]
        grid: bool,
    },
    /// Feed-forward network: cross-validation and a model on all rows.
    FitMlp {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_enum, default_value = "test")]
        condition: Condition,
    },
    /// Cross-validate the learners for one condition.
    Cv {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_enum, default_value = "all")]
        model: CvModel,
        #[arg(long, value_enum, default_value = "test")]
        condition: Condition,
    },
    /// Baseline versus test across all four models, with report files.
    Experiment(CommonArgs),
    /// Rebuild the report files of an earlier run from its resolved config.
    Export {
        /// Output directory of the earlier run.
        #[arg(long)]
        from: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn init_logging() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format(|buf, record| writeln!(buf, "{} {}", record.level(), record.args()))
        .init();
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::validation("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::validation(format!("cannot start {n} threads: {e}")))?;
    }
    let command = cli.command.expect("checked by caller");
    match command {
        Command::Synth(a) => commands::synth(&a),
        Command::IngestCheck(c) => commands::ingest_check(&c),
        Command::Derive(c) => commands::derive(&c),
        Command::Diagnose(c) => commands::diagnose(&c),
        Command::FitOls { common, condition } => commands::fit_ols(&common, condition),
        Command::FitGwr { common, condition } => commands::fit_gwr(&common, condition),
        Command::FitRf {
            common,
            condition,
            grid,
        } => commands::fit_rf(&common, condition, grid),
        Command::FitMlp { common, condition } => commands::fit_mlp(&common, condition),
        Command::Cv {
            common,
            model,
            condition,
        } => commands::cv(&common, model, condition),
        Command::Experiment(c) => commands::experiment(&c),
        Command::Export { from, out } => commands::export(&from, &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if cli.version {
        println!(
            "dvscope {} (toolkit {}, output format {})",
            env!("CARGO_PKG_VERSION"),
            dvscope::VERSION,
            dvscope::FORMAT_VERSION
        );
        return ExitCode::SUCCESS;
    }
    if cli.command.is_none() {
        eprintln!(
            "error: no command given\n\n{}\nRun `dvscope --help` for the list of commands.",
            Cli::command().render_usage()
        );
        return ExitCode::from(EXIT_USAGE);
    }
    init_logging();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            log::error!("{}", f.message);
            ExitCode::from(f.code)
        }
    }
}
