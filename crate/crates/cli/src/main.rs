//! `arena`: generate cohorts, run debates, score them, compare agents and
//! verify the welfare examples.
//!
//! Exit codes: 0 success, 1 verification failure, 2 usage or configuration
//! error, 3 IO or transport error.

mod commands;
mod report;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use arena_core::arena::OpponentKind;
use arena_core::model::{CapacityVariant, Framework};

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, invalid configuration, invalid inputs.
    Usage(String),
    /// A verification ran and failed.
    Verify(String),
    /// Filesystem or network failure.
    Io(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Verify(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "error: {m}"),
            CliError::Verify(m) => write!(f, "verification failed: {m}"),
            CliError::Io(m) => write!(f, "io error: {m}"),
        }
    }
}

impl From<arena_core::persist::PersistError> for CliError {
    fn from(e: arena_core::persist::PersistError) -> Self {
        use arena_core::persist::PersistError as P;
        match e {
            P::Io { .. } => CliError::Io(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(
    name = "arena",
    version,
    about = "Multi-agent deliberation arena for scarce-resource allocation"
)]
struct Cli {
    /// Log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a seeded batch of cohorts.
    GenCohorts(GenArgs),
    /// Run debates over a cohort directory.
    Run(RunArgs),
    /// Recompute metrics for every transcript.
    Eval(EvalArgs),
    /// Paired comparison of agent A against its opponent.
    Stats(StatsArgs),
    /// Check the three-claim welfare example on a grid.
    VerifyCake(CakeArgs),
    /// Intersect the argmax sets of the four welfare functionals on a cohort.
    CheckNondegeneracy(NondegArgs),
    /// Render a Markdown report from a chain of run manifests.
    Report(ReportArgs),
    /// Validate every JSON artifact under a directory.
    Validate(ValidateArgs),
    /// Write the bundled cohort-32 fixture as a cohort file plus replay texts.
    ExportFixtures(ExportArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    Standard,
    Tight,
    Abundant,
}

impl From<VariantArg> for CapacityVariant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Standard => CapacityVariant::Standard,
            VariantArg::Tight => CapacityVariant::Tight,
            VariantArg::Abundant => CapacityVariant::Abundant,
        }
    }
}

#[derive(Args, Debug)]
pub struct GenArgs {
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Number of cohorts.
    #[arg(long)]
    pub batch: u64,
    #[arg(long, value_enum, default_value_t = VariantArg::Standard)]
    pub variant: VariantArg,
    /// JSON array of archetype slots replacing the bundled table.
    #[arg(long)]
    pub slots_file: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum OpponentArg {
    Baseline,
    Biased,
}

impl From<OpponentArg> for OpponentKind {
    fn from(o: OpponentArg) -> Self {
        match o {
            OpponentArg::Baseline => OpponentKind::Baseline,
            OpponentArg::Biased => OpponentKind::Biased,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum BackendArg {
    Scripted,
    Chat,
    Replay,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    /// Directory written by `gen-cohorts`.
    #[arg(long)]
    pub cohorts: PathBuf,
    /// Framework(s) for agent A; repeat or comma-separate, or `all`.
    #[arg(long, value_delimiter = ',', default_value = "all")]
    pub framework: Vec<String>,
    #[arg(long, value_enum, default_value_t = OpponentArg::Baseline)]
    pub opponent: OpponentArg,
    #[arg(long, value_enum, default_value_t = BackendArg::Scripted)]
    pub backend: BackendArg,
    #[arg(long, default_value_t = 3)]
    pub rounds: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Required for the biased opponent.
    #[arg(long)]
    pub allow_adversarial: bool,
    /// Adversarial system prompt for a chat-backed biased opponent.
    #[arg(long)]
    pub adversarial_prompt: Option<PathBuf>,
    /// Let the opponent speak first in every round.
    #[arg(long)]
    pub opponent_first: bool,
    /// Concurrent debates (and in-flight chat requests).
    #[arg(long, default_value_t = 4)]
    pub jobs: usize,
    /// Corpus of `.txt` documents; enables retrieval for agent A.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long, default_value_t = arena_core::retrieval::DEFAULT_TOP_K)]
    pub top_k: usize,
    /// Directory of `<framework>.txt` / `baseline.txt` overriding the bundled preambles.
    #[arg(long)]
    pub prompts_dir: Option<PathBuf>,
    /// Chat-completions URL (chat backend).
    #[arg(long, env = "ARENA_ENDPOINT")]
    pub endpoint: Option<String>,
    /// Model name (chat backend).
    #[arg(long, env = "ARENA_MODEL")]
    pub model: Option<String>,
    /// Environment variable holding the API key.
    #[arg(long, default_value = "ARENA_API_KEY")]
    pub api_key_env: String,
    #[arg(long, default_value_t = 0.0)]
    pub temperature: f64,
    /// Replay backend: directory of `cohort_<id>.json` files with `{"A": [...], "B": [...]}` texts.
    #[arg(long)]
    pub replay_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub transcripts: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct StatsArgs {
    #[arg(long)]
    pub eval_dir: PathBuf,
    #[arg(long, default_value_t = arena_core::stats::DEFAULT_ALPHA)]
    pub alpha: f64,
    #[arg(long, default_value_t = arena_core::stats::DEFAULT_RESAMPLES)]
    pub resamples: usize,
    #[arg(long, default_value_t = arena_core::stats::DEFAULT_SEED)]
    pub seed: u64,
    /// Shapiro-Wilk on the differences, paired t-test when normality holds.
    #[arg(long)]
    pub normality_pretest: bool,
    /// Worker threads (results do not depend on it).
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct CakeArgs {
    /// JSON object overriding any of alpha, beta, gamma, lambda, xbar4, xmin, epsilon, delta.
    #[arg(long)]
    pub params_file: Option<PathBuf>,
    #[arg(long, default_value_t = 0.01)]
    pub step: f64,
    /// Skip the parameter invariants (for negative controls).
    #[arg(long)]
    pub unchecked: bool,
    /// Also write the full report as JSON.
    #[arg(long)]
    pub json_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct NondegArgs {
    /// Cohort artifact.
    #[arg(long)]
    pub cohort: PathBuf,
    #[arg(long)]
    pub step: f64,
    #[arg(long, default_value_t = arena_core::welfare::ARGMAX_TOL)]
    pub tol: f64,
    /// Refuse grids larger than this.
    #[arg(long, default_value_t = 50_000_000)]
    pub max_points: u128,
    /// Override the supply vector (comma-separated) to keep the grid small.
    #[arg(long, value_delimiter = ',')]
    pub supply: Option<Vec<f64>>,
    /// Use only the first N patients.
    #[arg(long)]
    pub patients: Option<usize>,
    #[arg(long)]
    pub json_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Manifest of the last stage (usually the stats directory's manifest.json).
    #[arg(long)]
    pub run_manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ValidateArgs {
    #[arg(long)]
    pub dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    #[arg(long)]
    pub out: PathBuf,
}

pub fn parse_frameworks(list: &[String]) -> CliResult<Vec<Framework>> {
    let mut out = Vec::new();
    for item in list {
        if item.eq_ignore_ascii_case("all") {
            out.extend(Framework::ALL);
            continue;
        }
        let f: Framework = item
            .parse()
            .map_err(|e: arena_core::model::ModelError| CliError::Usage(e.to_string()))?;
        out.push(f);
    }
    out.sort();
    out.dedup();
    if out.is_empty() {
        return Err(CliError::Usage("no framework selected".into()));
    }
    Ok(out)
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => tracing::Level::WARN,
        1 => tracing::Level::INFO,
        _ => tracing::Level::DEBUG,
    };
    let _ = tracing_subscriber::fmt()
        .with_max_level(level)
        .with_writer(std::io::stderr)
        .try_init();
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verbose);
    let result = match cli.command {
        Command::GenCohorts(a) => commands::gen_cohorts(&a),
        Command::Run(a) => run::run(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Stats(a) => commands::stats(&a),
        Command::VerifyCake(a) => commands::verify_cake(&a),
        Command::CheckNondegeneracy(a) => commands::check_nondegeneracy(&a),
        Command::Report(a) => report::report(&a),
        Command::Validate(a) => commands::validate(&a),
        Command::ExportFixtures(a) => commands::export_fixtures(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.code())
        }
    }
}
