use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use coupledflow::ErrorClass;

mod commands;
mod output;

#[derive(Parser, Debug)]
#[command(
    name = "coupledflow",
    version,
    about = "Detect two-step laundering flows in transfer logs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Find the densest balanced source -> middle -> destination flow.
    Detect(DetectArgs),
    /// Plant a synthetic laundering flow into a dataset.
    Inject(InjectArgs),
    /// Detect across increasing injection densities and report the curve area.
    Sweep(SweepArgs),
    /// Tail probability of a flow's mass against random flows of the same size.
    Surprise(SurpriseArgs),
    /// Time detection on synthetic tensors of increasing size.
    Bench(BenchArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
}

#[derive(Args, Debug, Clone)]
pub struct IngestArgs {
    /// Width of a time bin: seconds, or a number with suffix s, m, h or d.
    #[arg(long, default_value = "3d", value_parser = parse_duration)]
    pub time_bin: i64,
    /// Time origin in seconds since the epoch; defaults to the earliest timestamp.
    #[arg(long)]
    pub time_origin: Option<i64>,
    /// Heuristic role ratio: mostly-sending accounts become sources above it.
    #[arg(long, default_value_t = coupledflow::ingest::DEFAULT_ROLE_RATIO)]
    pub role_ratio: f64,
    /// Extra attribute columns, comma separated; defaults to every non-core column.
    #[arg(long, value_delimiter = ',')]
    pub attrs: Option<Vec<String>>,
    /// Only the time attribute, ignoring any extra columns.
    #[arg(long, conflicts_with = "attrs")]
    pub time_only: bool,
    /// Field delimiter of the input.
    #[arg(long, default_value_t = ',')]
    pub delimiter: char,
    /// Account list (one id per line) overriding the inferred sources.
    #[arg(long)]
    pub sources: Option<PathBuf>,
    #[arg(long)]
    pub middles: Option<PathBuf>,
    #[arg(long)]
    pub destinations: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct AlphaArg {
    /// Imbalance cost rate in [0, 1].
    #[arg(long, default_value_t = coupledflow::metric::DEFAULT_ALPHA, value_parser = parse_alpha)]
    pub alpha: f64,
}

#[derive(Args, Debug)]
pub struct DetectArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[command(flatten)]
    pub ingest: IngestArgs,
    #[command(flatten)]
    pub alpha: AlphaArg,
    /// Truth file (`role,account` lines) to score the detection against.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    /// Write the result here instead of standard output.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct BackgroundArgs {
    /// Generate a random background instead of reading one.
    #[arg(long, conflicts_with = "input")]
    pub random_background: bool,
    #[arg(long, default_value_t = 100_000)]
    pub background_records: usize,
    #[arg(long, default_value_t = 2_000)]
    pub background_sources: usize,
    #[arg(long, default_value_t = 2_300)]
    pub background_middles: usize,
    #[arg(long, default_value_t = 7_000)]
    pub background_destinations: usize,
    /// Number of time bins of the random background.
    #[arg(long, default_value_t = 730)]
    pub background_bins: u32,
    /// Sizes of extra categorical attributes of the random background, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub background_attr_sizes: Vec<u32>,
}

#[derive(Args, Debug, Clone)]
pub struct InjectionArgs {
    #[arg(long, default_value_t = 5)]
    pub n_x: usize,
    #[arg(long, default_value_t = 10)]
    pub n_y: usize,
    #[arg(long, default_value_t = 5)]
    pub n_z: usize,
    /// Probability of each fraud edge.
    #[arg(long, default_value_t = 1.0)]
    pub edge_prob: f64,
    /// Total injected money.
    #[arg(long, default_value_t = 1e7)]
    pub money: f64,
    #[arg(long, default_value_t = 100.0)]
    pub dirichlet_scale: f64,
    #[arg(long, default_value_t = 100_000.0)]
    pub camouflage_max: f64,
    #[arg(long, default_value_t = 0.01)]
    pub camouflage_cap_frac: f64,
}

#[derive(Args, Debug)]
pub struct InjectArgs {
    /// Base dataset in the ingest format.
    #[arg(long, required_unless_present = "random_background")]
    pub input: Option<PathBuf>,
    #[command(flatten)]
    pub background: BackgroundArgs,
    #[command(flatten)]
    pub ingest: IngestArgs,
    #[command(flatten)]
    pub injection: InjectionArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory for transactions.csv, truth.txt and the role lists.
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum SweepKind {
    /// Vary the injected money.
    Money,
    /// Scale every fraud group size.
    Accounts,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(long, required_unless_present = "random_background")]
    pub input: Option<PathBuf>,
    #[command(flatten)]
    pub background: BackgroundArgs,
    #[command(flatten)]
    pub ingest: IngestArgs,
    #[command(flatten)]
    pub injection: InjectionArgs,
    #[command(flatten)]
    pub alpha: AlphaArg,
    #[arg(long, value_enum, default_value_t = SweepKind::Money)]
    pub sweep: SweepKind,
    /// Sweep values, comma separated. Defaults to ten money levels from
    /// 1e6 to 1e7, or multipliers 1 to 10.
    #[arg(long, value_delimiter = ',')]
    pub values: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    /// Output directory for curve.csv and the summary.
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Args, Debug)]
pub struct SurpriseArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[command(flatten)]
    pub ingest: IngestArgs,
    #[command(flatten)]
    pub alpha: AlphaArg,
    /// Flow accounts as `role,account` lines; defaults to the detected block.
    #[arg(long)]
    pub block: Option<PathBuf>,
    /// Tail fraction used for the fit.
    #[arg(long, default_value_t = coupledflow::eval::DEFAULT_EPSILON)]
    pub epsilon: f64,
    /// Number of random flows.
    #[arg(long, default_value_t = coupledflow::eval::DEFAULT_SAMPLES)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Entry counts, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "10000,100000,1000000")]
    pub scales: Vec<usize>,
    /// Timed runs per scale; the minimum is reported.
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    #[command(flatten)]
    pub alpha: AlphaArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

fn parse_alpha(s: &str) -> Result<f64, String> {
    let a: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if (0.0..=1.0).contains(&a) {
        Ok(a)
    } else {
        Err(format!("alpha must lie in [0, 1], got {a}"))
    }
}

fn parse_duration(s: &str) -> Result<i64, String> {
    let s = s.trim();
    let (num, unit) = match s.char_indices().last() {
        Some((i, c)) if c.is_ascii_alphabetic() => (&s[..i], c),
        _ => (s, 's'),
    };
    let mult = match unit {
        's' => 1,
        'm' => 60,
        'h' => 3_600,
        'd' => 86_400,
        _ => return Err(format!("unknown duration unit {unit:?}")),
    };
    let n: i64 = num.trim().parse().map_err(|e| format!("bad duration {s:?}: {e}"))?;
    if n <= 0 {
        return Err(format!("duration must be positive, got {s:?}"));
    }
    Ok(n * mult)
}

fn exit_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::Usage => 1,
        ErrorClass::Data => 2,
        ErrorClass::Numeric => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Detect(a) => commands::detect(a),
        Command::Inject(a) => commands::inject(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::Surprise(a) => commands::surprise(a),
        Command::Bench(a) => commands::bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.class()))
        }
    }
}
