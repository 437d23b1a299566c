//! The `tgraph` command line: generate, train, predict, extract boxes,
//! evaluate, convert and validate.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 unreadable or
//! malformed input, 3 failed validation, 4 training divergence.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tgraph::datagen::RowWeighting;
use tgraph::model::{FocalVariant, LossKind, DEFAULT_EPOCHS};
use tgraph::Error;

mod commands;
mod settings;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_INVALID: i32 = 3;
pub const EXIT_DIVERGED: i32 = 4;

/// Caps internal parallelism; absent means one thread.
pub const THREADS_VAR: &str = "TGRAPH_THREADS";

#[derive(Debug, Parser)]
#[command(name = "tgraph", version, about = "Table structure recognition on graphs of cell boxes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic labeled tables (and optionally their segmentation maps).
    Datagen(DatagenArgs),
    /// Train the row/column GCN on a labeled dataset.
    Train(TrainArgs),
    /// Predict logical locations for every table of a dataset.
    Predict(PredictArgs),
    /// Extract cell boxes from a segmentation map.
    Boxes(BoxesArgs),
    /// Score predictions against ground truth.
    Eval(EvalArgs),
    /// Export tables as CSV, XML, HTML or same-row/same-column matrices.
    Convert(ConvertArgs),
    /// Check dataset tables for structural violations.
    Validate(ValidateArgs),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Settings file: a flat JSON object keyed by flag names (without dashes).
    /// Command-line flags take precedence over it.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Ignore unknown fields in dataset files instead of rejecting them.
    #[arg(long)]
    pub lenient: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Profile {
    /// alpha 3, dense edges, no morphological opening.
    Default,
    /// alpha 10, 8N edges per graph, opening on (large or degraded tables).
    Historical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Weighting {
    Uniform,
    LongTail,
}

impl From<Weighting> for RowWeighting {
    fn from(w: Weighting) -> Self {
        match w {
            Weighting::Uniform => RowWeighting::Uniform,
            Weighting::LongTail => RowWeighting::LongTail,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Loss {
    Ce,
    Focal,
}

impl From<Loss> for LossKind {
    fn from(l: Loss) -> Self {
        match l {
            Loss::Ce => LossKind::Ce,
            Loss::Focal => LossKind::Focal,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Variant {
    AsPrinted,
    Conventional,
}

impl From<Variant> for FocalVariant {
    fn from(v: Variant) -> Self {
        match v {
            Variant::AsPrinted => FocalVariant::AsPrinted,
            Variant::Conventional => FocalVariant::Conventional,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Xml,
    Html,
    /// Same-row and same-column boolean matrices as JSON.
    Adjacency,
}

#[derive(Debug, Clone, Args)]
pub struct DatagenArgs {
    #[command(flatten)]
    pub common: Common,
    /// Output dataset (JSON lines).
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub count: usize,
    #[arg(long, default_value_t = 8)]
    pub max_rows: usize,
    #[arg(long, default_value_t = 8)]
    pub max_cols: usize,
    /// Probability of each candidate merge into a spanning cell.
    #[arg(long, default_value_t = 0.0)]
    pub span_prob: f64,
    /// Separator displacement as a fraction of the nominal slot size, in [0, 0.4).
    #[arg(long, default_value_t = 0.1)]
    pub jitter: f64,
    #[arg(long, default_value_t = 480)]
    pub image_w: u32,
    #[arg(long, default_value_t = 480)]
    pub image_h: u32,
    #[arg(long, value_enum, default_value_t = Weighting::Uniform)]
    pub row_weighting: Weighting,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fill cell texts with r{row}c{col}.
    #[arg(long)]
    pub with_text: bool,
    /// Also render each table's segmentation map as {id}.pgm beside the dataset.
    #[arg(long)]
    pub segmaps: bool,
}

#[derive(Debug, Clone, Args)]
pub struct DetectArgs {
    /// Apply a 3x3 morphological opening before labeling components
    /// (on by default in the historical profile).
    #[arg(long)]
    pub open: bool,
    /// Drop components with fewer pixels than this.
    #[arg(long, default_value_t = tgraph::spatial::DEFAULT_MIN_AREA)]
    pub min_area: usize,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Labeled training dataset.
    #[arg(long, value_name = "FILE")]
    pub data: PathBuf,
    /// Model file to write.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Profile::Default)]
    pub profile: Profile,
    #[arg(long, default_value_t = DEFAULT_EPOCHS)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 64)]
    pub hidden: usize,
    #[arg(long, default_value_t = 0.1)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, value_enum, default_value_t = Loss::Focal)]
    pub loss: Loss,
    #[arg(long, value_enum, default_value_t = Variant::Conventional)]
    pub focal_variant: Variant,
    #[arg(long, default_value_t = 0.5)]
    pub decode_threshold: f64,
    /// Edge-weight sharpness [default: 3, historical profile 10].
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Keep only the k*N heaviest edges per graph [default: all, historical profile 8].
    #[arg(long)]
    pub prune_k: Option<usize>,
    /// Leave out the log-size node features.
    #[arg(long)]
    pub no_log_size: bool,
    /// Add a g x g grid of segmentation-map intensities to each node's features.
    #[arg(long, value_name = "G")]
    pub patch_grid: Option<usize>,
    /// Number of row classes [default: training maximum + 1].
    #[arg(long)]
    pub t_row: Option<usize>,
    /// Number of column classes [default: training maximum + 1].
    #[arg(long)]
    pub t_col: Option<usize>,
    /// Train on boxes detected in the segmentation maps, labeled by their
    /// ground-truth match (IoU > 0.5), instead of the ground-truth boxes.
    #[arg(long)]
    pub from_segmaps: bool,
    #[command(flatten)]
    pub detect: DetectArgs,
    /// Print the loss to standard error every N epochs.
    #[arg(long, value_name = "N")]
    pub log_every: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    /// Tables whose cells receive predicted logical locations.
    #[arg(long, value_name = "FILE")]
    pub data: PathBuf,
    /// Output dataset with predictions.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Profile::Default)]
    pub profile: Profile,
    /// Predict on boxes detected in each table's segmentation map.
    #[arg(long)]
    pub from_segmaps: bool,
    #[command(flatten)]
    pub detect: DetectArgs,
    /// Remove this fraction of cells (uniformly, seeded) before building the graph.
    #[arg(long, value_name = "F")]
    pub drop_fraction: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub drop_seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct BoxesArgs {
    #[command(flatten)]
    pub common: Common,
    /// Segmentation map (binary PGM, gray values 0/1/2).
    #[arg(long, value_name = "FILE")]
    pub segmap: PathBuf,
    #[arg(long, value_enum, default_value_t = Profile::Default)]
    pub profile: Profile,
    #[command(flatten)]
    pub detect: DetectArgs,
    /// Write the box list here instead of standard output.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    /// Ground-truth dataset.
    #[arg(long, value_name = "FILE")]
    pub gt: PathBuf,
    /// Predicted dataset; tables are paired with ground truth by id.
    #[arg(long, value_name = "FILE")]
    pub pred: PathBuf,
    /// Write the JSON report here instead of standard output.
    #[arg(long, value_name = "FILE")]
    pub report: Option<PathBuf>,
    /// Remove this fraction of predicted cells (uniformly, seeded) before scoring.
    #[arg(long, value_name = "F")]
    pub drop_fraction: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub drop_seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct ConvertArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub format: Format,
    /// Write one file per table, named {id}.{csv,xml,html,json}; otherwise
    /// everything goes to standard output.
    #[arg(long, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_name = "FILE")]
    pub data: PathBuf,
    /// Accept cells without logical locations.
    #[arg(long)]
    pub allow_unlabeled: bool,
    /// Skip the check for overlapping logical rectangles.
    #[arg(long)]
    pub no_grid_check: bool,
}

/// Exit code for a library error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::InvalidAlpha(_) | Error::InvalidK(_) | Error::InvalidFraction(_) => EXIT_USAGE,
        Error::Io { .. } | Error::Parse { .. } => EXIT_DATA,
        Error::TrainingDiverged { .. } => EXIT_DIVERGED,
        _ => EXIT_INVALID,
    }
}

fn thread_count() -> Result<usize, String> {
    match std::env::var(THREADS_VAR) {
        Err(std::env::VarError::NotPresent) => Ok(1),
        Err(e) => Err(format!("{THREADS_VAR}: {e}")),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(format!("{THREADS_VAR} must be a positive integer, got {v:?}")),
        },
    }
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match settings::parse(&argv) {
        Ok(cli) => cli,
        Err(settings::ParseFailure::Clap(e)) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
        Err(settings::ParseFailure::Other(code, msg)) => {
            eprintln!("error: {msg}");
            return code;
        }
    };
    let threads = match thread_count() {
        Ok(n) => n,
        Err(msg) => {
            eprintln!("error: {msg}");
            return EXIT_USAGE;
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker threads: {e}");
            return EXIT_USAGE;
        }
    };
    match pool.install(|| commands::dispatch(cli.command)) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
