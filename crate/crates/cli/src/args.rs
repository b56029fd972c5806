use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "utime", version, about = "Fully convolutional sleep staging (U-Time)")]
pub struct Cli {
    /// Repeat for more log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a labelled synthetic PSG dataset (EDF + label CSVs + manifest).
    Synth(SynthArgs),
    /// Preprocess the records of a manifest into a cache directory.
    Prepare(PrepareArgs),
    /// Train one model with a subject-level validation hold-out.
    Train(TrainArgs),
    /// Per-subject cross-validation: train and test every split.
    Cv(CvArgs),
    /// Evaluate a checkpoint on cached records.
    Eval(EvalArgs),
    /// Predict a hypnogram or dense scores for one EDF record.
    Predict(PredictArgs),
    /// Print the architecture, parameter counts and receptive field.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
pub struct SeedArg {
    /// Random seed; overrides the config file.
    #[arg(long, env = "UTIME_SEED")]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub subjects: usize,
    /// 30 s segments per record.
    #[arg(long, default_value_t = 800)]
    pub segments: usize,
    /// EEG channels per record.
    #[arg(long, default_value_t = 1)]
    pub channels: usize,
    #[command(flatten)]
    pub seed: SeedArg,
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    /// CSV with columns record_path,label_path,subject_id.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Cache directory to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Target sample rate in Hz.
    #[arg(long, default_value_t = 100.0)]
    pub rate: f64,
    /// Channel labels (or label substrings) to keep; all channels when omitted.
    #[arg(long, value_delimiter = ',')]
    pub channels: Vec<String>,
    /// Keep only the sleep period plus a wake margin on either side.
    #[arg(long)]
    pub trim_wake_margins: bool,
    /// Wake margin in segments.
    #[arg(long, default_value_t = 60)]
    pub margin: usize,
    /// Segments exceeding this many IQRs are zeroed.
    #[arg(long, default_value_t = 20.0)]
    pub outlier_factor: f64,
    /// Exit with an error if any record fails.
    #[arg(long)]
    pub strict: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Config file with [model] and [train] sections; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Cache directory written by `prepare`.
    #[arg(long)]
    pub data: PathBuf,
    /// Run directory for checkpoints, history and metrics.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub seed: SeedArg,
}

#[derive(Debug, Args)]
pub struct CvArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Number of subject folds.
    #[arg(long)]
    pub splits: usize,
    /// Splits trained concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[command(flatten)]
    pub seed: SeedArg,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
pub enum Aggregation {
    /// F1 of the confusion matrix summed over records.
    #[default]
    Global,
    /// Mean of per-record F1 scores.
    PerRecord,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
pub enum StdArg {
    #[default]
    Population,
    Sample,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Weights written by `train` or `cv`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Evaluate only these record ids.
    #[arg(long, value_delimiter = ',')]
    pub records: Vec<String>,
    /// Which F1 aggregate is reported as the headline `mean_f1`.
    #[arg(long, value_enum, default_value_t)]
    pub aggregation: Aggregation,
    /// Standard deviation convention for per-record statistics.
    #[arg(long, value_enum, default_value_t)]
    pub std: StdArg,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// EDF file to score.
    #[arg(long)]
    pub record: PathBuf,
    /// Channel labels to use, as for `prepare`.
    #[arg(long, value_delimiter = ',')]
    pub channels: Vec<String>,
    /// Sample rate the model was trained at.
    #[arg(long, default_value_t = 100.0)]
    pub rate: f64,
    /// Output frequency in Hz, e.g. `1/30` (default), `1/15` or `1`.
    #[arg(long, default_value = "1/30")]
    pub freq: String,
    /// Write per-sample class probabilities instead of a hypnogram.
    #[arg(long)]
    pub dense: bool,
    /// With --dense, write the binary tensor container instead of CSV.
    #[arg(long, requires = "dense")]
    pub binary: bool,
    /// Output file; standard output when omitted (text formats only).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Also verify that this checkpoint loads under the config.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Print the layer-by-layer shape trace for an input of this many samples.
    #[arg(long)]
    pub trace: Option<usize>,
    /// List every parameter tensor.
    #[arg(long)]
    pub layers: bool,
}
