//! `drsnet` command-line entry point.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use drsnet::blocks::BlockVariant;
use drsnet::dataset::Layout;
use drsnet::metrics::{Averaging, LossReduction};
use drsnet::model::{check_input_size, AblationKind};
use drsnet::trainer::RainMode;

#[derive(Parser, Debug)]
#[command(name = "drsnet", version, about = "Rain-robust lightweight foreground segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a rain-overlaid copy of an image/mask corpus.
    AddRain(AddRainArgs),
    /// Train a network on an image/mask corpus.
    Train(TrainArgs),
    /// Score a checkpoint on an image/mask corpus.
    Eval(EvalArgs),
    /// Segment a single image.
    Predict(PredictArgs),
    /// Report parameters, operation counts and optional timings.
    Profile(ProfileArgs),
    /// Train the control models and report them next to DRSNet(A).
    Ablate(AblateArgs),
}

/// `WIDTHxHEIGHT`, both divisible by 16.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
pub struct Size {
    pub width: usize,
    pub height: usize,
}

fn parse_size(s: &str) -> Result<Size, String> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected WIDTHxHEIGHT, got '{s}'"))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|_| format!("bad dimension '{v}' in '{s}'"));
    let (width, height) = (parse(w)?, parse(h)?);
    check_input_size(width, height).map_err(|e| e.to_string())?;
    Ok(Size { width, height })
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum LayoutArg {
    Auto,
    PairedFolders,
    SuffixMatched,
}

impl From<LayoutArg> for Layout {
    fn from(v: LayoutArg) -> Self {
        match v {
            LayoutArg::Auto => Layout::Auto,
            LayoutArg::PairedFolders => Layout::PairedFolders,
            LayoutArg::SuffixMatched => Layout::SuffixMatched,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum VariantArg {
    #[value(name = "A", alias = "a")]
    A,
    #[value(name = "B", alias = "b")]
    B,
    #[value(name = "C", alias = "c")]
    C,
}

impl From<VariantArg> for BlockVariant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::A => BlockVariant::A,
            VariantArg::B => BlockVariant::B,
            VariantArg::C => BlockVariant::C,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
#[value(rename_all = "snake_case")]
enum AblationArg {
    #[value(alias = "seresnet18-encoder")]
    Seresnet18Encoder,
    #[value(alias = "resnet18-bottleneck")]
    Resnet18Bottleneck,
    #[value(alias = "symmetric-skip")]
    SymmetricSkip,
}

impl From<AblationArg> for AblationKind {
    fn from(v: AblationArg) -> Self {
        match v {
            AblationArg::Seresnet18Encoder => AblationKind::Seresnet18Encoder,
            AblationArg::Resnet18Bottleneck => AblationKind::Resnet18Bottleneck,
            AblationArg::SymmetricSkip => AblationKind::SymmetricSkip,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum RainArg {
    OnTheFly,
    Fixed,
    Off,
}

impl From<RainArg> for RainMode {
    fn from(v: RainArg) -> Self {
        match v {
            RainArg::OnTheFly => RainMode::OnTheFly,
            RainArg::Fixed => RainMode::Fixed,
            RainArg::Off => RainMode::Off,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ReductionArg {
    Mean,
    Sum,
}

impl From<ReductionArg> for LossReduction {
    fn from(v: ReductionArg) -> Self {
        match v {
            ReductionArg::Mean => LossReduction::Mean,
            ReductionArg::Sum => LossReduction::Sum,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum AveragingArg {
    PerImage,
    Pooled,
}

impl From<AveragingArg> for Averaging {
    fn from(v: AveragingArg) -> Self {
        match v {
            AveragingArg::PerImage => Averaging::PerImage,
            AveragingArg::Pooled => Averaging::Pooled,
        }
    }
}

#[derive(Args, Debug)]
struct CorpusArgs {
    /// Corpus root (`images/` + `masks/`, or `name` + `name_mask` files)
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "auto")]
    layout: LayoutArg,
    /// Skip undecodable files instead of failing
    #[arg(long)]
    skip_unreadable: bool,
}

#[derive(Args, Debug)]
struct AddRainArgs {
    /// Input corpus root
    #[arg(long = "in")]
    input: PathBuf,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    /// Base seed (falls back to DRSNET_SEED, then 0)
    #[arg(long, env = "DRSNET_SEED")]
    seed: Option<u64>,
    /// Streak colour per channel
    #[arg(long, default_value_t = drsnet::rain::DEFAULT_STREAK_COLOR)]
    streak_color: f64,
    /// Output size; rain is added after resizing
    #[arg(long, value_parser = parse_size, default_value = "192x128")]
    size: Size,
    #[arg(long, value_enum, default_value = "auto")]
    layout: LayoutArg,
    /// Skip undecodable files instead of failing
    #[arg(long)]
    skip_unreadable: bool,
}

/// Training hyperparameters. Unset flags fall back to `--config`, then to
/// the defaults shown.
#[derive(Args, Debug, Clone)]
struct TrainFlags {
    /// JSON file with any training-config fields
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input size [default: 192x128]
    #[arg(long, value_parser = parse_size)]
    size: Option<Size>,
    /// Base seed for split, batch order, rain and initialization (falls back to DRSNET_SEED) [default: 0]
    #[arg(long, env = "DRSNET_SEED")]
    seed: Option<u64>,
    /// Epochs [default: 20]
    #[arg(long)]
    epochs: Option<usize>,
    /// Batch size [default: 20]
    #[arg(long)]
    batch_size: Option<usize>,
    /// Initial learning rate [default: 0.008]
    #[arg(long)]
    lr: Option<f64>,
    /// SGD momentum [default: 0.9]
    #[arg(long)]
    momentum: Option<f64>,
    /// Weight decay on convolution kernels [default: 0.0001]
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Linear warmup length in epochs [default: 1]
    #[arg(long)]
    warmup_epochs: Option<usize>,
    /// Training share of the corpus [default: 0.9]
    #[arg(long)]
    train_fraction: Option<f64>,
    /// Training rain [default: on-the-fly]
    #[arg(long, value_enum)]
    rain: Option<RainArg>,
    /// Do not rain the test split
    #[arg(long)]
    clean_test: bool,
    /// Loss reduction over pixels [default: mean]
    #[arg(long, value_enum)]
    loss_reduction: Option<ReductionArg>,
    /// Dataset-level metric averaging [default: per-image]
    #[arg(long, value_enum)]
    averaging: Option<AveragingArg>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Run directory for config, history, checkpoints and reports
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "A")]
    variant: VariantArg,
    /// Train a control model instead of a DRSNet variant
    #[arg(long, value_enum)]
    ablation: Option<AblationArg>,
    #[command(flatten)]
    train: TrainFlags,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Checkpoint file
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Output directory for the report
    #[arg(long)]
    out: PathBuf,
    /// Evaluation size [default: the checkpoint's input size]
    #[arg(long, value_parser = parse_size)]
    size: Option<Size>,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    #[arg(long, value_enum, default_value = "per-image")]
    averaging: AveragingArg,
    /// Rain the images with this seed before scoring (for clean corpora)
    #[arg(long)]
    rain_seed: Option<u64>,
}

#[derive(Args, Debug)]
struct PredictArgs {
    /// Checkpoint file
    #[arg(long)]
    model: PathBuf,
    /// Input image
    #[arg(long = "in")]
    input: PathBuf,
    /// Output mask (8-bit PNG, 0/255, at the input image's size)
    #[arg(long)]
    out: PathBuf,
    /// Also write the probability map as an 8-bit PNG
    #[arg(long)]
    probabilities: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
}

#[derive(Args, Debug)]
struct ProfileArgs {
    #[arg(long, value_enum, default_value = "A")]
    variant: VariantArg,
    /// Profile a control model instead of a DRSNet variant
    #[arg(long, value_enum)]
    ablation: Option<AblationArg>,
    #[arg(long, value_parser = parse_size, default_value = "192x128")]
    size: Size,
    /// Every model at 192x128, 384x256 and 768x512 (or the given --sizes)
    #[arg(long)]
    table: bool,
    /// Sizes for --table
    #[arg(long, value_parser = parse_size, value_delimiter = ',')]
    sizes: Vec<Size>,
    /// Measure wall-clock inference time
    #[arg(long)]
    time: bool,
    /// Timed runs (at least 10)
    #[arg(long, default_value_t = 20)]
    runs: usize,
    /// Untimed warmup runs
    #[arg(long, default_value_t = 3)]
    warmup: usize,
    /// Also write the report and a manifest here
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AblateArgs {
    /// Control models to train (repeatable) [default: all]
    #[arg(long, value_enum)]
    kind: Vec<AblationArg>,
    /// Skip the DRSNet(A) reference run
    #[arg(long)]
    no_baseline: bool,
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Run directory; each model trains in its own subdirectory
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    train: TrainFlags,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::AddRain(a) => commands::add_rain(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Predict(a) => commands::predict(a),
        Command::Profile(a) => commands::profile(a),
        Command::Ablate(a) => commands::ablate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let category = e
                .chain()
                .find_map(|c| c.downcast_ref::<drsnet::Error>())
                .map_or("runtime", drsnet::Error::category);
            // Library errors already print their own source.
            let mut parts = Vec::new();
            for cause in e.chain() {
                parts.push(cause.to_string());
                if cause.is::<drsnet::Error>() {
                    break;
                }
            }
            let message = parts.join(": ").replace('\n', " ");
            eprintln!("error: {category}: {message}");
            ExitCode::FAILURE
        }
    }
}
