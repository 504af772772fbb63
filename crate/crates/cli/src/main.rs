mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

/// Specificity evaluation toolkit for long image captions.
#[derive(Debug, Parser)]
#[command(name = "specs", version)]
pub struct Cli {
    /// Seed for every randomized stage [default: 0, or the config file's seed].
    #[arg(long, global = true, env = "SPECS_SEED")]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Split captions into detail units.
    Segment(SegmentArgs),
    /// Forge positive/negative minimal-pair triplets from segmented captions.
    Triplets(TripletArgs),
    /// Clipped-cosine scores for image/caption pairs.
    Score(ScoreArgs),
    /// Specificity rate over a triplet file.
    Sr(SrArgs),
    /// Train the toy dual encoder on triplets and image features.
    Train(TrainArgs),
    /// Generate a planted-attribute corpus.
    Synth(SynthArgs),
    /// Compare analytic and finite-difference gradients.
    Gradcheck(GradcheckArgs),
    /// Agreement between metric scores and human ratings.
    Correlate(CorrelateArgs),
}

#[derive(Debug, Clone, Copy, Default, ValueEnum)]
pub enum Format {
    #[default]
    Json,
    Csv,
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    /// JSONL with {"image_id", "caption"} and optional supplied "tokens".
    #[arg(long)]
    pub input: PathBuf,
    /// Output JSONL; stdout when omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub no_initial_the: bool,
    #[arg(long)]
    pub no_pp_attach: bool,
    #[arg(long)]
    pub no_pp_lead: bool,
}

#[derive(Debug, Args)]
pub struct TripletArgs {
    /// JSONL with {"image_id", "caption", "units"}.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, default_value_t = 0.9)]
    pub shuffle_rate: f64,
    /// Consecutive captions that negatives are drawn from.
    #[arg(long, default_value_t = 400)]
    pub pool: usize,
}

/// Where similarities come from. Exactly one source is used.
#[derive(Debug, Args)]
pub struct SimilaritySource {
    /// Image embedding table.
    #[arg(long, requires = "texts", conflicts_with_all = ["model", "sims"])]
    pub images: Option<PathBuf>,
    /// Text embedding table.
    #[arg(long, requires = "images")]
    pub texts: Option<PathBuf>,
    /// Trained model file.
    #[arg(long, requires = "features", conflicts_with = "sims")]
    pub model: Option<PathBuf>,
    /// Image feature table used with --model.
    #[arg(long, requires = "model")]
    pub features: Option<PathBuf>,
    /// Precomputed {"image_id", "text_id", "theta"} JSONL.
    #[arg(long)]
    pub sims: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// JSONL with {"image_id", "caption_id"} and, for --model, "caption".
    #[arg(long)]
    pub pairs: PathBuf,
    /// Image embedding table.
    #[arg(long, requires = "texts", conflicts_with = "model")]
    pub images: Option<PathBuf>,
    /// Caption embedding table keyed by caption_id.
    #[arg(long, requires = "images")]
    pub texts: Option<PathBuf>,
    #[arg(long, requires = "features")]
    pub model: Option<PathBuf>,
    #[arg(long, requires = "model")]
    pub features: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SrArgs {
    #[arg(long)]
    pub triplets: PathBuf,
    #[command(flatten)]
    pub source: SimilaritySource,
    /// Also write every scored triplet as JSONL.
    #[arg(long)]
    pub scored: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub triplets: PathBuf,
    /// Image feature table.
    #[arg(long)]
    pub features: PathBuf,
    /// TOML config; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub holdout: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// `dynamic` or a fixed margin value.
    #[arg(long)]
    pub margin: Option<String>,
    #[arg(long)]
    pub model_out: PathBuf,
    /// Per-epoch CSV log.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 500)]
    pub images: usize,
    #[arg(long, default_value_t = 16)]
    pub attributes: usize,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub max_units: Option<usize>,
    /// Feature table (binary, or JSONL by extension).
    #[arg(long)]
    pub features_out: PathBuf,
    /// Segmented captions JSONL.
    #[arg(long)]
    pub captions_out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 20)]
    pub batches: usize,
    /// Images per batch.
    #[arg(long, default_value_t = 4)]
    pub batch_images: usize,
    /// Triplets to draw batches from; a small synthetic corpus otherwise.
    #[arg(long, requires = "features")]
    pub triplets: Option<PathBuf>,
    #[arg(long, requires = "triplets")]
    pub features: Option<PathBuf>,
    /// Model to check; fresh seeded models otherwise.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub margin: Option<String>,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CorrelateArgs {
    /// Pre-joined JSONL of judged samples.
    #[arg(long, conflicts_with_all = ["scores", "human"], required_unless_present = "scores")]
    pub samples: Option<PathBuf>,
    /// Scores JSONL {"image_id", "caption_id", "specs"}.
    #[arg(long, requires = "human")]
    pub scores: Option<PathBuf>,
    /// Ratings JSONL {"image_id", "caption_id", "human_score"} plus
    /// "caption_token_count" or "caption".
    #[arg(long, requires = "scores")]
    pub human: Option<PathBuf>,
    /// Token-count bucket edges, e.g. 60,120,180.
    #[arg(long, value_delimiter = ',')]
    pub buckets: Option<Vec<usize>>,
    /// Also report mean within-image Kendall tau.
    #[arg(long)]
    pub per_image: bool,
    #[arg(long, value_enum, default_value_t)]
    pub format: Format,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let report = json!({ "error": "Usage", "message": e.to_string().trim_end() });
            eprintln!("{report}");
            return ExitCode::from(2);
        }
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (kind, code) = commands::classify(&e);
            let report = json!({ "error": kind, "message": format!("{e:#}") });
            eprintln!("{report}");
            ExitCode::from(code)
        }
    }
}
