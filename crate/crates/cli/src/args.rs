use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "sghc", version, about = "Semantic-guided hierarchical codebook tokenizer")]
pub struct Cli {
    /// Worker threads (default: available parallelism). Outputs do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Stage one: train and freeze the semantic codebook.
    TrainSemantic(TrainSemanticArgs),
    /// Stage two: train pixel sub-codebooks against a frozen semantic codebook.
    TrainPixel(TrainPixelArgs),
    /// Tokenize one image into a framed SGID token file.
    Quantize(QuantizeArgs),
    /// Decode a token file back into an image.
    Reconstruct(ReconstructArgs),
    /// Variance reduction ratio under random, semantic, flat k-means and hierarchical codes.
    Vrr(VrrArgs),
    /// Write the flattened embedding table and its token-string manifest.
    ExportVocab(ExportVocabArgs),
    /// Summarize a codebook file, optionally with usage over a corpus.
    Stats(StatsArgs),
    /// Write a seeded synthetic PGM corpus.
    SynthCorpus(SynthCorpusArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InitArg {
    #[value(name = "kmeans++")]
    KMeansPlusPlus,
    #[value(name = "random")]
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Generation,
    Understanding,
}

#[derive(Debug, Args)]
pub struct FeatureArgs {
    /// Patch side length P.
    #[arg(long, default_value_t = 8)]
    pub patch: usize,
    /// Low band L kept as the semantic proxy (L × L coefficients).
    #[arg(long, default_value_t = 4)]
    pub low: usize,
}

#[derive(Debug, Args)]
pub struct TrainingArgs {
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1024)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.99)]
    pub momentum: f32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = InitArg::KMeansPlusPlus)]
    pub init: InitArg,
    /// Epochs without assignments before a code is revived (0 disables revival).
    #[arg(long, default_value_t = 2)]
    pub dead_code_epochs: usize,
}

#[derive(Debug, Args)]
pub struct TrainSemanticArgs {
    /// Directory of PGM/PPM images.
    #[arg(long, required_unless_present = "features", conflicts_with = "features")]
    pub corpus: Option<PathBuf>,
    /// SGHF semantic feature files used instead of the DCT proxy.
    #[arg(long, num_args = 1..)]
    pub features: Vec<PathBuf>,
    #[arg(long, default_value_t = 16384)]
    pub k: usize,
    /// Size of each (zero-initialized) pixel sub-codebook.
    #[arg(long, default_value_t = 12)]
    pub m: usize,
    #[command(flatten)]
    pub training: TrainingArgs,
    #[command(flatten)]
    pub features_spec: FeatureArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainPixelArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// SGHF semantic feature files paired with the corpus images in name order.
    #[arg(long, num_args = 1..)]
    pub sem_features: Vec<PathBuf>,
    /// Input codebook with a frozen semantic part.
    #[arg(long)]
    pub codebook: PathBuf,
    #[command(flatten)]
    pub training: TrainingArgs,
    #[command(flatten)]
    pub features_spec: FeatureArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct QuantizeArgs {
    #[arg(long)]
    pub image: PathBuf,
    /// SGHF semantic features for the image instead of the DCT proxy.
    #[arg(long)]
    pub sem_features: Option<PathBuf>,
    #[arg(long)]
    pub codebook: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Generation)]
    pub mode: ModeArg,
    /// Text vocabulary size V; special tokens and image codes are placed after it.
    #[arg(long, default_value_t = 0)]
    pub text_vocab: u32,
    /// Also write the frame as token strings.
    #[arg(long)]
    pub text: Option<PathBuf>,
    #[command(flatten)]
    pub features_spec: FeatureArgs,
    /// SGID token file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    #[arg(long)]
    pub tokens: PathBuf,
    #[arg(long)]
    pub codebook: PathBuf,
    /// Grid width in cells (default: square grid).
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub text_vocab: u32,
    /// Decode semantic codes only, zeroing everything outside the low band.
    #[arg(long)]
    pub semantic_only: bool,
    /// Original image to score the reconstruction against.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[command(flatten)]
    pub features_spec: FeatureArgs,
    /// Output PGM.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct VrrArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub codebook: PathBuf,
    /// Seeds of the random-assignment baseline.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
    pub seeds: Vec<u64>,
    /// Patch-weighted within-code variance.
    #[arg(long)]
    pub pooled: bool,
    /// Divide by n instead of n - 1.
    #[arg(long)]
    pub population: bool,
    /// Leave the DC coefficient out of the variance.
    #[arg(long)]
    pub exclude_dc: bool,
    #[arg(long, default_value_t = 25)]
    pub kmeans_iters: usize,
    /// Seed of the flat k-means baseline.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write a tab-separated table.
    #[arg(long)]
    pub table: Option<PathBuf>,
    /// Also write the key=value records.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub features_spec: FeatureArgs,
}

#[derive(Debug, Args)]
pub struct ExportVocabArgs {
    #[arg(long)]
    pub codebook: PathBuf,
    /// Embedding table as an SGHF grid of K·m rows.
    #[arg(long)]
    pub out: PathBuf,
    /// Token-string manifest (default: OUT with a .tokens.tsv suffix).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub codebook: PathBuf,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[command(flatten)]
    pub features_spec: FeatureArgs,
}

#[derive(Debug, Args)]
pub struct SynthCorpusArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 50)]
    pub count: usize,
    /// Image side length in pixels.
    #[arg(long, default_value_t = 96)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}
