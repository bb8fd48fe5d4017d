use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use siftleak_core::SiftParams;

#[derive(Debug, Parser)]
#[command(name = "siftleak", version, about = "Reconstruct images and keypoint locations from leaked SIFT features")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Image -> SFT1 keypoints and descriptors.
    ExtractSift(ExtractSiftArgs),
    /// Image -> 8-bit LBP code image.
    ExtractLbp(ExtractLbpArgs),
    /// SFT1 -> SMP1 dense feature map or keypoint-location map.
    BuildMap(BuildMapArgs),
    /// Image directory + key=value config -> checkpoints and a loss CSV.
    Train(TrainArgs),
    /// Checkpoint + SMP1 map -> reconstructed image.
    Reconstruct(ReconstructArgs),
    /// Coordinate-free SFT1 -> SFT1 with estimated coordinates.
    EstimateCoords(EstimateArgs),
    /// Ground-truth / reconstruction pairs -> PSNR, SSIM and PRM CSV.
    Evaluate(EvaluateArgs),
    /// Reconstruct and evaluate one image at several feature fractions.
    Sweep(SweepArgs),
    /// Writes a synthetic corpus of blob images.
    ToyCorpus(ToyArgs),
}

#[derive(Debug, Clone, Copy, Args)]
pub struct SiftArgs {
    #[arg(long, default_value_t = 3)]
    pub octaves: usize,
    #[arg(long, default_value_t = 3)]
    pub scales: usize,
    #[arg(long, default_value_t = 1.6)]
    pub sigma0: f64,
    #[arg(long, default_value_t = 0.03)]
    pub contrast: f32,
    #[arg(long, default_value_t = 10.0)]
    pub edge: f32,
}

impl SiftArgs {
    pub fn params(&self) -> SiftParams {
        SiftParams {
            octaves: self.octaves,
            scales_per_octave: self.scales,
            sigma0: self.sigma0,
            contrast_thresh: self.contrast,
            edge_ratio: self.edge,
        }
    }
}

#[derive(Debug, Args)]
pub struct ExtractSiftArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub sift: SiftArgs,
}

#[derive(Debug, Args)]
pub struct ExtractLbpArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct BuildMapArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Keypoint locations only, no descriptors.
    #[arg(long)]
    pub binary: bool,
    /// Keep this share of the keypoints, chosen at random.
    #[arg(long, default_value_t = 1.0)]
    pub fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory of PNG/PGM/PPM training images. The classifier stage also
    /// reads a `<stem>.lmk` landmark file next to each image.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory for checkpoints and `losses.csv`.
    #[arg(long)]
    pub output: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub sift: SiftArgs,
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Where the LBP estimate goes; defaults to `<output stem>_lbp.png`.
    #[arg(long)]
    pub lbp_output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Reference,
    Landmark,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Level {
    Descriptor,
    Image,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, value_enum)]
    pub method: Method,
    #[arg(long, value_enum, default_value_t = Level::Descriptor)]
    pub level: Level,
    /// Category map (`path<TAB>category`); paths are relative to the map file
    /// and name SFT1 files or images.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Region classifier checkpoint.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// 68-point landmark prior.
    #[arg(long)]
    pub landmarks: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub sift: SiftArgs,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Ground-truth image, or a directory of them.
    #[arg(long)]
    pub gt: PathBuf,
    /// Reconstruction, or a directory with files named like the ground truth.
    #[arg(long)]
    pub recon: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub id: Option<String>,
    #[arg(long, default_value = "recon")]
    pub variant: String,
    #[arg(long, default_value_t = 0.8)]
    pub threshold: f64,
    /// Accepted re-matches as `recon_idx gt_idx ratio` lines (single pair only).
    #[arg(long)]
    pub matches: Option<PathBuf>,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
    pub jobs: u16,
    #[command(flatten)]
    pub sift: SiftArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Ground-truth image; its SIFT features are subsampled per fraction.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = [0.25, 0.5, 0.75, 1.0])]
    pub fractions: Vec<f64>,
    #[arg(long)]
    pub binary: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.8)]
    pub threshold: f64,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
    pub jobs: u16,
    #[command(flatten)]
    pub sift: SiftArgs,
}

#[derive(Debug, Args)]
pub struct ToyArgs {
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub count: usize,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}
