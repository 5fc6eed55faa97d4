use std::path::PathBuf;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "miae", version, about = "Hyperspectral/multispectral fusion with a model-inspired autoencoder")]
pub struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Simulate LR-HSI and HR-MSI observations from a reference cube.
    Simulate(SimulateArgs),
    /// Estimate the blur kernel and spectral response from the observations.
    Estimate(EstimateArgs),
    /// Fuse the observations into a high-resolution hyperspectral cube.
    Fuse(FuseArgs),
    /// Compare a cube against a reference.
    Evaluate(EvaluateArgs),
    /// Check every differentiable op against finite differences.
    Gradcheck(GradcheckArgs),
    /// Rerun the command recorded in a manifest.
    Replay(ReplayArgs),
    /// Write a synthetic reference cube.
    Synth(SynthArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::Estimate(_) => "estimate",
            Command::Fuse(_) => "fuse",
            Command::Evaluate(_) => "evaluate",
            Command::Gradcheck(_) => "gradcheck",
            Command::Replay(_) => "replay",
            Command::Synth(_) => "synth",
        }
    }

    pub fn out_dir_mut(&mut self) -> &mut PathBuf {
        match self {
            Command::Simulate(a) => &mut a.out_dir,
            Command::Estimate(a) => &mut a.out_dir,
            Command::Fuse(a) => &mut a.out_dir,
            Command::Evaluate(a) => &mut a.out_dir,
            Command::Gradcheck(a) => &mut a.out_dir,
            Command::Replay(a) => &mut a.out_dir,
            Command::Synth(a) => &mut a.out_dir,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[command(group(ArgGroup::new("response").required(true).args(["srf", "srf_boxes"])))]
pub struct SimulateArgs {
    /// Reference HR-HSI cube (HSC).
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub ratio: usize,
    /// Decimation phase; defaults to ratio/2.
    #[arg(long)]
    pub offset: Option<usize>,
    #[arg(long, default_value_t = 15)]
    pub kernel_size: usize,
    #[arg(long, default_value_t = 3.4)]
    pub sigma: f64,
    /// dB, or `inf` for no noise.
    #[arg(long, default_value_t = 30.0)]
    #[serde(with = "lossless_f64")]
    pub snr_hsi: f64,
    #[arg(long, default_value_t = 40.0)]
    #[serde(with = "lossless_f64")]
    pub snr_msi: f64,
    /// Spectral response CSV.
    #[arg(long)]
    pub srf: Option<PathBuf>,
    /// Use a box response with this many MSI bands.
    #[arg(long)]
    pub srf_boxes: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct EstimateArgs {
    #[arg(long)]
    pub lr_hsi: PathBuf,
    #[arg(long)]
    pub msi: PathBuf,
    #[arg(long)]
    pub ratio: usize,
    /// Decimation phase; defaults to ratio/2.
    #[arg(long)]
    pub offset: Option<usize>,
    #[arg(long, default_value_t = 15)]
    pub kernel_size: usize,
    #[arg(long, default_value_t = 5000)]
    pub iters: usize,
    #[arg(long, default_value_t = 5e-5)]
    pub rate: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InterpArg {
    Bilinear,
    Nearest,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct FuseArgs {
    #[arg(long)]
    pub lr_hsi: PathBuf,
    #[arg(long)]
    pub msi: PathBuf,
    /// Blur kernel (KRN); required unless --blind.
    #[arg(long, requires = "srf", conflicts_with = "blind")]
    pub kernel: Option<PathBuf>,
    /// Spectral response CSV; required unless --blind.
    #[arg(long, requires = "kernel", conflicts_with = "blind")]
    pub srf: Option<PathBuf>,
    /// Estimate kernel and response from the observations first.
    #[arg(long)]
    pub blind: bool,
    /// Resolution ratio; inferred from the cube sizes when omitted.
    #[arg(long)]
    pub ratio: Option<usize>,
    /// Decimation phase; defaults to ratio/2.
    #[arg(long)]
    pub offset: Option<usize>,
    #[arg(long, default_value_t = 80)]
    pub rank: usize,
    #[arg(long, default_value_t = 3)]
    pub stages: usize,
    #[arg(long, default_value_t = 10_000)]
    pub iters: usize,
    #[arg(long, default_value_t = 25)]
    pub batch: usize,
    #[arg(long, default_value_t = 40)]
    pub patch: usize,
    #[arg(long, default_value_t = 24)]
    pub stride: usize,
    #[arg(long, default_value_t = 5e-3)]
    pub rate: f64,
    #[arg(long, default_value_t = 1000)]
    pub decay_start: usize,
    #[arg(long, default_value_t = 9000)]
    pub decay_length: usize,
    #[arg(long, default_value_t = 0.01)]
    pub leaky_slope: f64,
    #[arg(long, value_enum, default_value_t = InterpArg::Bilinear)]
    pub interp: InterpArg,
    #[arg(long, default_value_t = 15)]
    pub blind_kernel_size: usize,
    #[arg(long, default_value_t = 5000)]
    pub blind_iters: usize,
    #[arg(long, default_value_t = 5e-5)]
    pub blind_rate: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct EvaluateArgs {
    #[arg(long = "ref")]
    pub reference: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub ratio: usize,
    /// Write `band,psnr_db` rows here.
    #[arg(long)]
    pub per_band_csv: Option<PathBuf>,
    /// Write `rank,sam_deg` rows (ascending) here.
    #[arg(long)]
    pub per_pixel_sam_csv: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultOp {
    FullyConnected,
    LeakyRelu,
    Clamp01,
    Concat,
    Blur,
    Subsample,
    Crop,
    Reshape,
    L1,
    Add,
    Scale,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Corrupt one backward rule (negative control).
    #[arg(long, value_enum, hide = true)]
    pub inject_fault: Option<FaultOp>,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
    /// Fail unless every output matches the recorded hash.
    #[arg(long)]
    pub verify: bool,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SceneKind {
    /// Independent smooth random field per band.
    Smooth,
    /// Linear mixture of smooth abundances.
    Mixture,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value_t = SceneKind::Mixture)]
    pub kind: SceneKind,
    #[arg(long, default_value_t = 31)]
    pub bands: usize,
    #[arg(long, default_value_t = 64)]
    pub height: usize,
    #[arg(long, default_value_t = 64)]
    pub width: usize,
    /// Endmember count of a mixture scene.
    #[arg(long, default_value_t = 5)]
    pub endmembers: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

/// JSON has no infinities; store non-finite values as strings.
mod lossless_f64 {
    use serde::{Deserialize, Deserializer, Serializer};

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str(&v.to_string())
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}
