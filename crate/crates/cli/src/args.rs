//! Command-line flags.

use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use kbsnmf_core::model::{InitMethod, StopStatistic, Variant, ZeroFill};

#[derive(Debug, Parser)]
#[command(
    name = "kbsnmf",
    version,
    about = "Kurtosis-based smooth NMF for hyperspectral unmixing"
)]
pub struct Cli {
    /// Only print warnings and errors on stderr.
    #[arg(short, long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic scene with ground truth.
    Synth(SynthArgs),
    /// Extract endmembers and abundances from a cube.
    Unmix(UnmixArgs),
    /// Score an extraction against ground truth.
    Eval(EvalArgs),
    /// Run a grid of synthetic experiments.
    Sweep(SweepArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

/// `RxC` spatial size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Size {
    pub rows: usize,
    pub cols: usize,
}

impl FromStr for Size {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (r, c) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| format!("expected RxC, got {s:?}"))?;
        let parse = |v: &str| -> Result<usize, String> {
            match v.trim().parse::<usize>() {
                Ok(0) => Err(format!("{s:?}: sides must be positive")),
                Ok(n) => Ok(n),
                Err(e) => Err(format!("{s:?}: {e}")),
            }
        };
        Ok(Size {
            rows: parse(r)?,
            cols: parse(c)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Toggle {
    On,
    Off,
}

impl Toggle {
    pub fn is_on(self) -> bool {
        self == Toggle::On
    }
}

/// Positive, possibly infinite, signal-to-noise ratio in dB.
pub fn parse_snr(s: &str) -> Result<f64, String> {
    let v: f64 = match s.trim().to_ascii_lowercase().as_str() {
        "inf" | "clean" => f64::INFINITY,
        t => t.parse().map_err(|e| format!("{s:?}: {e}"))?,
    };
    if v.is_nan() {
        return Err("SNR must be a number".into());
    }
    Ok(v)
}

fn parse_unit_interval(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{s:?}: {e}"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} is outside [0, 1]"))
    }
}

fn parse_nonnegative(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{s:?}: {e}"))?;
    if v >= 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{v} must be finite and nonnegative"))
    }
}

fn parse_positive(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{s:?}: {e}"))?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{v} must be finite and positive"))
    }
}

fn parse_purity(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{s:?}: {e}"))?;
    if v > 0.0 && v <= 1.0 {
        Ok(v)
    } else {
        Err(format!("{v} is outside (0, 1]"))
    }
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: kbsnmf_core::Error| e.to_string())
}

fn parse_init(s: &str) -> Result<InitMethod, String> {
    s.parse().map_err(|e: kbsnmf_core::Error| e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StopOn {
    Objective,
    Fit,
}

impl From<StopOn> for StopStatistic {
    fn from(s: StopOn) -> Self {
        match s {
            StopOn::Objective => StopStatistic::Objective,
            StopOn::Fit => StopStatistic::FitOnly,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Fill {
    Zeros,
    Mean,
    Random,
}

impl From<Fill> for ZeroFill {
    fn from(f: Fill) -> Self {
        match f {
            Fill::Zeros => ZeroFill::Zeros,
            Fill::Mean => ZeroFill::MeanOver100,
            Fill::Random => ZeroFill::RandomSmall,
        }
    }
}

/// Scene parameters shared by `synth` and `sweep`.
#[derive(Debug, Clone, Args)]
pub struct SceneArgs {
    /// Number of endmembers.
    #[arg(long = "endmembers", short = 'r', default_value_t = 3)]
    pub endmembers: usize,
    /// Spatial size as RxC.
    #[arg(long, default_value = "64x64")]
    pub size: Size,
    /// Band count, sampled evenly from the library grid (all bands if omitted).
    #[arg(long)]
    pub bands: Option<usize>,
    /// Gaussian-field correlation length in pixels.
    #[arg(long, default_value_t = 6.0, value_parser = parse_positive)]
    pub field_scale: f64,
    /// Cap on any endmember's share of a pixel.
    #[arg(long, default_value_t = 1.0, value_parser = parse_purity)]
    pub purity: f64,
    /// Field gain before exponentiation; larger means purer pixels.
    #[arg(long, default_value_t = 1.5, value_parser = parse_positive)]
    pub contrast: f64,
    /// Signal-to-noise ratio in dB; clean when omitted.
    #[arg(long, value_parser = parse_snr)]
    pub snr: Option<f64>,
    /// `bundled` or a spectra CSV file.
    #[arg(long, default_value = "bundled")]
    pub library: String,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub scene: SceneArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

/// Solver flags shared by `unmix` and `sweep`.
#[derive(Debug, Clone, Args)]
pub struct SolverArgs {
    #[arg(long, default_value = "fnorm", value_parser = parse_variant)]
    pub variant: Variant,
    /// Kurtosis weight; 3 for fnorm and 8 for div when omitted.
    #[arg(long, value_parser = parse_nonnegative)]
    pub gamma: Option<f64>,
    /// Smoothing strength; 0.4 when omitted.
    #[arg(long, value_parser = parse_unit_interval)]
    pub theta: Option<f64>,
    #[arg(long, default_value_t = 1000)]
    pub max_iters: usize,
    /// Relative objective change that stops the iteration.
    #[arg(long, default_value_t = 1e-5, value_parser = parse_positive)]
    pub tol: f64,
    #[arg(long, default_value = "nndsvd", value_parser = parse_init)]
    pub init: InitMethod,
    /// Fill for zero entries of the NNDSVD factors.
    #[arg(long, value_enum, default_value = "mean")]
    pub zero_fill: Fill,
    /// Statistic tested against --tol.
    #[arg(long, value_enum, default_value = "objective")]
    pub stop_on: StopOn,
    /// Leave abundances unscaled when endmembers are normalized.
    #[arg(long)]
    pub no_compensate: bool,
    /// Floor for denominators and factor entries.
    #[arg(long, default_value_t = 1e-12, value_parser = parse_positive)]
    pub epsilon: f64,
}

#[derive(Debug, Clone, Args)]
pub struct UnmixArgs {
    /// Input cube.
    #[arg(long)]
    pub input: PathBuf,
    /// Number of endmembers to extract.
    #[arg(long = "endmembers", short = 'r')]
    pub endmembers: usize,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Directory written by `unmix`.
    #[arg(long)]
    pub extracted: PathBuf,
    /// Directory written by `synth`.
    #[arg(long)]
    pub truth: PathBuf,
    /// Scale extracted abundance columns to sum to one before RMSE.
    #[arg(long, value_enum, default_value = "on")]
    pub renormalize: Toggle,
    /// Report file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    /// Axes as `name=start:stop:step` or `name=value`, comma separated.
    /// Names: gamma, theta, snr, bands, side, endmembers.
    #[arg(long)]
    pub grid: String,
    /// Seeded repeats per cell.
    #[arg(long, default_value_t = 1)]
    pub repeats: usize,
    /// Base seed; cell i, repeat k uses base + i + k * cells.
    #[arg(long = "seeds", default_value_t = 0)]
    pub base_seed: u64,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    pub parallel: usize,
    /// Share one scene per repeat across all cells.
    #[arg(long)]
    pub fixed_scene: bool,
    /// Run the plain NMF solver instead (gamma and theta ignored).
    #[arg(long)]
    pub baseline: bool,
    #[arg(long, value_enum, default_value = "on")]
    pub renormalize: Toggle,
    #[command(flatten)]
    pub scene: SceneArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Results table.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory; the manifest's own directory when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
