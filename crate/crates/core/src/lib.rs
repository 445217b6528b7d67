//! Kurtosis-based smooth nonnegative matrix factorization (KbSNMF) for blind
//! hyperspectral unmixing.
//!
//! The crate models a hyperspectral scene as `X ~ A M S`: `A` holds
//! endmember spectra (bands by materials), `S` per-pixel abundances and `M`
//! a smoothing matrix. Besides the constrained solver in [`kbsnmf`] it
//! provides the plain multiplicative-update baseline ([`nmf`]), NNDSVD
//! initialization ([`init`]), synthetic scenes and noise ([`synth`]),
//! SAD/RMSE evaluation with optimal endmember matching ([`metrics`]) and
//! the file formats used by the command-line harness ([`io`]).
//!
//! All numeric code is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the precision.

pub mod error;
pub mod init;
pub mod io;
pub mod kbsnmf;
pub mod kurtosis;
pub mod metrics;
pub mod model;
pub mod nmf;
pub mod scalar;
pub mod synth;

pub use error::{Error, Result};
pub use kbsnmf::{smoothing_matrix, solve, SmoothingMatrix};
pub use kurtosis::KurtosisReport;
pub use metrics::EvaluationReport;
pub use model::{
    validate_dimensions, AbundanceMatrix, EndmemberMatrix, InitMethod, NormalizationDivisor, SolverConfig,
    SpectralCube, StopStatistic, Termination, UnmixResult, Variant, ZeroFill,
};
pub use nmf::solve_baseline;
pub use scalar::Scalar;
pub use synth::{SpectralLibrary, SynthSpec};

pub type SpectralCube64 = SpectralCube<f64>;
pub type EndmemberMatrix64 = EndmemberMatrix<f64>;
pub type AbundanceMatrix64 = AbundanceMatrix<f64>;
pub type UnmixResult64 = UnmixResult<f64>;

pub type SpectralCube32 = SpectralCube<f32>;
pub type EndmemberMatrix32 = EndmemberMatrix<f32>;
pub type AbundanceMatrix32 = AbundanceMatrix<f32>;
pub type UnmixResult32 = UnmixResult<f32>;
