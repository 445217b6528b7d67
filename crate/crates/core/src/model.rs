//! Domain types for the linear mixture model `X = A S + E`.
//!
//! Every constructor validates its invariants up front; a value of any of
//! these types is always internally consistent.

use ndarray::{Array2, Array3, ArrayView1, Axis as NdAxis};
use serde::{Deserialize, Serialize};

use crate::error::{Axis, Error, Result};
use crate::scalar::Scalar;

fn check_finite<T: Scalar>(data: &Array2<T>) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::NonFiniteValue(i)),
        None => Ok(()),
    }
}

fn check_nonnegative<T: Scalar>(data: &Array2<T>, what: &str) -> Result<()> {
    if let Some(((i, j), v)) = data.indexed_iter().find(|(_, v)| **v < T::zero()) {
        return Err(Error::InvalidData(format!("{what} entry ({i}, {j}) = {v} is negative")));
    }
    Ok(())
}

/// Observed hyperspectral data: `n` bands by `m = rows_px * cols_px` pixels.
///
/// Pixel `j` is the raster position `row * cols_px + col`. Negative entries
/// are allowed so that noisy scenes round-trip unchanged; the solvers clamp
/// on ingestion.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralCube<T> {
    data: Array2<T>,
    rows_px: usize,
    cols_px: usize,
    wavelengths: Option<Vec<f64>>,
    band_names: Option<Vec<String>>,
}

impl<T: Scalar> SpectralCube<T> {
    pub fn new(data: Array2<T>, rows_px: usize, cols_px: usize) -> Result<Self> {
        if rows_px == 0 || cols_px == 0 {
            return Err(Error::InvalidData(format!(
                "spatial shape {rows_px}x{cols_px} is empty"
            )));
        }
        if data.ncols() != rows_px * cols_px {
            return Err(Error::DimensionMismatch {
                axis: Axis::Pixels,
                expected: rows_px * cols_px,
                found: data.ncols(),
            });
        }
        if data.nrows() == 0 {
            return Err(Error::InvalidData("cube has no bands".into()));
        }
        check_finite(&data)?;
        Ok(Self {
            data,
            rows_px,
            cols_px,
            wavelengths: None,
            band_names: None,
        })
    }

    /// Builds a cube from band-major spatial form `(n, rows_px, cols_px)`.
    pub fn from_spatial(cube: Array3<T>) -> Result<Self> {
        let (n, rows, cols) = cube.dim();
        let flat = cube
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((n, rows * cols))
            .map_err(|e| Error::InvalidData(e.to_string()))?;
        Self::new(flat, rows, cols)
    }

    /// Inverse of [`SpectralCube::from_spatial`].
    pub fn to_spatial(&self) -> Array3<T> {
        self.data
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((self.n_bands(), self.rows_px, self.cols_px))
            .expect("pixel count matches spatial shape by construction")
    }

    pub fn with_wavelengths(mut self, wavelengths: Vec<f64>) -> Result<Self> {
        if wavelengths.len() != self.n_bands() {
            return Err(Error::DimensionMismatch {
                axis: Axis::Bands,
                expected: self.n_bands(),
                found: wavelengths.len(),
            });
        }
        if wavelengths.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidData("non-finite wavelength".into()));
        }
        if wavelengths.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidData("wavelengths must be strictly increasing".into()));
        }
        self.wavelengths = Some(wavelengths);
        Ok(self)
    }

    pub fn with_band_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.n_bands() {
            return Err(Error::DimensionMismatch {
                axis: Axis::Bands,
                expected: self.n_bands(),
                found: names.len(),
            });
        }
        self.band_names = Some(names);
        Ok(self)
    }

    pub fn data(&self) -> &Array2<T> {
        &self.data
    }

    pub fn into_data(self) -> Array2<T> {
        self.data
    }

    pub fn n_bands(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_pixels(&self) -> usize {
        self.data.ncols()
    }

    pub fn rows_px(&self) -> usize {
        self.rows_px
    }

    pub fn cols_px(&self) -> usize {
        self.cols_px
    }

    pub fn wavelengths(&self) -> Option<&[f64]> {
        self.wavelengths.as_deref()
    }

    pub fn band_names(&self) -> Option<&[String]> {
        self.band_names.as_deref()
    }

    /// Same spatial shape and metadata, new data of identical dimensions.
    pub fn with_data(&self, data: Array2<T>) -> Result<Self> {
        if data.dim() != self.data.dim() {
            return Err(Error::DimensionMismatch {
                axis: if data.nrows() != self.n_bands() {
                    Axis::Bands
                } else {
                    Axis::Pixels
                },
                expected: if data.nrows() != self.n_bands() {
                    self.n_bands()
                } else {
                    self.n_pixels()
                },
                found: if data.nrows() != self.n_bands() {
                    data.nrows()
                } else {
                    data.ncols()
                },
            });
        }
        check_finite(&data)?;
        Ok(Self {
            data,
            rows_px: self.rows_px,
            cols_px: self.cols_px,
            wavelengths: self.wavelengths.clone(),
            band_names: self.band_names.clone(),
        })
    }

    /// Copy of the data with every entry below `floor` raised to it, plus
    /// the number of entries that were raised.
    pub fn clamped_data(&self, floor: T) -> (Array2<T>, usize) {
        let mut count = 0;
        let data = self.data.mapv(|v| {
            if v < floor {
                count += 1;
                floor
            } else {
                v
            }
        });
        (data, count)
    }
}

/// Endmember spectra `A` (`n x r`), one column per material.
#[derive(Debug, Clone, PartialEq)]
pub struct EndmemberMatrix<T> {
    data: Array2<T>,
    names: Option<Vec<String>>,
}

impl<T: Scalar> EndmemberMatrix<T> {
    pub fn new(data: Array2<T>) -> Result<Self> {
        if data.ncols() == 0 || data.nrows() == 0 {
            return Err(Error::InvalidData("endmember matrix is empty".into()));
        }
        check_finite(&data)?;
        check_nonnegative(&data, "endmember")?;
        if let Some(j) = data
            .axis_iter(NdAxis(1))
            .position(|col| col.iter().all(|v| *v == T::zero()))
        {
            return Err(Error::InvalidData(format!("endmember column {j} is identically zero")));
        }
        Ok(Self { data, names: None })
    }

    pub fn with_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.n_endmembers() {
            return Err(Error::DimensionMismatch {
                axis: Axis::Endmembers,
                expected: self.n_endmembers(),
                found: names.len(),
            });
        }
        self.names = Some(names);
        Ok(self)
    }

    pub fn data(&self) -> &Array2<T> {
        &self.data
    }

    pub fn into_data(self) -> Array2<T> {
        self.data
    }

    pub fn names(&self) -> Option<&[String]> {
        self.names.as_deref()
    }

    pub fn n_bands(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_endmembers(&self) -> usize {
        self.data.ncols()
    }

    /// Spectrum of endmember `i`.
    pub fn column(&self, i: usize) -> ArrayView1<'_, T> {
        self.data.column(i)
    }

    /// Population mean of each column.
    pub fn column_means(&self) -> Vec<T> {
        let n = T::of(self.n_bands() as f64);
        self.data.axis_iter(NdAxis(1)).map(|c| c.sum() / n).collect()
    }
}

/// Abundance fractions `S` (`r x m`), one row per endmember.
#[derive(Debug, Clone, PartialEq)]
pub struct AbundanceMatrix<T> {
    data: Array2<T>,
}

impl<T: Scalar> AbundanceMatrix<T> {
    pub fn new(data: Array2<T>) -> Result<Self> {
        if data.ncols() == 0 || data.nrows() == 0 {
            return Err(Error::InvalidData("abundance matrix is empty".into()));
        }
        check_finite(&data)?;
        check_nonnegative(&data, "abundance")?;
        Ok(Self { data })
    }

    pub fn data(&self) -> &Array2<T> {
        &self.data
    }

    pub fn into_data(self) -> Array2<T> {
        self.data
    }

    pub fn n_endmembers(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_pixels(&self) -> usize {
        self.data.ncols()
    }

    /// Scales every pixel column to sum to one. All-zero columns are left
    /// as they are.
    pub fn renormalized(&self) -> Self {
        let mut data = self.data.clone();
        for mut col in data.axis_iter_mut(NdAxis(1)) {
            let total = col.sum();
            if total > T::zero() {
                col.mapv_inplace(|v| v / total);
            }
        }
        Self { data }
    }
}

/// Data-fit term of the factorization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Squared Frobenius norm.
    Fnorm,
    /// Generalized Kullback-Leibler divergence.
    Div,
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fnorm" => Ok(Variant::Fnorm),
            "div" => Ok(Variant::Div),
            other => Err(Error::InvalidConfig(format!("unknown variant {other:?}"))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Fnorm => "fnorm",
            Variant::Div => "div",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitMethod {
    Nndsvd,
    Random,
}

impl std::str::FromStr for InitMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nndsvd" => Ok(InitMethod::Nndsvd),
            "random" => Ok(InitMethod::Random),
            other => Err(Error::InvalidConfig(format!("unknown init {other:?}"))),
        }
    }
}

/// What replaces the exact zeros NNDSVD leaves in its factors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeroFill {
    /// Leave zeros (the solver still floors them at the epsilon guard).
    Zeros,
    /// Mean of the data divided by 100.
    MeanOver100,
    /// Uniform on `(0, mean/100)`, drawn from the solver seed.
    RandomSmall,
}

/// Divisor applied to each endmember column during normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationDivisor {
    /// Population standard deviation: columns end with unit variance.
    StdDev,
    /// Population variance, read literally.
    Variance,
}

/// Quantity whose relative change drives the tolerance stop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopStatistic {
    /// Full objective: fit minus `gamma` times average kurtosis.
    Objective,
    /// Data-fit term only.
    FitOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub variant: Variant,
    pub gamma: f64,
    pub theta: f64,
    pub t_max: usize,
    pub c_min: f64,
    pub init: InitMethod,
    pub seed: u64,
    pub epsilon_guard: f64,
    pub compensate_normalization: bool,
    pub normalization_divisor: NormalizationDivisor,
    pub stop_on: StopStatistic,
    pub zero_fill: ZeroFill,
}

impl SolverConfig {
    pub const DEFAULT_T_MAX: usize = 1000;
    pub const DEFAULT_C_MIN: f64 = 1e-5;
    pub const DEFAULT_EPSILON: f64 = 1e-12;

    /// Tuned defaults: `gamma = 3, theta = 0.4` for the Frobenius variant and
    /// `gamma = 8, theta = 0.4` for the divergence variant.
    pub fn for_variant(variant: Variant) -> Self {
        let gamma = match variant {
            Variant::Fnorm => 3.0,
            Variant::Div => 8.0,
        };
        Self {
            variant,
            gamma,
            theta: 0.4,
            t_max: Self::DEFAULT_T_MAX,
            c_min: Self::DEFAULT_C_MIN,
            init: InitMethod::Nndsvd,
            seed: 0,
            epsilon_guard: Self::DEFAULT_EPSILON,
            compensate_normalization: true,
            normalization_divisor: NormalizationDivisor::StdDev,
            stop_on: StopStatistic::Objective,
            zero_fill: ZeroFill::MeanOver100,
        }
    }

    /// Plain multiplicative-update NMF: no kurtosis term, no smoothing.
    pub fn baseline(variant: Variant) -> Self {
        Self {
            gamma: 0.0,
            theta: 0.0,
            ..Self::for_variant(variant)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(Error::InvalidTheta(self.theta));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "gamma = {} must be finite and nonnegative",
                self.gamma
            )));
        }
        if self.t_max == 0 {
            return Err(Error::InvalidConfig("t_max must be at least 1".into()));
        }
        if self.c_min.is_nan() || self.c_min <= 0.0 {
            return Err(Error::InvalidConfig(format!("c_min = {} must be positive", self.c_min)));
        }
        if !(self.epsilon_guard > 0.0 && self.epsilon_guard.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "epsilon_guard = {} must be positive",
                self.epsilon_guard
            )));
        }
        Ok(())
    }
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self::for_variant(Variant::Fnorm)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    MaxIters,
    Tolerance,
}

/// Output of a solver run.
///
/// Traces hold one entry for the initial point followed by one per
/// completed iteration.
#[derive(Debug, Clone)]
pub struct UnmixResult<T> {
    pub endmembers: EndmemberMatrix<T>,
    pub abundances: AbundanceMatrix<T>,
    pub objective_trace: Vec<T>,
    pub fit_trace: Vec<T>,
    /// Average excess kurtosis of the endmember columns.
    pub kurtosis_trace: Vec<T>,
    pub iterations_run: usize,
    pub termination: Termination,
    /// Update denominators that went nonpositive and were floored.
    pub floored_denominators: u64,
    /// Data entries raised to the epsilon guard on ingestion.
    pub clamped_inputs: usize,
}

impl<T: Scalar> UnmixResult<T> {
    /// Last relative objective change, `None` before two iterations.
    pub fn last_relative_change(&self) -> Option<T> {
        let k = self.objective_trace.len();
        if self.iterations_run < 2 || k < 2 {
            return None;
        }
        let prev = self.objective_trace[k - 2];
        let cur = self.objective_trace[k - 1];
        Some((prev - cur).abs() / prev.abs())
    }

    /// Endmembers rescaled for plotting: each column is scaled so its peak
    /// equals the peak reflectance of the pixel whose spectrum is closest in
    /// angle to it. Abundance rows are scaled inversely so `A S` is kept.
    pub fn rescaled_to_data(&self, cube: &SpectralCube<T>) -> Result<(EndmemberMatrix<T>, AbundanceMatrix<T>)> {
        validate_dimensions(cube, &self.endmembers, &self.abundances)?;
        let x = cube.data();
        let mut a = self.endmembers.data().clone();
        let mut s = self.abundances.data().clone();
        for i in 0..a.ncols() {
            let col = a.column(i).to_owned();
            let col_norm = col.dot(&col).sqrt();
            let mut best = (T::neg_infinity(), 0usize);
            for (j, px) in x.axis_iter(NdAxis(1)).enumerate() {
                let pn = px.dot(&px).sqrt();
                if pn <= T::zero() {
                    continue;
                }
                let cos = px.dot(&col) / (pn * col_norm);
                if cos > best.0 {
                    best = (cos, j);
                }
            }
            let target = x.column(best.1).fold(T::neg_infinity(), |m, v| m.max(*v));
            let peak = col.fold(T::neg_infinity(), |m, v| m.max(*v));
            if target > T::zero() && peak > T::zero() {
                let k = target / peak;
                a.column_mut(i).mapv_inplace(|v| v * k);
                s.row_mut(i).mapv_inplace(|v| v / k);
            }
        }
        let mut endmembers = EndmemberMatrix::new(a)?;
        if let Some(names) = self.endmembers.names() {
            endmembers = endmembers.with_names(names.to_vec())?;
        }
        Ok((endmembers, AbundanceMatrix::new(s)?))
    }
}

/// Checks that `A` is `n x r` and `S` is `r x m` for the cube's `n` and `m`.
pub fn validate_dimensions<T: Scalar>(
    cube: &SpectralCube<T>,
    endmembers: &EndmemberMatrix<T>,
    abundances: &AbundanceMatrix<T>,
) -> Result<()> {
    check_shapes(cube.data(), endmembers.data(), abundances.data())
}

pub(crate) fn check_shapes<T>(x: &Array2<T>, a: &Array2<T>, s: &Array2<T>) -> Result<()> {
    if a.nrows() != x.nrows() {
        return Err(Error::DimensionMismatch {
            axis: Axis::Bands,
            expected: x.nrows(),
            found: a.nrows(),
        });
    }
    if s.ncols() != x.ncols() {
        return Err(Error::DimensionMismatch {
            axis: Axis::Pixels,
            expected: x.ncols(),
            found: s.ncols(),
        });
    }
    if s.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch {
            axis: Axis::Endmembers,
            expected: a.ncols(),
            found: s.nrows(),
        });
    }
    Ok(())
}
