//! Synthetic scenes: library spectra mixed by Gaussian-random-field
//! abundances, plus SNR-controlled white Gaussian noise.

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AbundanceMatrix, EndmemberMatrix, SpectralCube};
use crate::scalar::Scalar;

/// Named reflectance spectra sampled on a shared band grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralLibrary {
    names: Vec<String>,
    wavelengths: Option<Vec<f64>>,
    /// Bands by spectra.
    spectra: Array2<f64>,
}

impl SpectralLibrary {
    pub fn new(names: Vec<String>, spectra: Array2<f64>, wavelengths: Option<Vec<f64>>) -> Result<Self> {
        if names.len() != spectra.ncols() {
            return Err(Error::InvalidData(format!(
                "{} names for {} spectra",
                names.len(),
                spectra.ncols()
            )));
        }
        if spectra.nrows() == 0 || spectra.ncols() == 0 {
            return Err(Error::InvalidData("empty spectral library".into()));
        }
        if let Some(i) = spectra.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue(i));
        }
        if let Some(w) = &wavelengths {
            if w.len() != spectra.nrows() {
                return Err(Error::InvalidData(format!(
                    "{} wavelengths for {} bands",
                    w.len(),
                    spectra.nrows()
                )));
            }
        }
        Ok(Self {
            names,
            wavelengths,
            spectra,
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn wavelengths(&self) -> Option<&[f64]> {
        self.wavelengths.as_deref()
    }

    /// Bands by spectra.
    pub fn spectra(&self) -> &Array2<f64> {
        &self.spectra
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn n_bands(&self) -> usize {
        self.spectra.nrows()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

/// Continuum plus Gaussian features; amplitudes are signed (dips < 0).
struct AnalyticSpectrum {
    name: &'static str,
    base: f64,
    slope: f64,
    /// (center nm, width nm, amplitude)
    features: &'static [(f64, f64, f64)],
}

const BUNDLED: &[AnalyticSpectrum] = &[
    AnalyticSpectrum {
        name: "Seawater",
        base: 0.06,
        slope: -0.05,
        features: &[(470.0, 60.0, 0.10), (560.0, 40.0, 0.04)],
    },
    AnalyticSpectrum {
        name: "Clintonite",
        base: 0.30,
        slope: 0.25,
        features: &[(900.0, 120.0, -0.15), (1400.0, 30.0, -0.12), (2300.0, 40.0, -0.20)],
    },
    AnalyticSpectrum {
        name: "Sodiumbicarbonate",
        base: 0.70,
        slope: -0.10,
        features: &[(1450.0, 50.0, -0.30), (1950.0, 60.0, -0.35), (2200.0, 25.0, -0.15)],
    },
    AnalyticSpectrum {
        name: "Kaolinite",
        base: 0.55,
        slope: 0.15,
        features: &[(1400.0, 20.0, -0.18), (2165.0, 15.0, -0.20), (2205.0, 15.0, -0.25)],
    },
    AnalyticSpectrum {
        name: "Alunite",
        base: 0.45,
        slope: 0.20,
        features: &[(1760.0, 25.0, -0.12), (2170.0, 30.0, -0.22), (2320.0, 40.0, -0.10)],
    },
    AnalyticSpectrum {
        name: "Calcite",
        base: 0.80,
        slope: -0.05,
        features: &[(2340.0, 35.0, -0.40), (1990.0, 20.0, -0.08)],
    },
    AnalyticSpectrum {
        name: "Muscovite",
        base: 0.50,
        slope: 0.10,
        features: &[(1410.0, 25.0, -0.15), (2200.0, 25.0, -0.30), (2350.0, 30.0, -0.12)],
    },
    AnalyticSpectrum {
        name: "Hematite",
        base: 0.12,
        slope: 0.35,
        features: &[(860.0, 90.0, -0.08), (750.0, 60.0, 0.15)],
    },
    AnalyticSpectrum {
        name: "Jarosite",
        base: 0.25,
        slope: 0.30,
        features: &[(430.0, 30.0, -0.05), (920.0, 80.0, -0.14), (2265.0, 25.0, -0.18)],
    },
    AnalyticSpectrum {
        name: "Montmorillonite",
        base: 0.60,
        slope: 0.05,
        features: &[(1410.0, 40.0, -0.25), (1910.0, 45.0, -0.35), (2205.0, 30.0, -0.18)],
    },
    AnalyticSpectrum {
        name: "Buddingtonite",
        base: 0.40,
        slope: 0.15,
        features: &[(1560.0, 40.0, -0.10), (2020.0, 30.0, -0.16), (2120.0, 30.0, -0.14)],
    },
    AnalyticSpectrum {
        name: "Vegetation",
        base: 0.05,
        slope: 0.00,
        features: &[
            (550.0, 30.0, 0.06),
            (1050.0, 250.0, 0.45),
            (1650.0, 150.0, 0.25),
            (2200.0, 120.0, 0.12),
        ],
    },
    AnalyticSpectrum {
        name: "Asphalt",
        base: 0.08,
        slope: 0.06,
        features: &[(1700.0, 200.0, 0.02)],
    },
    AnalyticSpectrum {
        name: "Rutile",
        base: 0.15,
        slope: 0.40,
        features: &[(420.0, 50.0, -0.10), (700.0, 100.0, 0.10)],
    },
];

/// Band count of the bundled library (400 to 2500 nm, uniformly spaced).
pub const BUNDLED_BANDS: usize = 224;

/// Fourteen analytic stand-in spectra on a 224-band grid from 400 to
/// 2500 nm, reflectances clamped into `[0.01, 0.99]`.
pub fn bundled_library() -> SpectralLibrary {
    let step = 2100.0 / (BUNDLED_BANDS - 1) as f64;
    let wavelengths: Vec<f64> = (0..BUNDLED_BANDS).map(|k| 400.0 + k as f64 * step).collect();
    let mut spectra = Array2::zeros((BUNDLED_BANDS, BUNDLED.len()));
    for (j, spec) in BUNDLED.iter().enumerate() {
        for (k, &w) in wavelengths.iter().enumerate() {
            let mut v = spec.base + spec.slope * (w - 400.0) / 2100.0;
            for &(c, width, amp) in spec.features {
                let d = (w - c) / width;
                v += amp * (-0.5 * d * d).exp();
            }
            spectra[[k, j]] = v.clamp(0.01, 0.99);
        }
    }
    let names = BUNDLED.iter().map(|s| s.name.to_string()).collect();
    SpectralLibrary::new(names, spectra, Some(wavelengths)).expect("bundled library is well formed")
}

/// Parameters of a synthetic scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    /// Endmember count.
    pub r: usize,
    pub rows_px: usize,
    pub cols_px: usize,
    /// Standard deviation, in pixels, of the Gaussian kernel smoothing the
    /// abundance fields.
    pub field_scale: f64,
    /// Cap on any single endmember's share of a pixel; 1 allows pure pixels.
    pub purity: f64,
    /// Gain applied to the unit-variance fields before exponentiation.
    /// Larger values give more nearly pure pixels.
    pub contrast: f64,
    pub seed: u64,
    /// Library spectra to use, by name; the first `r` when absent.
    pub endmembers: Option<Vec<String>>,
    /// Number of bands, sampled evenly across the library grid; all bands
    /// when absent.
    pub bands: Option<usize>,
}

impl SynthSpec {
    pub fn new(r: usize, rows_px: usize, cols_px: usize, seed: u64) -> Self {
        Self {
            r,
            rows_px,
            cols_px,
            field_scale: 6.0,
            purity: 1.0,
            contrast: 1.5,
            seed,
            endmembers: None,
            bands: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.r == 0 {
            return Err(Error::InvalidSpec("r must be at least 1".into()));
        }
        if self.rows_px == 0 || self.cols_px == 0 {
            return Err(Error::InvalidSpec("spatial size must be positive".into()));
        }
        if self.field_scale.is_nan() || self.field_scale <= 0.0 {
            return Err(Error::InvalidSpec(format!(
                "field_scale = {} must be positive",
                self.field_scale
            )));
        }
        if !(self.purity > 0.0 && self.purity <= 1.0) {
            return Err(Error::InvalidSpec(format!(
                "purity = {} must lie in (0, 1]",
                self.purity
            )));
        }
        if self.purity * (self.r as f64) < 1.0 - 1e-12 {
            return Err(Error::InvalidSpec(format!(
                "purity {} cannot be met by {} endmembers summing to one",
                self.purity, self.r
            )));
        }
        if !self.contrast.is_finite() || self.contrast < 0.0 {
            return Err(Error::InvalidSpec(format!(
                "contrast = {} must be finite and nonnegative",
                self.contrast
            )));
        }
        if let Some(names) = &self.endmembers {
            if names.len() != self.r {
                return Err(Error::InvalidSpec(format!(
                    "{} endmember names for r = {}",
                    names.len(),
                    self.r
                )));
            }
        }
        if self.bands == Some(0) {
            return Err(Error::InvalidSpec("band count must be positive".into()));
        }
        Ok(())
    }
}

/// Circular Gaussian kernel folded onto a period of `len`, scaled so that
/// filtering unit white noise along one axis keeps unit variance.
fn folded_kernel(len: usize, sigma: f64) -> Vec<f64> {
    // Spanning this many periods, the folded kernel is flat to well below
    // double precision; use the limit directly.
    if sigma > 1e4 * len as f64 {
        return vec![1.0 / (len as f64).sqrt(); len];
    }
    let mut w = vec![0.0; len];
    let reach = (4.0 * sigma).ceil() as i64;
    for d in -reach..=reach {
        let x = d as f64 / sigma;
        w[d.rem_euclid(len as i64) as usize] += (-0.5 * x * x).exp();
    }
    let energy: f64 = w.iter().map(|v| v * v).sum();
    let norm = energy.sqrt();
    w.iter_mut().for_each(|v| *v /= norm);
    w
}

/// Periodic separable convolution of a `rows x cols` image.
fn smooth_field(field: &Array2<f64>, sigma: f64) -> Array2<f64> {
    let (rows, cols) = field.dim();
    let kr = folded_kernel(rows, sigma);
    let kc = folded_kernel(cols, sigma);
    let mut tmp = Array2::zeros((rows, cols));
    for i in 0..rows {
        for j in 0..cols {
            let mut acc = 0.0;
            for (d, &w) in kc.iter().enumerate() {
                acc += w * field[[i, (j + cols - d) % cols]];
            }
            tmp[[i, j]] = acc;
        }
    }
    let mut out = Array2::zeros((rows, cols));
    for i in 0..rows {
        for j in 0..cols {
            let mut acc = 0.0;
            for (d, &w) in kr.iter().enumerate() {
                acc += w * tmp[[(i + rows - d) % rows, j]];
            }
            out[[i, j]] = acc;
        }
    }
    out
}

/// Lowers any share above `cap` to `cap`, handing the excess to the other
/// entries in proportion to their size, until nothing exceeds the cap.
fn cap_shares(shares: &mut [f64], cap: f64) {
    for _ in 0..shares.len() {
        let excess: f64 = shares.iter().map(|&v| (v - cap).max(0.0)).sum();
        if excess <= 0.0 {
            return;
        }
        let free: f64 = shares.iter().filter(|&&v| v < cap).sum();
        for v in shares.iter_mut() {
            if *v >= cap {
                *v = cap;
            } else if free > 0.0 {
                *v += excess * *v / free;
            }
        }
    }
}

/// Abundance maps from smoothed white noise: `r` independent fields are
/// filtered by a periodic Gaussian kernel, exponentiated and normalized per
/// pixel, then capped at `purity`. Pixel `j` is raster position
/// `row * cols_px + col`.
pub fn generate_abundances<T: Scalar>(spec: &SynthSpec) -> Result<AbundanceMatrix<T>> {
    spec.validate()?;
    let (rows, cols) = (spec.rows_px, spec.cols_px);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let fields: Vec<Array2<f64>> = (0..spec.r)
        .map(|_| {
            let noise = Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(&mut rng));
            smooth_field(&noise, spec.field_scale)
        })
        .collect();

    let m = rows * cols;
    let mut s = Array2::<f64>::zeros((spec.r, m));
    let mut shares = vec![0.0; spec.r];
    for row in 0..rows {
        for col in 0..cols {
            let j = row * cols + col;
            let peak = fields
                .iter()
                .map(|f| spec.contrast * f[[row, col]])
                .fold(f64::NEG_INFINITY, f64::max);
            for (k, f) in fields.iter().enumerate() {
                shares[k] = (spec.contrast * f[[row, col]] - peak).exp();
            }
            let total: f64 = shares.iter().sum();
            shares.iter_mut().for_each(|v| *v /= total);
            if spec.purity < 1.0 {
                cap_shares(&mut shares, spec.purity);
            }
            let total: f64 = shares.iter().sum();
            for (k, v) in shares.iter().enumerate() {
                s[[k, j]] = v / total;
            }
        }
    }
    AbundanceMatrix::new(s.mapv(T::of))
}

/// Indices of `count` bands spread evenly over `available`.
pub fn band_selection(available: usize, count: usize) -> Result<Vec<usize>> {
    if count == 0 || count > available {
        return Err(Error::InvalidSpec(format!(
            "cannot select {count} bands from {available}"
        )));
    }
    if count == 1 {
        return Ok(vec![0]);
    }
    Ok((0..count)
        .map(|i| ((i * (available - 1)) as f64 / (count - 1) as f64).round() as usize)
        .collect())
}

/// Noise-free scene `X = A S` with its ground truth.
pub fn generate_cube<T: Scalar>(
    spec: &SynthSpec,
    library: &SpectralLibrary,
) -> Result<(SpectralCube<T>, EndmemberMatrix<T>, AbundanceMatrix<T>)> {
    spec.validate()?;
    if spec.r > library.len() {
        return Err(Error::LibraryTooSmall {
            requested: spec.r,
            available: library.len(),
        });
    }
    let columns: Vec<usize> = match &spec.endmembers {
        Some(names) => names
            .iter()
            .map(|n| {
                library
                    .index_of(n)
                    .ok_or_else(|| Error::InvalidSpec(format!("spectrum {n:?} not in library")))
            })
            .collect::<Result<_>>()?,
        None => (0..spec.r).collect(),
    };
    let bands = band_selection(library.n_bands(), spec.bands.unwrap_or(library.n_bands()))?;

    let a = Array2::from_shape_fn((bands.len(), spec.r), |(k, i)| {
        T::of(library.spectra()[[bands[k], columns[i]]])
    });
    let names: Vec<String> = columns.iter().map(|&c| library.names()[c].clone()).collect();
    let endmembers = EndmemberMatrix::new(a)?.with_names(names)?;
    let abundances = generate_abundances::<T>(spec)?;
    let x = endmembers.data().dot(abundances.data());
    let mut cube = SpectralCube::new(x, spec.rows_px, spec.cols_px)?;
    if let Some(w) = library.wavelengths() {
        cube = cube.with_wavelengths(bands.iter().map(|&b| w[b]).collect())?;
    }
    Ok((cube, endmembers, abundances))
}

/// Mean per-entry power, i.e. `E[x^T x] / n` over pixels.
fn mean_power<T: Scalar>(x: &Array2<T>) -> f64 {
    let total: f64 = x.iter().map(|v| v.as_f64() * v.as_f64()).sum();
    total / x.len() as f64
}

/// Adds zero-mean white Gaussian noise at `snr_db`, where
/// `SNR = 10 log10(E[x^T x] / E[n^T n])`.
///
/// The drawn noise is rescaled so its empirical power hits the target
/// exactly. `f64::INFINITY` returns the cube unchanged. With `clamp`,
/// negative results are set to zero.
pub fn add_noise<T: Scalar>(cube: &SpectralCube<T>, snr_db: f64, seed: u64, clamp: bool) -> Result<SpectralCube<T>> {
    if snr_db == f64::INFINITY {
        return Ok(cube.clone());
    }
    if !snr_db.is_finite() {
        return Err(Error::InvalidSpec(format!("snr_db = {snr_db} is not a level")));
    }
    let x = cube.data();
    let target = mean_power(x) / 10f64.powf(snr_db / 10.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise: Array1<f64> = (0..x.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
    let drawn = noise.iter().map(|v| v * v).sum::<f64>() / noise.len() as f64;
    let gain = if drawn > 0.0 { (target / drawn).sqrt() } else { 0.0 };
    let mut out = x.clone();
    for (o, e) in out.iter_mut().zip(noise.iter()) {
        let mut v = o.as_f64() + gain * e;
        if clamp && v < 0.0 {
            v = 0.0;
        }
        *o = T::of(v);
    }
    cube.with_data(out)
}

/// SNR in dB of `noisy` measured against `clean`.
pub fn realized_snr_db<T: Scalar>(clean: &SpectralCube<T>, noisy: &SpectralCube<T>) -> Result<f64> {
    if clean.data().dim() != noisy.data().dim() {
        return Err(Error::InvalidData("cubes differ in shape".into()));
    }
    let noise = noisy.data() - clean.data();
    Ok(10.0 * (mean_power(clean.data()) / mean_power(&noise)).log10())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn abundances_are_a_partition_of_unity() {
        for (seed, purity) in [(1, 1.0), (2, 0.8), (3, 0.5)] {
            let mut spec = SynthSpec::new(4, 12, 10, seed);
            spec.purity = purity;
            spec.contrast = 4.0;
            let s = generate_abundances::<f64>(&spec).unwrap();
            for col in s.data().columns() {
                assert!((col.sum() - 1.0).abs() < 1e-12);
                assert!(col.iter().all(|&v| v >= 0.0 && v <= purity + 1e-12));
            }
        }
    }

    #[test]
    fn huge_field_scale_gives_constant_maps() {
        let mut spec = SynthSpec::new(3, 16, 16, 5);
        spec.field_scale = 1e9;
        let s = generate_abundances::<f64>(&spec).unwrap();
        for row in s.data().rows() {
            let first = row[0];
            assert!(row.iter().all(|v| (v - first).abs() < 1e-6));
        }
    }

    #[test]
    fn generation_is_deterministic_per_seed() {
        let spec = SynthSpec::new(3, 8, 8, 42);
        let lib = bundled_library();
        let (x1, _, _) = generate_cube::<f64>(&spec, &lib).unwrap();
        let (x2, _, _) = generate_cube::<f64>(&spec, &lib).unwrap();
        assert_eq!(x1, x2);
        let (x3, _, _) = generate_cube::<f64>(&SynthSpec::new(3, 8, 8, 43), &lib).unwrap();
        assert_ne!(x1, x3);
    }

    #[test]
    fn library_contract() {
        let lib = bundled_library();
        assert!(lib.len() >= 12);
        assert!(lib.n_bands() >= 200);
        assert!(lib.spectra().iter().all(|&v| (0.0..=1.0).contains(&v)));
        for name in ["Seawater", "Clintonite", "Sodiumbicarbonate"] {
            assert!(lib.index_of(name).is_some());
        }
    }

    #[test]
    fn library_too_small() {
        let spec = SynthSpec::new(20, 4, 4, 0);
        assert!(matches!(
            generate_cube::<f64>(&spec, &bundled_library()),
            Err(Error::LibraryTooSmall { requested: 20, .. })
        ));
    }

    #[test]
    fn band_selection_spans_grid() {
        assert_eq!(band_selection(224, 224).unwrap(), (0..224).collect::<Vec<_>>());
        let sel = band_selection(224, 200).unwrap();
        assert_eq!((sel[0], sel[199]), (0, 223));
        assert!(sel.windows(2).all(|w| w[1] > w[0]));
        assert!(band_selection(10, 11).is_err());
    }

    #[test]
    fn infinite_snr_is_identity() {
        let (x, _, _) = generate_cube::<f64>(&SynthSpec::new(2, 4, 4, 0), &bundled_library()).unwrap();
        assert_eq!(add_noise(&x, f64::INFINITY, 0, false).unwrap(), x);
    }

    #[test]
    fn invalid_specs() {
        let mut spec = SynthSpec::new(3, 4, 4, 0);
        spec.field_scale = 0.0;
        assert!(spec.validate().is_err());
        let mut spec = SynthSpec::new(3, 4, 4, 0);
        spec.purity = 0.2;
        assert!(spec.validate().is_err());
    }
}
