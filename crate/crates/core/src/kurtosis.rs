//! Kurtosis of endmember spectra and the gradient of their average.
//!
//! Moments are population moments over the band index (divide by `n`).

use ndarray::{Array2, ArrayView1, Axis as NdAxis};

use crate::error::{Error, Result};
use crate::model::EndmemberMatrix;
use crate::scalar::Scalar;

/// Per-endmember kurtosis and its average.
#[derive(Debug, Clone, PartialEq)]
pub struct KurtosisReport<T> {
    pub per_endmember: Vec<T>,
    pub average: T,
    /// `average - 3`; zero for Gaussian-like spectra.
    pub average_excess: T,
}

impl<T: Scalar> KurtosisReport<T> {
    fn from_values(per_endmember: Vec<T>) -> Self {
        let r = T::of(per_endmember.len() as f64);
        let average = per_endmember.iter().copied().sum::<T>() / r;
        Self {
            per_endmember,
            average,
            average_excess: average - T::of(3.0),
        }
    }
}

/// Population second and fourth central moments.
fn central_moments<T: Scalar>(signal: ArrayView1<'_, T>) -> (T, T) {
    let n = T::of(signal.len() as f64);
    let mean = signal.sum() / n;
    let (m2, m4) = signal.iter().fold((T::zero(), T::zero()), |(m2, m4), &v| {
        let d = v - mean;
        let d2 = d * d;
        (m2 + d2, m4 + d2 * d2)
    });
    (m2 / n, m4 / n)
}

/// `m4 / m2^2` of a signal with at least two samples.
pub fn kurtosis<T: Scalar>(signal: ArrayView1<'_, T>, epsilon_guard: T) -> Result<T> {
    if signal.len() < 2 {
        return Err(Error::InvalidData(format!(
            "kurtosis needs at least 2 samples, got {}",
            signal.len()
        )));
    }
    let (m2, m4) = central_moments(signal);
    if m2.is_nan() || m2 <= epsilon_guard {
        return Err(Error::DegenerateSignal {
            column: None,
            variance: m2.as_f64(),
        });
    }
    Ok(m4 / (m2 * m2))
}

/// Kurtosis of every column of `a` and their mean.
pub fn average_kurtosis_of<T: Scalar>(a: &Array2<T>, epsilon_guard: T) -> Result<KurtosisReport<T>> {
    let values = a
        .axis_iter(NdAxis(1))
        .enumerate()
        .map(|(i, col)| {
            kurtosis(col, epsilon_guard).map_err(|e| match e {
                Error::DegenerateSignal { variance, .. } => Error::DegenerateSignal {
                    column: Some(i),
                    variance,
                },
                other => other,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(KurtosisReport::from_values(values))
}

pub fn average_kurtosis<T: Scalar>(endmembers: &EndmemberMatrix<T>, epsilon_guard: T) -> Result<KurtosisReport<T>> {
    average_kurtosis_of(endmembers.data(), epsilon_guard)
}

/// Average excess kurtosis for traces; NaN if any column is flat.
pub(crate) fn average_excess_or_nan<T: Scalar>(a: &Array2<T>, epsilon_guard: T) -> T {
    average_kurtosis_of(a, epsilon_guard)
        .map(|r| r.average_excess)
        .unwrap_or_else(|_| T::nan())
}

/// `I - (1/n) 1 1^T`: symmetric, idempotent, annihilates constants.
pub fn centering_matrix<T: Scalar>(n: usize) -> Array2<T> {
    let inv = T::one() / T::of(n as f64);
    Array2::from_shape_fn((n, n), |(i, j)| if i == j { T::one() - inv } else { -inv })
}

/// Subtracts each column's mean; equal to left-multiplying by the centering
/// matrix without forming it.
pub(crate) fn center_columns<T: Scalar>(a: &Array2<T>) -> Array2<T> {
    let n = T::of(a.nrows() as f64);
    let means = a.sum_axis(NdAxis(0)).mapv(|v| v / n);
    a - &means.insert_axis(NdAxis(0))
}

/// `N [N A]^3` (element-wise cube): the unscaled average-kurtosis gradient.
pub fn centered_cube_term<T: Scalar>(a: &Array2<T>) -> Array2<T> {
    center_columns(&center_columns(a).mapv(|v| v * v * v))
}

/// Gradient of the average kurtosis with respect to `A`, valid when every
/// column has unit population variance: `(4 / (n r)) N [N A]^3`.
///
/// Column `i` equals `(4 / (n r)) ((a_i - mu_i)^3 - skew_i)` where `skew_i`
/// is the column's third central moment, so every gradient column sums to
/// zero.
pub fn grad_average_kurtosis<T: Scalar>(a: &Array2<T>) -> Array2<T> {
    let (n, r) = a.dim();
    let scale = T::of(4.0) / T::of((n * r) as f64);
    centered_cube_term(a).mapv(|v| v * scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    const EPS: f64 = 1e-12;

    #[test]
    fn single_spike_kurtosis() {
        // m2 = 0.1875, m4 = 0.08203125
        let k = kurtosis(array![0.0, 0.0, 0.0, 1.0].view(), EPS).unwrap();
        approx::assert_relative_eq!(k, 0.08203125 / (0.1875 * 0.1875), max_relative = 1e-14);
        approx::assert_relative_eq!(k, 7.0 / 3.0, max_relative = 1e-14);
    }

    #[test]
    fn constant_signal_is_degenerate() {
        assert!(matches!(
            kurtosis(array![2.0, 2.0, 2.0, 2.0].view(), EPS),
            Err(Error::DegenerateSignal { .. })
        ));
    }

    #[test]
    fn gaussian_kurtosis_is_three() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let v: Array1<f64> = (0..1_000_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let k = kurtosis(v.view(), EPS).unwrap();
        assert!((k - 3.0).abs() < 0.05, "{k}");
    }

    #[test]
    fn average_over_permuted_columns() {
        let a = array![[0.0, 1.0], [0.0, 0.0], [0.0, 0.0], [1.0, 0.0]];
        let rep = average_kurtosis_of(&a, EPS).unwrap();
        approx::assert_relative_eq!(rep.average, 7.0 / 3.0, max_relative = 1e-14);
        assert_eq!(rep.average_excess, rep.average - 3.0);
    }

    #[test]
    fn degenerate_column_is_named() {
        let a = array![[0.0, 1.0], [0.0, 1.0], [1.0, 1.0]];
        match average_kurtosis_of(&a, EPS) {
            Err(Error::DegenerateSignal { column, .. }) => assert_eq!(column, Some(1)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn centering_matrix_properties() {
        assert_eq!(centering_matrix::<f64>(1), array![[0.0]]);
        let n = centering_matrix::<f64>(7);
        let ones = Array1::from_elem(7, 3.5);
        assert!(n.dot(&ones).iter().all(|v| v.abs() < 1e-12));
        let nn = n.dot(&n);
        assert!((&nn - &n).iter().all(|v| v.abs() < 1e-12));
        assert_eq!(n, n.t());
    }

    #[test]
    fn centering_shortcut_matches_matrix_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = Array2::from_shape_fn((9, 3), |_| StandardNormal.sample(&mut rng));
        let n = centering_matrix::<f64>(9);
        let explicit = n.dot(&n.dot(&a).mapv(|v: f64| v.powi(3)));
        let fast = centered_cube_term(&a);
        assert!((&explicit - &fast).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn symmetric_column_gradient_sums_to_zero() {
        let a: Array2<f64> = array![[1.0, 0.2], [-1.0, 0.9], [1.0, 0.1], [-1.0, 3.0]];
        let g = grad_average_kurtosis(&a);
        for col in g.axis_iter(NdAxis(1)) {
            assert!(col.sum().abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_ignores_variance_normalization_assumption_when_violated() {
        // Column with variance 4: the unit-variance formula no longer matches
        // finite differences of the true kurtosis.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut a: Array2<f64> = Array2::from_shape_fn((5, 1), |_| StandardNormal.sample(&mut rng));
        let c = center_columns(&a);
        let sd = (c.mapv(|v| v * v).sum() / 5.0).sqrt();
        a.mapv_inplace(|v| 2.0 * v / sd);
        let g = grad_average_kurtosis(&a);
        let h = 1e-5;
        let mut max_dev: f64 = 0.0;
        for k in 0..5 {
            let mut p = a.clone();
            let mut m = a.clone();
            p[[k, 0]] += h;
            m[[k, 0]] -= h;
            let fd = (kurtosis(p.column(0), EPS).unwrap() - kurtosis(m.column(0), EPS).unwrap()) / (2.0 * h);
            max_dev = max_dev.max((fd - g[[k, 0]]).abs() / g[[k, 0]].abs().max(1e-12));
        }
        assert!(max_dev > 1e-2, "{max_dev}");
    }
}
