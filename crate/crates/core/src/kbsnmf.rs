//! Kurtosis-based smooth NMF.
//!
//! Minimizes `fit(X, A M S) - gamma * Kbar(A)` where `M` is the smoothing
//! matrix and `Kbar` the average kurtosis of the endmember columns, using
//! multiplicative updates with the kurtosis gradient folded into the
//! endmember denominator. Endmember columns are rescaled to unit variance
//! around every endmember update so the closed-form gradient applies.

use ndarray::{Array2, Axis as NdAxis};

use crate::error::{Error, Result};
use crate::kurtosis::{self, centered_cube_term};
use crate::model::{
    check_shapes, AbundanceMatrix, EndmemberMatrix, NormalizationDivisor, SolverConfig, SpectralCube, StopStatistic,
    Termination, UnmixResult, Variant,
};
use crate::nmf::{self, fit_term, relative_change, FitCache, Iterate};
use crate::scalar::Scalar;

/// `M = (1 - theta) I + (theta / r) 1 1^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothingMatrix<T> {
    data: Array2<T>,
    theta: T,
}

impl<T: Scalar> SmoothingMatrix<T> {
    pub fn data(&self) -> &Array2<T> {
        &self.data
    }

    pub fn theta(&self) -> T {
        self.theta
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_identity(&self) -> bool {
        self.theta == T::zero()
    }

    /// `M S`, or a plain copy of `S` when `M` is the identity.
    pub fn smooth(&self, s: &Array2<T>) -> Array2<T> {
        if self.is_identity() {
            s.clone()
        } else {
            self.data.dot(s)
        }
    }

    /// `A M`, or a plain copy of `A` when `M` is the identity.
    pub fn mix_endmembers(&self, a: &Array2<T>) -> Array2<T> {
        if self.is_identity() {
            a.clone()
        } else {
            a.dot(&self.data)
        }
    }
}

pub fn smoothing_matrix<T: Scalar>(r: usize, theta: f64) -> Result<SmoothingMatrix<T>> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::InvalidTheta(theta));
    }
    if r == 0 {
        return Err(Error::InvalidRank(r));
    }
    let th = T::of(theta);
    let off = th / T::of(r as f64);
    let diag = T::one() - th + off;
    let data = Array2::from_shape_fn((r, r), |(i, j)| if i == j { diag } else { off });
    Ok(SmoothingMatrix { data, theta: th })
}

/// `gamma' = -2 gamma / (n r)`, the scalar on the kurtosis term of the
/// endmember denominators.
pub fn gamma_prime<T: Scalar>(gamma: f64, n: usize, r: usize) -> T {
    T::of(-2.0 * gamma / (n * r) as f64)
}

/// Constrained objective `fit(X, A M S) - gamma * Kbar(A)`.
pub fn objective<T: Scalar>(
    x: &Array2<T>,
    a: &Array2<T>,
    s: &Array2<T>,
    m: &SmoothingMatrix<T>,
    gamma: f64,
    variant: Variant,
    epsilon_guard: T,
) -> Result<T> {
    check_shapes(x, a, s)?;
    let eps = epsilon_guard;
    let fit = fit_term(variant, x, &a.dot(&m.smooth(s)), eps)?;
    if gamma == 0.0 {
        return Ok(fit);
    }
    let k = kurtosis::average_kurtosis_of(a, eps)?.average;
    Ok(fit - T::of(gamma) * k)
}

/// Result of one constrained update.
#[derive(Debug, Clone)]
pub struct Step<T> {
    pub endmembers: Array2<T>,
    pub abundances: Array2<T>,
    /// Endmember denominators that went nonpositive and were floored.
    pub floored: u64,
}

fn kurtosis_term<T: Scalar>(a: &Array2<T>, gamma_prime: T) -> Option<Array2<T>> {
    if gamma_prime == T::zero() {
        None
    } else {
        Some(centered_cube_term(a).mapv(|v| v * gamma_prime))
    }
}

/// Endmember half-step for either variant.
#[allow(clippy::too_many_arguments)]
pub fn update_endmembers<T: Scalar>(
    variant: Variant,
    x: &Array2<T>,
    a: &Array2<T>,
    s: &Array2<T>,
    m: &SmoothingMatrix<T>,
    gamma_prime: T,
    epsilon_guard: T,
    floored: &mut u64,
) -> Array2<T> {
    let y = m.smooth(s);
    let extra = kurtosis_term(a, gamma_prime);
    match variant {
        Variant::Fnorm => nmf::fnorm_update_left(x, a, &y, extra.as_ref(), epsilon_guard, floored),
        Variant::Div => nmf::div_update_left(x, a, &y, extra.as_ref(), epsilon_guard, floored),
    }
}

/// Endmember half-step reusing the fit cache of the current `(A, M S)`.
#[allow(clippy::too_many_arguments)]
fn update_endmembers_cached<T: Scalar>(
    variant: Variant,
    x: &Array2<T>,
    a: &Array2<T>,
    y: &Array2<T>,
    cache: &FitCache<T>,
    gamma_prime: T,
    eps: T,
    floored: &mut u64,
) -> Array2<T> {
    let extra = kurtosis_term(a, gamma_prime);
    match (variant, &cache.ratio) {
        (Variant::Div, Some(q)) => nmf::div_update_left_from_ratio(q, a, y, extra.as_ref(), eps, floored),
        (Variant::Div, None) => nmf::div_update_left(x, a, y, extra.as_ref(), eps, floored),
        (Variant::Fnorm, _) => nmf::fnorm_update_left(x, a, y, extra.as_ref(), eps, floored),
    }
}

/// Abundance half-step for either variant.
pub fn update_abundances<T: Scalar>(
    variant: Variant,
    x: &Array2<T>,
    a: &Array2<T>,
    s: &Array2<T>,
    m: &SmoothingMatrix<T>,
    epsilon_guard: T,
) -> Array2<T> {
    let b = m.mix_endmembers(a);
    match variant {
        Variant::Fnorm => nmf::fnorm_update_right(x, &b, s, epsilon_guard),
        Variant::Div => nmf::div_update_right(x, &b, s, epsilon_guard),
    }
}

fn check_smoothing<T: Scalar>(a: &Array2<T>, m: &SmoothingMatrix<T>) -> Result<()> {
    if m.dim() != a.ncols() {
        return Err(Error::DimensionMismatch {
            axis: crate::error::Axis::Endmembers,
            expected: a.ncols(),
            found: m.dim(),
        });
    }
    Ok(())
}

/// Frobenius-variant iteration: `A` then `S`, no normalization in between.
pub fn step_kbsnmf_fnorm<T: Scalar>(
    x: &Array2<T>,
    a: &Array2<T>,
    s: &Array2<T>,
    m: &SmoothingMatrix<T>,
    gamma_prime: T,
    epsilon_guard: T,
) -> Result<Step<T>> {
    step(Variant::Fnorm, x, a, s, m, gamma_prime, epsilon_guard)
}

/// Divergence-variant iteration: `A` then `S`, no normalization in between.
pub fn step_kbsnmf_div<T: Scalar>(
    x: &Array2<T>,
    a: &Array2<T>,
    s: &Array2<T>,
    m: &SmoothingMatrix<T>,
    gamma_prime: T,
    epsilon_guard: T,
) -> Result<Step<T>> {
    step(Variant::Div, x, a, s, m, gamma_prime, epsilon_guard)
}

fn step<T: Scalar>(
    variant: Variant,
    x: &Array2<T>,
    a: &Array2<T>,
    s: &Array2<T>,
    m: &SmoothingMatrix<T>,
    gamma_prime: T,
    eps: T,
) -> Result<Step<T>> {
    check_shapes(x, a, s)?;
    check_smoothing(a, m)?;
    let mut floored = 0;
    let a_next = update_endmembers(variant, x, a, s, m, gamma_prime, eps, &mut floored);
    let s_next = update_abundances(variant, x, &a_next, s, m, eps);
    Ok(Step {
        endmembers: a_next,
        abundances: s_next,
        floored,
    })
}

/// Divides each endmember column by its population standard deviation (or
/// variance, per `divisor`). With `compensate`, the matching abundance row is
/// multiplied by the same factor so that `A S` is unchanged. Entries are
/// floored at `epsilon_guard` afterwards.
pub fn normalize_endmembers<T: Scalar>(
    a: &Array2<T>,
    s: &Array2<T>,
    compensate: bool,
    divisor: NormalizationDivisor,
    epsilon_guard: T,
) -> Result<(Array2<T>, Array2<T>)> {
    if a.ncols() != s.nrows() {
        return Err(Error::DimensionMismatch {
            axis: crate::error::Axis::Endmembers,
            expected: a.ncols(),
            found: s.nrows(),
        });
    }
    let n = T::of(a.nrows() as f64);
    let mut a_out = a.clone();
    let mut s_out = s.clone();
    for (i, mut col) in a_out.axis_iter_mut(NdAxis(1)).enumerate() {
        let mean = col.sum() / n;
        let var = col.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        if var.is_nan() || var <= epsilon_guard {
            return Err(Error::DegenerateSignal {
                column: Some(i),
                variance: var.as_f64(),
            });
        }
        let d = match divisor {
            NormalizationDivisor::StdDev => var.sqrt(),
            NormalizationDivisor::Variance => var,
        };
        col.mapv_inplace(|v| (v / d).max(epsilon_guard));
        if compensate {
            s_out.row_mut(i).mapv_inplace(|v| (v * d).max(epsilon_guard));
        }
    }
    Ok((a_out, s_out))
}

/// Runs the constrained solver from the configured initialization.
pub fn solve<T: Scalar>(cube: &SpectralCube<T>, r: usize, cfg: &SolverConfig) -> Result<UnmixResult<T>> {
    solve_observed(cube, r, cfg, |_| {})
}

/// [`solve`] with a callback after initialization and after every
/// iteration (the endmembers seen are post-normalization).
pub fn solve_observed<T: Scalar>(
    cube: &SpectralCube<T>,
    r: usize,
    cfg: &SolverConfig,
    mut observer: impl FnMut(Iterate<'_, T>),
) -> Result<UnmixResult<T>> {
    let (x, clamped_inputs, mut a, mut s) = nmf::prepare(cube, r, cfg)?;
    let eps = T::of(cfg.epsilon_guard);
    let n = x.nrows();
    let m = smoothing_matrix::<T>(r, cfg.theta)?;
    let gp = gamma_prime::<T>(cfg.gamma, n, r);
    let gamma = T::of(cfg.gamma);
    // The kurtosis gradient needs unit-variance columns; without the
    // kurtosis term the rescaling has no purpose and is skipped.
    let normalize = cfg.gamma > 0.0;
    let renormalize = |a: &Array2<T>, s: &Array2<T>| {
        normalize_endmembers(a, s, cfg.compensate_normalization, cfg.normalization_divisor, eps)
    };

    if normalize {
        (a, s) = renormalize(&a, &s)?;
    }

    // Returns (objective, fit, excess kurtosis) and the fit cache for the
    // next endmember update.
    let evaluate = |a: &Array2<T>, y: &Array2<T>| -> Result<((T, T, T), FitCache<T>)> {
        let cache = FitCache::evaluate(cfg.variant, &x, &a.dot(y), eps)?;
        let fit = cache.fit;
        let values = if normalize {
            let k = kurtosis::average_kurtosis_of(a, eps)?.average;
            (fit - gamma * k, fit, k - T::of(3.0))
        } else {
            (fit, fit, kurtosis::average_excess_or_nan(a, eps))
        };
        Ok((values, cache))
    };
    let stat = |objective: T, fit: T| match cfg.stop_on {
        StopStatistic::Objective => objective,
        StopStatistic::FitOnly => fit,
    };

    let mut y = m.smooth(&s);
    let ((l0, f0, k0), mut cache) = evaluate(&a, &y)?;
    let mut objective_trace = vec![l0];
    let mut fit_trace = vec![f0];
    let mut kurtosis_trace = vec![k0];
    let mut prev_stat = stat(l0, f0);
    observer(Iterate {
        t: 0,
        endmembers: &a,
        abundances: &s,
    });

    let mut floored = 0u64;
    let mut termination = Termination::MaxIters;
    let mut t = 0;
    while t < cfg.t_max {
        t += 1;
        a = update_endmembers_cached(cfg.variant, &x, &a, &y, &cache, gp, eps, &mut floored);
        if normalize {
            (a, s) = renormalize(&a, &s)?;
        }
        s = update_abundances(cfg.variant, &x, &a, &s, &m, eps);
        y = m.smooth(&s);

        let ((l, f, k), next_cache) = evaluate(&a, &y)?;
        cache = next_cache;
        objective_trace.push(l);
        fit_trace.push(f);
        kurtosis_trace.push(k);
        observer(Iterate {
            t,
            endmembers: &a,
            abundances: &s,
        });
        let cur = stat(l, f);
        let change = if t == 1 {
            T::infinity()
        } else {
            relative_change(prev_stat, cur)
        };
        prev_stat = cur;
        if change < T::of(cfg.c_min) {
            termination = Termination::Tolerance;
            break;
        }
    }
    if floored > 0 {
        log::debug!("{floored} endmember denominators floored over {t} iterations");
    }

    Ok(UnmixResult {
        endmembers: EndmemberMatrix::new(a)?,
        abundances: AbundanceMatrix::new(s)?,
        objective_trace,
        fit_trace,
        kurtosis_trace,
        iterations_run: t,
        termination,
        floored_denominators: floored,
        clamped_inputs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nmf::{step_div, step_fnorm};
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const EPS: f64 = 1e-12;

    fn positive(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(0.05..1.0))
    }

    #[test]
    fn smoothing_matrix_examples() {
        let m0 = smoothing_matrix::<f64>(4, 0.0).unwrap();
        assert_eq!(m0.data(), &Array2::<f64>::eye(4));
        let m1 = smoothing_matrix::<f64>(2, 1.0).unwrap();
        assert_eq!(m1.data(), &array![[0.5, 0.5], [0.5, 0.5]]);
        let mh = smoothing_matrix::<f64>(2, 0.5).unwrap();
        assert_eq!(mh.data(), &array![[0.75, 0.25], [0.25, 0.75]]);
        assert!(matches!(smoothing_matrix::<f64>(3, 1.2), Err(Error::InvalidTheta(_))));
        assert!(smoothing_matrix::<f64>(3, -0.1).is_err());
    }

    #[test]
    fn degenerate_configuration_matches_baseline_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = positive(&mut rng, 7, 9);
        let a = positive(&mut rng, 7, 3);
        let s = positive(&mut rng, 3, 9);
        let m = smoothing_matrix::<f64>(3, 0.0).unwrap();
        let k = step_kbsnmf_fnorm(&x, &a, &s, &m, 0.0, EPS).unwrap();
        let (a2, s2) = step_fnorm(&x, &a, &s, EPS).unwrap();
        assert_eq!(k.endmembers, a2);
        assert_eq!(k.abundances, s2);
        let k = step_kbsnmf_div(&x, &a, &s, &m, 0.0, EPS).unwrap();
        let (a2, s2) = step_div(&x, &a, &s, EPS).unwrap();
        assert_eq!(k.endmembers, a2);
        assert_eq!(k.abundances, s2);
    }

    #[test]
    fn smoothed_exact_product_is_fixed_point_without_kurtosis() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = positive(&mut rng, 6, 3);
        let s = positive(&mut rng, 3, 10);
        let m = smoothing_matrix::<f64>(3, 0.4).unwrap();
        let x = a.dot(&m.data().dot(&s));
        for step in [step_kbsnmf_fnorm::<f64>, step_kbsnmf_div::<f64>] {
            let out = step(&x, &a, &s, &m, 0.0, EPS).unwrap();
            for (p, q) in out.endmembers.iter().zip(a.iter()) {
                assert!((p - q).abs() <= 1e-10 * q, "{p} vs {q}");
            }
            for (p, q) in out.abundances.iter().zip(s.iter()) {
                assert!((p - q).abs() <= 1e-10 * q, "{p} vs {q}");
            }
        }
    }

    #[test]
    fn constrained_steps_stay_above_guard() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..300 {
            let n = rng.random_range(3..15);
            let mm = rng.random_range(3..20);
            let r = rng.random_range(1..=3);
            let x = positive(&mut rng, n, mm);
            let a = positive(&mut rng, n, r);
            let s = positive(&mut rng, r, mm);
            let m = smoothing_matrix::<f64>(r, rng.random_range(0.0..1.0)).unwrap();
            // Large gamma to provoke negative denominators.
            let gp = gamma_prime::<f64>(rng.random_range(0.0..500.0), n, r);
            for out in [
                step_kbsnmf_fnorm(&x, &a, &s, &m, gp, EPS).unwrap(),
                step_kbsnmf_div(&x, &a, &s, &m, gp, EPS).unwrap(),
            ] {
                assert!(out.endmembers.iter().chain(out.abundances.iter()).all(|&v| v >= EPS));
            }
        }
    }

    #[test]
    fn objective_composes_fit_and_kurtosis() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let x = positive(&mut rng, 8, 10);
        let a = positive(&mut rng, 8, 2);
        let s = positive(&mut rng, 2, 10);
        let m = smoothing_matrix::<f64>(2, 0.3).unwrap();
        let got = objective(&x, &a, &s, &m, 2.5, Variant::Fnorm, EPS).unwrap();
        let fit = nmf::frobenius_residual(&x, &a.dot(&m.data().dot(&s)));
        let k = kurtosis::average_kurtosis_of(&a, EPS).unwrap().average;
        approx::assert_relative_eq!(got, fit - 2.5 * k, max_relative = 1e-12);

        let exact = a.dot(&m.data().dot(&s));
        let got = objective(&exact, &a, &s, &m, 2.5, Variant::Div, EPS).unwrap();
        approx::assert_relative_eq!(got, -2.5 * k, max_relative = 1e-9);

        let m0 = smoothing_matrix::<f64>(2, 0.0).unwrap();
        let got = objective(&x, &a, &s, &m0, 0.0, Variant::Div, EPS).unwrap();
        assert_eq!(got, nmf::divergence_to(&x, &a.dot(&s), EPS).unwrap());
    }

    #[test]
    fn normalization_examples() {
        // Column 0 already has unit variance, column 1 has variance 4.
        let a = array![[1.0, 1.0], [3.0, 5.0], [1.0, 1.0], [3.0, 5.0]];
        let s = array![[0.5, 1.0, 2.0], [0.25, 0.5, 1.5]];
        let (a2, s2) = normalize_endmembers(&a, &s, true, NormalizationDivisor::StdDev, EPS).unwrap();
        assert_eq!(a2.column(0), a.column(0));
        assert_eq!(a2.column(1), a.column(1).mapv(|v| v / 2.0));
        assert_eq!(s2.row(1), s.row(1).mapv(|v| v * 2.0));
        let before = a.dot(&s);
        let after = a2.dot(&s2);
        assert!((&before - &after).iter().all(|d| d.abs() < 1e-12));

        let (_, s3) = normalize_endmembers(&a, &s, false, NormalizationDivisor::StdDev, EPS).unwrap();
        assert_eq!(s3, s);
        let (a4, _) = normalize_endmembers(&a, &s, false, NormalizationDivisor::Variance, EPS).unwrap();
        assert_eq!(a4.column(1), a.column(1).mapv(|v| v / 4.0));

        let flat = array![[1.0, 2.0], [1.0, 3.0]];
        assert!(matches!(
            normalize_endmembers(&flat, &array![[1.0], [1.0]], true, NormalizationDivisor::StdDev, EPS),
            Err(Error::DegenerateSignal { column: Some(0), .. })
        ));
    }

    #[test]
    fn gamma_prime_sign_and_scale() {
        assert_eq!(gamma_prime::<f64>(3.0, 200, 3), -0.01);
        assert_eq!(gamma_prime::<f64>(0.0, 10, 2), 0.0);
    }
}
