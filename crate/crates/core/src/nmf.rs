//! Baseline multiplicative-update NMF (Frobenius and divergence objectives).

use ndarray::{Array2, Axis as NdAxis, Zip};

use crate::error::{Error, Result};
use crate::init;
use crate::kurtosis;
use crate::model::{
    check_shapes, AbundanceMatrix, EndmemberMatrix, SolverConfig, SpectralCube, Termination, UnmixResult, Variant,
};
use crate::scalar::Scalar;

/// Squared Frobenius norm of `X - A S`.
pub fn frobenius_sq<T: Scalar>(
    cube: &SpectralCube<T>,
    endmembers: &EndmemberMatrix<T>,
    abundances: &AbundanceMatrix<T>,
) -> Result<T> {
    let (x, a, s) = (cube.data(), endmembers.data(), abundances.data());
    check_shapes(x, a, s)?;
    Ok(frobenius_residual(x, &a.dot(s)))
}

/// Generalized KL divergence `D(X || A S)` with `0 log 0 = 0`.
pub fn divergence<T: Scalar>(
    cube: &SpectralCube<T>,
    endmembers: &EndmemberMatrix<T>,
    abundances: &AbundanceMatrix<T>,
    epsilon_guard: T,
) -> Result<T> {
    let (x, a, s) = (cube.data(), endmembers.data(), abundances.data());
    check_shapes(x, a, s)?;
    divergence_to(x, &a.dot(s), epsilon_guard)
}

/// `sum (X - model)^2` for a precomputed model product.
pub fn frobenius_residual<T: Scalar>(x: &Array2<T>, model: &Array2<T>) -> T {
    Zip::from(x).and(model).fold(T::zero(), |acc, &xv, &mv| {
        let d = xv - mv;
        acc + d * d
    })
}

/// `sum X log(X / model) - X + model` for a precomputed model product.
pub fn divergence_to<T: Scalar>(x: &Array2<T>, model: &Array2<T>, epsilon_guard: T) -> Result<T> {
    divergence_and_ratio(x, model, epsilon_guard).map(|(d, _)| d)
}

/// Divergence together with the ratio `X / max(model, eps)` that the
/// divergence updates consume.
pub(crate) fn divergence_and_ratio<T: Scalar>(x: &Array2<T>, model: &Array2<T>, eps: T) -> Result<(T, Array2<T>)> {
    let mut q = x.clone();
    let mut total = T::zero();
    let mut bad = false;
    Zip::from(&mut q).and(model).for_each(|q, &mv| {
        let xv = *q;
        *q = xv / mv.max(eps);
        if xv > T::zero() && mv > eps {
            total = total + xv * q.ln() - xv + mv;
        } else if xv == T::zero() {
            total = total + mv;
        } else {
            bad = true;
        }
    });
    if bad {
        let ((i, j), &xv) = x
            .indexed_iter()
            .find(|&((i, j), &xv)| xv < T::zero() || (xv > T::zero() && model[[i, j]] <= eps))
            .expect("offending entry exists");
        if xv < T::zero() {
            return Err(Error::InvalidData(format!(
                "divergence needs nonnegative data, found {xv} at ({i}, {j})"
            )));
        }
        return Err(Error::DomainError {
            row: i,
            col: j,
            model: model[[i, j]].as_f64(),
        });
    }
    Ok((total, q))
}

/// Applies `target <- target * num / max(den, eps)` and floors the result
/// at `eps`.
///
/// When `extra` is given it is added to `den` first; a sum that is not
/// positive is counted in `floored`.
pub(crate) fn multiplicative_update<T: Scalar>(
    target: &Array2<T>,
    num: &Array2<T>,
    den: &Array2<T>,
    extra: Option<&Array2<T>>,
    eps: T,
    floored: &mut u64,
) -> Array2<T> {
    let mut out = target.clone();
    match extra {
        None => Zip::from(&mut out).and(num).and(den).for_each(|o, &n, &d| {
            *o = (*o * n / d.max(eps)).max(eps);
        }),
        Some(extra) => {
            let mut count = 0u64;
            Zip::from(&mut out)
                .and(num)
                .and(den)
                .and(extra)
                .for_each(|o, &n, &d, &e| {
                    let d = d + e;
                    if d <= T::zero() {
                        count += 1;
                    }
                    *o = (*o * n / d.max(eps)).max(eps);
                });
            *floored += count;
        }
    }
    out
}

/// `X / max(model, eps)`, element-wise.
pub(crate) fn ratio<T: Scalar>(x: &Array2<T>, model: &Array2<T>, eps: T) -> Array2<T> {
    let mut out = x.clone();
    Zip::from(&mut out).and(model).for_each(|o, &m| *o = *o / m.max(eps));
    out
}

/// Frobenius update of the left factor against mixed abundances `y`:
/// numerator `X y^T`, denominator `A (y y^T) + extra`.
pub(crate) fn fnorm_update_left<T: Scalar>(
    x: &Array2<T>,
    a: &Array2<T>,
    y: &Array2<T>,
    extra: Option<&Array2<T>>,
    eps: T,
    floored: &mut u64,
) -> Array2<T> {
    let num = x.dot(&y.t());
    let den = a.dot(&y.dot(&y.t()));
    multiplicative_update(a, &num, &den, extra, eps, floored)
}

/// Frobenius update of the abundances against effective endmembers `b`:
/// numerator `b^T X`, denominator `(b^T b) S`.
pub(crate) fn fnorm_update_right<T: Scalar>(x: &Array2<T>, b: &Array2<T>, s: &Array2<T>, eps: T) -> Array2<T> {
    let num = b.t().dot(x);
    let den = b.t().dot(b).dot(s);
    multiplicative_update(s, &num, &den, None, eps, &mut 0)
}

/// Divergence update of the left factor: numerator `(X / (A y)) y^T`,
/// denominator `1 y^T + extra`.
pub(crate) fn div_update_left<T: Scalar>(
    x: &Array2<T>,
    a: &Array2<T>,
    y: &Array2<T>,
    extra: Option<&Array2<T>>,
    eps: T,
    floored: &mut u64,
) -> Array2<T> {
    let q = ratio(x, &a.dot(y), eps);
    div_update_left_from_ratio(&q, a, y, extra, eps, floored)
}

/// [`div_update_left`] given the ratio `X / (A y)` computed elsewhere.
pub(crate) fn div_update_left_from_ratio<T: Scalar>(
    q: &Array2<T>,
    a: &Array2<T>,
    y: &Array2<T>,
    extra: Option<&Array2<T>>,
    eps: T,
    floored: &mut u64,
) -> Array2<T> {
    let num = q.dot(&y.t());
    let row_sums = y.sum_axis(NdAxis(1));
    let den = Array2::from_shape_fn(a.dim(), |(_, i)| row_sums[i]);
    multiplicative_update(a, &num, &den, extra, eps, floored)
}

/// Divergence update of the abundances: numerator `b^T (X / (b S))`,
/// denominator `b^T 1`.
pub(crate) fn div_update_right<T: Scalar>(x: &Array2<T>, b: &Array2<T>, s: &Array2<T>, eps: T) -> Array2<T> {
    let q = ratio(x, &b.dot(s), eps);
    let num = b.t().dot(&q);
    let col_sums = b.sum_axis(NdAxis(0));
    let den = Array2::from_shape_fn(s.dim(), |(i, _)| col_sums[i]);
    multiplicative_update(s, &num, &den, None, eps, &mut 0)
}

/// One Lee-Seung Frobenius iteration: `A` first, then `S` with the new `A`.
pub fn step_fnorm<T: Scalar>(
    x: &Array2<T>,
    a: &Array2<T>,
    s: &Array2<T>,
    epsilon_guard: T,
) -> Result<(Array2<T>, Array2<T>)> {
    check_shapes(x, a, s)?;
    let a_next = fnorm_update_left(x, a, s, None, epsilon_guard, &mut 0);
    let s_next = fnorm_update_right(x, &a_next, s, epsilon_guard);
    Ok((a_next, s_next))
}

/// One Lee-Seung divergence iteration: `A` first, then `S` with the new `A`.
pub fn step_div<T: Scalar>(
    x: &Array2<T>,
    a: &Array2<T>,
    s: &Array2<T>,
    epsilon_guard: T,
) -> Result<(Array2<T>, Array2<T>)> {
    check_shapes(x, a, s)?;
    let a_next = div_update_left(x, a, s, None, epsilon_guard, &mut 0);
    let s_next = div_update_right(x, &a_next, s, epsilon_guard);
    Ok((a_next, s_next))
}

/// View of the factors handed to solver observers.
#[derive(Debug, Clone, Copy)]
pub struct Iterate<'a, T> {
    /// 0 for the initial point, then the completed iteration count.
    pub t: usize,
    pub endmembers: &'a Array2<T>,
    pub abundances: &'a Array2<T>,
}

/// Relative objective change `|prev - cur| / |prev|`.
pub(crate) fn relative_change<T: Scalar>(prev: T, cur: T) -> T {
    let diff = (prev - cur).abs();
    if diff == T::zero() {
        T::zero()
    } else if prev == T::zero() {
        T::infinity()
    } else {
        diff / prev.abs()
    }
}

pub(crate) fn check_rank<T: Scalar>(cube: &SpectralCube<T>, r: usize) -> Result<()> {
    if r == 0 {
        return Err(Error::InvalidRank(r));
    }
    let limit = cube.n_bands().min(cube.n_pixels());
    if r > limit {
        return Err(Error::RankTooLarge { rank: r, limit });
    }
    Ok(())
}

/// Clamped data, clamp count and strictly positive starting factors `(A, S)`
/// shared by both solvers.
#[allow(clippy::type_complexity)]
pub(crate) fn prepare<T: Scalar>(
    cube: &SpectralCube<T>,
    r: usize,
    cfg: &SolverConfig,
) -> Result<(Array2<T>, usize, Array2<T>, Array2<T>)> {
    cfg.validate()?;
    check_rank(cube, r)?;
    let eps = T::of(cfg.epsilon_guard);
    let (x, clamped) = cube.clamped_data(eps);
    if clamped > 0 {
        log::info!("clamped {clamped} data entries up to the epsilon guard");
    }
    let clean = cube.with_data(x.clone())?;
    let (a0, s0) = init::initialize(&clean, r, cfg)?;
    let a = a0.into_data().mapv(|v| v.max(eps));
    let s = s0.into_data().mapv(|v| v.max(eps));
    Ok((x, clamped, a, s))
}

/// Fit value of the current model plus, for the divergence, the ratio
/// `X / model` the next endmember update reuses.
pub(crate) struct FitCache<T> {
    pub fit: T,
    pub ratio: Option<Array2<T>>,
}

impl<T: Scalar> FitCache<T> {
    pub fn evaluate(variant: Variant, x: &Array2<T>, model: &Array2<T>, eps: T) -> Result<Self> {
        match variant {
            Variant::Fnorm => Ok(Self {
                fit: frobenius_residual(x, model),
                ratio: None,
            }),
            Variant::Div => {
                let (fit, q) = divergence_and_ratio(x, model, eps)?;
                Ok(Self { fit, ratio: Some(q) })
            }
        }
    }
}

/// Data-fit term for the configured variant.
pub(crate) fn fit_term<T: Scalar>(variant: Variant, x: &Array2<T>, model: &Array2<T>, eps: T) -> Result<T> {
    match variant {
        Variant::Fnorm => Ok(frobenius_residual(x, model)),
        Variant::Div => divergence_to(x, model, eps),
    }
}

/// Plain NMF from the configured initialization.
///
/// `gamma` and `theta` in `cfg` are ignored; the stopping rule is the same
/// relative-change test the constrained solver uses.
pub fn solve_baseline<T: Scalar>(cube: &SpectralCube<T>, r: usize, cfg: &SolverConfig) -> Result<UnmixResult<T>> {
    solve_baseline_observed(cube, r, cfg, |_| {})
}

/// [`solve_baseline`] with a callback after initialization and after every
/// iteration.
pub fn solve_baseline_observed<T: Scalar>(
    cube: &SpectralCube<T>,
    r: usize,
    cfg: &SolverConfig,
    mut observer: impl FnMut(Iterate<'_, T>),
) -> Result<UnmixResult<T>> {
    let (x, clamped_inputs, mut a, mut s) = prepare(cube, r, cfg)?;
    let eps = T::of(cfg.epsilon_guard);

    let mut cache = FitCache::evaluate(cfg.variant, &x, &a.dot(&s), eps)?;
    let fit = cache.fit;
    let mut objective_trace = vec![fit];
    let mut fit_trace = vec![fit];
    let mut kurtosis_trace = vec![kurtosis::average_excess_or_nan(&a, eps)];
    observer(Iterate {
        t: 0,
        endmembers: &a,
        abundances: &s,
    });

    let mut termination = Termination::MaxIters;
    let mut t = 0;
    while t < cfg.t_max {
        t += 1;
        match cfg.variant {
            Variant::Fnorm => {
                a = fnorm_update_left(&x, &a, &s, None, eps, &mut 0);
                s = fnorm_update_right(&x, &a, &s, eps);
            }
            Variant::Div => {
                let q = cache.ratio.as_ref().expect("divergence caches its ratio");
                a = div_update_left_from_ratio(q, &a, &s, None, eps, &mut 0);
                s = div_update_right(&x, &a, &s, eps);
            }
        }
        cache = FitCache::evaluate(cfg.variant, &x, &a.dot(&s), eps)?;
        let fit = cache.fit;
        let prev = *objective_trace.last().expect("initial point recorded");
        objective_trace.push(fit);
        fit_trace.push(fit);
        kurtosis_trace.push(kurtosis::average_excess_or_nan(&a, eps));
        observer(Iterate {
            t,
            endmembers: &a,
            abundances: &s,
        });
        let change = if t == 1 {
            T::infinity()
        } else {
            relative_change(prev, fit)
        };
        if change < T::of(cfg.c_min) {
            termination = Termination::Tolerance;
            break;
        }
    }

    Ok(UnmixResult {
        endmembers: EndmemberMatrix::new(a)?,
        abundances: AbundanceMatrix::new(s)?,
        objective_trace,
        fit_trace,
        kurtosis_trace,
        iterations_run: t,
        termination,
        floored_denominators: 0,
        clamped_inputs,
    })
}
