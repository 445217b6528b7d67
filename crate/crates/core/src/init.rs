//! Starting factors: NNDSVD and a seeded uniform fallback.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{AbundanceMatrix, EndmemberMatrix, InitMethod, SolverConfig, SpectralCube, ZeroFill};
use crate::scalar::Scalar;

/// Dispatches on `cfg.init`.
pub fn initialize<T: Scalar>(
    cube: &SpectralCube<T>,
    r: usize,
    cfg: &SolverConfig,
) -> Result<(EndmemberMatrix<T>, AbundanceMatrix<T>)> {
    match cfg.init {
        InitMethod::Nndsvd => nndsvd(cube, r, cfg.zero_fill, cfg.seed),
        InitMethod::Random => random_init(cube.n_bands(), cube.n_pixels(), r, cfg.seed),
    }
}

fn square_svd(mat: DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>, DMatrix<f64>)> {
    let svd = mat
        .try_svd(true, true, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::SvdFailure("iteration limit reached".into()))?;
    let u = svd.u.ok_or_else(|| Error::SvdFailure("left vectors missing".into()))?;
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::SvdFailure("right vectors missing".into()))?;
    Ok((u, svd.singular_values, v_t))
}

/// Thin SVD; a rectangular input is reduced by QR to its square factor first.
fn thin_svd(mat: DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>, DMatrix<f64>)> {
    let (n, m) = mat.shape();
    if m > n {
        // X^T = Q R, so X = R^T Q^T.
        let qr = mat.transpose().qr();
        let (q, r) = (qr.q(), qr.r());
        let (u, sv, w_t) = square_svd(r.transpose())?;
        Ok((u, sv, w_t * q.transpose()))
    } else if n > m {
        let qr = mat.qr();
        let (q, r) = (qr.q(), qr.r());
        let (u, sv, v_t) = square_svd(r)?;
        Ok((q * u, sv, v_t))
    } else {
        square_svd(mat)
    }
}

/// Singular values, left vectors and right vectors.
type Triplets = (Vec<f64>, Vec<Array1<f64>>, Vec<Array1<f64>>);

/// Leading `r` singular triplets, largest first, with each left vector's
/// largest-magnitude entry made positive.
fn leading_svd(x: &Array2<f64>, r: usize) -> Result<Triplets> {
    let (n, m) = x.dim();
    let (u, sv, v_t) = thin_svd(DMatrix::from_fn(n, m, |i, j| x[[i, j]]))?;

    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]).then(a.cmp(&b)));

    let mut sigma = Vec::with_capacity(r);
    let mut lefts = Vec::with_capacity(r);
    let mut rights = Vec::with_capacity(r);
    for &k in order.iter().take(r) {
        let mut left: Array1<f64> = (0..n).map(|i| u[(i, k)]).collect();
        let mut right: Array1<f64> = (0..m).map(|j| v_t[(k, j)]).collect();
        let pivot = left
            .iter()
            .copied()
            .fold(0.0f64, |best, v| if v.abs() > best.abs() { v } else { best });
        if pivot < 0.0 {
            left.mapv_inplace(|v| -v);
            right.mapv_inplace(|v| -v);
        }
        sigma.push(sv[k]);
        lefts.push(left);
        rights.push(right);
    }
    Ok((sigma, lefts, rights))
}

fn positive_part(v: &Array1<f64>) -> Array1<f64> {
    v.mapv(|x| x.max(0.0))
}

fn negative_part(v: &Array1<f64>) -> Array1<f64> {
    v.mapv(|x| (-x).max(0.0))
}

fn norm(v: &Array1<f64>) -> f64 {
    v.dot(v).sqrt()
}

/// Nonnegative double SVD initialization.
///
/// The first pair comes from the leading singular triplet. Every later pair
/// keeps whichever of the positive or negative sections of its singular
/// vectors has the larger product of norms. Exact zeros are then replaced
/// according to `fill`.
pub fn nndsvd<T: Scalar>(
    cube: &SpectralCube<T>,
    r: usize,
    fill: ZeroFill,
    seed: u64,
) -> Result<(EndmemberMatrix<T>, AbundanceMatrix<T>)> {
    let (n, m) = (cube.n_bands(), cube.n_pixels());
    if r == 0 {
        return Err(Error::InvalidRank(r));
    }
    if r > n.min(m) {
        return Err(Error::RankTooLarge {
            rank: r,
            limit: n.min(m),
        });
    }
    let x = cube.data().mapv(|v| v.as_f64());
    if x.iter().any(|&v| v < 0.0) {
        return Err(Error::InvalidData("NNDSVD needs nonnegative data".into()));
    }
    let (sigma, lefts, rights) = leading_svd(&x, r)?;

    let mut w = Array2::<f64>::zeros((n, r));
    let mut h = Array2::<f64>::zeros((r, m));
    let s1 = sigma[0].sqrt();
    w.column_mut(0).assign(&lefts[0].mapv(|v| s1 * v.abs()));
    h.row_mut(0).assign(&rights[0].mapv(|v| s1 * v.abs()));

    for k in 1..r {
        let (x_pos, x_neg) = (positive_part(&lefts[k]), negative_part(&lefts[k]));
        let (y_pos, y_neg) = (positive_part(&rights[k]), negative_part(&rights[k]));
        let (xp, xn, yp, yn) = (norm(&x_pos), norm(&x_neg), norm(&y_pos), norm(&y_neg));
        let (mp, mn) = (xp * yp, xn * yn);
        let (u, v, section) = if mp > mn {
            (x_pos / xp.max(f64::MIN_POSITIVE), y_pos / yp.max(f64::MIN_POSITIVE), mp)
        } else {
            (x_neg / xn.max(f64::MIN_POSITIVE), y_neg / yn.max(f64::MIN_POSITIVE), mn)
        };
        let scale = (sigma[k] * section).sqrt();
        w.column_mut(k).assign(&(u * scale));
        h.row_mut(k).assign(&(v * scale));
    }

    let fill_value = x.mean().unwrap_or(0.0) / 100.0;
    match fill {
        ZeroFill::Zeros => {}
        ZeroFill::MeanOver100 => {
            w.mapv_inplace(|v| if v == 0.0 { fill_value } else { v });
            h.mapv_inplace(|v| if v == 0.0 { fill_value } else { v });
        }
        ZeroFill::RandomSmall => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for v in w.iter_mut().chain(h.iter_mut()) {
                if *v == 0.0 {
                    *v = rng.random::<f64>() * fill_value;
                }
            }
        }
    }

    // A column can only be all-zero for a zero data matrix with `Zeros` fill.
    let a = EndmemberMatrix::new(w.mapv(T::of))?;
    let s = AbundanceMatrix::new(h.mapv(T::of))?;
    Ok((a, s))
}

/// Factors with entries uniform on `(0.1, 1.0)` from a seeded generator.
pub fn random_init<T: Scalar>(
    n: usize,
    m: usize,
    r: usize,
    seed: u64,
) -> Result<(EndmemberMatrix<T>, AbundanceMatrix<T>)> {
    if r == 0 {
        return Err(Error::InvalidRank(r));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = || loop {
        let v: f64 = rng.random_range(0.1..1.0);
        if v > 0.1 {
            break T::of(v);
        }
    };
    let a = Array2::from_shape_simple_fn((n, r), &mut draw);
    let s = Array2::from_shape_simple_fn((r, m), &mut draw);
    Ok((EndmemberMatrix::new(a)?, AbundanceMatrix::new(s)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn cube(x: Array2<f64>) -> SpectralCube<f64> {
        let m = x.ncols();
        SpectralCube::new(x, 1, m).unwrap()
    }

    #[test]
    fn rank_one_outer_product_is_recovered() {
        let a = array![1.0, 2.0, 0.5, 3.0];
        let b = array![0.2, 1.0, 4.0, 0.7, 1.1];
        let x = Array2::from_shape_fn((4, 5), |(i, j)| a[i] * b[j]);
        let (w, h) = nndsvd(&cube(x.clone()), 1, ZeroFill::MeanOver100, 0).unwrap();
        let recon = w.data().dot(h.data());
        let err = (&recon - &x).mapv(|v| v * v).sum().sqrt() / x.mapv(|v| v * v).sum().sqrt();
        assert!(err < 1e-10, "{err}");
        let ratio = w.data()[[0, 0]] / a[0];
        for i in 0..4 {
            approx::assert_relative_eq!(w.data()[[i, 0]], a[i] * ratio, max_relative = 1e-10);
        }
    }

    #[test]
    fn matches_reference_implementation_without_fill() {
        // Reference factors from scikit-learn's `nndsvd` initializer.
        let x = Array2::from_shape_fn((5, 6), |(i, j)| ((i * 7 + j * 3) % 5) as f64 + 0.1 + 0.05 * i as f64);
        let w_ref = array![
            [1.190397146430287, 1.1850804899307497, 1.0535142289731507],
            [1.507714608159245, 0.13409770015358863, 0.0],
            [1.8179517339259603, 0.0, 1.0479219749828934],
            [1.426932267817516, 1.2183119413053267, 0.0],
            [1.7696686237449384, 0.0, 0.0],
        ];
        let h_ref = array![
            [
                1.5308314912576173,
                1.3385540792415054,
                1.417612096180458,
                1.3860752658081736,
                1.3242409590207664,
                1.5308314912576169
            ],
            [
                0.0,
                1.204447563288431,
                0.05574451442594223,
                0.03883979083528051,
                1.2047290293572204,
                0.0
            ],
            [0.0, 0.7863353483679084, 0.0, 1.2608367920583776, 0.0, 0.0],
        ];
        let (w, h) = nndsvd(&cube(x), 3, ZeroFill::Zeros, 0).unwrap();
        for (got, want) in w
            .data()
            .iter()
            .zip(w_ref.iter())
            .chain(h.data().iter().zip(h_ref.iter()))
        {
            assert!((got - want).abs() < 1e-10, "{got} vs {want}");
        }
    }

    #[test]
    fn filled_factors_are_strictly_positive_and_deterministic() {
        let x = Array2::from_shape_fn((8, 12), |(i, j)| ((i * 7 + j * 3) % 5) as f64 + 0.1);
        let c = cube(x);
        let (w1, h1) = nndsvd(&c, 3, ZeroFill::MeanOver100, 0).unwrap();
        let (w2, h2) = nndsvd(&c, 3, ZeroFill::MeanOver100, 0).unwrap();
        assert!(w1.data().iter().chain(h1.data().iter()).all(|&v| v > 0.0));
        assert_eq!(w1, w2);
        assert_eq!(h1, h2);
    }

    #[test]
    fn rank_too_large_is_rejected() {
        let c = cube(Array2::ones((3, 4)));
        assert!(matches!(
            nndsvd(&c, 4, ZeroFill::MeanOver100, 0),
            Err(Error::RankTooLarge { rank: 4, limit: 3 })
        ));
    }

    #[test]
    fn random_init_contract() {
        let (a1, s1) = random_init::<f64>(5, 7, 2, 11).unwrap();
        let (a2, s2) = random_init::<f64>(5, 7, 2, 11).unwrap();
        let (a3, _) = random_init::<f64>(5, 7, 2, 12).unwrap();
        assert_eq!(a1, a2);
        assert_eq!(s1, s2);
        assert_ne!(a1, a3);
        assert!(a1.data().iter().chain(s1.data().iter()).all(|&v| v > 0.1 && v < 1.0));
    }
}
