//! Spectral angle distance, abundance RMSE and optimal endmember matching.

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Axis, Error, Result};
use crate::model::{AbundanceMatrix, EndmemberMatrix, UnmixResult};
use crate::scalar::Scalar;

/// Angle in radians between two spectra; scale invariant.
pub fn sad<T: Scalar>(estimate: ArrayView1<'_, T>, truth: ArrayView1<'_, T>) -> Result<f64> {
    if estimate.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            axis: Axis::Bands,
            expected: truth.len(),
            found: estimate.len(),
        });
    }
    let ee: f64 = estimate.iter().map(|&e| e.as_f64() * e.as_f64()).sum();
    let tt: f64 = truth.iter().map(|&t| t.as_f64() * t.as_f64()).sum();
    if ee == 0.0 || tt == 0.0 {
        return Err(Error::ZeroVector);
    }
    // 2 atan2(|u - v|, |u + v|) for unit u, v: the same angle as
    // acos(u . v) without its loss of precision near 0 and pi.
    let (ne, nt) = (ee.sqrt(), tt.sqrt());
    let (mut diff, mut sum) = (0.0, 0.0);
    for (&e, &t) in estimate.iter().zip(truth.iter()) {
        let (u, v) = (e.as_f64() / ne, t.as_f64() / nt);
        diff += (u - v) * (u - v);
        sum += (u + v) * (u + v);
    }
    Ok(2.0 * diff.sqrt().atan2(sum.sqrt()))
}

/// `sqrt(mean((s - s_hat)^2))` over the pixels of one abundance map.
pub fn rmse<T: Scalar>(estimate: ArrayView1<'_, T>, truth: ArrayView1<'_, T>) -> Result<f64> {
    if estimate.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            axis: Axis::Pixels,
            expected: truth.len(),
            found: estimate.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::InvalidData("rmse of an empty map".into()));
    }
    let sum: f64 = estimate
        .iter()
        .zip(truth.iter())
        .map(|(&e, &t)| {
            let d = t.as_f64() - e.as_f64();
            d * d
        })
        .sum();
    Ok((sum / truth.len() as f64).sqrt())
}

/// Minimum-cost perfect matching on a square cost matrix (Hungarian method
/// with potentials, `O(r^3)`). Returns `assignment[row] = column`.
pub fn optimal_assignment(cost: &Array2<f64>) -> Result<Vec<usize>> {
    let (n, m) = cost.dim();
    if n != m {
        return Err(Error::DimensionMismatch {
            axis: Axis::Endmembers,
            expected: n,
            found: m,
        });
    }
    if cost.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidData("assignment costs must be finite".into()));
    }
    // 1-based with a virtual column 0, following the classic formulation.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut col0 = 0;
        let mut min_to = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[col0] = true;
            let r0 = owner[col0];
            let mut delta = f64::INFINITY;
            let mut col1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let reduced = cost[[r0 - 1, j - 1]] - u[r0] - v[j];
                if reduced < min_to[j] {
                    min_to[j] = reduced;
                    way[j] = col0;
                }
                if min_to[j] < delta {
                    delta = min_to[j];
                    col1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_to[j] -= delta;
                }
            }
            col0 = col1;
            if owner[col0] == 0 {
                break;
            }
        }
        loop {
            let prev = way[col0];
            owner[col0] = owner[prev];
            col0 = prev;
            if col0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        if owner[j] > 0 {
            assignment[owner[j] - 1] = j - 1;
        }
    }
    Ok(assignment)
}

/// Matched SAD and RMSE of an extraction against ground truth.
///
/// Per-endmember lists are ordered by ground-truth index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    /// `assignment[extracted] = ground-truth index`.
    pub assignment: Vec<usize>,
    pub sad_per_endmember: Vec<f64>,
    pub sad_average: f64,
    pub rmse_per_endmember: Vec<f64>,
    pub rmse_average: f64,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Matches extracted endmembers to ground truth by minimum total SAD and
/// scores both factors under that one matching.
///
/// Before RMSE each extracted abundance row is divided by the least-squares
/// gain that maps its endmember onto the matched true spectrum (the product
/// `A S` is unchanged; only the scale split between the factors is fixed).
/// With `renormalize`, pixel columns are then scaled to sum to one.
pub fn evaluate<T: Scalar>(
    endmembers: &EndmemberMatrix<T>,
    abundances: &AbundanceMatrix<T>,
    truth_a: &EndmemberMatrix<T>,
    truth_s: &AbundanceMatrix<T>,
    renormalize: bool,
) -> Result<EvaluationReport> {
    let r = truth_a.n_endmembers();
    for (found, axis) in [
        (endmembers.n_endmembers(), Axis::Endmembers),
        (abundances.n_endmembers(), Axis::Endmembers),
        (truth_s.n_endmembers(), Axis::Endmembers),
    ] {
        if found != r {
            return Err(Error::DimensionMismatch {
                axis,
                expected: r,
                found,
            });
        }
    }
    if endmembers.n_bands() != truth_a.n_bands() {
        return Err(Error::DimensionMismatch {
            axis: Axis::Bands,
            expected: truth_a.n_bands(),
            found: endmembers.n_bands(),
        });
    }
    if abundances.n_pixels() != truth_s.n_pixels() {
        return Err(Error::DimensionMismatch {
            axis: Axis::Pixels,
            expected: truth_s.n_pixels(),
            found: abundances.n_pixels(),
        });
    }

    let mut cost = Array2::zeros((r, r));
    for i in 0..r {
        for j in 0..r {
            cost[[i, j]] = sad(endmembers.column(i), truth_a.column(j))?;
        }
    }
    let assignment = optimal_assignment(&cost)?;

    let mut s_hat = abundances.data().mapv(|v| v.as_f64());
    for (i, &j) in assignment.iter().enumerate() {
        let est = endmembers.column(i);
        let tru = truth_a.column(j);
        let num: f64 = est.iter().zip(tru.iter()).map(|(e, t)| e.as_f64() * t.as_f64()).sum();
        let den: f64 = est.iter().map(|e| e.as_f64() * e.as_f64()).sum();
        let gain = num / den;
        if gain > 0.0 {
            s_hat.row_mut(i).mapv_inplace(|v| v / gain);
        }
    }
    let s_hat = AbundanceMatrix::new(s_hat)?;
    let s_hat = if renormalize { s_hat.renormalized() } else { s_hat };
    let truth = truth_s.data().mapv(|v| v.as_f64());

    let mut sad_per = vec![0.0; r];
    let mut rmse_per = vec![0.0; r];
    for (i, &j) in assignment.iter().enumerate() {
        sad_per[j] = cost[[i, j]];
        rmse_per[j] = rmse(s_hat.data().row(i), truth.row(j))?;
    }
    Ok(EvaluationReport {
        sad_average: mean(&sad_per),
        rmse_average: mean(&rmse_per),
        assignment,
        sad_per_endmember: sad_per,
        rmse_per_endmember: rmse_per,
    })
}

/// [`evaluate`] applied to a solver result.
pub fn match_and_evaluate<T: Scalar>(
    result: &UnmixResult<T>,
    truth_a: &EndmemberMatrix<T>,
    truth_s: &AbundanceMatrix<T>,
    renormalize: bool,
) -> Result<EvaluationReport> {
    evaluate(&result.endmembers, &result.abundances, truth_a, truth_s, renormalize)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn sad_examples() {
        let v = array![0.3, 1.2, 0.7];
        assert_eq!(sad(v.view(), v.view()).unwrap(), 0.0);
        let d = sad(array![1.0, 0.0].view(), array![0.0, 1.0].view()).unwrap();
        approx::assert_relative_eq!(d, FRAC_PI_2, max_relative = 1e-15);
        let scaled = v.mapv(|x| 4.5 * x);
        assert!(sad(scaled.view(), v.view()).unwrap().abs() < 1e-15);
        assert!(matches!(
            sad(array![0.0, 0.0].view(), v.slice(ndarray::s![..2])),
            Err(Error::ZeroVector)
        ));
    }

    #[test]
    fn rmse_examples() {
        let v = array![0.1, 0.5];
        assert_eq!(rmse(v.view(), v.view()).unwrap(), 0.0);
        assert_eq!(rmse(array![1.0, 0.0].view(), array![0.0, 1.0].view()).unwrap(), 1.0);
        assert!(rmse(array![1.0].view(), array![0.0, 1.0].view()).is_err());
    }

    #[test]
    fn assignment_small_cases() {
        let cost = array![[4.0, 1.0, 3.0], [2.0, 0.0, 5.0], [3.0, 2.0, 2.0]];
        assert_eq!(optimal_assignment(&cost).unwrap(), vec![1, 0, 2]);
        assert_eq!(optimal_assignment(&array![[7.0]]).unwrap(), vec![0]);
        assert!(optimal_assignment(&Array2::zeros((2, 3))).is_err());
    }

    #[test]
    fn permuted_truth_is_recovered_exactly() {
        let a = array![[0.1, 0.9, 0.4], [0.5, 0.2, 0.8], [0.9, 0.3, 0.1], [0.2, 0.6, 0.7]];
        let s = array![[0.2, 0.5, 0.1, 0.6], [0.3, 0.25, 0.8, 0.1], [0.5, 0.25, 0.1, 0.3]];
        let perm = [2usize, 0, 1];
        let a_hat = Array2::from_shape_fn((4, 3), |(k, i)| a[[k, perm[i]]]);
        let s_hat = Array2::from_shape_fn((3, 4), |(i, j)| s[[perm[i], j]]);
        let report = evaluate(
            &EndmemberMatrix::new(a_hat).unwrap(),
            &AbundanceMatrix::new(s_hat).unwrap(),
            &EndmemberMatrix::new(a).unwrap(),
            &AbundanceMatrix::new(s).unwrap(),
            true,
        )
        .unwrap();
        assert_eq!(report.assignment, perm.to_vec());
        assert!(report.sad_average < 1e-7);
        assert!(report.rmse_average < 1e-12);
    }

    #[test]
    fn scaled_endmembers_do_not_change_rmse() {
        let a = array![[0.1, 0.9], [0.5, 0.2], [0.9, 0.3]];
        let s = array![[0.2, 0.5, 0.9], [0.8, 0.5, 0.1]];
        let a_hat = array![[0.3, 0.09], [1.5, 0.02], [2.7, 0.03]];
        let s_hat = array![[0.2 / 3.0, 0.5 / 3.0, 0.9 / 3.0], [8.0, 5.0, 1.0]];
        let report = evaluate(
            &EndmemberMatrix::new(a_hat).unwrap(),
            &AbundanceMatrix::new(s_hat).unwrap(),
            &EndmemberMatrix::new(a).unwrap(),
            &AbundanceMatrix::new(s).unwrap(),
            false,
        )
        .unwrap();
        assert!(report.rmse_average < 1e-12, "{report:?}");
    }

    #[test]
    fn mismatched_rank_is_rejected() {
        let a = EndmemberMatrix::new(array![[1.0, 0.5], [0.2, 1.0]]).unwrap();
        let s = AbundanceMatrix::new(array![[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let a1 = EndmemberMatrix::new(array![[1.0], [0.2]]).unwrap();
        let s1 = AbundanceMatrix::new(array![[1.0, 1.0]]).unwrap();
        assert!(evaluate(&a1, &s1, &a, &s, true).is_err());
    }
}
