//! Training objective terms as pure functions.
//!
//! Only the tracking term is implemented in full; detection losses enter the
//! total as opaque scalars.

use crate::assignment::AffinityMatrix;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Matrix;

const CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights<T> {
    pub lambda_prev: T,
    pub lambda_t: T,
    /// Learned log-variance style coefficient on the tracking term.
    pub epsilon_trk: T,
}

impl<T: Scalar> Default for LossWeights<T> {
    fn default() -> Self {
        LossWeights {
            lambda_prev: T::of(0.5),
            lambda_t: T::of(0.25),
            epsilon_trk: T::zero(),
        }
    }
}

/// Binary ground-truth assignment with at most one positive per row and
/// per column.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityTarget<T>(Matrix<T>);

impl<T: Scalar> AffinityTarget<T> {
    pub fn new(m: Matrix<T>) -> Result<Self> {
        if m.as_slice().iter().any(|&v| v != T::zero() && v != T::one()) {
            return Err(Error::InvalidConfig("target entries must be 0 or 1".into()));
        }
        let one = T::one();
        let row_ok = (0..m.rows()).all(|i| m.row(i).iter().filter(|&&v| v == one).count() <= 1);
        let col_ok = (0..m.cols()).all(|j| m.col(j).iter().filter(|&&v| v == one).count() <= 1);
        if !row_ok || !col_ok {
            return Err(Error::InvalidConfig("target must be a partial permutation".into()));
        }
        Ok(AffinityTarget(m))
    }

    /// Target from `(row, col)` positives.
    pub fn from_pairs(rows: usize, cols: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        let mut m = Matrix::zeros(rows, cols);
        for &(i, j) in pairs {
            m[(i, j)] = T::one();
        }
        Self::new(m)
    }

    pub fn matrix(&self) -> &Matrix<T> {
        &self.0
    }

    pub fn positives(&self) -> usize {
        self.0.as_slice().iter().filter(|&&v| v == T::one()).count()
    }
}

fn check<T: Scalar>(a: &AffinityMatrix<T>, y: &AffinityTarget<T>) -> Result<T> {
    if a.matrix().shape() != y.0.shape() {
        return Err(Error::shape(
            "fast_focal",
            &[a.rows(), a.cols()],
            &[y.0.rows(), y.0.cols()],
        ));
    }
    match y.positives() {
        0 => Err(Error::NoPositives),
        n => Ok(T::of(n as f64)),
    }
}

/// Penalty-reduced binary focal loss, normalized by the number of positives:
/// `-(1/N) Σ [y=1: (1-a)^2 ln a ; y=0: a^2 ln(1-a)]`, with `a` clamped to
/// `[1e-12, 1 - 1e-12]`.
pub fn fast_focal<T: Scalar>(a: &AffinityMatrix<T>, y: &AffinityTarget<T>) -> Result<T> {
    let n_pos = check(a, y)?;
    let (lo, hi) = (T::of(CLAMP), T::one() - T::of(CLAMP));
    let one = T::one();
    let mut sum = T::zero();
    for (&av, &yv) in a.matrix().as_slice().iter().zip(y.0.as_slice()) {
        let p = av.max(lo).min(hi);
        sum = sum
            + if yv == one {
                (one - p).powi(2) * p.ln()
            } else {
                p.powi(2) * (one - p).ln()
            };
    }
    Ok(-sum / n_pos)
}

/// Analytic `dL/dA` of [`fast_focal`]. Entries outside the clamp interval get
/// zero gradient.
pub fn fast_focal_grad<T: Scalar>(a: &AffinityMatrix<T>, y: &AffinityTarget<T>) -> Result<Matrix<T>> {
    let n_pos = check(a, y)?;
    let (lo, hi) = (T::of(CLAMP), T::one() - T::of(CLAMP));
    let (one, two) = (T::one(), T::of(2.0));
    let (rows, cols) = a.matrix().shape();
    Ok(Matrix::from_fn(rows, cols, |i, j| {
        let p = a.get(i, j);
        if p < lo || p > hi {
            return T::zero();
        }
        let d = if y.0[(i, j)] == one {
            -two * (one - p) * p.ln() + (one - p).powi(2) / p
        } else {
            two * p * (one - p).ln() - p.powi(2) / (one - p)
        };
        -d / n_pos
    }))
}

/// `λ_prev·L_prev + λ_t·L_t + λ_t·L_refined + e^{-ε}·L_trk + ε`.
pub fn total_loss<T: Scalar>(l_det_prev: T, l_det_t: T, l_det_refined: T, l_trk: T, w: &LossWeights<T>) -> T {
    w.lambda_prev * l_det_prev
        + w.lambda_t * l_det_t
        + w.lambda_t * l_det_refined
        + (-w.epsilon_trk).exp() * l_trk
        + w.epsilon_trk
}

/// `∂ total_loss / ∂ε = 1 - e^{-ε}·L_trk`.
pub fn total_loss_grad_epsilon<T: Scalar>(l_trk: T, w: &LossWeights<T>) -> T {
    T::one() - (-w.epsilon_trk).exp() * l_trk
}

#[cfg(test)]
mod tests {
    use super::*;

    fn aff(rows: &[&[f64]]) -> AffinityMatrix<f64> {
        AffinityMatrix::from_matrix(Matrix::from_rows(rows).unwrap())
    }

    #[test]
    fn perfect_prediction_has_zero_loss() {
        let y = AffinityTarget::<f64>::from_pairs(2, 3, &[(0, 1), (1, 0)]).unwrap();
        let a = AffinityMatrix::from_matrix(y.matrix().clone());
        assert!(fast_focal(&a, &y).unwrap().abs() < 1e-20);
        let g = fast_focal_grad(&a, &y).unwrap();
        assert!(g.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_entry_value() {
        let y = AffinityTarget::from_pairs(1, 1, &[(0, 0)]).unwrap();
        let l = fast_focal(&aff(&[&[0.5]]), &y).unwrap();
        assert!((l - 0.25 * 2f64.ln()).abs() < 1e-15);
        assert!((l - 0.1733).abs() < 1e-4);
    }

    #[test]
    fn loss_falls_as_positive_rises() {
        let y = AffinityTarget::from_pairs(2, 2, &[(0, 0)]).unwrap();
        let mut last = f64::INFINITY;
        for k in 1..20 {
            let p = k as f64 / 20.0;
            let l = fast_focal(&aff(&[&[p, 0.2], &[0.1, 0.3]]), &y).unwrap();
            assert!(l < last);
            last = l;
            let g = fast_focal_grad(&aff(&[&[p, 0.2], &[0.1, 0.3]]), &y).unwrap();
            assert!(g[(0, 0)] < 0.0);
        }
    }

    #[test]
    fn errors() {
        let y = AffinityTarget::from_pairs(2, 2, &[]).unwrap();
        assert!(matches!(
            fast_focal(&aff(&[&[0.5, 0.5], &[0.5, 0.5]]), &y),
            Err(Error::NoPositives)
        ));
        let y = AffinityTarget::from_pairs(1, 1, &[(0, 0)]).unwrap();
        assert!(fast_focal(&aff(&[&[0.5, 0.5]]), &y).is_err());
        assert!(AffinityTarget::<f64>::from_pairs(2, 2, &[(0, 0), (0, 1)]).is_err());
        assert!(AffinityTarget::new(Matrix::from_rows(&[[0.5]]).unwrap()).is_err());
    }

    #[test]
    fn total_loss_examples() {
        let w = LossWeights::default();
        assert_eq!(total_loss(0.0, 0.0, 0.0, 0.0, &w), 0.0);
        assert_eq!(total_loss(0.0, 0.0, 0.0, 1.0, &w), 1.0);
        assert_eq!(total_loss(2.0, 4.0, 4.0, 1.0, &w), 4.0);
    }

    #[test]
    fn total_loss_is_linear_in_detection_terms() {
        let w = LossWeights {
            epsilon_trk: 0.3f64,
            ..Default::default()
        };
        let base = total_loss(1.0, 2.0, 3.0, 0.7, &w);
        let bumped = total_loss(1.0 + 2.0, 2.0, 3.0, 0.7, &w);
        assert!((bumped - base - 2.0 * 0.5).abs() < 1e-12);
        let bumped = total_loss(1.0, 2.0, 3.0 + 4.0, 0.7, &w);
        assert!((bumped - base - 4.0 * 0.25).abs() < 1e-12);
    }

    #[test]
    fn epsilon_derivative_and_minimizer() {
        let l_trk = 2.5f64;
        for eps in [-1.0, 0.0, 0.4, 2.0] {
            let w = LossWeights {
                epsilon_trk: eps,
                ..Default::default()
            };
            let h = 1e-6;
            let up = total_loss(
                0.0,
                0.0,
                0.0,
                l_trk,
                &LossWeights {
                    epsilon_trk: eps + h,
                    ..w
                },
            );
            let dn = total_loss(
                0.0,
                0.0,
                0.0,
                l_trk,
                &LossWeights {
                    epsilon_trk: eps - h,
                    ..w
                },
            );
            let fd = (up - dn) / (2.0 * h);
            assert!((fd - total_loss_grad_epsilon(l_trk, &w)).abs() < 1e-8);
        }
        // the stationary point is ε = ln(L_trk) and it is a minimum
        let at = |e: f64| {
            total_loss(
                0.0,
                0.0,
                0.0,
                l_trk,
                &LossWeights {
                    epsilon_trk: e,
                    ..Default::default()
                },
            )
        };
        let star = l_trk.ln();
        assert!(
            total_loss_grad_epsilon(
                l_trk,
                &LossWeights {
                    epsilon_trk: star,
                    ..Default::default()
                }
            )
            .abs()
                < 1e-12
        );
        assert!(at(star) < at(star - 0.1) && at(star) < at(star + 0.1));
    }
}
