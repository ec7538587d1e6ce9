//! Cubic B-spline bases on equally spaced knots, and difference penalties.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub const DEGREE: usize = 3;

/// `k` cubic B-splines spanning `[lo, hi]` with equally spaced knots
/// extended three intervals past each end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BSplineBasis {
    pub k: usize,
    pub lo: f64,
    pub hi: f64,
    pub knots: Vec<f64>,
}

impl BSplineBasis {
    /// Requires `k >= 4` and `lo < hi`.
    pub fn new(k: usize, lo: f64, hi: f64) -> Option<Self> {
        if k < DEGREE + 1 || !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return None;
        }
        let intervals = (k - DEGREE) as f64;
        let h = (hi - lo) / intervals;
        let knots = (0..k + DEGREE + 1)
            .map(|j| {
                let j = j as f64 - DEGREE as f64;
                // pin the domain ends exactly
                if j == 0.0 {
                    lo
                } else if j == intervals {
                    hi
                } else {
                    lo + j * h
                }
            })
            .collect();
        Some(BSplineBasis { k, lo, hi, knots })
    }

    /// Index of the first of the four non-zero basis functions at `x`, and
    /// their values. `x` is clamped to `[lo, hi]`.
    pub fn eval_nonzero(&self, x: f64) -> (usize, [f64; DEGREE + 1]) {
        let x = x.clamp(self.lo, self.hi);
        let t = &self.knots;
        // span i with t[i] <= x < t[i+1], restricted to the domain
        let mut i = DEGREE;
        while i + 1 < self.k && x >= t[i + 1] {
            i += 1;
        }
        // de Boor / Cox recursion in triangular form
        let mut n = [0.0; DEGREE + 1];
        let mut left = [0.0; DEGREE + 1];
        let mut right = [0.0; DEGREE + 1];
        n[0] = 1.0;
        for j in 1..=DEGREE {
            left[j] = x - t[i + 1 - j];
            right[j] = t[i + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let tmp = n[r] / (right[r + 1] + left[j - r]);
                n[r] = saved + right[r + 1] * tmp;
                saved = left[j - r] * tmp;
            }
            n[j] = saved;
        }
        (i - DEGREE, n)
    }

    /// All `k` basis values at `x`.
    pub fn eval(&self, x: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.k];
        let (first, vals) = self.eval_nonzero(x);
        out[first..first + DEGREE + 1].copy_from_slice(&vals);
        out
    }

    /// n × k design matrix.
    pub fn design(&self, xs: &[f64]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(xs.len(), self.k);
        for (r, &x) in xs.iter().enumerate() {
            let (first, vals) = self.eval_nonzero(x);
            for (c, v) in vals.iter().enumerate() {
                m[(r, first + c)] = *v;
            }
        }
        m
    }
}

/// `DᵀD` for the order-`order` difference matrix on `k` coefficients.
pub fn difference_penalty(k: usize, order: usize) -> DMatrix<f64> {
    let mut d = DMatrix::<f64>::identity(k, k);
    for _ in 0..order {
        let rows = d.nrows() - 1;
        let mut next = DMatrix::zeros(rows, k);
        for r in 0..rows {
            for c in 0..k {
                next[(r, c)] = d[(r + 1, c)] - d[(r, c)];
            }
        }
        d = next;
    }
    d.transpose() * d
}
