//! Small dense symmetric positive-definite solves (ridge normal equations,
//! GP covariance). Matrices are row-major `n x n` slices.

use crate::error::{Error, Result};

/// Lower-triangular Cholesky factor `L` with `A = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    n: usize,
    l: Vec<f64>,
}

impl Cholesky {
    pub fn factor(a: &[f64], n: usize) -> Result<Self> {
        if a.len() != n * n {
            return Err(Error::LengthMismatch { expected: n * n, got: a.len() });
        }
        let scale = (0..n).map(|i| a[i * n + i].abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        let mut l = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let mut sum = a[i * n + j];
                for k in 0..j {
                    sum -= l[i * n + k] * l[j * n + k];
                }
                if i == j {
                    if !(sum > scale * 1e-13) {
                        return Err(Error::Singular(format!("non-positive pivot {sum:e} at row {i}")));
                    }
                    l[i * n + i] = sum.sqrt();
                } else {
                    l[i * n + j] = sum / l[j * n + j];
                }
            }
        }
        Ok(Self { n, l })
    }

    /// Factors `A + jitter·I`, escalating jitter from `start` by factors of
    /// ten up to `max` until the factorization succeeds.
    pub fn factor_with_jitter(a: &[f64], n: usize, start: f64, max: f64) -> Result<(Self, f64)> {
        if let Ok(c) = Self::factor(a, n) {
            return Ok((c, 0.0));
        }
        let mut jitter = start;
        let mut work = a.to_vec();
        while jitter <= max * (1.0 + 1e-12) {
            for i in 0..n {
                work[i * n + i] = a[i * n + i] + jitter;
            }
            if let Ok(c) = Self::factor(&work, n) {
                return Ok((c, jitter));
            }
            jitter *= 10.0;
        }
        Err(Error::Singular(format!("matrix not positive definite even with jitter {max:e}")))
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solves `L y = b`.
    pub fn solve_lower(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= self.l[i * n + k] * y[k];
            }
            y[i] = s / self.l[i * n + i];
        }
        y
    }

    /// Solves `Lᵀ x = y`.
    pub fn solve_upper(&self, y: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x = y.to_vec();
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in i + 1..n {
                s -= self.l[k * n + i] * x[k];
            }
            x[i] = s / self.l[i * n + i];
        }
        x
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        self.solve_upper(&self.solve_lower(b))
    }

    /// `log det A`.
    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.n).map(|i| self.l[i * self.n + i].ln()).sum::<f64>()
    }

    /// Full inverse (used for leave-one-out hat diagonals on small systems).
    pub fn inverse(&self) -> Vec<f64> {
        let n = self.n;
        let mut inv = vec![0.0; n * n];
        let mut e = vec![0.0; n];
        for j in 0..n {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[j] = 1.0;
            let col = self.solve(&e);
            for i in 0..n {
                inv[i * n + j] = col[i];
            }
        }
        inv
    }
}
