//! Small dense symmetric linear algebra used by the adaptive likelihood
//! (n=256 covariance factorizations) and correlated random-walk proposals.

use crate::error::{Error, Result};

/// Lower-triangular Cholesky factor of a symmetric positive-definite
/// matrix, row-major full storage (upper triangle of `l` is zero).
#[derive(Debug, Clone)]
pub(crate) struct DenseCholesky {
    n: usize,
    l: Vec<f64>,
}

impl DenseCholesky {
    /// Factors the symmetric matrix `a` (row-major, n×n). Fails on a
    /// non-positive pivot with the offending index and value.
    pub fn factor(a: &[f64], n: usize) -> Result<DenseCholesky> {
        if a.len() != n * n {
            return Err(Error::config(format!(
                "matrix storage {} does not match dimension {n}",
                a.len()
            )));
        }
        let mut l = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let mut sum = a[i * n + j];
                for k in 0..j {
                    sum -= l[i * n + k] * l[j * n + k];
                }
                if i == j {
                    if !(sum > 0.0) {
                        return Err(Error::numerical(format!(
                            "Cholesky pivot {sum:e} at index {i} of {n}; matrix not positive definite"
                        )));
                    }
                    l[i * n + i] = sum.sqrt();
                } else {
                    l[i * n + j] = sum / l[j * n + j];
                }
            }
        }
        Ok(DenseCholesky { n, l })
    }

    /// Σ_i ln L_ii = ½·logdet of the factored matrix.
    pub fn log_diag_sum(&self) -> f64 {
        (0..self.n).map(|i| self.l[i * self.n + i].ln()).sum()
    }

    /// Solves L z = v in place (forward substitution).
    pub fn solve_lower_in_place(&self, v: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let mut s = v[i];
            for k in 0..i {
                s -= self.l[i * n + k] * v[k];
            }
            v[i] = s / self.l[i * n + i];
        }
    }

    /// Solves L Lᵀ x = v in place.
    #[cfg(test)]
    pub fn solve_in_place(&self, v: &mut [f64]) {
        self.solve_lower_in_place(v);
        let n = self.n;
        for i in (0..n).rev() {
            let mut s = v[i];
            for k in i + 1..n {
                s -= self.l[k * n + i] * v[k];
            }
            v[i] = s / self.l[i * n + i];
        }
    }

    /// Computes L·v — maps iid standard normals to N(0, L Lᵀ) draws.
    pub fn multiply_lower(&self, v: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut out = vec![0.0; n];
        for i in 0..n {
            let mut s = 0.0;
            for k in 0..=i {
                s += self.l[i * n + k] * v[k];
            }
            out[i] = s;
        }
        out
    }
}
