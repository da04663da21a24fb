//! Dense row-major matrices and the handful of vector ops the simulator needs.

use crate::error::{Error, Result};
use crate::rng::RngState;

/// Dense row-major f64 matrix. Token batches, rotation matrices, and expert
/// weights all live in this type.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Build from a flat row-major buffer. Shape must be positive, the entry
    /// count must match, and every entry must be finite.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::invalid(format!(
                "matrix shape must be positive, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                what: "matrix entries",
                expected: rows * cols,
                got: data.len(),
            });
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite matrix entry {bad}")));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Result<Self> {
        Matrix::new(rows, cols, vec![0.0; rows * cols])
    }

    /// Identity matrix of the given order.
    pub fn identity(n: usize) -> Result<Self> {
        let mut m = Matrix::zeros(n, n)?;
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        Ok(m)
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::invalid("matrix needs at least one row"));
        }
        let cols = rows[0].len();
        let mut data = Vec::with_capacity(n * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    what: "row length",
                    expected: cols,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Matrix::new(n, cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Matrix-vector product.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::DimensionMismatch {
                what: "matvec input",
                expected: self.cols,
                got: x.len(),
            });
        }
        Ok(self
            .data
            .chunks_exact(self.cols)
            .map(|row| dot(row, x))
            .collect())
    }

    /// Largest absolute entry of `self - other`; shapes must agree.
    pub fn max_abs_diff(&self, other: &Matrix) -> Result<f64> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::DimensionMismatch {
                what: "matrix comparison",
                expected: self.rows * self.cols,
                got: other.rows * other.cols,
            });
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Random orthogonal matrix: a Gaussian matrix pushed through modified
/// Gram-Schmidt, with a second pass to hold `max|QᵀQ - I|` near machine
/// precision up to dim 512.
pub fn random_orthogonal(dim: usize, rng: &mut RngState) -> Result<Matrix> {
    if dim == 0 {
        return Err(Error::invalid("orthogonal matrix dimension must be >= 1"));
    }
    // Columns stored contiguously while orthonormalizing, transposed at the end.
    let mut cols: Vec<Vec<f64>> = (0..dim).map(|_| rng.gaussian_vec(dim)).collect();
    for pass in 0..2 {
        for j in 0..dim {
            for i in 0..j {
                let proj = dot(&cols[i], &cols[j]);
                let (head, tail) = cols.split_at_mut(j);
                let basis = &head[i];
                for (t, b) in tail[0].iter_mut().zip(basis) {
                    *t -= proj * b;
                }
            }
            let n = norm2(&cols[j]);
            if n < 1e-12 {
                // Gaussian columns are independent with probability 1; a
                // degenerate draw means the stream misbehaved.
                debug_assert!(pass == 0, "orthogonalization collapsed");
                cols[j] = rng.gaussian_vec(dim);
                let norm = norm2(&cols[j]);
                for v in &mut cols[j] {
                    *v /= norm;
                }
                continue;
            }
            for v in &mut cols[j] {
                *v /= n;
            }
        }
    }
    let mut q = Matrix::zeros(dim, dim)?;
    for (j, col) in cols.iter().enumerate() {
        for (i, v) in col.iter().enumerate() {
            q.set(i, j, *v);
        }
    }
    Ok(q)
}

/// `max|QᵀQ - I|`, the orthogonality defect.
pub fn orthogonality_defect(q: &Matrix) -> f64 {
    let n = q.rows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i..n {
            let mut s = 0.0;
            for r in 0..n {
                s += q.get(r, i) * q.get(r, j);
            }
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((s - target).abs());
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_zero_dim() {
        let mut rng = RngState::new(1, 0);
        assert!(matches!(
            random_orthogonal(0, &mut rng),
            Err(Error::InvalidArgument(_))
        ));
        assert!(Matrix::zeros(0, 3).is_err());
    }

    #[test]
    fn one_by_one_is_sign() {
        let mut rng = RngState::new(5, 0);
        let q = random_orthogonal(1, &mut rng).unwrap();
        assert!((q.get(0, 0).abs() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn orthogonal_dim8() {
        let mut rng = RngState::new(7, 0);
        let q = random_orthogonal(8, &mut rng).unwrap();
        assert!(orthogonality_defect(&q) <= 1e-10);
    }

    #[test]
    fn orthogonal_dim512() {
        let mut rng = RngState::new(11, 0);
        let q = random_orthogonal(512, &mut rng).unwrap();
        assert!(orthogonality_defect(&q) <= 1e-10);
    }

    #[test]
    fn deterministic_given_seed() {
        let mut a = RngState::new(7, 9);
        let mut b = RngState::new(7, 9);
        let qa = random_orthogonal(8, &mut a).unwrap();
        let qb = random_orthogonal(8, &mut b).unwrap();
        assert_eq!(qa.as_slice(), qb.as_slice());
    }

    #[test]
    fn matvec_shape_checked() {
        let m = Matrix::identity(3).unwrap();
        assert!(m.matvec(&[1.0, 2.0]).is_err());
        assert_eq!(m.matvec(&[1.0, 2.0, 3.0]).unwrap(), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn rejects_non_finite() {
        assert!(Matrix::new(1, 2, vec![1.0, f64::NAN]).is_err());
    }
}
