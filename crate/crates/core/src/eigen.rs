//! Thin wrapper over faer's dense nonsymmetric eigensolver.

use faer::Mat;
use num_complex::Complex64;

use crate::error::{Result, SqgError};

/// Row-major dense complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    pub dim: usize,
    pub data: Vec<Complex64>,
}

impl DenseMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![Complex64::new(0.0, 0.0); dim * dim],
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.data[i * self.dim + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: Complex64) {
        self.data[i * self.dim + j] = v;
    }

    pub fn mul_vec(&self, x: &[Complex64]) -> Vec<Complex64> {
        (0..self.dim)
            .map(|i| {
                self.data[i * self.dim..(i + 1) * self.dim]
                    .iter()
                    .zip(x)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect()
    }
}

/// Eigenvalues and right eigenvectors (as columns, each of unit 2-norm).
pub(crate) struct Eig {
    pub values: Vec<Complex64>,
    pub vectors: Vec<Vec<Complex64>>,
}

pub(crate) fn eig(m: &DenseMatrix) -> Result<Eig> {
    let dim = m.dim;
    let a = Mat::<Complex64>::from_fn(dim, dim, |i, j| m.get(i, j));
    let evd = a.eigen().map_err(|e| SqgError::Convergence {
        iterations: 0,
        detail: format!("dense eigensolver failed: {e:?}"),
    })?;
    let s = evd.S();
    let u = evd.U();
    let values: Vec<Complex64> = (0..dim).map(|i| s.column_vector()[i]).collect();
    let vectors = (0..dim)
        .map(|j| {
            let mut v: Vec<Complex64> = (0..dim).map(|i| u[(i, j)]).collect();
            let nrm = v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
            if nrm > 0.0 {
                for c in &mut v {
                    *c /= nrm;
                }
            }
            v
        })
        .collect();
    Ok(Eig { values, vectors })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rotation_generator() {
        let mut m = DenseMatrix::zeros(2);
        m.set(0, 1, Complex64::new(-2.0, 0.0));
        m.set(1, 0, Complex64::new(2.0, 0.0));
        let e = eig(&m).unwrap();
        let mut im: Vec<f64> = e.values.iter().map(|v| v.im).collect();
        im.sort_by(f64::total_cmp);
        assert!((im[0] + 2.0).abs() < 1e-12 && (im[1] - 2.0).abs() < 1e-12);
        for (lam, v) in e.values.iter().zip(&e.vectors) {
            let mv = m.mul_vec(v);
            let r: f64 = mv.iter().zip(v).map(|(a, b)| (a - lam * b).norm_sqr()).sum();
            assert!(r.sqrt() < 1e-12);
        }
    }
}
