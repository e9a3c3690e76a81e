//! Small dense linear-algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::{Error, Result};

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    if !m.is_square() {
        return false;
    }
    let scale = m.amax().max(1.0);
    (0..m.nrows()).all(|i| (0..i).all(|j| (m[(i, j)] - m[(j, i)]).abs() <= tol * scale))
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(symmetrize(m)).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Matrix exponential. Symmetric input goes through an eigendecomposition,
/// anything else through Padé scaling-and-squaring.
pub fn expm(m: &DMatrix<f64>) -> DMatrix<f64> {
    if is_symmetric(m, 1e-13) {
        let eig = SymmetricEigen::new(symmetrize(m));
        let v = &eig.eigenvectors;
        let e = DMatrix::from_diagonal(&eig.eigenvalues.map(f64::exp));
        let out = v * e * v.transpose();
        symmetrize(&out)
    } else {
        m.clone().exp()
    }
}

/// Clip negative eigenvalues of a symmetric matrix to zero.
///
/// Returns the projected matrix and the Frobenius norm of the correction.
pub fn psd_project(m: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let sym = symmetrize(m);
    let eig = SymmetricEigen::new(sym.clone());
    if eig.eigenvalues.iter().all(|&l| l >= 0.0) {
        return (sym, 0.0);
    }
    let v = &eig.eigenvectors;
    let clipped = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0)));
    let out = symmetrize(&(v * clipped * v.transpose()));
    let corr = (&out - &sym).norm();
    (out, corr)
}

/// A factor `L` with `L Lᵀ = m` for a symmetric positive semidefinite `m`.
pub fn psd_factor(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = symmetrize(m);
    if let Some(ch) = sym.clone().cholesky() {
        return Ok(ch.l());
    }
    let eig = SymmetricEigen::new(sym);
    let scale = eig.eigenvalues.amax().max(f64::MIN_POSITIVE);
    if eig.eigenvalues.iter().any(|&l| l < -1e-10 * scale) {
        return Err(Error::config("matrix is not positive semidefinite"));
    }
    let v = &eig.eigenvectors;
    let root = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
    Ok(v * root)
}

/// Dense `d x d` operator stored row-major, with a fast path for diagonal
/// matrices. Used in the integrator hot loops where `nalgebra` allocation
/// would dominate.
#[derive(Debug, Clone, PartialEq)]
pub struct SmallMat {
    dim: usize,
    data: Vec<f64>,
    diagonal: bool,
    identity: bool,
}

impl SmallMat {
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        assert!(m.is_square(), "SmallMat needs a square matrix");
        let dim = m.nrows();
        let mut data = Vec::with_capacity(dim * dim);
        for i in 0..dim {
            for j in 0..dim {
                data.push(m[(i, j)]);
            }
        }
        let diagonal = (0..dim).all(|i| (0..dim).all(|j| i == j || m[(i, j)] == 0.0));
        let identity = diagonal && (0..dim).all(|i| m[(i, i)] == 1.0);
        SmallMat { dim, data, diagonal, identity }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_identity(&self) -> bool {
        self.identity
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim, self.dim, &self.data)
    }

    /// `out = self * x`
    #[inline]
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim;
        if self.identity {
            out.copy_from_slice(x);
        } else if self.diagonal {
            for (i, (o, xi)) in out.iter_mut().zip(x).enumerate() {
                *o = self.data[i * d + i] * xi;
            }
        } else {
            for (o, row) in out.iter_mut().zip(self.data.chunks_exact(d)) {
                *o = row.iter().zip(x).map(|(a, b)| a * b).sum();
            }
        }
    }

    /// `y += alpha * self * x`
    #[inline]
    pub fn apply_add(&self, alpha: f64, x: &[f64], y: &mut [f64]) {
        let d = self.dim;
        if self.diagonal {
            for (i, (yi, xi)) in y.iter_mut().zip(x).enumerate() {
                *yi += alpha * self.data[i * d + i] * xi;
            }
        } else {
            for (yi, row) in y.iter_mut().zip(self.data.chunks_exact(d)) {
                *yi += alpha * row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            }
        }
    }
}
