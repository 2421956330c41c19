//! Dense linear-algebra helpers shared by the controller, simulator and oracle.
//!
//! Storage is plain `nalgebra` dense matrices. Symmetric positive definite
//! systems are solved through a cached Cholesky factor. Apart from the
//! reference solvers in `oracle`, explicit inverses are only formed here.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Relative asymmetry accepted before a matrix is treated as non-symmetric.
pub const SYMMETRY_TOL: f64 = 1e-10;

pub fn ones(n: usize) -> Vector {
    Vector::from_element(n, 1.0)
}

pub fn max_abs(m: &Matrix) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

pub fn max_abs_vec(v: &Vector) -> f64 {
    v.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

pub fn all_finite(m: &Matrix) -> bool {
    m.iter().all(|v| v.is_finite())
}

pub fn all_finite_vec(v: &Vector) -> bool {
    v.iter().all(|x| x.is_finite())
}

fn require_square(m: &Matrix, context: &'static str) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::dims(
            context,
            "square matrix",
            format!("{}x{}", m.nrows(), m.ncols()),
        ));
    }
    Ok(())
}

/// Largest entry of `m - mᵀ` relative to the largest entry of `m`.
pub fn relative_asymmetry(m: &Matrix) -> f64 {
    let scale = max_abs(m);
    if scale == 0.0 {
        return 0.0;
    }
    let mut worst = 0.0_f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst / scale
}

/// Returns `(m + mᵀ) / 2`.
pub fn symmetrize(m: &Matrix) -> Result<Matrix> {
    require_square(m, "symmetrize")?;
    Ok((m + m.transpose()) * 0.5)
}

/// Cholesky factor of a symmetric positive definite matrix, reused for
/// repeated solves.
#[derive(Clone, Debug)]
pub struct SpdFactor {
    chol: Cholesky<f64, Dyn>,
}

impl SpdFactor {
    pub fn new(m: &Matrix) -> Result<Self> {
        require_square(m, "spd factorization")?;
        if !all_finite(m) {
            return Err(Error::NotPositiveDefinite);
        }
        let asym = relative_asymmetry(m);
        if asym > SYMMETRY_TOL {
            return Err(Error::NotSymmetric { asymmetry: asym });
        }
        let sym = (m + m.transpose()) * 0.5;
        let chol = Cholesky::new(sym).ok_or(Error::NotPositiveDefinite)?;
        Ok(Self { chol })
    }

    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    pub fn solve(&self, rhs: &Matrix) -> Result<Matrix> {
        if rhs.nrows() != self.dim() {
            return Err(Error::dims("spd solve rhs", self.dim(), rhs.nrows()));
        }
        Ok(self.chol.solve(rhs))
    }

    pub fn solve_vec(&self, rhs: &Vector) -> Result<Vector> {
        if rhs.len() != self.dim() {
            return Err(Error::dims("spd solve rhs", self.dim(), rhs.len()));
        }
        Ok(self.chol.solve(rhs))
    }

    /// Solves against the identity. Used where the full inverse operator is
    /// stored and reused many times.
    pub fn inverse(&self) -> Matrix {
        self.chol.inverse()
    }
}

/// Solves `m · X = rhs` for symmetric positive definite `m`.
pub fn spd_solve(m: &Matrix, rhs: &Matrix) -> Result<Matrix> {
    SpdFactor::new(m)?.solve(rhs)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue_symmetric(m: &Matrix) -> Result<f64> {
    require_square(m, "min_eigenvalue_symmetric")?;
    if m.nrows() == 0 {
        return Err(Error::EmptyInput("eigenvalue of an empty matrix"));
    }
    let eig = SymmetricEigen::new(m.clone());
    Ok(eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min))
}

/// Assembles a block-diagonal matrix from rectangular blocks.
pub fn block_diag(blocks: &[Matrix]) -> Result<Matrix> {
    if blocks.is_empty() {
        return Err(Error::EmptyInput("block_diag needs at least one block"));
    }
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Matrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    Ok(out)
}
