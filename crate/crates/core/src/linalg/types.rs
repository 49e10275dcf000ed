use std::ops::Deref;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Relative symmetry tolerance for [`SymMatrix`] admission.
pub const SYM_TOL: f64 = 1e-12;
/// Relative eigenvalue tolerance for [`SpdMatrix`] admission.
pub const SPD_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Error)]
pub enum LinalgError {
    #[error("non-finite entry at ({row},{col})")]
    NonFinite { row: usize, col: usize },
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not symmetric: asymmetry {asymmetry:.3e} exceeds {tol:.3e}")]
    NotSymmetric { asymmetry: f64, tol: f64 },
    #[error("matrix is not positive definite: pivot {pivot:.3e} at index {index}")]
    NotPositiveDefinite { pivot: f64, index: usize },
    #[error("matrix is not lower triangular: entry {value:.3e} above diagonal at ({row},{col})")]
    NotLowerTriangular { row: usize, col: usize, value: f64 },
    #[error("symmetric eigensolver failed to converge (residual {residual:.3e})")]
    EigNoConvergence { residual: f64 },
    #[error("svd failed to converge")]
    SvdNoConvergence,
    #[error("{func} requires positive eigenvalues, found {eigenvalue:.3e}")]
    NonPositiveEigenvalue { func: &'static str, eigenvalue: f64 },
    #[error("rank deficient: |R[{index},{index}]| = {value:.3e} below {threshold:.3e}")]
    RankDeficient { index: usize, value: f64, threshold: f64 },
    #[error("matrix is not orthogonal (residual {residual:.3e})")]
    NotOrthogonal { residual: f64 },
    #[error("logarithm undefined: eigenvalue at -1 (rotation by pi)")]
    LogAtMinusOne,
    #[error("empty input: {context}")]
    Empty { context: &'static str },
    #[error("size mismatch: {context}")]
    SizeMismatch { context: String },
}

/// Rejects matrices containing NaN or infinite entries.
pub fn ensure_finite(m: &Mat) -> Result<(), LinalgError> {
    for col in 0..m.ncols() {
        for row in 0..m.nrows() {
            if !m[(row, col)].is_finite() {
                return Err(LinalgError::NonFinite { row, col });
            }
        }
    }
    Ok(())
}

fn ensure_square(m: &Mat) -> Result<(), LinalgError> {
    if m.nrows() != m.ncols() {
        return Err(LinalgError::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    Ok(())
}

/// Square matrix with `‖S − Sᵀ‖_F ≤ SYM_TOL · max(1, ‖S‖_F)`.
///
/// The constructor symmetrizes via `(S + Sᵀ)/2` after the check, so the
/// stored matrix is exactly symmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(Mat);

impl SymMatrix {
    pub fn new(m: Mat) -> Result<Self, LinalgError> {
        ensure_finite(&m)?;
        ensure_square(&m)?;
        let asymmetry = (&m - m.transpose()).norm();
        let tol = SYM_TOL * m.norm().max(1.0);
        if asymmetry > tol {
            return Err(LinalgError::NotSymmetric { asymmetry, tol });
        }
        Ok(Self::symmetrize(m))
    }

    /// Builds from a matrix known to be symmetric up to round-off; always
    /// takes the symmetric part, only finiteness is checked.
    pub fn symmetrize_checked(m: Mat) -> Result<Self, LinalgError> {
        ensure_finite(&m)?;
        ensure_square(&m)?;
        Ok(Self::symmetrize(m))
    }

    fn symmetrize(m: Mat) -> Self {
        let s = (&m + m.transpose()).scale(0.5);
        SymMatrix(s)
    }

    pub fn zeros(n: usize) -> Self {
        SymMatrix(Mat::zeros(n, n))
    }

    pub fn identity(n: usize) -> Self {
        SymMatrix(Mat::identity(n, n))
    }

    pub fn size(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_mat(&self) -> &Mat {
        &self.0
    }

    pub fn into_mat(self) -> Mat {
        self.0
    }
}

impl Deref for SymMatrix {
    type Target = Mat;
    fn deref(&self) -> &Mat {
        &self.0
    }
}

/// Symmetric positive definite matrix.
///
/// Positive definiteness is certified at construction by a Cholesky
/// factorization with pivot threshold `SPD_TOL · max(1, max diag)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix(SymMatrix);

impl SpdMatrix {
    pub fn new(s: SymMatrix) -> Result<Self, LinalgError> {
        // cholesky_raw reports the first non-positive pivot.
        super::kernels::cholesky_raw(s.as_mat())?;
        Ok(SpdMatrix(s))
    }

    pub fn from_mat(m: Mat) -> Result<Self, LinalgError> {
        Self::new(SymMatrix::new(m)?)
    }

    /// Symmetrizes then certifies; for matrices produced by arithmetic that
    /// is symmetric only up to round-off.
    pub fn from_mat_symmetrize(m: Mat) -> Result<Self, LinalgError> {
        Self::new(SymMatrix::symmetrize_checked(m)?)
    }

    pub fn identity(n: usize) -> Self {
        SpdMatrix(SymMatrix::identity(n))
    }

    pub fn size(&self) -> usize {
        self.0.size()
    }

    pub fn as_sym(&self) -> &SymMatrix {
        &self.0
    }

    pub fn as_mat(&self) -> &Mat {
        self.0.as_mat()
    }

    pub fn into_mat(self) -> Mat {
        self.0.into_mat()
    }
}

impl Deref for SpdMatrix {
    type Target = Mat;
    fn deref(&self) -> &Mat {
        self.0.as_mat()
    }
}

/// Lower-triangular square matrix; entries above the diagonal are exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct LowerTri(Mat);

impl LowerTri {
    pub fn new(m: Mat) -> Result<Self, LinalgError> {
        ensure_finite(&m)?;
        ensure_square(&m)?;
        for row in 0..m.nrows() {
            for col in (row + 1)..m.ncols() {
                let value = m[(row, col)];
                if value != 0.0 {
                    return Err(LinalgError::NotLowerTriangular { row, col, value });
                }
            }
        }
        Ok(LowerTri(m))
    }

    pub(crate) fn new_unchecked(m: Mat) -> Self {
        LowerTri(m)
    }

    pub fn size(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_mat(&self) -> &Mat {
        &self.0
    }

    pub fn into_mat(self) -> Mat {
        self.0
    }
}

impl Deref for LowerTri {
    type Target = Mat;
    fn deref(&self) -> &Mat {
        &self.0
    }
}
