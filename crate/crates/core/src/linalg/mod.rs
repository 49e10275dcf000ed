//! Dense real-matrix kernels and matrix functions.
//!
//! All matrices are dense, row-major `f64` (`nalgebra::DMatrix`). The design
//! envelope is small dense problems (n up to a few hundred); every
//! factorization here is direct, not iterative-sparse.
//!
//! Validated wrapper types ([`SymMatrix`], [`SpdMatrix`], [`LowerTri`])
//! enforce the invariants the manifold modules rely on. Constructors reject
//! non-finite entries.

mod io;
mod kernels;
mod types;

pub use io::{read_matrix, read_matrix_str, write_matrix, write_matrix_string, MatrixIoError};
pub use kernels::{
    block_diag, cholesky, concat_spd, diag_part, half_lower, lower_strict, mat_exp,
    mat_log_orthogonal, qr_thin, skew_embed, spd_fn, spd_fn_values, svd_thin, sym, sym_eig,
    SpdFnTag,
};
pub use types::{ensure_finite, LinalgError, LowerTri, Mat, SpdMatrix, SymMatrix, Vector};
