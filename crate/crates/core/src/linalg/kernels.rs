use nalgebra::linalg::{SymmetricEigen, QR};

use super::types::{ensure_finite, LinalgError, LowerTri, Mat, SpdMatrix, SymMatrix, Vector};

/// Symmetric eigendecomposition `S = Q diag(lam) Qᵀ`.
///
/// Eigenvalues are returned in descending order. Column signs are fixed by
/// making the largest-magnitude entry of each eigenvector positive, so the
/// result is reproducible despite the sign ambiguity of eigenvectors.
pub fn sym_eig(s: &SymMatrix) -> Result<(Mat, Vector), LinalgError> {
    let eig = SymmetricEigen::try_new(s.as_mat().clone(), f64::EPSILON, 10_000).ok_or_else(
        || {
            // residual diagnostic for the non-convergent case
            LinalgError::EigNoConvergence {
                residual: s.as_mat().norm(),
            }
        },
    )?;
    let n = s.size();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut q = Mat::zeros(n, n);
    let mut lam = Vector::zeros(n);
    for (dst, &src) in order.iter().enumerate() {
        lam[dst] = eig.eigenvalues[src];
        let col = eig.eigenvectors.column(src);
        q.set_column(dst, &col);
    }
    fix_column_signs(&mut q, None);
    Ok((q, lam))
}

/// Makes the largest-magnitude entry of each column of `m` positive. If
/// `paired` is given, the corresponding column there is negated in lockstep.
fn fix_column_signs(m: &mut Mat, mut paired: Option<&mut Mat>) {
    for c in 0..m.ncols() {
        let mut best = 0usize;
        let mut best_abs = 0.0f64;
        for r in 0..m.nrows() {
            let a = m[(r, c)].abs();
            if a > best_abs {
                best_abs = a;
                best = r;
            }
        }
        if m[(best, c)] < 0.0 {
            for r in 0..m.nrows() {
                m[(r, c)] = -m[(r, c)];
            }
            if let Some(p) = paired.as_deref_mut() {
                for r in 0..p.nrows() {
                    p[(r, c)] = -p[(r, c)];
                }
            }
        }
    }
}

/// Scalar functions applied to symmetric matrices through the spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpdFnTag {
    Exp,
    Log,
    Sqrt,
    InvSqrt,
}

impl SpdFnTag {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            SpdFnTag::Exp => x.exp(),
            SpdFnTag::Log => x.ln(),
            SpdFnTag::Sqrt => x.sqrt(),
            SpdFnTag::InvSqrt => 1.0 / x.sqrt(),
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            SpdFnTag::Exp => x.exp(),
            SpdFnTag::Log => 1.0 / x,
            SpdFnTag::Sqrt => 0.5 / x.sqrt(),
            SpdFnTag::InvSqrt => -0.5 / (x * x.sqrt()),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SpdFnTag::Exp => "exp",
            SpdFnTag::Log => "log",
            SpdFnTag::Sqrt => "sqrt",
            SpdFnTag::InvSqrt => "invsqrt",
        }
    }

    fn requires_positive(self) -> bool {
        !matches!(self, SpdFnTag::Exp)
    }
}

/// `Q diag(f(lam)) Qᵀ` for symmetric input. Log/sqrt/invsqrt require all
/// eigenvalues positive and report the offending eigenvalue otherwise.
pub fn spd_fn(s: &SymMatrix, f: SpdFnTag) -> Result<SymMatrix, LinalgError> {
    let (m, _, _) = spd_fn_values(s, f)?;
    Ok(m)
}

/// Same as [`spd_fn`] but also returns the eigendecomposition used, for
/// callers that need it again (the gradient engine caches it).
pub fn spd_fn_values(
    s: &SymMatrix,
    f: SpdFnTag,
) -> Result<(SymMatrix, Mat, Vector), LinalgError> {
    let (q, lam) = sym_eig(s)?;
    if f.requires_positive() {
        if let Some(bad) = lam.iter().find(|&&x| x <= 0.0) {
            return Err(LinalgError::NonPositiveEigenvalue {
                func: f.name(),
                eigenvalue: *bad,
            });
        }
    }
    let fl = Vector::from_iterator(lam.len(), lam.iter().map(|&x| f.apply(x)));
    let out = &q * Mat::from_diagonal(&fl) * q.transpose();
    Ok((SymMatrix::symmetrize_checked(out)?, q, lam))
}

/// Cholesky factor `L` with `L Lᵀ = P`, positive diagonal.
///
/// Hand-rolled so a failed pivot reports its index.
pub fn cholesky(p: &SpdMatrix) -> Result<LowerTri, LinalgError> {
    cholesky_raw(p.as_mat())
}

pub(crate) fn cholesky_raw(a: &Mat) -> Result<LowerTri, LinalgError> {
    let n = a.nrows();
    let mut l = Mat::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        let scale = a.diagonal().amax().max(1.0);
        if d <= super::types::SPD_TOL * scale {
            return Err(LinalgError::NotPositiveDefinite { pivot: d, index: j });
        }
        let dj = d.sqrt();
        l[(j, j)] = dj;
        for i in (j + 1)..n {
            let mut v = a[(i, j)];
            for k in 0..j {
                v -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = v / dj;
        }
    }
    Ok(LowerTri::new_unchecked(l))
}

/// Thin QR of an n×p matrix (n ≥ p): `X = V R` with orthonormal `V` and
/// upper-triangular `R` whose diagonal is nonnegative.
pub fn qr_thin(x: &Mat) -> Result<(Mat, Mat), LinalgError> {
    ensure_finite(x)?;
    let (n, p) = (x.nrows(), x.ncols());
    if n < p {
        return Err(LinalgError::SizeMismatch {
            context: format!("qr_thin expects n >= p, got {n}x{p}"),
        });
    }
    let qr = QR::new(x.clone());
    let mut q = qr.q();
    let mut r = qr.r();
    // Sign convention: R diagonal nonnegative.
    for i in 0..p {
        if r[(i, i)] < 0.0 {
            for c in 0..p {
                r[(i, c)] = -r[(i, c)];
            }
            for rr in 0..n {
                q[(rr, i)] = -q[(rr, i)];
            }
        }
    }
    let threshold = 1e-12 * x.norm();
    for i in 0..p {
        let value = r[(i, i)].abs();
        if value < threshold {
            return Err(LinalgError::RankDeficient {
                index: i,
                value,
                threshold,
            });
        }
    }
    Ok((q, r))
}

/// Thin SVD `X = U diag(sigma) Vᵀ`, k = min(n, m), singular values
/// descending, column signs fixed via `U`.
///
/// One-sided Jacobi: columns of a working copy are pairwise rotated until
/// mutually orthogonal, which is accurate for clustered and vanishing
/// singular values and deterministic across platforms.
pub fn svd_thin(x: &Mat) -> Result<(Mat, Vector, Mat), LinalgError> {
    ensure_finite(x)?;
    let (n, m) = (x.nrows(), x.ncols());
    if n < m {
        let (v, sigma, u) = svd_thin(&x.transpose())?;
        return Ok((u, sigma, v));
    }
    let mut b = x.clone();
    let mut v = Mat::identity(m, m);
    let scale = x.norm().max(f64::MIN_POSITIVE);
    let tol = 1e-15;
    let mut converged = false;
    for _sweep in 0..60 {
        let mut rotated = false;
        for i in 0..m {
            for j in (i + 1)..m {
                let bi = b.column(i).into_owned();
                let bj = b.column(j).into_owned();
                let app = bi.dot(&bi);
                let aqq = bj.dot(&bj);
                let apq = bi.dot(&bj);
                if apq.abs() <= tol * (app.sqrt() * aqq.sqrt()).max(tol * scale * scale) {
                    continue;
                }
                rotated = true;
                let zeta = (aqq - app) / (2.0 * apq);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for r in 0..n {
                    let xi = b[(r, i)];
                    let xj = b[(r, j)];
                    b[(r, i)] = c * xi - s * xj;
                    b[(r, j)] = s * xi + c * xj;
                }
                for r in 0..m {
                    let xi = v[(r, i)];
                    let xj = v[(r, j)];
                    v[(r, i)] = c * xi - s * xj;
                    v[(r, j)] = s * xi + c * xj;
                }
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(LinalgError::SvdNoConvergence);
    }
    let mut sigma = Vector::from_iterator(m, (0..m).map(|j| b.column(j).norm()));
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &c| sigma[c].total_cmp(&sigma[a]));
    let mut u = Mat::zeros(n, m);
    let mut v_sorted = Mat::zeros(m, m);
    let mut sigma_sorted = Vector::zeros(m);
    for (dst, &src) in order.iter().enumerate() {
        sigma_sorted[dst] = sigma[src];
        v_sorted.set_column(dst, &v.column(src));
        u.set_column(dst, &b.column(src));
    }
    sigma = sigma_sorted;
    // Normalize nonzero columns; complete vanished ones against the rest.
    let cutoff = sigma[0] * f64::EPSILON * (n as f64);
    for j in 0..m {
        if sigma[j] > cutoff && sigma[j] > 0.0 {
            let col = u.column(j).into_owned().scale(1.0 / sigma[j]);
            u.set_column(j, &col);
        } else {
            sigma[j] = 0.0;
            let mut replacement = None;
            for cand in 0..n {
                let mut e = Vector::zeros(n);
                e[cand] = 1.0;
                for k in 0..j {
                    let coeff = u.column(k).dot(&e);
                    e -= u.column(k).into_owned().scale(coeff);
                }
                let norm = e.norm();
                if norm > 0.5 {
                    replacement = Some(e.scale(1.0 / norm));
                    break;
                }
            }
            let e = replacement.ok_or(LinalgError::SvdNoConvergence)?;
            u.set_column(j, &e);
        }
    }
    fix_column_signs(&mut u, Some(&mut v_sorted));
    Ok((u, sigma, v_sorted))
}

/// Matrix exponential by scaling and squaring around a fixed-order Taylor
/// core. Built from matmul/add/scale only, which keeps it differentiable by
/// composition in the gradient engine.
pub fn mat_exp(a: &Mat) -> Mat {
    assert_eq!(a.nrows(), a.ncols(), "mat_exp expects a square matrix");
    let n = a.nrows();
    let norm = a.norm();
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil().max(0.0) as u32
    } else {
        0
    };
    let x = a.scale(0.5f64.powi(squarings as i32));
    let mut t = Mat::identity(n, n);
    // Horner evaluation of sum_{k<=ORDER} x^k / k!.
    const ORDER: usize = 18;
    for k in (1..=ORDER).rev() {
        t = Mat::identity(n, n) + (&x * t).scale(1.0 / k as f64);
    }
    for _ in 0..squarings {
        t = &t * &t;
    }
    t
}

/// Principal logarithm of a special orthogonal matrix; the result is
/// skew-symmetric with `mat_exp(result) = O`.
///
/// Uses the symmetric eigendecomposition of the cosine part: with
/// `C = (O + Oᵀ)/2` and `A = (O − Oᵀ)/2`, the log is `A · f(C)` where
/// `f(c) = arccos(c)/sin(arccos(c))`, since `A` commutes with `C` and acts as
/// `sinθ` times the rotation generator on each invariant plane. An eigenvalue
/// of `C` at −1 means a rotation angle of π, where the log is undefined.
pub fn mat_log_orthogonal(o: &Mat) -> Result<Mat, LinalgError> {
    ensure_finite(o)?;
    let n = o.nrows();
    if n != o.ncols() {
        return Err(LinalgError::NotSquare {
            rows: n,
            cols: o.ncols(),
        });
    }
    let residual = (o.transpose() * o - Mat::identity(n, n)).norm();
    if residual > 1e-8 {
        return Err(LinalgError::NotOrthogonal { residual });
    }
    if o.determinant() <= 0.0 {
        return Err(LinalgError::NotOrthogonal {
            residual: f64::INFINITY,
        });
    }
    let c = SymMatrix::symmetrize_checked((o + o.transpose()).scale(0.5))?;
    let a = (o - o.transpose()).scale(0.5);
    let (q, lam) = sym_eig(&c)?;
    let mut f = Vector::zeros(n);
    for i in 0..n {
        let x = lam[i].clamp(-1.0, 1.0);
        if x <= -1.0 + 1e-8 {
            return Err(LinalgError::LogAtMinusOne);
        }
        f[i] = if 1.0 - x < 1e-12 {
            // theta/sin(theta) -> 1 + theta^2/6, theta^2 ≈ 2(1-x)
            1.0 + (1.0 - x) / 3.0
        } else {
            let theta = x.acos();
            theta / theta.sin()
        };
    }
    let fc = &q * Mat::from_diagonal(&f) * q.transpose();
    let s = &a * fc;
    let skew = (&s - s.transpose()).scale(0.5);
    let back = (mat_exp(&skew) - o).norm();
    if back > 1e-8 * o.norm().max(1.0) {
        return Err(LinalgError::NotOrthogonal { residual: back });
    }
    Ok(skew)
}

/// Block-diagonal concatenation of raw matrices.
pub fn block_diag(blocks: &[Mat]) -> Result<Mat, LinalgError> {
    if blocks.is_empty() {
        return Err(LinalgError::Empty {
            context: "block_diag",
        });
    }
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Mat::zeros(rows, cols);
    let (mut r0, mut c0) = (0, 0);
    for b in blocks {
        out.view_mut((r0, c0), (b.nrows(), b.ncols())).copy_from(b);
        r0 += b.nrows();
        c0 += b.ncols();
    }
    Ok(out)
}

/// Block-diagonal concatenation of SPD matrices; the result is SPD of size
/// equal to the sum of the input sizes, with blocks in argument order.
pub fn concat_spd(parts: &[SpdMatrix]) -> Result<SpdMatrix, LinalgError> {
    if parts.is_empty() {
        return Err(LinalgError::Empty { context: "concat_spd" });
    }
    let mats: Vec<Mat> = parts.iter().map(|p| p.as_mat().clone()).collect();
    SpdMatrix::from_mat(block_diag(&mats)?)
}

/// Strictly-lower-triangular part (`⌊Y⌋`): keeps entries below the diagonal.
pub fn lower_strict(y: &Mat) -> Mat {
    let mut out = Mat::zeros(y.nrows(), y.ncols());
    for r in 1..y.nrows() {
        for c in 0..r.min(y.ncols()) {
            out[(r, c)] = y[(r, c)];
        }
    }
    out
}

/// Diagonal part (`𝔻(Y)`): keeps the diagonal only.
pub fn diag_part(y: &Mat) -> Mat {
    let mut out = Mat::zeros(y.nrows(), y.ncols());
    for i in 0..y.nrows().min(y.ncols()) {
        out[(i, i)] = y[(i, i)];
    }
    out
}

/// Strictly-lower part plus half the diagonal: the half-lift `(Y)_{1/2}`
/// used by Log-Cholesky tangent conversions.
pub fn half_lower(y: &Mat) -> Mat {
    lower_strict(y) + diag_part(y).scale(0.5)
}

/// Symmetric part `(Y + Yᵀ)/2`.
pub fn sym(y: &Mat) -> Mat {
    (y + y.transpose()).scale(0.5)
}

/// Embeds a p×(n−p) block `B` as the skew-symmetric matrix
/// `[[0, B], [−Bᵀ, 0]]` of size n.
pub fn skew_embed(b: &Mat, n: usize) -> Mat {
    let p = b.nrows();
    assert_eq!(b.ncols(), n - p, "skew_embed: block must be p x (n-p)");
    let mut out = Mat::zeros(n, n);
    out.view_mut((0, p), (p, n - p)).copy_from(b);
    out.view_mut((p, 0), (n - p, p)).copy_from(&(-b.transpose()));
    out
}
