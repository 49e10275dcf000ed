//! The three SPD gyrovector spaces: Affine-Invariant (AI), Log-Euclidean
//! (LE) and Log-Cholesky (LC).
//!
//! Each metric provides the gyro binary/inverse operations, Exp/Log maps and
//! parallel transport, an inner product of points through their lifts at the
//! identity, an orthonormal basis of the tangent space at the identity,
//! hypergyroplanes with signed pseudo-gyrodistances, and the
//! fully-connected / convolutional layer math built from them.
//!
//! Lift conventions. Every metric comes with a linear "identity lift" that
//! turns points and identity-tangents into a flat coordinate space:
//! AI and LE lift a point `P` to `log P`; LC lifts to
//! `⌊L⌋ + log 𝔻(L)` with `L` the Cholesky factor. A symmetric
//! identity-tangent `A` lifts to `A` itself (AI/LE) or to its
//! strictly-lower-plus-half-diagonal part (LC). Hypergyroplane normals are
//! stored as identity-tangent coordinates `A`.

use thiserror::Error;

use crate::linalg::{
    self, cholesky, diag_part, half_lower, lower_strict, spd_fn, LinalgError, LowerTri, Mat,
    SpdFnTag, SpdMatrix, SymMatrix,
};

#[derive(Debug, Error)]
pub enum SpdError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("size mismatch: {0}")]
    SizeMismatch(String),
    #[error("beta {beta} out of range: must satisfy beta > -1/{m}")]
    BetaOutOfRange { beta: f64, m: usize },
    #[error("degenerate hyperplane: normal has zero norm")]
    DegenerateHyperplane,
    #[error("pseudo-gyrodistance with the affine-invariant metric requires beta = 0, got {0}")]
    BetaUnsupported(f64),
    #[error("{0}")]
    Argument(String),
}

type Result<T> = std::result::Result<T, SpdError>;

/// Riemannian metric family on the SPD manifold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpdMetric {
    /// Affine-Invariant with trace weight `beta` (`beta > -1/m`).
    AffineInvariant { beta: f64 },
    /// Log-Euclidean with the similarity-invariant inner product.
    LogEuclidean,
    /// Log-Cholesky.
    LogCholesky,
}

impl SpdMetric {
    pub fn ai(beta: f64) -> Self {
        SpdMetric::AffineInvariant { beta }
    }

    pub fn beta(&self) -> f64 {
        match self {
            SpdMetric::AffineInvariant { beta } => *beta,
            _ => 0.0,
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            SpdMetric::AffineInvariant { .. } => "ai",
            SpdMetric::LogEuclidean => "le",
            SpdMetric::LogCholesky => "lc",
        }
    }

    pub fn check_beta(&self, m: usize) -> Result<()> {
        let beta = self.beta();
        if beta <= -1.0 / m as f64 {
            return Err(SpdError::BetaOutOfRange { beta, m });
        }
        Ok(())
    }
}

fn check_same_size(p: &SpdMatrix, q: &SpdMatrix, what: &str) -> Result<()> {
    if p.size() != q.size() {
        return Err(SpdError::SizeMismatch(format!(
            "{what}: {} vs {}",
            p.size(),
            q.size()
        )));
    }
    Ok(())
}

fn log_point(p: &SpdMatrix) -> Result<SymMatrix> {
    Ok(spd_fn(p.as_sym(), SpdFnTag::Log)?)
}

fn exp_sym(s: &SymMatrix) -> Result<SpdMatrix> {
    Ok(SpdMatrix::new(spd_fn(s, SpdFnTag::Exp)?)?)
}

/// `ψ(P) = ⌊L⌋ + log 𝔻(L)` for the Cholesky factor `L` of `P`.
fn psi(p: &SpdMatrix) -> Result<Mat> {
    let l = cholesky(p)?;
    let mut out = lower_strict(l.as_mat());
    for i in 0..l.size() {
        out[(i, i)] = l[(i, i)].ln();
    }
    Ok(out)
}

/// Inverse of [`psi`]: rebuilds `L` as `⌊Z⌋ + exp(𝔻(Z))`, returns `L Lᵀ`.
fn psi_inv(z: &Mat) -> Result<SpdMatrix> {
    let n = z.nrows();
    let mut l = lower_strict(z);
    for i in 0..n {
        l[(i, i)] = z[(i, i)].exp();
    }
    Ok(SpdMatrix::from_mat_symmetrize(&l * l.transpose())?)
}

/// Lift of a point into flat identity coordinates.
pub fn lift_point(metric: SpdMetric, p: &SpdMatrix) -> Result<Mat> {
    match metric {
        SpdMetric::AffineInvariant { .. } | SpdMetric::LogEuclidean => {
            Ok(log_point(p)?.into_mat())
        }
        SpdMetric::LogCholesky => psi(p),
    }
}

/// Inverse of [`lift_point`].
pub fn unlift_point(metric: SpdMetric, z: &Mat) -> Result<SpdMatrix> {
    match metric {
        SpdMetric::AffineInvariant { .. } | SpdMetric::LogEuclidean => {
            exp_sym(&SymMatrix::symmetrize_checked(z.clone())?)
        }
        SpdMetric::LogCholesky => psi_inv(z),
    }
}

/// Lift of a symmetric identity-tangent into the same coordinates as
/// [`lift_point`].
pub fn lift_tangent(metric: SpdMetric, a: &SymMatrix) -> Mat {
    match metric {
        SpdMetric::AffineInvariant { .. } | SpdMetric::LogEuclidean => a.as_mat().clone(),
        SpdMetric::LogCholesky => half_lower(a.as_mat()),
    }
}

/// The inner product of two points: the metric's bilinear form applied to
/// their identity lifts. For AI this includes the `β Tr·Tr` term.
pub fn spd_inner(metric: SpdMetric, p: &SpdMatrix, q: &SpdMatrix) -> Result<f64> {
    check_same_size(p, q, "spd_inner")?;
    let zp = lift_point(metric, p)?;
    let zq = lift_point(metric, q)?;
    Ok(inner_id_lift(metric, &zp, &zq))
}

/// Bilinear form on lift coordinates.
pub(crate) fn inner_id_lift(metric: SpdMetric, z1: &Mat, z2: &Mat) -> f64 {
    let frob = z1.dot(z2);
    match metric {
        SpdMetric::AffineInvariant { beta } => frob + beta * z1.trace() * z2.trace(),
        _ => frob,
    }
}

// ---------------------------------------------------------------------------
// Gyro operations (direct closed forms)
// ---------------------------------------------------------------------------

/// The gyro binary operation `P ⊕ Q`.
pub fn spd_add(metric: SpdMetric, p: &SpdMatrix, q: &SpdMatrix) -> Result<SpdMatrix> {
    check_same_size(p, q, "spd_add")?;
    match metric {
        SpdMetric::AffineInvariant { .. } => {
            let ph = spd_fn(p.as_sym(), SpdFnTag::Sqrt)?;
            Ok(SpdMatrix::from_mat_symmetrize(
                ph.as_mat() * q.as_mat() * ph.as_mat(),
            )?)
        }
        SpdMetric::LogEuclidean => {
            let s = log_point(p)?.into_mat() + log_point(q)?.into_mat();
            exp_sym(&SymMatrix::symmetrize_checked(s)?)
        }
        SpdMetric::LogCholesky => {
            let lp = cholesky(p)?;
            let lq = cholesky(q)?;
            let z = lower_strict(lp.as_mat())
                + lower_strict(lq.as_mat())
                + diag_part(lp.as_mat()) * diag_part(lq.as_mat());
            Ok(SpdMatrix::from_mat_symmetrize(&z * z.transpose())?)
        }
    }
}

/// The gyro inverse `⊖P`.
pub fn spd_inv(metric: SpdMetric, p: &SpdMatrix) -> Result<SpdMatrix> {
    match metric {
        SpdMetric::AffineInvariant { .. } | SpdMetric::LogEuclidean => {
            let inv = p
                .as_mat()
                .clone()
                .try_inverse()
                .ok_or_else(|| SpdError::Argument("singular SPD matrix".into()))?;
            Ok(SpdMatrix::from_mat_symmetrize(inv)?)
        }
        SpdMetric::LogCholesky => {
            let l = cholesky(p)?;
            let mut d_inv = Mat::zeros(l.size(), l.size());
            for i in 0..l.size() {
                d_inv[(i, i)] = 1.0 / l[(i, i)];
            }
            let z = -lower_strict(l.as_mat()) + d_inv;
            Ok(SpdMatrix::from_mat_symmetrize(&z * z.transpose())?)
        }
    }
}

/// `⊖P ⊕ Q` — the gyro difference used all over the layer math.
pub fn spd_sub(metric: SpdMetric, p: &SpdMatrix, q: &SpdMatrix) -> Result<SpdMatrix> {
    let np = spd_inv(metric, p)?;
    spd_add(metric, &np, q)
}

/// Gyration `gyr[A,B]C = ⊖(A⊕B) ⊕ (A ⊕ (B⊕C))`.
pub fn gyration(
    metric: SpdMetric,
    a: &SpdMatrix,
    b: &SpdMatrix,
    c: &SpdMatrix,
) -> Result<SpdMatrix> {
    let ab = spd_add(metric, a, b)?;
    let bc = spd_add(metric, b, c)?;
    let a_bc = spd_add(metric, a, &bc)?;
    spd_sub(metric, &ab, &a_bc)
}

// ---------------------------------------------------------------------------
// Exp / Log / parallel transport (closed forms per metric)
// ---------------------------------------------------------------------------

/// Exponential map at `P`.
///
/// LE works in log coordinates (the tangent is a log-coordinate
/// displacement): `Exp_P(V) = exp(log P + V)`.
pub fn exp_map(metric: SpdMetric, p: &SpdMatrix, v: &SymMatrix) -> Result<SpdMatrix> {
    match metric {
        SpdMetric::AffineInvariant { .. } => {
            let ph = spd_fn(p.as_sym(), SpdFnTag::Sqrt)?;
            let pih = spd_fn(p.as_sym(), SpdFnTag::InvSqrt)?;
            let inner = SymMatrix::symmetrize_checked(pih.as_mat() * v.as_mat() * pih.as_mat())?;
            let e = spd_fn(&inner, SpdFnTag::Exp)?;
            Ok(SpdMatrix::from_mat_symmetrize(
                ph.as_mat() * e.as_mat() * ph.as_mat(),
            )?)
        }
        SpdMetric::LogEuclidean => {
            let s = log_point(p)?.into_mat() + v.as_mat();
            exp_sym(&SymMatrix::symmetrize_checked(s)?)
        }
        SpdMetric::LogCholesky => {
            let l = cholesky(p)?;
            let x = chol_tangent_from_spd(&l, v.as_mat())?;
            let k = chol_exp(&l, &x);
            Ok(SpdMatrix::from_mat_symmetrize(&k * k.transpose())?)
        }
    }
}

/// Logarithmic map at `P`.
pub fn log_map(metric: SpdMetric, p: &SpdMatrix, q: &SpdMatrix) -> Result<SymMatrix> {
    check_same_size(p, q, "log_map")?;
    match metric {
        SpdMetric::AffineInvariant { .. } => {
            let ph = spd_fn(p.as_sym(), SpdFnTag::Sqrt)?;
            let pih = spd_fn(p.as_sym(), SpdFnTag::InvSqrt)?;
            let mid = SymMatrix::symmetrize_checked(pih.as_mat() * q.as_mat() * pih.as_mat())?;
            let lg = spd_fn(&mid, SpdFnTag::Log)?;
            Ok(SymMatrix::symmetrize_checked(
                ph.as_mat() * lg.as_mat() * ph.as_mat(),
            )?)
        }
        SpdMetric::LogEuclidean => Ok(SymMatrix::symmetrize_checked(
            log_point(q)?.into_mat() - log_point(p)?.into_mat(),
        )?),
        SpdMetric::LogCholesky => {
            let l = cholesky(p)?;
            let k = cholesky(q)?;
            let x = chol_log(&l, &k);
            Ok(SymMatrix::symmetrize_checked(
                l.as_mat() * x.transpose() + &x * l.as_mat().transpose(),
            )?)
        }
    }
}

/// Parallel transport of tangent `v` from `P` to `Q`.
pub fn transport(
    metric: SpdMetric,
    p: &SpdMatrix,
    q: &SpdMatrix,
    v: &SymMatrix,
) -> Result<SymMatrix> {
    check_same_size(p, q, "transport")?;
    match metric {
        SpdMetric::AffineInvariant { .. } => {
            // E = (Q P^{-1})^{1/2} computed through the SPD similarity
            // Q P^{-1} = P^{1/2} (P^{-1/2} Q P^{-1/2}) P^{-1/2}.
            let ph = spd_fn(p.as_sym(), SpdFnTag::Sqrt)?;
            let pih = spd_fn(p.as_sym(), SpdFnTag::InvSqrt)?;
            let mid = SymMatrix::symmetrize_checked(pih.as_mat() * q.as_mat() * pih.as_mat())?;
            let mid_sqrt = spd_fn(&mid, SpdFnTag::Sqrt)?;
            let e = ph.as_mat() * mid_sqrt.as_mat() * pih.as_mat();
            Ok(SymMatrix::symmetrize_checked(
                &e * v.as_mat() * e.transpose(),
            )?)
        }
        SpdMetric::LogEuclidean => Ok(v.clone()),
        SpdMetric::LogCholesky => {
            let l = cholesky(p)?;
            let k = cholesky(q)?;
            let x = chol_tangent_from_spd(&l, v.as_mat())?;
            let mut y = lower_strict(&x);
            for i in 0..l.size() {
                y[(i, i)] = k[(i, i)] / l[(i, i)] * x[(i, i)];
            }
            Ok(SymMatrix::symmetrize_checked(
                k.as_mat() * y.transpose() + &y * k.as_mat().transpose(),
            )?)
        }
    }
}

/// Metric inner product of tangents at a base point.
pub fn inner_at(metric: SpdMetric, p: &SpdMatrix, v: &SymMatrix, w: &SymMatrix) -> Result<f64> {
    match metric {
        SpdMetric::AffineInvariant { beta } => {
            let pinv = p
                .as_mat()
                .clone()
                .try_inverse()
                .ok_or_else(|| SpdError::Argument("singular SPD matrix".into()))?;
            let vp = v.as_mat() * &pinv;
            let wp = w.as_mat() * &pinv;
            Ok((&vp * &wp).trace() + beta * vp.trace() * wp.trace())
        }
        SpdMetric::LogEuclidean => Ok(v.as_mat().dot(w.as_mat())),
        SpdMetric::LogCholesky => {
            let l = cholesky(p)?;
            let x = chol_tangent_from_spd(&l, v.as_mat())?;
            let y = chol_tangent_from_spd(&l, w.as_mat())?;
            let mut acc = 0.0;
            for r in 0..l.size() {
                for c in 0..r {
                    acc += x[(r, c)] * y[(r, c)];
                }
                acc += x[(r, r)] * y[(r, r)] / (l[(r, r)] * l[(r, r)]);
            }
            Ok(acc)
        }
    }
}

/// Cholesky-space tangent of an SPD tangent `V` at factor `L`:
/// `L (L⁻¹ V L⁻ᵀ)_{1/2}`.
fn chol_tangent_from_spd(l: &LowerTri, v: &Mat) -> Result<Mat> {
    let li = l
        .as_mat()
        .clone()
        .try_inverse()
        .ok_or_else(|| SpdError::Argument("singular Cholesky factor".into()))?;
    let m = &li * v * li.transpose();
    Ok(l.as_mat() * half_lower(&m))
}

/// Geodesic exponential in Cholesky space: strict-lower parts add, the
/// diagonal moves multiplicatively.
fn chol_exp(l: &LowerTri, x: &Mat) -> Mat {
    let n = l.size();
    let mut k = lower_strict(l.as_mat()) + lower_strict(x);
    for i in 0..n {
        k[(i, i)] = l[(i, i)] * (x[(i, i)] / l[(i, i)]).exp();
    }
    k
}

fn chol_log(l: &LowerTri, k: &LowerTri) -> Mat {
    let n = l.size();
    let mut x = lower_strict(k.as_mat()) - lower_strict(l.as_mat());
    for i in 0..n {
        x[(i, i)] = l[(i, i)] * (k[(i, i)] / l[(i, i)]).ln();
    }
    x
}

/// `Exp_P(T_{I→P}(Log_I(Q)))` — the composite that must reproduce `P ⊕ Q`.
pub fn add_via_exp_transport(
    metric: SpdMetric,
    p: &SpdMatrix,
    q: &SpdMatrix,
) -> Result<SpdMatrix> {
    let eye = SpdMatrix::identity(p.size());
    let log_q = log_map(metric, &eye, q)?;
    let moved = transport(metric, &eye, p, &log_q)?;
    exp_map(metric, p, &moved)
}

// ---------------------------------------------------------------------------
// Orthonormal bases
// ---------------------------------------------------------------------------

/// Index pairs `(i, j)` with `i ≤ j`, row-major; the output axis order of
/// FC layers.
pub fn sym_pairs(m: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(m * (m + 1) / 2);
    for i in 0..m {
        for j in i..m {
            out.push((i, j));
        }
    }
    out
}

/// Orthonormal basis of the identity tangent space under the metric's
/// bilinear form, indexed by [`sym_pairs`].
pub struct SpdBasis {
    pub metric: SpdMetric,
    pub m: usize,
    elements: Vec<SpdMatrix>,
    tangents: Vec<SymMatrix>,
}

impl SpdBasis {
    pub fn element(&self, i: usize, j: usize) -> &SpdMatrix {
        &self.elements[pair_index(self.m, i, j)]
    }

    pub fn tangent(&self, i: usize, j: usize) -> &SymMatrix {
        &self.tangents[pair_index(self.m, i, j)]
    }

    pub fn elements(&self) -> &[SpdMatrix] {
        &self.elements
    }

    pub fn tangents(&self) -> &[SymMatrix] {
        &self.tangents
    }
}

fn pair_index(m: usize, i: usize, j: usize) -> usize {
    assert!(i <= j && j < m);
    i * (2 * m - i + 1) / 2 + (j - i)
}

fn unit_outer(m: usize, i: usize, j: usize) -> Mat {
    let mut out = Mat::zeros(m, m);
    out[(i, j)] = 1.0;
    out
}

/// Identity-tangent coordinates of the basis axis `(i, j)`.
pub fn basis_tangent(metric: SpdMetric, m: usize, i: usize, j: usize) -> Result<SymMatrix> {
    metric.check_beta(m)?;
    let a = match metric {
        SpdMetric::AffineInvariant { beta } => {
            if i == j {
                let c = (1.0 - 1.0 / (1.0 + m as f64 * beta).sqrt()) / m as f64;
                unit_outer(m, i, i) - Mat::identity(m, m).scale(c)
            } else {
                (unit_outer(m, i, j) + unit_outer(m, j, i)).scale(1.0 / 2.0f64.sqrt())
            }
        }
        SpdMetric::LogEuclidean => {
            if i == j {
                unit_outer(m, i, i)
            } else {
                (unit_outer(m, i, j) + unit_outer(m, j, i)).scale(1.0 / 2.0f64.sqrt())
            }
        }
        // Symmetric tangent whose half-lower lift is the elementary
        // lower-triangular unit matrix.
        SpdMetric::LogCholesky => {
            if i == j {
                unit_outer(m, i, i).scale(2.0)
            } else {
                unit_outer(m, j, i) + unit_outer(m, i, j)
            }
        }
    };
    Ok(SymMatrix::symmetrize_checked(a)?)
}

/// The orthonormal basis as manifold points `E_(i,j)`.
pub fn spd_basis(metric: SpdMetric, m: usize) -> Result<SpdBasis> {
    metric.check_beta(m)?;
    let mut elements = Vec::new();
    let mut tangents = Vec::new();
    for (i, j) in sym_pairs(m) {
        let a = basis_tangent(metric, m, i, j)?;
        let e = unlift_point(metric, &lift_tangent(metric, &a))?;
        elements.push(e);
        tangents.push(a);
    }
    Ok(SpdBasis {
        metric,
        m,
        elements,
        tangents,
    })
}

// ---------------------------------------------------------------------------
// Hypergyroplanes and pseudo-gyrodistances
// ---------------------------------------------------------------------------

/// Hypergyroplane through `base` with normal `normal` in identity-tangent
/// coordinates (for AI this is `P^{-1/2} W P^{-1/2}` of the tangent normal
/// `W` at the base point).
#[derive(Debug, Clone)]
pub struct SpdHyperplane {
    base: SpdMatrix,
    normal: SymMatrix,
}

impl SpdHyperplane {
    pub fn new(base: SpdMatrix, normal: SymMatrix) -> Result<Self> {
        if base.size() != normal.size() {
            return Err(SpdError::SizeMismatch(format!(
                "hyperplane base {} vs normal {}",
                base.size(),
                normal.size()
            )));
        }
        if normal.as_mat().norm() == 0.0 {
            return Err(SpdError::DegenerateHyperplane);
        }
        Ok(SpdHyperplane { base, normal })
    }

    pub fn base(&self) -> &SpdMatrix {
        &self.base
    }

    pub fn normal(&self) -> &SymMatrix {
        &self.normal
    }
}

fn check_distance_metric(metric: SpdMetric) -> Result<()> {
    if let SpdMetric::AffineInvariant { beta } = metric {
        if beta != 0.0 {
            return Err(SpdError::BetaUnsupported(beta));
        }
    }
    Ok(())
}

/// Signed numerator `⟨⊖P ⊕ X, W'⟩` of the pseudo-gyrodistance: the lift of
/// the gyro difference paired with the lift of the normal.
///
/// For LC this is evaluated through the explicit Cholesky-factor terms: the
/// normal is transported to the base point, converted to a Cholesky-space
/// tangent by the half-lower rule, and paired with the factor difference.
pub fn hyperplane_inner(metric: SpdMetric, x: &SpdMatrix, h: &SpdHyperplane) -> Result<f64> {
    check_distance_metric(metric)?;
    match metric {
        SpdMetric::AffineInvariant { .. } => {
            let pih = spd_fn(h.base.as_sym(), SpdFnTag::InvSqrt)?;
            let mid = SymMatrix::symmetrize_checked(pih.as_mat() * x.as_mat() * pih.as_mat())?;
            let lg = spd_fn(&mid, SpdFnTag::Log)?;
            Ok(lg.as_mat().dot(h.normal.as_mat()))
        }
        SpdMetric::LogEuclidean => {
            let d = log_point(x)?.into_mat() - log_point(&h.base)?.into_mat();
            Ok(d.dot(h.normal.as_mat()))
        }
        SpdMetric::LogCholesky => {
            let (a_term, b_term) = lc_hyperplane_terms(x, h)?;
            Ok(a_term.dot(&b_term))
        }
    }
}

/// The A/B terms of the LC gyrodistance: A compares Cholesky factors of `X`
/// and the base, B converts the transported normal tangent via
/// `W̃ = L_P (L_P⁻¹ W L_P⁻ᵀ)_{1/2}` and `B = ⌊W̃⌋ + 𝔻(L_P)⁻¹ 𝔻(W̃)`.
fn lc_hyperplane_terms(x: &SpdMatrix, h: &SpdHyperplane) -> Result<(Mat, Mat)> {
    let lp = cholesky(&h.base)?;
    let lx = cholesky(x)?;
    let n = lp.size();
    let mut a_term = lower_strict(lx.as_mat()) - lower_strict(lp.as_mat());
    for i in 0..n {
        a_term[(i, i)] = (lx[(i, i)] / lp[(i, i)]).ln();
    }
    let eye = SpdMatrix::identity(n);
    let w_at_base = transport(SpdMetric::LogCholesky, &eye, &h.base, &h.normal)?;
    let w_tilde = chol_tangent_from_spd(&lp, w_at_base.as_mat())?;
    let mut b_term = lower_strict(&w_tilde);
    for i in 0..n {
        b_term[(i, i)] = w_tilde[(i, i)] / lp[(i, i)];
    }
    Ok((a_term, b_term))
}

/// Norm of the hyperplane normal in the metric's identity bilinear form.
pub fn hyperplane_normal_norm(metric: SpdMetric, h: &SpdHyperplane) -> f64 {
    let z = lift_tangent(metric, &h.normal);
    inner_id_lift(metric, &z, &z).sqrt()
}

/// Pseudo-gyrodistance from `X` to the hypergyroplane; zero iff `X` lies on
/// it. The signed variant keeps the numerator's sign.
pub fn pseudo_gyrodistance(metric: SpdMetric, x: &SpdMatrix, h: &SpdHyperplane) -> Result<f64> {
    Ok(signed_pseudo_gyrodistance(metric, x, h)?.abs())
}

pub fn signed_pseudo_gyrodistance(
    metric: SpdMetric,
    x: &SpdMatrix,
    h: &SpdHyperplane,
) -> Result<f64> {
    let num = hyperplane_inner(metric, x, h)?;
    let norm = hyperplane_normal_norm(metric, h);
    if norm == 0.0 {
        return Err(SpdError::DegenerateHyperplane);
    }
    Ok(num / norm)
}

/// MLR logits: the signed hyperplane inner product per class
/// (`sign(v) · ‖normal‖ · distance`).
pub fn mlr_logits(metric: SpdMetric, x: &SpdMatrix, classes: &[SpdHyperplane]) -> Result<Vec<f64>> {
    if classes.len() < 2 {
        return Err(SpdError::Argument("MLR needs at least two classes".into()));
    }
    classes
        .iter()
        .map(|h| hyperplane_inner(metric, x, h))
        .collect()
}

/// Gyro-angle-based oracle for the pseudo-gyrodistance: minimizes
/// `sin(∠XPQ)·d(X,P)` over on-plane points `Q`, each evaluated through the
/// actual gyro operations and the point inner product. The minimization
/// spends `samples` evaluations, progressively refining around the best
/// direction found so far.
pub fn sampling_pseudo_gyrodistance(
    metric: SpdMetric,
    x: &SpdMatrix,
    h: &SpdHyperplane,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    check_distance_metric(metric)?;
    let n = x.size();
    let x_diff = spd_sub(metric, &h.base, x)?;
    let zx = lift_point(metric, &x_diff)?;
    let d_xp = inner_id_lift(metric, &zx, &zx).sqrt();
    let zh = lift_tangent(metric, &h.normal);
    let nh2 = inner_id_lift(metric, &zh, &zh);

    let mut rng = crate::rng::rng_for(seed, "spd/sampling-oracle");
    let eval = |a_dir: &SymMatrix, best: &mut f64| -> Result<()> {
        // Project the direction onto the plane in lift coordinates.
        let zd = lift_tangent(metric, a_dir);
        let coef = inner_id_lift(metric, &zd, &zh) / nh2;
        let z_on = zd - zh.scale(coef);
        if z_on.norm() < 1e-12 {
            return Ok(());
        }
        let r = unlift_point(metric, &z_on)?;
        let q = spd_add(metric, &h.base, &r)?;
        let q_diff = spd_sub(metric, &h.base, &q)?;
        let zq = lift_point(metric, &q_diff)?;
        let nq = inner_id_lift(metric, &zq, &zq).sqrt();
        let cosang = inner_id_lift(metric, &zq, &zx) / (nq * d_xp);
        let sinang = (1.0 - cosang * cosang).max(0.0).sqrt();
        let cand = sinang * d_xp;
        if cand < *best {
            *best = cand;
        }
        Ok(())
    };

    let mut best = f64::INFINITY;
    let mut best_dir = crate::rng::sample_sym(&mut rng, n, 1.0);
    let coarse = samples / 5;
    for _ in 0..coarse {
        let dir = crate::rng::sample_sym(&mut rng, n, 1.0);
        let before = best;
        eval(&dir, &mut best)?;
        if best < before {
            best_dir = dir.clone();
        }
    }
    let stages = 14;
    let per_stage = (samples - coarse) / stages;
    let mut radius = 0.7;
    for _ in 0..stages {
        for _ in 0..per_stage {
            let noise = crate::rng::sample_sym(&mut rng, n, radius);
            let dir = SymMatrix::symmetrize_checked(best_dir.as_mat() + noise.as_mat())?;
            let before = best;
            eval(&dir, &mut best)?;
            if best < before {
                best_dir = dir;
            }
        }
        radius *= 0.55;
    }
    Ok(best)
}

// ---------------------------------------------------------------------------
// FC and convolutional layer math
// ---------------------------------------------------------------------------

/// FC layer parameters: one `(P, W)` SPD pair per output axis `(i, j)`,
/// ordered by [`sym_pairs`].
#[derive(Debug, Clone)]
pub struct SpdFcParams {
    pub base: Vec<SpdMatrix>,
    pub normal: Vec<SpdMatrix>,
    pub m: usize,
}

impl SpdFcParams {
    /// `P = I`, `W = E_(i,j)`: the layer becomes the identity map when
    /// `m = n`.
    pub fn identity(metric: SpdMetric, m: usize, n: usize) -> Result<Self> {
        if m != n {
            return Err(SpdError::Argument("identity FC params require m = n".into()));
        }
        let basis = spd_basis(metric, m)?;
        Ok(SpdFcParams {
            base: vec![SpdMatrix::identity(n); m * (m + 1) / 2],
            normal: basis.elements().to_vec(),
            m,
        })
    }
}

/// Assembly basis for the AI/LE output: `y = Σ v_(i,j) C_(i,j)` with
/// `C_(i,i) = e_i e_iᵀ + α I` and `C_(i,j) = (e_i e_jᵀ + e_j e_iᵀ)/√2`.
pub fn assembly_basis(m: usize, alpha: f64) -> Vec<Mat> {
    sym_pairs(m)
        .into_iter()
        .map(|(i, j)| {
            if i == j {
                unit_outer(m, i, i) + Mat::identity(m, m).scale(alpha)
            } else {
                (unit_outer(m, i, j) + unit_outer(m, j, i)).scale(1.0 / 2.0f64.sqrt())
            }
        })
        .collect()
}

pub fn ai_alpha(m: usize, beta: f64) -> f64 {
    ((1.0 + m as f64 * beta).sqrt() - 1.0) / m as f64
}

/// The signed layer values `v_(i,j)(X) = ⟨⊖P_(i,j) ⊕ X, W_(i,j)⟩` with the
/// Frobenius pairing of lifts (the β factor of AI metrics enters through
/// the basis and the α correction of the output assembly, not here).
pub fn fc_values(metric: SpdMetric, x: &SpdMatrix, params: &SpdFcParams) -> Result<Vec<f64>> {
    let pairs = sym_pairs(params.m);
    assert_eq!(pairs.len(), params.base.len());
    let zx = lift_point(metric, x)?;
    let mut out = Vec::with_capacity(pairs.len());
    for k in 0..pairs.len() {
        let zw = lift_point(metric, &params.normal[k])?;
        let v = match metric {
            SpdMetric::AffineInvariant { .. } => {
                // log(P^{-1/2} X P^{-1/2}) is not log X − log P in general;
                // evaluate through the gyro difference.
                let diff = spd_sub(metric, &params.base[k], x)?;
                lift_point(metric, &diff)?.dot(&zw)
            }
            _ => {
                let zp = lift_point(metric, &params.base[k])?;
                (&zx - zp).dot(&zw)
            }
        };
        out.push(v);
    }
    Ok(out)
}

/// Output of an FC layer from its signed values.
pub fn fc_output_from_values(metric: SpdMetric, m: usize, values: &[f64]) -> Result<SpdMatrix> {
    match metric {
        SpdMetric::AffineInvariant { beta } => {
            let alpha = ai_alpha(m, beta);
            let basis = assembly_basis(m, alpha);
            let mut y = Mat::zeros(m, m);
            for (v, c) in values.iter().zip(basis.iter()) {
                y += c.scale(*v);
            }
            exp_sym(&SymMatrix::symmetrize_checked(y)?)
        }
        SpdMetric::LogEuclidean => {
            let basis = assembly_basis(m, 0.0);
            let mut y = Mat::zeros(m, m);
            for (v, c) in values.iter().zip(basis.iter()) {
                y += c.scale(*v);
            }
            exp_sym(&SymMatrix::symmetrize_checked(y)?)
        }
        SpdMetric::LogCholesky => {
            let mut ybar = Mat::zeros(m, m);
            for ((i, j), v) in sym_pairs(m).into_iter().zip(values.iter()) {
                if i == j {
                    ybar[(i, i)] = v.exp();
                } else {
                    ybar[(j, i)] = *v;
                }
            }
            Ok(SpdMatrix::from_mat_symmetrize(&ybar * ybar.transpose())?)
        }
    }
}

/// Fully-connected layer: SPD n×n in, SPD m×m out.
pub fn fc_forward(metric: SpdMetric, x: &SpdMatrix, params: &SpdFcParams) -> Result<SpdMatrix> {
    metric.check_beta(params.m)?;
    let values = fc_values(metric, x, params)?;
    fc_output_from_values(metric, params.m, &values)
}

/// Convolution parameters: per output axis, `L` base blocks of size n (the
/// base point is their block-diagonal concatenation) and one full normal of
/// size `L·n`.
#[derive(Debug, Clone)]
pub struct SpdConvParams {
    pub base_blocks: Vec<Vec<SpdMatrix>>,
    pub normal: Vec<SpdMatrix>,
    pub m: usize,
    pub window: usize,
    pub stride: usize,
}

impl SpdConvParams {
    /// Identity-configured conv for window 1 (`m = n`): behaves as the
    /// identity on each sequence element.
    pub fn identity(metric: SpdMetric, n: usize) -> Result<Self> {
        let fc = SpdFcParams::identity(metric, n, n)?;
        Ok(SpdConvParams {
            base_blocks: fc.base.iter().map(|p| vec![p.clone()]).collect(),
            normal: fc.normal,
            m: n,
            window: 1,
            stride: 1,
        })
    }
}

/// Convolution over a sequence of SPD matrices: each window of length `L`
/// (stride `s`) is concatenated block-diagonally and pushed through the FC
/// math. Output length is `⌊(len−L)/s⌋+1`.
pub fn conv_forward(
    metric: SpdMetric,
    sequence: &[SpdMatrix],
    params: &SpdConvParams,
) -> Result<Vec<SpdMatrix>> {
    let len = sequence.len();
    let (window, stride) = (params.window, params.stride);
    if window == 0 || stride == 0 {
        return Err(SpdError::Argument("window and stride must be positive".into()));
    }
    if window > len {
        return Err(SpdError::Argument(format!(
            "window {window} exceeds sequence length {len}"
        )));
    }
    let fc = SpdFcParams {
        base: params
            .base_blocks
            .iter()
            .map(|blocks| linalg::concat_spd(blocks))
            .collect::<std::result::Result<Vec<_>, _>>()?,
        normal: params.normal.clone(),
        m: params.m,
    };
    let count = (len - window) / stride + 1;
    let mut out = Vec::with_capacity(count);
    for t in 0..count {
        let win = &sequence[t * stride..t * stride + window];
        let x = linalg::concat_spd(win)?;
        out.push(fc_forward(metric, &x, &fc)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{rng_for, sample_spd, sample_sym};

    const METRICS: [SpdMetric; 3] = [
        SpdMetric::AffineInvariant { beta: 0.0 },
        SpdMetric::LogEuclidean,
        SpdMetric::LogCholesky,
    ];

    fn diag_spd(entries: &[f64]) -> SpdMatrix {
        let n = entries.len();
        let mut m = Mat::zeros(n, n);
        for (i, &e) in entries.iter().enumerate() {
            m[(i, i)] = e;
        }
        SpdMatrix::from_mat(m).unwrap()
    }

    #[test]
    fn add_identities() {
        let mut rng = rng_for(1, "spd/add");
        let q = sample_spd(&mut rng, 4, 0.5);
        let eye = SpdMatrix::identity(4);
        for metric in METRICS {
            let r = spd_add(metric, &eye, &q).unwrap();
            assert!((r.as_mat() - q.as_mat()).norm() < 1e-10, "{}", metric.tag());
        }
    }

    #[test]
    fn add_closed_forms() {
        let e = std::f64::consts::E;
        let le = spd_add(
            SpdMetric::LogEuclidean,
            &diag_spd(&[e, 1.0]),
            &diag_spd(&[e, 1.0]),
        )
        .unwrap();
        assert!((le.as_mat() - diag_spd(&[e * e, 1.0]).as_mat()).norm() < 1e-10);

        let lc = spd_add(
            SpdMetric::LogCholesky,
            &diag_spd(&[4.0, 9.0]),
            &diag_spd(&[4.0, 9.0]),
        )
        .unwrap();
        assert!((lc.as_mat() - diag_spd(&[16.0, 81.0]).as_mat()).norm() < 1e-10);

        let inv = spd_inv(SpdMetric::AffineInvariant { beta: 0.0 }, &diag_spd(&[4.0, 1.0]))
            .unwrap();
        assert!((inv.as_mat() - diag_spd(&[0.25, 1.0]).as_mat()).norm() < 1e-12);
    }

    #[test]
    fn left_inverse_law() {
        let mut rng = rng_for(2, "spd/inv");
        for metric in METRICS {
            let p = sample_spd(&mut rng, 5, 0.5);
            let r = spd_sub(metric, &p, &p).unwrap();
            assert!(
                (r.as_mat() - Mat::identity(5, 5)).norm() < 1e-9,
                "{}",
                metric.tag()
            );
        }
    }

    #[test]
    fn exp_log_roundtrip() {
        let mut rng = rng_for(3, "spd/explog");
        for metric in METRICS {
            let p = sample_spd(&mut rng, 5, 0.5);
            let q = sample_spd(&mut rng, 5, 0.5);
            let v = log_map(metric, &p, &q).unwrap();
            let back = exp_map(metric, &p, &v).unwrap();
            assert!(
                (back.as_mat() - q.as_mat()).norm() < 1e-9 * q.as_mat().norm().max(1.0),
                "{}",
                metric.tag()
            );
            let zero = log_map(metric, &p, &p).unwrap();
            assert!(zero.as_mat().norm() < 1e-9);
        }
    }

    #[test]
    fn ai_log_at_identity_is_matrix_log() {
        let mut rng = rng_for(4, "spd/lgi");
        let q = sample_spd(&mut rng, 4, 0.6);
        let v = log_map(
            SpdMetric::AffineInvariant { beta: 0.0 },
            &SpdMatrix::identity(4),
            &q,
        )
        .unwrap();
        let expected = spd_fn(q.as_sym(), SpdFnTag::Log).unwrap();
        assert!((v.as_mat() - expected.as_mat()).norm() < 1e-10);
    }

    #[test]
    fn transport_preserves_metric() {
        let mut rng = rng_for(5, "spd/pt");
        for metric in METRICS {
            let p = sample_spd(&mut rng, 4, 0.4);
            let q = sample_spd(&mut rng, 4, 0.4);
            let v = sample_sym(&mut rng, 4, 0.7);
            let w = sample_sym(&mut rng, 4, 0.7);
            let tv = transport(metric, &p, &q, &v).unwrap();
            let tw = transport(metric, &p, &q, &w).unwrap();
            let before = inner_at(metric, &p, &v, &w).unwrap();
            let after = inner_at(metric, &q, &tv, &tw).unwrap();
            assert!(
                (before - after).abs() < 1e-9 * before.abs().max(1.0),
                "{}: {before} vs {after}",
                metric.tag()
            );
        }
    }

    #[test]
    fn add_matches_exp_transport_composite() {
        let mut rng = rng_for(6, "spd/defg");
        for metric in METRICS {
            for _ in 0..20 {
                let p = sample_spd(&mut rng, 5, 0.4);
                let q = sample_spd(&mut rng, 5, 0.4);
                let direct = spd_add(metric, &p, &q).unwrap();
                let composite = add_via_exp_transport(metric, &p, &q).unwrap();
                let scale = direct.as_mat().norm().max(1.0);
                assert!(
                    (direct.as_mat() - composite.as_mat()).norm() < 1e-8 * scale,
                    "{}",
                    metric.tag()
                );
            }
        }
    }

    #[test]
    fn inner_product_plug_ins() {
        let e = std::f64::consts::E;
        let ai0 = SpdMetric::AffineInvariant { beta: 0.0 };
        let v = spd_inner(ai0, &diag_spd(&[e, 1.0]), &diag_spd(&[e, 1.0])).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
        for beta in [0.3, -0.2] {
            let ai = SpdMetric::AffineInvariant { beta };
            let v = spd_inner(ai, &diag_spd(&[e, e]), &diag_spd(&[e, e])).unwrap();
            assert!((v - (2.0 + 4.0 * beta)).abs() < 1e-12);
        }
    }

    #[test]
    fn basis_orthonormal_under_inner() {
        for metric in [
            SpdMetric::AffineInvariant { beta: 0.0 },
            SpdMetric::AffineInvariant { beta: 0.5 },
            SpdMetric::AffineInvariant { beta: -0.1 },
            SpdMetric::LogEuclidean,
            SpdMetric::LogCholesky,
        ] {
            for m in 2..=5 {
                let basis = spd_basis(metric, m).unwrap();
                let elems = basis.elements();
                for a in 0..elems.len() {
                    for b in a..elems.len() {
                        let v = spd_inner(metric, &elems[a], &elems[b]).unwrap();
                        let expected = if a == b { 1.0 } else { 0.0 };
                        assert!(
                            (v - expected).abs() < 1e-10,
                            "{} m={m} ({a},{b}): {v}",
                            metric.tag()
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn basis_closed_forms() {
        let e = std::f64::consts::E;
        let le = spd_basis(SpdMetric::LogEuclidean, 2).unwrap();
        assert!((le.element(0, 0).as_mat() - diag_spd(&[e, 1.0]).as_mat()).norm() < 1e-12);
        // beta = 0 reduces the AI basis to the LE basis.
        let ai = spd_basis(SpdMetric::AffineInvariant { beta: 0.0 }, 2).unwrap();
        for (x, y) in ai.elements().iter().zip(le.elements().iter()) {
            assert!((x.as_mat() - y.as_mat()).norm() < 1e-12);
        }
        let lc = spd_basis(SpdMetric::LogCholesky, 2).unwrap();
        let expected = Mat::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 2.0]);
        assert!((lc.element(0, 1).as_mat() - expected).norm() < 1e-12);
    }

    #[test]
    fn fc_identity_configuration_is_identity_map() {
        let mut rng = rng_for(7, "spd/fcid");
        for metric in [
            SpdMetric::AffineInvariant { beta: 0.0 },
            SpdMetric::AffineInvariant { beta: 0.5 },
            SpdMetric::LogEuclidean,
            SpdMetric::LogCholesky,
        ] {
            for n in [3usize, 5] {
                let x = sample_spd(&mut rng, n, 0.5);
                let params = SpdFcParams::identity(metric, n, n).unwrap();
                let y = fc_forward(metric, &x, &params).unwrap();
                assert!(
                    (y.as_mat() - x.as_mat()).norm() < 1e-8 * x.as_mat().norm().max(1.0),
                    "{} n={n}",
                    metric.tag()
                );
            }
        }
    }

    #[test]
    fn fc_le_values_scale_off_diagonals() {
        let mut rng = rng_for(8, "spd/fcle");
        let s = sample_sym(&mut rng, 3, 0.5);
        let x = exp_sym(&s).unwrap();
        let params = SpdFcParams::identity(SpdMetric::LogEuclidean, 3, 3).unwrap();
        let values = fc_values(SpdMetric::LogEuclidean, &x, &params).unwrap();
        for ((i, j), v) in sym_pairs(3).into_iter().zip(values) {
            if i < j {
                assert!((v - 2.0f64.sqrt() * s[(i, j)]).abs() < 1e-9);
            } else {
                assert!((v - s[(i, i)]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn fc_ai_beta_matches_direct_reevaluation() {
        // Independent re-evaluation of the layer formulas, written directly
        // against the definitions rather than the shared helpers.
        let mut rng = rng_for(9, "spd/fcai");
        let beta = 0.5;
        let metric = SpdMetric::AffineInvariant { beta };
        let m = 2usize;
        let n = 2usize;
        let x = sample_spd(&mut rng, n, 0.5);
        let pairs = sym_pairs(m);
        let base: Vec<SpdMatrix> = (0..pairs.len())
            .map(|_| sample_spd(&mut rng, n, 0.3))
            .collect();
        let normal: Vec<SpdMatrix> = (0..pairs.len())
            .map(|_| sample_spd(&mut rng, n, 0.3))
            .collect();
        let params = SpdFcParams {
            base: base.clone(),
            normal: normal.clone(),
            m,
        };
        let y = fc_forward(metric, &x, &params).unwrap();

        let mut v = vec![0.0; pairs.len()];
        for k in 0..pairs.len() {
            let pih = spd_fn(base[k].as_sym(), SpdFnTag::InvSqrt).unwrap();
            let mid =
                SymMatrix::symmetrize_checked(pih.as_mat() * x.as_mat() * pih.as_mat()).unwrap();
            let r = spd_fn(&mid, SpdFnTag::Log).unwrap();
            let w = spd_fn(normal[k].as_sym(), SpdFnTag::Log).unwrap();
            v[k] = r.as_mat().dot(w.as_mat());
        }
        let alpha = ((1.0 + m as f64 * beta).sqrt() - 1.0) / m as f64;
        let vsum: f64 = pairs
            .iter()
            .zip(v.iter())
            .filter(|((i, j), _)| i == j)
            .map(|(_, val)| *val)
            .sum();
        let mut ymat = Mat::zeros(m, m);
        for ((i, j), val) in pairs.iter().zip(v.iter()) {
            if i == j {
                ymat[(*i, *i)] = val + alpha * vsum;
            } else {
                ymat[(*i, *j)] = val / 2.0f64.sqrt();
                ymat[(*j, *i)] = val / 2.0f64.sqrt();
            }
        }
        let expected = exp_sym(&SymMatrix::symmetrize_checked(ymat).unwrap()).unwrap();
        assert!((y.as_mat() - expected.as_mat()).norm() < 1e-10);
    }

    #[test]
    fn conv_shapes_and_identity() {
        let mut rng = rng_for(10, "spd/conv");
        let seq: Vec<SpdMatrix> = (0..5).map(|_| sample_spd(&mut rng, 3, 0.4)).collect();
        let params = SpdConvParams::identity(SpdMetric::LogEuclidean, 3).unwrap();
        let out = conv_forward(SpdMetric::LogEuclidean, &seq, &params).unwrap();
        assert_eq!(out.len(), 5);
        for (o, x) in out.iter().zip(seq.iter()) {
            assert!((o.as_mat() - x.as_mat()).norm() < 1e-8);
        }
    }

    #[test]
    fn conv_window_two_on_identities() {
        let metric = SpdMetric::LogEuclidean;
        let n = 2usize;
        let m = 3usize;
        let mut rng = rng_for(11, "spd/conv2");
        let pairs = sym_pairs(m);
        let params = SpdConvParams {
            base_blocks: (0..pairs.len())
                .map(|_| vec![SpdMatrix::identity(n), SpdMatrix::identity(n)])
                .collect(),
            normal: (0..pairs.len())
                .map(|_| sample_spd(&mut rng, 2 * n, 0.3))
                .collect(),
            m,
            window: 2,
            stride: 1,
        };
        let seq: Vec<SpdMatrix> = (0..5).map(|_| sample_spd(&mut rng, n, 0.4)).collect();
        let out = conv_forward(metric, &seq, &params).unwrap();
        assert_eq!(out.len(), 4);
        assert_eq!(out[0].size(), m);
        // Window of identities through identity normals (zero gyro normal)
        // gives the identity output.
        let id_params = SpdConvParams {
            base_blocks: params.base_blocks.clone(),
            normal: vec![SpdMatrix::identity(2 * n); pairs.len()],
            m,
            window: 2,
            stride: 1,
        };
        let eye_seq = vec![SpdMatrix::identity(n); 2];
        let out = conv_forward(metric, &eye_seq, &id_params).unwrap();
        assert_eq!(out.len(), 1);
        assert!((out[0].as_mat() - Mat::identity(m, m)).norm() < 1e-12);
    }

    #[test]
    fn hyperplane_distances() {
        let e = std::f64::consts::E;
        // LE plug-in: X = diag(e^2, 1), P = I, A = diag(1, 0) -> 2.
        let h = SpdHyperplane::new(
            SpdMatrix::identity(2),
            SymMatrix::new(Mat::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0])).unwrap(),
        )
        .unwrap();
        let x = diag_spd(&[e * e, 1.0]);
        let d = pseudo_gyrodistance(SpdMetric::LogEuclidean, &x, &h).unwrap();
        assert!((d - 2.0).abs() < 1e-12);

        // Base point lies on the plane for every metric.
        let mut rng = rng_for(12, "spd/hp");
        for metric in METRICS {
            let p = sample_spd(&mut rng, 3, 0.4);
            let a = sample_sym(&mut rng, 3, 1.0);
            let h = SpdHyperplane::new(p.clone(), a).unwrap();
            let d = pseudo_gyrodistance(metric, &p, &h).unwrap();
            assert!(d.abs() < 1e-10, "{}", metric.tag());
        }
    }

    #[test]
    fn distance_invariant_to_normal_scaling() {
        let mut rng = rng_for(13, "spd/hps");
        for metric in METRICS {
            let p = sample_spd(&mut rng, 3, 0.4);
            let x = sample_spd(&mut rng, 3, 0.4);
            let a = sample_sym(&mut rng, 3, 1.0);
            let h1 = SpdHyperplane::new(p.clone(), a.clone()).unwrap();
            let a2 = SymMatrix::symmetrize_checked(a.as_mat().scale(3.7)).unwrap();
            let h2 = SpdHyperplane::new(p.clone(), a2).unwrap();
            let d1 = pseudo_gyrodistance(metric, &x, &h1).unwrap();
            let d2 = pseudo_gyrodistance(metric, &x, &h2).unwrap();
            assert!((d1 - d2).abs() < 1e-9 * d1.max(1.0), "{}", metric.tag());
            // Signed value flips with the normal.
            let a3 = SymMatrix::symmetrize_checked(-a.as_mat().clone()).unwrap();
            let h3 = SpdHyperplane::new(p.clone(), a3).unwrap();
            let s1 = signed_pseudo_gyrodistance(metric, &x, &h1).unwrap();
            let s3 = signed_pseudo_gyrodistance(metric, &x, &h3).unwrap();
            assert!((s1 + s3).abs() < 1e-9 * s1.abs().max(1.0));
        }
    }

    #[test]
    fn ai_rejects_nonzero_beta_distance() {
        let h = SpdHyperplane::new(SpdMatrix::identity(2), SymMatrix::identity(2)).unwrap();
        let x = diag_spd(&[2.0, 1.0]);
        assert!(matches!(
            pseudo_gyrodistance(SpdMetric::AffineInvariant { beta: 0.5 }, &x, &h),
            Err(SpdError::BetaUnsupported(_))
        ));
    }

    #[test]
    fn mlr_logit_contracts() {
        let mut rng = rng_for(14, "spd/mlr");
        let metric = SpdMetric::LogEuclidean;
        let p = sample_spd(&mut rng, 3, 0.4);
        let a = sample_sym(&mut rng, 3, 1.0);
        let h1 = SpdHyperplane::new(p.clone(), a.clone()).unwrap();
        let h2 = SpdHyperplane::new(
            p.clone(),
            SymMatrix::symmetrize_checked(-a.as_mat().clone()).unwrap(),
        )
        .unwrap();
        // X on hyperplane (X = base) -> logit 0; flipping the normal flips signs.
        let logits = mlr_logits(metric, &p, &[h1.clone(), h2.clone()]).unwrap();
        assert!(logits[0].abs() < 1e-10 && logits[1].abs() < 1e-10);
        let x = sample_spd(&mut rng, 3, 0.4);
        let logits = mlr_logits(metric, &x, &[h1, h2]).unwrap();
        assert!((logits[0] + logits[1]).abs() < 1e-9 * logits[0].abs().max(1.0));
        // Softmax sums to one.
        let mx = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let s: f64 = logits.iter().map(|l| (l - mx).exp()).sum();
        let total: f64 = logits.iter().map(|l| (l - mx).exp() / s).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gyration_identities() {
        let mut rng = rng_for(15, "spd/gyr");
        let b = sample_spd(&mut rng, 4, 0.4);
        let c = sample_spd(&mut rng, 4, 0.4);
        for metric in METRICS {
            let g = gyration(metric, &SpdMatrix::identity(4), &b, &c).unwrap();
            assert!(
                (g.as_mat() - c.as_mat()).norm() < 1e-9 * c.as_mat().norm(),
                "{}",
                metric.tag()
            );
        }
        // LE gyrations are trivial everywhere.
        let a = sample_spd(&mut rng, 4, 0.4);
        let g = gyration(SpdMetric::LogEuclidean, &a, &b, &c).unwrap();
        assert!((g.as_mat() - c.as_mat()).norm() < 1e-9 * c.as_mat().norm());
    }

    #[test]
    fn ai_left_gyroassociativity() {
        let metric = SpdMetric::AffineInvariant { beta: 0.0 };
        let mut rng = rng_for(16, "spd/assoc");
        for _ in 0..10 {
            let a = sample_spd(&mut rng, 5, 0.4);
            let b = sample_spd(&mut rng, 5, 0.4);
            let c = sample_spd(&mut rng, 5, 0.4);
            let lhs = spd_add(metric, &a, &spd_add(metric, &b, &c).unwrap()).unwrap();
            let gyr = gyration(metric, &a, &b, &c).unwrap();
            let rhs = spd_add(metric, &spd_add(metric, &a, &b).unwrap(), &gyr).unwrap();
            assert!((lhs.as_mat() - rhs.as_mat()).norm() < 1e-8 * lhs.as_mat().norm());
        }
    }

    #[test]
    fn lc_distance_matches_sampling_oracle() {
        let mut rng = rng_for(17, "spd/oracle");
        let metric = SpdMetric::LogCholesky;
        let p = sample_spd(&mut rng, 3, 0.4);
        let x = sample_spd(&mut rng, 3, 0.4);
        let a = sample_sym(&mut rng, 3, 0.8);
        let h = SpdHyperplane::new(p, a).unwrap();
        let exact = pseudo_gyrodistance(metric, &x, &h).unwrap();
        let sampled = sampling_pseudo_gyrodistance(metric, &x, &h, 30_000, 99).unwrap();
        assert!(
            (sampled - exact).abs() <= 0.02 * exact.abs().max(1e-12),
            "exact {exact} sampled {sampled}"
        );
    }
}
