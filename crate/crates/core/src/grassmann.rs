//! Grassmann manifold in the projector and ONB perspectives.
//!
//! Points are rank-p orthogonal projectors (`ProjectorPoint`) or n×p
//! matrices with orthonormal columns modulo right rotation (`OnbPoint`).
//! The identity element is `I_{n,p} = diag(I_p, 0)`, with ONB representative
//! `Ĩ_{n,p} = [I_p; 0]`.
//!
//! The logarithmic map in the projector perspective is computed through the
//! ONB perspective: `Log_P(Q) = Û L̃ᵀ + L̃ Ûᵀ` with `Û` any orthonormal
//! basis of `range(P)` and `L̃` the ONB log. That path is what the gradient
//! engine differentiates; the direct formula `[½ log((I−2Q)(I−2P)), P]` is
//! kept as a non-differentiated verification oracle.
//!
//! Operations whose input has a principal angle within `CUT_LOCUS_TOL` of
//! π/2 fail with [`GrError::CutLocus`] instead of silently projecting.

use thiserror::Error;

use crate::autodiff::{mat_exp_var, AutodiffError, DiagFnTag, Tape, Var};
use crate::linalg::{self, mat_exp, qr_thin, svd_thin, sym_eig, LinalgError, Mat, SymMatrix};

/// Principal angles closer than this to π/2 (measured by cos) are treated
/// as the cut locus.
pub const CUT_LOCUS_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum GrError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("cut locus: smallest subspace cosine {sigma_min:.3e}")]
    CutLocus { sigma_min: f64 },
    #[error("matrix is not an orthonormal basis: residual {residual:.3e}")]
    NotOrthonormal { residual: f64 },
    #[error("matrix is not a rank-{p} projector: {reason}")]
    NotProjector { p: usize, reason: String },
    #[error("tangent condition violated: residual {residual:.3e}")]
    TangentCondition { residual: f64 },
    #[error("Karcher mean did not converge in {iters} iterations (residual {residual:.3e})")]
    MeanNoConvergence { iters: usize, residual: f64 },
    #[error("{0}")]
    Argument(String),
}

type Result<T> = std::result::Result<T, GrError>;

/// n×p matrix with orthonormal columns.
#[derive(Debug, Clone, PartialEq)]
pub struct OnbPoint {
    u: Mat,
}

impl OnbPoint {
    pub fn new(u: Mat) -> Result<Self> {
        let p = u.ncols();
        let residual = (u.transpose() * &u - Mat::identity(p, p)).norm();
        if residual > 1e-10 {
            return Err(GrError::NotOrthonormal { residual });
        }
        Ok(OnbPoint { u })
    }

    /// `Ĩ_{n,p}`.
    pub fn identity(n: usize, p: usize) -> Self {
        let mut u = Mat::zeros(n, p);
        for i in 0..p {
            u[(i, i)] = 1.0;
        }
        OnbPoint { u }
    }

    pub fn n(&self) -> usize {
        self.u.nrows()
    }

    pub fn p(&self) -> usize {
        self.u.ncols()
    }

    pub fn as_mat(&self) -> &Mat {
        &self.u
    }

    pub fn into_mat(self) -> Mat {
        self.u
    }
}

/// Rank-p orthogonal projector (symmetric, idempotent, integer trace).
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectorPoint {
    m: Mat,
    p: usize,
}

impl ProjectorPoint {
    pub fn new(m: Mat) -> Result<Self> {
        let s = SymMatrix::new(m.clone()).map_err(GrError::Linalg)?;
        let idem = (s.as_mat() * s.as_mat() - s.as_mat()).norm();
        if idem > 1e-9 {
            return Err(GrError::NotProjector {
                p: 0,
                reason: format!("idempotence residual {idem:.3e}"),
            });
        }
        let tr = s.as_mat().trace();
        let p = tr.round();
        if (tr - p).abs() > 1e-9 || p < 0.0 {
            return Err(GrError::NotProjector {
                p: p as usize,
                reason: format!("trace {tr} is not a nonnegative integer"),
            });
        }
        Ok(ProjectorPoint {
            m: s.into_mat(),
            p: p as usize,
        })
    }

    /// `I_{n,p} = diag(I_p, 0)`.
    pub fn identity(n: usize, p: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..p {
            m[(i, i)] = 1.0;
        }
        ProjectorPoint { m, p }
    }

    pub fn n(&self) -> usize {
        self.m.nrows()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn as_mat(&self) -> &Mat {
        &self.m
    }
}

/// Symmetric tangent at a projector `P`, satisfying `PΔ + ΔP = Δ`.
#[derive(Debug, Clone)]
pub struct GrTangent {
    delta: Mat,
}

impl GrTangent {
    pub fn new(delta: Mat, base: &ProjectorPoint) -> Result<Self> {
        let sym = SymMatrix::symmetrize_checked(delta).map_err(GrError::Linalg)?;
        let d = sym.into_mat();
        let residual = (base.as_mat() * &d + &d * base.as_mat() - &d).norm();
        if residual > 1e-6 {
            return Err(GrError::TangentCondition { residual });
        }
        Ok(GrTangent { delta: d })
    }

    pub(crate) fn new_unchecked(delta: Mat) -> Self {
        GrTangent { delta }
    }

    pub fn zero(n: usize) -> Self {
        GrTangent {
            delta: Mat::zeros(n, n),
        }
    }

    pub fn as_mat(&self) -> &Mat {
        &self.delta
    }

    pub fn into_mat(self) -> Mat {
        self.delta
    }
}

/// `τ(U) = U Uᵀ`.
pub fn tau(u: &OnbPoint) -> ProjectorPoint {
    ProjectorPoint {
        m: u.as_mat() * u.as_mat().transpose(),
        p: u.p(),
    }
}

/// Orthonormal basis of `range(P)`: eigenvectors with eigenvalue above 1/2,
/// the maximally separated threshold for a numerically near-idempotent
/// matrix. The basis is gauge-free up to a right p×p rotation.
pub fn tau_inv(pp: &ProjectorPoint) -> Result<OnbPoint> {
    let s = SymMatrix::symmetrize_checked(pp.as_mat().clone()).map_err(GrError::Linalg)?;
    let (q, lam) = sym_eig(&s)?;
    let count = lam.iter().filter(|&&x| x > 0.5).count();
    if count != pp.p() {
        return Err(GrError::NotProjector {
            p: pp.p(),
            reason: format!("{count} eigenvalues above 1/2, expected {}", pp.p()),
        });
    }
    let u = q.columns(0, pp.p()).into_owned();
    OnbPoint::new(u)
}

/// Principal angles between the column spaces (ascending).
///
/// Small angles are recovered from the sines (singular values of
/// `(I − UUᵀ)V`) because `acos` near 1 loses half the working precision;
/// large angles come from the cosines (singular values of `UᵀV`).
pub fn principal_angles(u: &OnbPoint, v: &OnbPoint) -> Result<Vec<f64>> {
    let (_, cos_sv, _) = svd_thin(&(u.as_mat().transpose() * v.as_mat()))?;
    let proj = v.as_mat() - u.as_mat() * (u.as_mat().transpose() * v.as_mat());
    let (_, sin_sv, _) = svd_thin(&proj)?;
    let p = cos_sv.len();
    // Cosines descending pair with sines ascending.
    let mut angles: Vec<f64> = (0..p)
        .map(|i| {
            let c = cos_sv[i].clamp(-1.0, 1.0);
            let s = sin_sv[p - 1 - i].clamp(-1.0, 1.0);
            if c < 0.7 {
                c.acos()
            } else {
                s.asin()
            }
        })
        .collect();
    angles.sort_by(f64::total_cmp);
    Ok(angles)
}

/// Geodesic distance: the 2-norm of the principal angles.
pub fn subspace_distance(u: &OnbPoint, v: &OnbPoint) -> Result<f64> {
    let angles = principal_angles(u, v)?;
    Ok(angles.iter().map(|a| a * a).sum::<f64>().sqrt())
}

fn check_cut_locus(m: &Mat) -> Result<()> {
    let (_, sigma, _) = svd_thin(m)?;
    let sigma_min = sigma[sigma.len() - 1];
    if sigma_min < CUT_LOCUS_TOL {
        return Err(GrError::CutLocus { sigma_min });
    }
    Ok(())
}

/// Logarithmic map in the ONB perspective:
/// `U' arctan(Σ) V'ᵀ` from the thin SVD of `(I − UUᵀ) V (UᵀV)⁻¹`.
pub fn log_onb(u: &OnbPoint, v: &OnbPoint) -> Result<Mat> {
    let utv = u.as_mat().transpose() * v.as_mat();
    check_cut_locus(&utv)?;
    let inv = utv
        .try_inverse()
        .ok_or(GrError::CutLocus { sigma_min: 0.0 })?;
    let proj = v.as_mat() - u.as_mat() * (u.as_mat().transpose() * v.as_mat());
    let m = proj * inv;
    let (w, sigma, vs) = svd_thin(&m)?;
    let atan = Mat::from_fn(sigma.len(), sigma.len(), |i, j| {
        if i == j {
            sigma[i].atan()
        } else {
            0.0
        }
    });
    Ok(w * atan * vs.transpose())
}

/// Exponential map in the ONB perspective from the thin SVD of the tangent:
/// `U V cos(Σ) Vᵀ + W sin(Σ) Vᵀ`, re-orthonormalized.
pub fn exp_onb(u: &OnbPoint, delta: &Mat) -> Result<OnbPoint> {
    let (w, sigma, v) = svd_thin(delta)?;
    let k = sigma.len();
    let cos = Mat::from_fn(k, k, |i, j| if i == j { sigma[i].cos() } else { 0.0 });
    let sin = Mat::from_fn(k, k, |i, j| if i == j { sigma[i].sin() } else { 0.0 });
    let raw = u.as_mat() * &v * cos * v.transpose() + w * sin * v.transpose();
    let (q, _) = qr_thin(&raw)?;
    OnbPoint::new(q)
}

/// Projector-perspective log through the ONB conversion:
/// `Log_P(Q) = Û L̃ᵀ + L̃ Ûᵀ`.
pub fn log_projector(p: &ProjectorPoint, q: &ProjectorPoint) -> Result<GrTangent> {
    let up = tau_inv(p)?;
    let uq = tau_inv(q)?;
    log_projector_with_basis(&up, &uq)
}

/// Same conversion, reusing known bases of the two subspaces (the
/// differentiable network path keeps bases alongside projectors).
pub fn log_projector_with_basis(up: &OnbPoint, uq: &OnbPoint) -> Result<GrTangent> {
    let l = log_onb(up, uq)?;
    let delta = up.as_mat() * l.transpose() + &l * up.as_mat().transpose();
    Ok(GrTangent::new_unchecked(linalg::sym(&delta)))
}

/// Direct projector log `[Ω, P]` with `Ω = ½ log((I−2Q)(I−2P))`.
///
/// Verification oracle only: the orthogonal-matrix logarithm inside has no
/// registered adjoint.
pub fn log_projector_direct(p: &ProjectorPoint, q: &ProjectorPoint) -> Result<GrTangent> {
    let n = p.n();
    let eye = Mat::identity(n, n);
    let refl = (&eye - q.as_mat().scale(2.0)) * (&eye - p.as_mat().scale(2.0));
    let omega = linalg::mat_log_orthogonal(&refl).map_err(|e| match e {
        LinalgError::LogAtMinusOne => GrError::CutLocus { sigma_min: 0.0 },
        other => GrError::Linalg(other),
    })?;
    let omega = omega.scale(0.5);
    let delta = &omega * p.as_mat() - p.as_mat() * omega;
    Ok(GrTangent::new_unchecked(linalg::sym(&delta)))
}

/// Exponential map in the projector perspective, realized by conjugation:
/// `Exp_P(Δ) = exp([Δ, P]) P exp(−[Δ, P])`.
pub fn exp_projector(p: &ProjectorPoint, delta: &GrTangent) -> Result<ProjectorPoint> {
    let d = delta.as_mat();
    let residual = (p.as_mat() * d + d * p.as_mat() - d).norm();
    if residual > 1e-6 {
        return Err(GrError::TangentCondition { residual });
    }
    let g = d * p.as_mat() - p.as_mat() * d;
    let r = mat_exp(&g);
    let out = &r * p.as_mat() * r.transpose();
    ProjectorPoint::new(linalg::sym(&out))
}

/// The rotation `exp([Log_I(P), I_{n,p}])` implementing left
/// gyrotranslation by `P`.
pub fn gyro_rotation(p: &ProjectorPoint) -> Result<Mat> {
    let eye = ProjectorPoint::identity(p.n(), p.p());
    let delta = log_projector(&eye, p)?;
    Ok(mat_exp(&commutator_with_identity(delta.as_mat(), p.p())))
}

/// `[Δ, I_{n,p}]` for a tangent at the identity projector.
pub fn commutator_with_identity(delta: &Mat, p: usize) -> Mat {
    let n = delta.nrows();
    let eye_np = ProjectorPoint::identity(n, p);
    delta * eye_np.as_mat() - eye_np.as_mat() * delta
}

/// `P ⊕ Q`: conjugation of `Q` by the gyrotranslation rotation of `P`.
pub fn gr_add(p: &ProjectorPoint, q: &ProjectorPoint) -> Result<ProjectorPoint> {
    let r = gyro_rotation(p)?;
    let out = &r * q.as_mat() * r.transpose();
    ProjectorPoint::new(linalg::sym(&out))
}

/// `⊖P = Exp_I(−Log_I(P))`.
pub fn gr_inv(p: &ProjectorPoint) -> Result<ProjectorPoint> {
    let eye = ProjectorPoint::identity(p.n(), p.p());
    let delta = log_projector(&eye, p)?;
    let neg = GrTangent::new_unchecked(-delta.as_mat().clone());
    exp_projector(&eye, &neg)
}

/// ONB-perspective binary operation `U ⊕̃ V`: rotate the representative.
pub fn gr_add_onb(u: &OnbPoint, v: &OnbPoint) -> Result<OnbPoint> {
    let r = gyro_rotation(&tau(u))?;
    OnbPoint::new(r * v.as_mat())
}

/// ONB inverse `⊖̃U = τ⁻¹(⊖(UUᵀ))`.
pub fn gr_inv_onb(u: &OnbPoint) -> Result<OnbPoint> {
    tau_inv(&gr_inv(&tau(u))?)
}

/// Grassmann inner product of two points: the canonical metric applied to
/// their logs at the identity, `½ Tr(Δ₁ Δ₂)`.
pub fn gr_inner(p: &ProjectorPoint, q: &ProjectorPoint) -> Result<f64> {
    let eye = ProjectorPoint::identity(p.n(), p.p());
    let d1 = log_projector(&eye, p)?;
    let d2 = log_projector(&eye, q)?;
    Ok(0.5 * (d1.as_mat() * d2.as_mat()).trace())
}

/// Canonical inner product of two identity tangents.
pub fn gr_inner_tangent(d1: &GrTangent, d2: &GrTangent) -> f64 {
    0.5 * (d1.as_mat() * d2.as_mat()).trace()
}

/// Left gyrotranslation `φ_M(X)`: conjugation by the rotation of `M`. An
/// isometry of the Grassmannian.
pub fn gyrotranslate(m: &ProjectorPoint, x: &ProjectorPoint) -> Result<ProjectorPoint> {
    gr_add(m, x)
}

/// Nonlinearity `σ(X) = V Vᵀ` where `V` is the Q factor of the QR of
/// `exp([Log_I(X), I_{n,p}]) Ĩ_{n,p}`. The identity on exact projectors;
/// numerically a re-orthonormalization of the rank-p structure.
pub fn nonlinearity(x: &ProjectorPoint) -> Result<ProjectorPoint> {
    let r = gyro_rotation(x)?;
    let basis = r.columns(0, x.p()).into_owned();
    let (q, _) = qr_thin(&basis)?;
    Ok(tau(&OnbPoint::new(q)?))
}

/// ONB variant of the nonlinearity: the Q factor of the QR of `U`.
pub fn nonlinearity_onb(u: &OnbPoint) -> Result<OnbPoint> {
    let (q, _) = qr_thin(u.as_mat())?;
    OnbPoint::new(q)
}

/// Smooth parameterization of Grassmann points by an unconstrained
/// p×(n−p) block `B`: the skew embedding `[[0, B], [−Bᵀ, 0]]` is
/// exponentiated and applied to the identity element.
pub fn skew_param_projector(b: &Mat, n: usize) -> ProjectorPoint {
    let p = b.nrows();
    let r = mat_exp(&linalg::skew_embed(b, n));
    let eye = ProjectorPoint::identity(n, p);
    let out = &r * eye.as_mat() * r.transpose();
    ProjectorPoint::new(linalg::sym(&out)).expect("conjugated projector")
}

/// ONB variant: `exp([[0, B], [−Bᵀ, 0]]) Ĩ_{n,p}`.
pub fn skew_param_onb(b: &Mat, n: usize) -> OnbPoint {
    let p = b.nrows();
    let r = mat_exp(&linalg::skew_embed(b, n));
    OnbPoint::new(r.columns(0, p).into_owned()).expect("rotated identity basis")
}

/// Karcher (Fréchet) mean in the ONB perspective: fixed-point iteration of
/// the mean log, step 1, tolerance 1e-9, at most `max_iters` iterations.
pub fn karcher_mean_onb(points: &[OnbPoint], max_iters: usize) -> Result<OnbPoint> {
    if points.is_empty() {
        return Err(GrError::Argument("mean of an empty set".into()));
    }
    let mut mean = points[0].clone();
    let w = 1.0 / points.len() as f64;
    let mut residual = f64::INFINITY;
    for _ in 0..max_iters {
        let mut t = Mat::zeros(mean.n(), mean.p());
        for u in points {
            t += log_onb(&mean, u)?;
        }
        let t = t.scale(w);
        residual = t.norm();
        if residual < 1e-9 {
            return Ok(mean);
        }
        mean = exp_onb(&mean, &t)?;
    }
    Err(GrError::MeanNoConvergence {
        iters: max_iters,
        residual,
    })
}

/// Point on the geodesic from `U` towards `V` at fraction `gamma`
/// (`gamma = 0 ↦ U`, `gamma = 1 ↦ span(V)`).
pub fn geodesic_onb(u: &OnbPoint, v: &OnbPoint, gamma: f64) -> Result<OnbPoint> {
    if gamma == 0.0 {
        return Ok(u.clone());
    }
    let l = log_onb(u, v)?;
    exp_onb(u, &l.scale(gamma))
}

// ---------------------------------------------------------------------------
// Differentiable building blocks (ONB lineage on the tape)
// ---------------------------------------------------------------------------

/// Skew embedding of a p×(n−p) block on the tape.
pub fn skew_embed_var<'t>(b: Var<'t>, n: usize) -> Var<'t> {
    let (p, q) = b.shape();
    assert_eq!(q, n - p, "skew_embed_var: block must be p x (n-p)");
    let top = b.pad(n, n, 0, p);
    top - top.t()
}

/// ONB representative of the skew parameterization:
/// `exp([[0,B],[−Bᵀ,0]]) Ĩ` as the first p columns of the rotation.
pub fn skew_param_onb_var<'t>(tape: &'t Tape, b: Var<'t>, n: usize) -> Var<'t> {
    let p = b.shape().0;
    let rot = mat_exp_var(tape, skew_embed_var(b, n));
    rot.slice(0, 0, n, p)
}

/// The rotation `exp([[0,B],[−Bᵀ,0]])` itself.
pub fn skew_param_rotation_var<'t>(tape: &'t Tape, b: Var<'t>, n: usize) -> Var<'t> {
    mat_exp_var(tape, skew_embed_var(b, n))
}

/// Differentiable `Log_{I_{n,p}}(τ(U))` through the ONB conversion: with
/// `U = [T; B]`, the horizontal lift is the arctan-SVD of `[0; B T⁻¹]` and
/// the projector tangent is `Ĩ L̃ᵀ + L̃ Ĩᵀ`.
pub fn log_identity_var<'t>(
    tape: &'t Tape,
    u: Var<'t>,
) -> std::result::Result<Var<'t>, AutodiffError> {
    let (n, p) = u.shape();
    // Cut-locus guard on the values before recording the SVD chain.
    let top_val = u.value().view((0, 0), (p, p)).into_owned();
    let (_, sv, _) = svd_thin(&top_val)?;
    let sigma_min = sv[sv.len() - 1];
    if sigma_min < CUT_LOCUS_TOL {
        return Err(AutodiffError::Conditioning(format!(
            "grassmann log at identity: subspace cosine {sigma_min:.3e}"
        )));
    }
    let top = u.slice(0, 0, p, p);
    let bottom = u.slice(p, 0, n - p, p);
    let m = (bottom * top.inverse()?).pad(n, p, p, 0);
    let (w, s, v) = m.svd()?;
    let ltilde = w * s.diag_fn(DiagFnTag::Arctan)? * v.t();
    let eye_np = tape.constant(OnbPoint::identity(n, p).into_mat());
    Ok((eye_np * ltilde.t() + ltilde * eye_np.t()).sym())
}

/// Differentiable `Exp_{I_{n,p}}` returning an ONB representative:
/// `exp([Δ, I_{n,p}]) Ĩ`.
pub fn exp_identity_onb_var<'t>(tape: &'t Tape, delta: Var<'t>, p: usize) -> Var<'t> {
    let (n, _) = delta.shape();
    let eye_np = tape.constant(ProjectorPoint::identity(n, p).as_mat().clone());
    let comm = delta * eye_np - eye_np * delta;
    let rot = mat_exp_var(tape, comm);
    rot.slice(0, 0, n, p)
}

/// Differentiable gyrotranslation rotation `exp([Log_I(τU), I_{n,p}])`
/// from an ONB basis variable.
pub fn rotation_from_basis_var<'t>(
    tape: &'t Tape,
    u: Var<'t>,
) -> std::result::Result<Var<'t>, AutodiffError> {
    let (n, p) = u.shape();
    let delta = log_identity_var(tape, u)?;
    let eye_np = tape.constant(ProjectorPoint::identity(n, p).as_mat().clone());
    let comm = delta * eye_np - eye_np * delta;
    Ok(mat_exp_var(tape, comm))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{rng_for, sample_orthonormal, standard_normal_mat};

    fn random_onb(n: usize, p: usize, seed: u64) -> OnbPoint {
        let mut rng = rng_for(seed, "gr/tests");
        OnbPoint::new(sample_orthonormal(&mut rng, n, p)).unwrap()
    }

    /// A pair with principal angles bounded away from π/2: a small
    /// geodesic perturbation of `u`.
    fn nearby_onb(u: &OnbPoint, scale: f64, seed: u64) -> OnbPoint {
        let mut rng = rng_for(seed, "gr/tests/nearby");
        let g = standard_normal_mat(&mut rng, u.n(), u.p());
        let horiz = &g - u.as_mat() * (u.as_mat().transpose() * &g);
        exp_onb(u, &horiz.scale(scale / horiz.norm().max(1.0))).unwrap()
    }

    fn theta_point(theta: f64) -> OnbPoint {
        OnbPoint::new(Mat::from_column_slice(2, 1, &[theta.cos(), theta.sin()])).unwrap()
    }

    #[test]
    fn tau_roundtrip() {
        let u = random_onb(6, 2, 1);
        let p = tau(&u);
        let back = tau_inv(&p).unwrap();
        assert!((tau(&back).as_mat() - p.as_mat()).norm() < 1e-9);
        let eye = ProjectorPoint::identity(5, 2);
        let u0 = tau_inv(&eye).unwrap();
        assert!((tau(&u0).as_mat() - eye.as_mat()).norm() < 1e-12);
    }

    #[test]
    fn log_onb_basics() {
        let u = random_onb(5, 2, 2);
        let zero = log_onb(&u, &u).unwrap();
        assert!(zero.norm() < 1e-9);

        let theta = 0.6f64;
        let l = log_onb(&theta_point(0.0), &theta_point(theta)).unwrap();
        assert!((l[(0, 0)]).abs() < 1e-12);
        assert!((l[(1, 0)] - theta).abs() < 1e-10);
    }

    #[test]
    fn log_onb_is_horizontal_with_principal_angle_norm() {
        let u = random_onb(6, 3, 3);
        let v = nearby_onb(&u, 0.8, 4);
        let l = log_onb(&u, &v).unwrap();
        assert!((u.as_mat().transpose() * &l).norm() < 1e-9);
        let angles = principal_angles(&u, &v).unwrap();
        let expected: f64 = angles.iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!((l.norm() - expected).abs() < 1e-8);
    }

    #[test]
    fn log_projector_theta_closed_form() {
        let theta = 0.45f64;
        let p = tau(&theta_point(0.0));
        let q = tau(&theta_point(theta));
        let d = log_projector(&p, &q).unwrap();
        let expected = Mat::from_row_slice(2, 2, &[0.0, theta, theta, 0.0]);
        assert!((d.as_mat() - &expected).norm() < 1e-9);
        let direct = log_projector_direct(&p, &q).unwrap();
        assert!((direct.as_mat() - &expected).norm() < 1e-9);
    }

    #[test]
    fn log_projector_matches_direct_oracle() {
        for seed in 0..6 {
            let u = random_onb(6, 2, 100 + seed);
            let v = nearby_onb(&u, 0.9, 200 + seed);
            let p = tau(&u);
            let q = tau(&v);
            let conv = log_projector(&p, &q).unwrap();
            let direct = log_projector_direct(&p, &q).unwrap();
            assert!(
                (conv.as_mat() - direct.as_mat()).norm() < 1e-6,
                "seed {seed}"
            );
        }
    }

    #[test]
    fn log_projector_gauge_invariance() {
        let u = random_onb(6, 2, 5);
        let v = nearby_onb(&u, 0.7, 6);
        let base = log_projector_with_basis(&u, &v).unwrap();
        let mut rng = rng_for(7, "gr/gauge");
        let r2 = sample_orthonormal(&mut rng, 2, 2);
        let ur = OnbPoint::new(u.as_mat() * &r2).unwrap();
        let gauged = log_projector_with_basis(&ur, &v).unwrap();
        assert!((base.as_mat() - gauged.as_mat()).norm() < 1e-9);
    }

    #[test]
    fn exp_projector_roundtrips() {
        let p = tau(&random_onb(8, 3, 8));
        let zero = GrTangent::zero(8);
        let same = exp_projector(&p, &zero).unwrap();
        assert!((same.as_mat() - p.as_mat()).norm() < 1e-12);

        let u = tau_inv(&p).unwrap();
        let v = nearby_onb(&u, 1.0, 9);
        let q = tau(&v);
        let d = log_projector(&p, &q).unwrap();
        let back = exp_projector(&p, &d).unwrap();
        assert!((back.as_mat() - q.as_mat()).norm() < 1e-8);
    }

    #[test]
    fn exp_projector_rejects_bad_tangent() {
        let p = ProjectorPoint::identity(4, 2);
        let bad = GrTangent::new_unchecked(Mat::identity(4, 4));
        assert!(matches!(
            exp_projector(&p, &bad),
            Err(GrError::TangentCondition { .. })
        ));
    }

    #[test]
    fn gr_add_identities_and_cancellation() {
        let n = 6;
        let p = 2;
        let eye = ProjectorPoint::identity(n, p);
        let q = tau(&nearby_onb(&OnbPoint::identity(n, p), 0.8, 10));
        let r = gr_add(&eye, &q).unwrap();
        assert!((r.as_mat() - q.as_mat()).norm() < 1e-10);
        let inv_eye = gr_inv(&eye).unwrap();
        assert!((inv_eye.as_mat() - eye.as_mat()).norm() < 1e-10);

        let a = tau(&nearby_onb(&OnbPoint::identity(n, p), 0.6, 11));
        // ⊖A ⊕ (A ⊕ Q) = Q.
        let aq = gr_add(&a, &q).unwrap();
        let na = gr_inv(&a).unwrap();
        let back = gr_add(&na, &aq).unwrap();
        assert!((back.as_mat() - q.as_mat()).norm() < 1e-8);
        // ⊖A ⊕ A = I.
        let id = gr_add(&na, &a).unwrap();
        assert!((id.as_mat() - eye.as_mat()).norm() < 1e-8);
    }

    #[test]
    fn onb_add_consistent_with_projector_add() {
        let n = 6;
        let p = 2;
        let u = nearby_onb(&OnbPoint::identity(n, p), 0.7, 12);
        let v = nearby_onb(&OnbPoint::identity(n, p), 0.5, 13);
        let lhs = tau(&gr_add_onb(&u, &v).unwrap());
        let rhs = gr_add(&tau(&u), &tau(&v)).unwrap();
        assert!((lhs.as_mat() - rhs.as_mat()).norm() < 1e-8);

        let eye = OnbPoint::identity(n, p);
        let w = gr_add_onb(&eye, &v).unwrap();
        assert!((w.as_mat() - v.as_mat()).norm() < 1e-10);

        // ⊖̃U ⊕̃ U spans the identity subspace.
        let nu = gr_inv_onb(&u).unwrap();
        let back = gr_add_onb(&nu, &u).unwrap();
        let d = subspace_distance(&back, &eye).unwrap();
        assert!(d < 1e-8, "distance {d}");
    }

    #[test]
    fn inner_product_properties() {
        let n = 5;
        let p = 2;
        let eye = ProjectorPoint::identity(n, p);
        let q = tau(&nearby_onb(&OnbPoint::identity(n, p), 0.6, 14));
        assert!(gr_inner(&eye, &q).unwrap().abs() < 1e-10);

        let theta = 0.3f64;
        let pt = tau(&theta_point(theta));
        let sq = gr_inner(&pt, &pt).unwrap();
        assert!((sq - theta * theta).abs() < 1e-9);

        let a = tau(&nearby_onb(&OnbPoint::identity(n, p), 0.5, 15));
        let lhs = gr_inner(&a, &q).unwrap();
        let rhs = gr_inner(&q, &a).unwrap();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn gyrotranslation_is_isometry() {
        let n = 6;
        let p = 2;
        let m = tau(&nearby_onb(&OnbPoint::identity(n, p), 0.7, 16));
        let xs: Vec<ProjectorPoint> = (0..3)
            .map(|k| tau(&nearby_onb(&OnbPoint::identity(n, p), 0.5, 17 + k)))
            .collect();
        let eye = ProjectorPoint::identity(n, p);
        let moved: Vec<ProjectorPoint> =
            xs.iter().map(|x| gyrotranslate(&m, x).unwrap()).collect();
        let unmoved = gyrotranslate(&eye, &xs[0]).unwrap();
        assert!((unmoved.as_mat() - xs[0].as_mat()).norm() < 1e-10);
        for x in &moved {
            assert!((x.as_mat().trace() - p as f64).abs() < 1e-9);
        }
        for i in 0..xs.len() {
            for j in (i + 1)..xs.len() {
                let before =
                    subspace_distance(&tau_inv(&xs[i]).unwrap(), &tau_inv(&xs[j]).unwrap())
                        .unwrap();
                let after =
                    subspace_distance(&tau_inv(&moved[i]).unwrap(), &tau_inv(&moved[j]).unwrap())
                        .unwrap();
                assert!((before - after).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn nonlinearity_preserves_structure() {
        let eye = ProjectorPoint::identity(5, 2);
        let s = nonlinearity(&eye).unwrap();
        assert!((s.as_mat() - eye.as_mat()).norm() < 1e-10);

        let x = tau(&nearby_onb(&OnbPoint::identity(5, 2), 0.8, 20));
        let s = nonlinearity(&x).unwrap();
        assert!((s.as_mat() * s.as_mat() - s.as_mat()).norm() < 1e-9);
        assert!((s.as_mat().trace() - 2.0).abs() < 1e-9);

        // ONB variant agrees under tau.
        let u = tau_inv(&x).unwrap();
        let s_onb = nonlinearity_onb(&u).unwrap();
        assert!((tau(&s_onb).as_mat() - s.as_mat()).norm() < 1e-8);
    }

    #[test]
    fn skew_param_cases() {
        let p0 = skew_param_projector(&Mat::zeros(2, 3), 5);
        assert!((p0.as_mat() - ProjectorPoint::identity(5, 2).as_mat()).norm() < 1e-12);

        let theta = 0.4f64;
        let b = Mat::from_element(1, 1, theta);
        let pp = skew_param_projector(&b, 2);
        let expected = tau(&OnbPoint::new(Mat::from_column_slice(
            2,
            1,
            &[theta.cos(), -theta.sin()],
        ))
        .unwrap());
        assert!((pp.as_mat() - expected.as_mat()).norm() < 1e-10);

        // Log at the identity reproduces the embedded skew structure.
        let b = Mat::from_row_slice(2, 2, &[0.3, -0.2, 0.1, 0.25]);
        let pp = skew_param_projector(&b, 4);
        let eye = ProjectorPoint::identity(4, 2);
        let d = log_projector(&eye, &pp).unwrap();
        let comm = commutator_with_identity(d.as_mat(), 2);
        let expected = linalg::skew_embed(&b, 4);
        assert!((comm - expected).norm() < 1e-9);
    }

    #[test]
    fn karcher_mean_and_geodesic() {
        let u = random_onb(6, 2, 21);
        let mean = karcher_mean_onb(&[u.clone(), u.clone(), u.clone()], 100).unwrap();
        assert!(subspace_distance(&mean, &u).unwrap() < 1e-9);

        let v = nearby_onb(&u, 0.5, 22);
        let g0 = geodesic_onb(&u, &v, 0.0).unwrap();
        assert!((g0.as_mat() - u.as_mat()).norm() < 1e-12);
        let g1 = geodesic_onb(&u, &v, 1.0).unwrap();
        assert!(subspace_distance(&g1, &v).unwrap() < 1e-9);

        // Two p=1 lines at angles 0 and θ: mean bisects.
        let theta = 0.8f64;
        let mean = karcher_mean_onb(&[theta_point(0.0), theta_point(theta)], 100).unwrap();
        let d = subspace_distance(&mean, &theta_point(theta / 2.0)).unwrap();
        assert!(d < 1e-8, "bisection distance {d}");
    }

    #[test]
    fn cut_locus_is_detected() {
        let u = theta_point(0.0);
        let v = theta_point(std::f64::consts::FRAC_PI_2);
        assert!(matches!(log_onb(&u, &v), Err(GrError::CutLocus { .. })));
    }

    #[test]
    fn log_identity_var_matches_plain() {
        let u = nearby_onb(&OnbPoint::identity(6, 2), 0.8, 23);
        let tape = Tape::new();
        let uv = tape.leaf(u.as_mat().clone());
        let d = log_identity_var(&tape, uv).unwrap();
        let eye = ProjectorPoint::identity(6, 2);
        let expected = log_projector(&eye, &tau(&u)).unwrap();
        assert!((d.value() - expected.as_mat()).norm() < 1e-9);
    }

    #[test]
    fn gradcheck_log_identity_chain() {
        // Gradient of a scalar of the ONB log entries with respect to the
        // underlying skew parameter block.
        let mut rng = rng_for(24, "gr/gc");
        let b = standard_normal_mat(&mut rng, 2, 4).scale(0.4);
        let w = standard_normal_mat(&mut rng, 6, 6);
        let err = crate::autodiff::gradcheck_fn(
            move |tape, vs| {
                let u = skew_param_onb_var(tape, vs[0], 6);
                let d = log_identity_var(tape, u)?;
                Ok(d.frob(tape.constant(w.clone())))
            },
            &[b],
        )
        .unwrap();
        assert!(err < 1e-4, "max rel err {err}");
    }

    #[test]
    fn gradcheck_exp_identity_and_rotation() {
        let mut rng = rng_for(25, "gr/gc2");
        let d0 = {
            let b = standard_normal_mat(&mut rng, 2, 3).scale(0.3);
            let mut m = Mat::zeros(5, 5);
            m.view_mut((0, 2), (2, 3)).copy_from(&b);
            m.view_mut((2, 0), (3, 2)).copy_from(&b.transpose());
            m
        };
        let w = standard_normal_mat(&mut rng, 5, 2);
        let err = crate::autodiff::gradcheck_fn(
            move |tape, vs| {
                let u = exp_identity_onb_var(tape, vs[0].sym(), 2);
                Ok(u.frob(tape.constant(w.clone())))
            },
            &[d0],
        )
        .unwrap();
        assert!(err < 1e-5, "max rel err {err}");
    }
}
