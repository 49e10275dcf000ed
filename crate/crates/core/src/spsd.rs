//! Structure space of rank-p SPSD matrices: a Grassmann subspace factor
//! times a p×p SPD shape factor.
//!
//! A rank-p PSD matrix `X` is represented as `(U, S)` with `X = U S Uᵀ`.
//! Gyro operations act componentwise; the inner product weighs the
//! Grassmann part by `λ`. Pseudo-gyrodistances to hypergyroplanes combine
//! both parts, and the batched evaluation keeps a persistent common
//! subspace that canonical representations are aligned to: during training
//! the state moves a `γ` step along the geodesic towards the batch's
//! Karcher mean before canonicalization; evaluation freezes it.
//!
//! The running state is owned by a single training thread; distance
//! evaluation itself is pure.

use thiserror::Error;

use crate::batch;
use crate::grassmann::{
    self, geodesic_onb, gr_add_onb, gr_inner_tangent, gr_inv_onb, karcher_mean_onb,
    log_projector, tau, GrError, GrTangent, OnbPoint, ProjectorPoint,
};
use crate::linalg::{sym_eig, LinalgError, Mat, SpdMatrix, SymMatrix};
use crate::spd::{self, SpdError, SpdMetric};

#[derive(Debug, Error)]
pub enum SpsdError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Grassmann(#[from] GrError),
    #[error(transparent)]
    Spd(#[from] SpdError),
    #[error("sample {sample}: numerical rank below {p} (eigenvalue {eigenvalue:.3e})")]
    RankDeficient {
        sample: usize,
        p: usize,
        eigenvalue: f64,
    },
    #[error("subspace alignment failed: U_XᵀW is singular (cosine {sigma_min:.3e})")]
    Alignment { sigma_min: f64 },
    #[error("degenerate hyperplane: both the Grassmann and the SPD normal vanish")]
    DegenerateHyperplane,
    #[error("Karcher mean failed: {0}")]
    Mean(String),
    #[error("{0}")]
    Argument(String),
}

type Result<T> = std::result::Result<T, SpsdError>;

/// Canonical representation `(U, S)` of a rank-p PSD matrix `U S Uᵀ`.
#[derive(Debug, Clone)]
pub struct StructurePoint {
    pub u: OnbPoint,
    pub s: SpdMatrix,
}

impl StructurePoint {
    pub fn new(u: OnbPoint, s: SpdMatrix) -> Result<Self> {
        if s.size() != u.p() {
            return Err(SpsdError::Argument(format!(
                "shape factor size {} does not match subspace rank {}",
                s.size(),
                u.p()
            )));
        }
        Ok(StructurePoint { u, s })
    }

    /// The identity element `(Ĩ_{n,p}, I_p)`.
    pub fn identity(n: usize, p: usize) -> Self {
        StructurePoint {
            u: OnbPoint::identity(n, p),
            s: SpdMatrix::identity(p),
        }
    }

    /// The represented PSD matrix `U S Uᵀ`.
    pub fn to_psd(&self) -> Mat {
        self.u.as_mat() * self.s.as_mat() * self.u.as_mat().transpose()
    }
}

/// Structure-space configuration: Grassmann weight `λ > 0`, the SPD metric
/// of the shape factor, and the common-subspace step `γ ∈ [0, 1]`.
#[derive(Debug, Clone, Copy)]
pub struct SpsdConfig {
    pub lambda: f64,
    pub spd_metric: SpdMetric,
    pub gamma: f64,
}

impl Default for SpsdConfig {
    fn default() -> Self {
        SpsdConfig {
            lambda: 1.0,
            spd_metric: SpdMetric::ai(0.0),
            gamma: 0.1,
        }
    }
}

impl SpsdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda <= 0.0 {
            return Err(SpsdError::Argument(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(SpsdError::Argument(format!(
                "gamma must lie in [0,1], got {}",
                self.gamma
            )));
        }
        Ok(())
    }
}

/// Persistent common subspace used by the batched distance computation.
#[derive(Debug, Clone, PartialEq)]
pub struct CommonSubspaceState {
    pub u_m: OnbPoint,
}

impl CommonSubspaceState {
    pub fn new(n: usize, p: usize) -> Self {
        CommonSubspaceState {
            u_m: OnbPoint::identity(n, p),
        }
    }
}

/// Top-p eigenpair truncation of a symmetric PSD matrix: `U` spans the
/// leading eigenvectors, `S_raw` is the diagonal of leading eigenvalues.
pub fn spsd_decompose(x: &SymMatrix, p: usize) -> Result<(OnbPoint, SpdMatrix)> {
    let (q, lam) = sym_eig(x)?;
    if p == 0 || p > x.size() {
        return Err(SpsdError::Argument(format!(
            "rank {p} invalid for size {}",
            x.size()
        )));
    }
    let smallest = lam[p - 1];
    if smallest <= 1e-10 {
        return Err(SpsdError::RankDeficient {
            sample: 0,
            p,
            eigenvalue: smallest,
        });
    }
    let u = OnbPoint::new(q.columns(0, p).into_owned())?;
    let s = SpdMatrix::from_mat(Mat::from_fn(p, p, |i, j| if i == j { lam[i] } else { 0.0 }))?;
    Ok((u, s))
}

/// Canonical representation of `X` against the common subspace `W`: from
/// the SVD `U_Xᵀ W = Y cos(Σ) Vᵀ`, the aligned basis is `Ū = U_X Y` and the
/// shape factor `S̄ = V Ūᵀ X Ū Vᵀ`. The output basis `Ū Vᵀ` keeps
/// `U S̄ Uᵀ = X` for exactly rank-p inputs and is invariant to the gauge of
/// `U_X`.
pub fn canonicalize(x: &SymMatrix, u_x: &OnbPoint, w: &OnbPoint) -> Result<StructurePoint> {
    let m = u_x.as_mat().transpose() * w.as_mat();
    let (y, sigma, v) = crate::linalg::svd_thin(&m)?;
    let sigma_min = sigma[sigma.len() - 1];
    if sigma_min < grassmann::CUT_LOCUS_TOL {
        return Err(SpsdError::Alignment { sigma_min });
    }
    let u_bar = u_x.as_mat() * &y;
    let s_bar = &v * (u_bar.transpose() * x.as_mat() * &u_bar) * v.transpose();
    let s = SpdMatrix::from_mat_symmetrize(s_bar)?;
    let u = OnbPoint::new(u_bar * v.transpose())?;
    StructurePoint::new(u, s)
}

/// Componentwise binary operation.
pub fn psd_add(cfg: &SpsdConfig, a: &StructurePoint, b: &StructurePoint) -> Result<StructurePoint> {
    let u = gr_add_onb(&a.u, &b.u)?;
    let s = spd::spd_add(cfg.spd_metric, &a.s, &b.s)?;
    StructurePoint::new(u, s)
}

/// Componentwise inverse.
pub fn psd_inv(cfg: &SpsdConfig, a: &StructurePoint) -> Result<StructurePoint> {
    let u = gr_inv_onb(&a.u)?;
    let s = spd::spd_inv(cfg.spd_metric, &a.s)?;
    StructurePoint::new(u, s)
}

/// `⊖A ⊕ B` componentwise.
pub fn psd_sub(cfg: &SpsdConfig, a: &StructurePoint, b: &StructurePoint) -> Result<StructurePoint> {
    let na = psd_inv(cfg, a)?;
    psd_add(cfg, &na, b)
}

/// Structure-space inner product
/// `λ ⟨U_A U_Aᵀ, U_B U_Bᵀ⟩^gr + ⟨S_A, S_B⟩^g`.
pub fn psd_inner(cfg: &SpsdConfig, a: &StructurePoint, b: &StructurePoint) -> Result<f64> {
    cfg.validate()?;
    let gr = grassmann::gr_inner(&tau(&a.u), &tau(&b.u))?;
    let sp = spd::spd_inner(cfg.spd_metric, &a.s, &b.s)?;
    Ok(cfg.lambda * gr + sp)
}

/// Hypergyroplane in structure space: base point plus a normal given by an
/// ONB point (Grassmann part) and the identity-tangent log of the SPD part.
#[derive(Debug, Clone)]
pub struct SpsdHyperplane {
    pub base: StructurePoint,
    pub normal_u: OnbPoint,
    pub normal_s_log: SymMatrix,
}

impl SpsdHyperplane {
    pub fn new(
        base: StructurePoint,
        normal_u: OnbPoint,
        normal_s_log: SymMatrix,
    ) -> Result<Self> {
        let h = SpsdHyperplane {
            base,
            normal_u,
            normal_s_log,
        };
        if h.normal_norm_sq(&SpsdConfig::default())? < 1e-24 {
            return Err(SpsdError::DegenerateHyperplane);
        }
        Ok(h)
    }

    /// The SPD normal as a point, `S_W`.
    pub fn normal_s(&self, metric: SpdMetric) -> Result<SpdMatrix> {
        Ok(spd::unlift_point(
            metric,
            &spd::lift_tangent(metric, &self.normal_s_log),
        )?)
    }

    /// Log of the Grassmann normal at the identity.
    fn normal_u_tangent(&self) -> Result<GrTangent> {
        let n = self.normal_u.n();
        let p = self.normal_u.p();
        let eye = ProjectorPoint::identity(n, p);
        Ok(log_projector(&eye, &tau(&self.normal_u))?)
    }

    /// `λ (‖U_W U_Wᵀ‖^gr)² + (‖S_W‖^g)²`.
    pub fn normal_norm_sq(&self, cfg: &SpsdConfig) -> Result<f64> {
        let dw = self.normal_u_tangent()?;
        let gr = gr_inner_tangent(&dw, &dw);
        let s_w = self.normal_s(cfg.spd_metric)?;
        let sp = spd::spd_inner(cfg.spd_metric, &s_w, &s_w)?;
        Ok(cfg.lambda * gr + sp)
    }
}

/// Signed numerator of the structure-space pseudo-gyrodistance:
/// `λ ⟨(⊖̃U_P ⊕̃ U_X)(…)ᵀ, U_W U_Wᵀ⟩^gr + ⟨⊖S_P ⊕ S_X, S_W⟩^g`.
pub fn psd_hyperplane_inner(
    cfg: &SpsdConfig,
    x: &StructurePoint,
    h: &SpsdHyperplane,
) -> Result<f64> {
    cfg.validate()?;
    let diff_u = gr_add_onb(&gr_inv_onb(&h.base.u)?, &x.u)?;
    let gr = grassmann::gr_inner(&tau(&diff_u), &tau(&h.normal_u))?;
    let diff_s = spd::spd_sub(cfg.spd_metric, &h.base.s, &x.s)?;
    let s_w = h.normal_s(cfg.spd_metric)?;
    let sp = spd::spd_inner(cfg.spd_metric, &diff_s, &s_w)?;
    Ok(cfg.lambda * gr + sp)
}

/// Pseudo-gyrodistance from `X` to the hypergyroplane (plus signed variant).
pub fn psd_pseudo_gyrodistance(
    cfg: &SpsdConfig,
    x: &StructurePoint,
    h: &SpsdHyperplane,
) -> Result<f64> {
    Ok(psd_signed_pseudo_gyrodistance(cfg, x, h)?.abs())
}

pub fn psd_signed_pseudo_gyrodistance(
    cfg: &SpsdConfig,
    x: &StructurePoint,
    h: &SpsdHyperplane,
) -> Result<f64> {
    let denom_sq = h.normal_norm_sq(cfg)?;
    if denom_sq < 1e-24 {
        return Err(SpsdError::DegenerateHyperplane);
    }
    Ok(psd_hyperplane_inner(cfg, x, h)? / denom_sq.sqrt())
}

/// Fréchet mean of ONB points (fixed-point iteration, at most 100 steps).
pub fn gr_mean(points: &[OnbPoint]) -> Result<OnbPoint> {
    karcher_mean_onb(points, 100).map_err(|e| SpsdError::Mean(e.to_string()))
}

/// Geodesic step from `u` towards `v`.
pub fn gr_geodesic(u: &OnbPoint, v: &OnbPoint, gamma: f64) -> Result<OnbPoint> {
    Ok(geodesic_onb(u, v, gamma)?)
}

/// Batched pseudo-gyrodistances of PSD samples to `C` class hypergyroplanes.
///
/// Follows the staged computation exactly: eigen-truncate every sample to
/// rank p; in training mode move the common subspace a `γ`-step towards the
/// batch Karcher mean (the only state mutation); canonicalize every sample
/// against the (possibly updated) common subspace; evaluate the distance to
/// every class. Evaluation mode leaves the state untouched bit for bit.
pub fn batch_pseudo_gyrodistances(
    cfg: &SpsdConfig,
    xs: &[SymMatrix],
    classes: &[SpsdHyperplane],
    state: &mut CommonSubspaceState,
    training: bool,
    p: usize,
) -> Result<Mat> {
    cfg.validate()?;
    if xs.is_empty() {
        return Err(SpsdError::Argument("empty batch".into()));
    }
    if classes.is_empty() {
        return Err(SpsdError::Argument("no classes".into()));
    }
    let decomposed: Vec<Result<(OnbPoint, SpdMatrix)>> =
        batch::map(xs, |x| spsd_decompose(x, p));
    let mut bases = Vec::with_capacity(xs.len());
    for (i, d) in decomposed.into_iter().enumerate() {
        match d {
            Ok(pair) => bases.push(pair),
            Err(SpsdError::RankDeficient { p, eigenvalue, .. }) => {
                return Err(SpsdError::RankDeficient {
                    sample: i,
                    p,
                    eigenvalue,
                })
            }
            Err(e) => return Err(e),
        }
    }
    if training {
        let us: Vec<OnbPoint> = bases.iter().map(|(u, _)| u.clone()).collect();
        let mean = gr_mean(&us)?;
        state.u_m = gr_geodesic(&state.u_m, &mean, cfg.gamma)?;
    }
    let canonical: Vec<Result<StructurePoint>> = batch::map_range(xs.len(), |i| {
        canonicalize(&xs[i], &bases[i].0, &state.u_m)
    });
    let points = canonical.into_iter().collect::<Result<Vec<_>>>()?;
    let rows: Vec<Result<Vec<f64>>> = batch::map(&points, |pt| {
        classes
            .iter()
            .map(|h| psd_pseudo_gyrodistance(cfg, pt, h))
            .collect()
    });
    let mut out = Mat::zeros(xs.len(), classes.len());
    for (i, row) in rows.into_iter().enumerate() {
        let row = row?;
        for (c, v) in row.into_iter().enumerate() {
            out[(i, c)] = v;
        }
    }
    Ok(out)
}

/// Sampling oracle for the structure-space pseudo-gyrodistance: minimizes
/// `sin(∠XPQ)·d(X,P)` over on-plane points `Q` built from projected random
/// directions, evaluating the angle and distance through the actual gyro
/// operations and the structure-space inner product.
pub fn sampling_pseudo_gyrodistance(
    cfg: &SpsdConfig,
    x: &StructurePoint,
    h: &SpsdHyperplane,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    cfg.validate()?;
    let n = x.u.n();
    let p = x.u.p();
    let metric = cfg.spd_metric;
    // Lift coordinates of the normal: Grassmann B-block and SPD tangent lift.
    let dw = h.normal_u_tangent()?;
    let cw = dw.as_mat().view((0, p), (p, n - p)).into_owned();
    let zw = spd::lift_tangent(metric, &h.normal_s_log);
    let norm_sq = cfg.lambda * cw.dot(&cw) + spd::inner_id_lift(metric, &zw, &zw);
    if norm_sq < 1e-24 {
        return Err(SpsdError::DegenerateHyperplane);
    }
    // Rotation implementing left translation by the base subspace.
    let r_p = grassmann::gyro_rotation(&tau(&h.base.u))?;
    let diff_x = psd_sub(cfg, &h.base, x)?;
    let dx_gr = log_projector(&ProjectorPoint::identity(n, p), &tau(&diff_x.u))?;
    let zx = spd::lift_point(metric, &diff_x.s)?;
    let d_xp = (cfg.lambda * gr_inner_tangent(&dx_gr, &dx_gr)
        + spd::inner_id_lift(metric, &zx, &zx))
    .sqrt();

    let mut rng = crate::rng::rng_for(seed, "spsd/sampling-oracle");
    let eval = |c_dir: &Mat, a_dir: &SymMatrix, best: &mut f64| -> Result<()> {
        let z_dir = spd::lift_tangent(metric, a_dir);
        let coef = (cfg.lambda * c_dir.dot(&cw) + spd::inner_id_lift(metric, &z_dir, &zw))
            / norm_sq;
        let mut c_on = c_dir - cw.scale(coef);
        let mut z_on = z_dir - zw.scale(coef);
        if c_on.norm() + z_on.norm() < 1e-12 {
            return Ok(());
        }
        // Keep the Grassmann leg inside the injectivity radius (largest
        // principal angle below π/2); the gyroangle is invariant under
        // scaling the on-plane direction, so this loses nothing.
        let (_, csv, _) = crate::linalg::svd_thin(&c_on)?;
        if csv[0] > 1.2 {
            let t = 1.2 / csv[0];
            c_on = c_on.scale(t);
            z_on = z_on.scale(t);
        }
        // ONB point of Exp_I of the on-plane Grassmann direction, left
        // translated by the base.
        let mut delta = Mat::zeros(n, n);
        delta.view_mut((0, p), (p, n - p)).copy_from(&c_on);
        delta
            .view_mut((p, 0), (n - p, p))
            .copy_from(&c_on.transpose());
        let comm = &delta * ProjectorPoint::identity(n, p).as_mat()
            - ProjectorPoint::identity(n, p).as_mat() * &delta;
        let v = crate::linalg::mat_exp(&comm).columns(0, p).into_owned();
        let u_q = OnbPoint::new(&r_p * v)?;
        let s_q = spd::spd_add(metric, &h.base.s, &spd::unlift_point(metric, &z_on)?)?;
        let q = StructurePoint::new(u_q, s_q)?;
        let diff_q = psd_sub(cfg, &h.base, &q)?;
        let dq_gr = log_projector(&ProjectorPoint::identity(n, p), &tau(&diff_q.u))?;
        let zq = spd::lift_point(metric, &diff_q.s)?;
        let inner = cfg.lambda * gr_inner_tangent(&dq_gr, &dx_gr)
            + spd::inner_id_lift(metric, &zq, &zx);
        let nq = (cfg.lambda * gr_inner_tangent(&dq_gr, &dq_gr)
            + spd::inner_id_lift(metric, &zq, &zq))
        .sqrt();
        let cosang = inner / (nq * d_xp);
        let sinang = (1.0 - cosang * cosang).max(0.0).sqrt();
        let cand = sinang * d_xp;
        if cand < *best {
            *best = cand;
        }
        Ok(())
    };

    let mut best = f64::INFINITY;
    let mut best_c = crate::rng::standard_normal_mat(&mut rng, p, n - p);
    let mut best_a = crate::rng::sample_sym(&mut rng, p, 1.0);
    let coarse = samples / 5;
    for _ in 0..coarse {
        let c = crate::rng::standard_normal_mat(&mut rng, p, n - p);
        let a = crate::rng::sample_sym(&mut rng, p, 1.0);
        let before = best;
        eval(&c, &a, &mut best)?;
        if best < before {
            best_c = c;
            best_a = a;
        }
    }
    let stages = 14;
    let per_stage = (samples - coarse) / stages;
    let mut radius = 0.7;
    for _ in 0..stages {
        for _ in 0..per_stage {
            let c = &best_c + crate::rng::standard_normal_mat(&mut rng, p, n - p).scale(radius);
            let a = SymMatrix::symmetrize_checked(
                best_a.as_mat() + crate::rng::sample_sym(&mut rng, p, radius).as_mat(),
            )?;
            let before = best;
            eval(&c, &a, &mut best)?;
            if best < before {
                best_c = c;
                best_a = a;
            }
        }
        radius *= 0.55;
    }
    Ok(best)
}

/// Rebuilds a rank-p PSD matrix from a basis and shape (test and pipeline
/// support).
pub fn assemble_psd(u: &OnbPoint, s: &SpdMatrix) -> SymMatrix {
    SymMatrix::symmetrize_checked(u.as_mat() * s.as_mat() * u.as_mat().transpose())
        .expect("finite product")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{rng_for, sample_orthonormal, sample_spd, sample_sym, standard_normal_mat};

    fn random_structure(n: usize, p: usize, seed: u64, spread: f64) -> StructurePoint {
        let mut rng = rng_for(seed, "spsd/tests");
        // Subspace near the identity to stay clear of the cut locus.
        let b = standard_normal_mat(&mut rng, p, n - p).scale(spread);
        let u = grassmann::skew_param_onb(&b, n);
        let s = sample_spd(&mut rng, p, 0.4);
        StructurePoint::new(u, s).unwrap()
    }

    fn random_hyperplane(n: usize, p: usize, seed: u64) -> SpsdHyperplane {
        let mut rng = rng_for(seed, "spsd/tests/hp");
        let base = random_structure(n, p, seed.wrapping_add(77), 0.3);
        let bw = standard_normal_mat(&mut rng, p, n - p).scale(0.4);
        let normal_u = grassmann::skew_param_onb(&bw, n);
        let normal_s_log = sample_sym(&mut rng, p, 0.5);
        SpsdHyperplane::new(base, normal_u, normal_s_log).unwrap()
    }

    #[test]
    fn decompose_identity_block() {
        let n = 5;
        let p = 2;
        let x = SymMatrix::new(ProjectorPoint::identity(n, p).as_mat().clone()).unwrap();
        let (u, s) = spsd_decompose(&x, p).unwrap();
        assert!((tau(&u).as_mat() - ProjectorPoint::identity(n, p).as_mat()).norm() < 1e-10);
        assert!((s.as_mat() - Mat::identity(p, p)).norm() < 1e-12);
    }

    #[test]
    fn decompose_recovers_eigenvalues_and_truncates() {
        let mut rng = rng_for(1, "spsd/dec");
        let u0 = sample_orthonormal(&mut rng, 6, 2);
        let d = Mat::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 2.0]);
        let x = SymMatrix::symmetrize_checked(&u0 * d * u0.transpose()).unwrap();
        let (u, s) = spsd_decompose(&x, 2).unwrap();
        assert!((s[(0, 0)] - 3.0).abs() < 1e-10 && (s[(1, 1)] - 2.0).abs() < 1e-10);
        let rec = assemble_psd(&u, &s);
        assert!((rec.as_mat() - x.as_mat()).norm() < 1e-9);
        // Truncation error bounded by the next eigenvalue.
        let noise = sample_spd(&mut rng, 6, 0.1);
        let y = SymMatrix::symmetrize_checked(x.as_mat() * 10.0 + noise.as_mat()).unwrap();
        let (uy, sy) = spsd_decompose(&y, 2).unwrap();
        let (_, lam) = sym_eig(&y).unwrap();
        let rec = assemble_psd(&uy, &sy);
        let err = (rec.as_mat() - y.as_mat()).norm();
        let tail: f64 = (2..6).map(|i| lam[i] * lam[i]).sum::<f64>().sqrt();
        assert!(err <= tail * (1.0 + 1e-8) + 1e-9);
    }

    #[test]
    fn decompose_rank_error() {
        let x = SymMatrix::new(ProjectorPoint::identity(5, 2).as_mat().clone()).unwrap();
        assert!(matches!(
            spsd_decompose(&x, 3),
            Err(SpsdError::RankDeficient { .. })
        ));
    }

    #[test]
    fn canonicalize_same_subspace_keeps_eigenvalues() {
        let n = 6;
        let p = 2;
        let sp = random_structure(n, p, 2, 0.4);
        let x = assemble_psd(&sp.u, &sp.s);
        let c = canonicalize(&x, &sp.u, &sp.u).unwrap();
        let (_, lam_c) = sym_eig(c.s.as_sym()).unwrap();
        let (_, lam_s) = sym_eig(sp.s.as_sym()).unwrap();
        assert!((lam_c - lam_s).norm() < 1e-9);
        assert!((c.to_psd() - x.as_mat()).norm() < 1e-9);
    }

    #[test]
    fn canonicalize_gauge_invariance_and_trace() {
        let n = 6;
        let p = 2;
        let sp = random_structure(n, p, 3, 0.5);
        let x = assemble_psd(&sp.u, &sp.s);
        let w = random_structure(n, p, 4, 0.3).u;
        let base = canonicalize(&x, &sp.u, &w).unwrap();
        let mut rng = rng_for(5, "spsd/gauge");
        let r = sample_orthonormal(&mut rng, p, p);
        let gauged_u = OnbPoint::new(sp.u.as_mat() * &r).unwrap();
        let gauged = canonicalize(&x, &gauged_u, &w).unwrap();
        assert!((base.s.as_mat() - gauged.s.as_mat()).norm() < 1e-9);
        assert!((base.s.as_mat().trace() - x.as_mat().trace()).abs() < 1e-9);
    }

    #[test]
    fn add_identity_and_cancellation() {
        let cfg = SpsdConfig::default();
        let n = 6;
        let p = 2;
        let a = random_structure(n, p, 6, 0.4);
        let eye = StructurePoint::identity(n, p);
        let r = psd_add(&cfg, &eye, &a).unwrap();
        assert!((r.u.as_mat() - a.u.as_mat()).norm() < 1e-9);
        assert!((r.s.as_mat() - a.s.as_mat()).norm() < 1e-9);

        // ⊖A ⊕ A reaches the identity element (subspace equality).
        let na = psd_inv(&cfg, &a).unwrap();
        let id = psd_add(&cfg, &na, &a).unwrap();
        assert!(grassmann::subspace_distance(&id.u, &eye.u).unwrap() < 1e-8);
        assert!((id.s.as_mat() - Mat::identity(p, p)).norm() < 1e-8);
    }

    #[test]
    fn inner_matches_component_oracle_and_lambda_scaling() {
        let n = 6;
        let p = 2;
        let a = random_structure(n, p, 7, 0.4);
        let b = random_structure(n, p, 8, 0.4);
        let cfg = SpsdConfig::default();
        let v1 = psd_inner(&cfg, &a, &b).unwrap();
        // Component oracle: λ·(½ Tr Δ₁Δ₂) + Tr(log S₁ log S₂).
        let eye = ProjectorPoint::identity(n, p);
        let d1 = log_projector(&eye, &tau(&a.u)).unwrap();
        let d2 = log_projector(&eye, &tau(&b.u)).unwrap();
        let gr = 0.5 * (d1.as_mat() * d2.as_mat()).trace();
        let l1 = crate::linalg::spd_fn(a.s.as_sym(), crate::linalg::SpdFnTag::Log).unwrap();
        let l2 = crate::linalg::spd_fn(b.s.as_sym(), crate::linalg::SpdFnTag::Log).unwrap();
        let sp = l1.as_mat().dot(l2.as_mat());
        assert!((v1 - (gr + sp)).abs() < 1e-9);

        let cfg2 = SpsdConfig {
            lambda: 2.0,
            ..SpsdConfig::default()
        };
        let v2 = psd_inner(&cfg2, &a, &b).unwrap();
        assert!((v2 - (2.0 * gr + sp)).abs() < 1e-9);

        // Identity subspace kills the Grassmann term.
        let mut rng = rng_for(9, "spsd/inner");
        let c = StructurePoint::new(OnbPoint::identity(n, p), sample_spd(&mut rng, p, 0.4))
            .unwrap();
        let v3 = psd_inner(&cfg, &c, &b).unwrap();
        let lc = crate::linalg::spd_fn(c.s.as_sym(), crate::linalg::SpdFnTag::Log).unwrap();
        assert!((v3 - lc.as_mat().dot(l2.as_mat())).abs() < 1e-9);
    }

    #[test]
    fn distance_reductions() {
        let cfg = SpsdConfig::default();
        let n = 5;
        let p = 2;
        let x = random_structure(n, p, 10, 0.4);
        let base = random_structure(n, p, 11, 0.3);
        let mut rng = rng_for(12, "spsd/red");
        let a_s = sample_sym(&mut rng, p, 0.6);

        // Grassmann normal at the identity: pure SPD distance.
        let h = SpsdHyperplane::new(base.clone(), OnbPoint::identity(n, p), a_s.clone()).unwrap();
        let d = psd_pseudo_gyrodistance(&cfg, &x, &h).unwrap();
        let spd_h = spd::SpdHyperplane::new(base.s.clone(), a_s.clone()).unwrap();
        let d_spd = spd::pseudo_gyrodistance(cfg.spd_metric, &x.s, &spd_h).unwrap();
        assert!((d - d_spd).abs() < 1e-9, "{d} vs {d_spd}");

        // SPD normal at the identity: pure Grassmann term.
        let bw = standard_normal_mat(&mut rng, p, n - p).scale(0.4);
        let normal_u = grassmann::skew_param_onb(&bw, n);
        let h = SpsdHyperplane::new(base.clone(), normal_u.clone(), SymMatrix::zeros(p)).unwrap();
        let d = psd_pseudo_gyrodistance(&cfg, &x, &h).unwrap();
        let diff_u = gr_add_onb(&gr_inv_onb(&base.u).unwrap(), &x.u).unwrap();
        let num = grassmann::gr_inner(&tau(&diff_u), &tau(&normal_u)).unwrap();
        let eye = ProjectorPoint::identity(n, p);
        let dw = log_projector(&eye, &tau(&normal_u)).unwrap();
        let den = gr_inner_tangent(&dw, &dw).sqrt();
        assert!((d - (cfg.lambda * num).abs() / (cfg.lambda.sqrt() * den)).abs() < 1e-9);

        // The base point lies on every hyperplane through it.
        let h = random_hyperplane(n, p, 13);
        let d = psd_pseudo_gyrodistance(&cfg, &h.base.clone(), &h).unwrap();
        assert!(d.abs() < 1e-9);
    }

    #[test]
    fn degenerate_hyperplane_rejected() {
        let n = 5;
        let p = 2;
        let base = StructurePoint::identity(n, p);
        assert!(matches!(
            SpsdHyperplane::new(base, OnbPoint::identity(n, p), SymMatrix::zeros(p)),
            Err(SpsdError::DegenerateHyperplane)
        ));
    }

    #[test]
    fn distance_matches_sampling_oracle() {
        let cfg = SpsdConfig::default();
        let x = random_structure(4, 2, 14, 0.4);
        let h = random_hyperplane(4, 2, 15);
        let exact = psd_pseudo_gyrodistance(&cfg, &x, &h).unwrap();
        let sampled = sampling_pseudo_gyrodistance(&cfg, &x, &h, 20_000, 7).unwrap();
        assert!(
            (sampled - exact).abs() <= 0.02 * exact.abs().max(1e-12),
            "exact {exact} sampled {sampled}"
        );
    }

    #[test]
    fn batch_matches_scalar_loop_and_freezes_eval_state() {
        let cfg = SpsdConfig::default();
        let n = 6;
        let p = 2;
        let mut rng = rng_for(16, "spsd/batch");
        let xs: Vec<SymMatrix> = (0..16)
            .map(|k| {
                let sp = random_structure(n, p, 160 + k, 0.4);
                let full = assemble_psd(&sp.u, &sp.s);
                // Full-rank PSD with a dominant rank-p part.
                let bump = sample_spd(&mut rng, n, 0.05);
                SymMatrix::symmetrize_checked(full.as_mat() * 10.0 + bump.as_mat()).unwrap()
            })
            .collect();
        let classes: Vec<SpsdHyperplane> =
            (0..3).map(|c| random_hyperplane(n, p, 300 + c)).collect();

        let mut state = CommonSubspaceState::new(n, p);
        let d = batch_pseudo_gyrodistances(&cfg, &xs, &classes, &mut state, true, p).unwrap();

        // Scalar loop with the already-updated state must agree to 1e-10.
        let mut loop_state = CommonSubspaceState::new(n, p);
        let us: Vec<OnbPoint> = xs
            .iter()
            .map(|x| spsd_decompose(x, p).unwrap().0)
            .collect();
        let mean = gr_mean(&us).unwrap();
        loop_state.u_m = gr_geodesic(&loop_state.u_m, &mean, cfg.gamma).unwrap();
        assert!((loop_state.u_m.as_mat() - state.u_m.as_mat()).norm() < 1e-12);
        for (i, x) in xs.iter().enumerate() {
            let (u, _) = spsd_decompose(x, p).unwrap();
            let pt = canonicalize(x, &u, &loop_state.u_m).unwrap();
            for (c, h) in classes.iter().enumerate() {
                let v = psd_pseudo_gyrodistance(&cfg, &pt, h).unwrap();
                assert!((v - d[(i, c)]).abs() < 1e-10, "sample {i} class {c}");
            }
        }

        // Evaluation leaves the state bit-identical.
        let before = state.clone();
        let _ = batch_pseudo_gyrodistances(&cfg, &xs, &classes, &mut state, false, p).unwrap();
        assert_eq!(before, state);
    }

    #[test]
    fn mean_of_identical_inputs_is_instant() {
        let u = random_structure(6, 2, 17, 0.4).u;
        let m = gr_mean(&[u.clone(), u.clone()]).unwrap();
        assert!(grassmann::subspace_distance(&m, &u).unwrap() < 1e-10);
        let g = gr_geodesic(&u, &u, 0.0).unwrap();
        assert!((g.as_mat() - u.as_mat()).norm() < 1e-12);
    }
}
