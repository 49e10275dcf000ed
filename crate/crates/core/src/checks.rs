//! Executable property suites: gyrogroup axioms, basis orthonormality,
//! Grassmann log equivalences, structure-space identities and layer
//! gradient checks. The command-line `check` subcommand runs these and the
//! acceptance tests reuse them with their gate parameters.

use crate::grassmann::{self, OnbPoint};
use rand::Rng;
use crate::linalg::{Mat, SpdMatrix, SymMatrix};
use crate::nn::{gradcheck_layer, GRADCHECK_TARGETS};
use crate::rng::{rng_for, sample_spd, sample_sym, standard_normal_mat};
use crate::spd::{self, SpdMetric};
use crate::spsd::{self, CommonSubspaceState, SpsdConfig, SpsdHyperplane, StructurePoint};

/// One property evaluation: a residual against its tolerance.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub suite: &'static str,
    pub name: String,
    pub residual: f64,
    pub tolerance: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.residual.is_finite() && self.residual <= self.tolerance
    }

    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{}\n",
            self.suite,
            self.name,
            self.residual,
            self.tolerance,
            if self.passed() { "pass" } else { "FAIL" }
        )
    }
}

pub const SUITES: [&str; 5] = ["gyro", "basis", "grassmann", "spsd", "grad"];

pub fn run_suite(suite: &str, seed: u64) -> Result<Vec<CheckResult>, String> {
    match suite {
        "gyro" => Ok(gyro_suite(seed, 100)),
        "basis" => Ok(basis_suite()),
        "grassmann" => Ok(grassmann_suite(seed, 200)),
        "spsd" => Ok(spsd_suite(seed)),
        "grad" => Ok(grad_suite(seed, 2)),
        "all" => {
            let mut out = Vec::new();
            for s in SUITES {
                out.extend(run_suite(s, seed)?);
            }
            Ok(out)
        }
        other => Err(format!(
            "unknown suite '{other}' (expected all|{})",
            SUITES.join("|")
        )),
    }
}

fn rel_residual(lhs: &Mat, rhs: &Mat) -> f64 {
    (lhs - rhs).norm() / rhs.norm().max(1.0)
}

const GYRO_METRICS: [SpdMetric; 3] = [
    SpdMetric::AffineInvariant { beta: 0.0 },
    SpdMetric::LogEuclidean,
    SpdMetric::LogCholesky,
];

/// Gyrogroup axioms over random SPD tuples plus the Exp/transport
/// consistency of the binary operation.
pub fn gyro_suite(seed: u64, tuples: usize) -> Vec<CheckResult> {
    let n = 5;
    let mut out = Vec::new();
    for metric in GYRO_METRICS {
        let mut rng = rng_for(seed, &format!("checks/gyro/{}", metric.tag()));
        let eye = SpdMatrix::identity(n);
        let mut worst = [0.0f64; 7];
        for _ in 0..tuples {
            let a = sample_spd(&mut rng, n, 0.4);
            let b = sample_spd(&mut rng, n, 0.4);
            let c = sample_spd(&mut rng, n, 0.4);
            let run = |r: Result<f64, crate::spd::SpdError>| r.unwrap_or(f64::INFINITY);

            // Left identity: I ⊕ A = A.
            worst[0] = worst[0].max(run(
                spd::spd_add(metric, &eye, &a).map(|x| rel_residual(x.as_mat(), a.as_mat())),
            ));
            // Left inverse: ⊖A ⊕ A = I.
            worst[1] = worst[1].max(run(
                spd::spd_sub(metric, &a, &a).map(|x| rel_residual(x.as_mat(), eye.as_mat())),
            ));
            // Left cancellation: ⊖A ⊕ (A ⊕ B) = B.
            worst[2] = worst[2].max(run(spd::spd_add(metric, &a, &b).and_then(|ab| {
                spd::spd_sub(metric, &a, &ab).map(|x| rel_residual(x.as_mat(), b.as_mat()))
            })));
            // Left gyroassociativity: A ⊕ (B ⊕ C) = (A ⊕ B) ⊕ gyr[A,B]C.
            worst[3] = worst[3].max(run((|| {
                let bc = spd::spd_add(metric, &b, &c)?;
                let lhs = spd::spd_add(metric, &a, &bc)?;
                let ab = spd::spd_add(metric, &a, &b)?;
                let gyr = spd::gyration(metric, &a, &b, &c)?;
                let rhs = spd::spd_add(metric, &ab, &gyr)?;
                Ok(rel_residual(lhs.as_mat(), rhs.as_mat()))
            })()));
            // Left reduction: gyr[A,B] = gyr[A⊕B, B].
            worst[4] = worst[4].max(run((|| {
                let lhs = spd::gyration(metric, &a, &b, &c)?;
                let ab = spd::spd_add(metric, &a, &b)?;
                let rhs = spd::gyration(metric, &ab, &b, &c)?;
                Ok(rel_residual(lhs.as_mat(), rhs.as_mat()))
            })()));
            // Gyrocommutativity: A ⊕ B = gyr[A,B](B ⊕ A).
            worst[5] = worst[5].max(run((|| {
                let lhs = spd::spd_add(metric, &a, &b)?;
                let ba = spd::spd_add(metric, &b, &a)?;
                let rhs = spd::gyration(metric, &a, &b, &ba)?;
                Ok(rel_residual(lhs.as_mat(), rhs.as_mat()))
            })()));
            // Binary op agrees with Exp ∘ transport ∘ Log.
            worst[6] = worst[6].max(run((|| {
                let direct = spd::spd_add(metric, &a, &b)?;
                let composite = spd::add_via_exp_transport(metric, &a, &b)?;
                Ok(rel_residual(direct.as_mat(), composite.as_mat()))
            })()));
        }
        let names = [
            "left-identity",
            "left-inverse",
            "left-cancellation",
            "left-gyroassociativity",
            "left-reduction",
            "gyrocommutativity",
            "exp-transport-consistency",
        ];
        for (name, residual) in names.iter().zip(worst.iter()) {
            out.push(CheckResult {
                suite: "gyro",
                name: format!("{}/{name}", metric.tag()),
                residual: *residual,
                tolerance: 1e-8,
            });
        }
    }
    out
}

/// Basis orthonormality and the FC identity theorem.
pub fn basis_suite() -> Vec<CheckResult> {
    let mut out = Vec::new();
    let metrics = [
        SpdMetric::AffineInvariant { beta: 0.0 },
        SpdMetric::AffineInvariant { beta: 0.5 },
        SpdMetric::AffineInvariant { beta: -0.1 },
        SpdMetric::LogEuclidean,
        SpdMetric::LogCholesky,
    ];
    for metric in metrics {
        let mut worst = 0.0f64;
        for m in 2..=6 {
            if let Ok(basis) = spd::spd_basis(metric, m) {
                let elems = basis.elements();
                for a in 0..elems.len() {
                    for b in a..elems.len() {
                        let v = spd::spd_inner(metric, &elems[a], &elems[b]).unwrap_or(f64::NAN);
                        let expected = if a == b { 1.0 } else { 0.0 };
                        worst = worst.max((v - expected).abs());
                    }
                }
            } else {
                worst = f64::INFINITY;
            }
        }
        let label = if metric.beta() != 0.0 {
            format!("{}(beta={})/orthonormality", metric.tag(), metric.beta())
        } else {
            format!("{}/orthonormality", metric.tag())
        };
        out.push(CheckResult {
            suite: "basis",
            name: label,
            residual: worst,
            tolerance: 1e-10,
        });
    }
    for metric in GYRO_METRICS {
        let mut worst = 0.0f64;
        for n in [3usize, 5, 8] {
            let mut rng = rng_for(11, &format!("checks/fcid/{}/{n}", metric.tag()));
            let x = sample_spd(&mut rng, n, 0.5);
            let residual = spd::SpdFcParams::identity(metric, n, n)
                .and_then(|params| spd::fc_forward(metric, &x, &params))
                .map(|y| rel_residual(y.as_mat(), x.as_mat()))
                .unwrap_or(f64::INFINITY);
            worst = worst.max(residual);
        }
        out.push(CheckResult {
            suite: "basis",
            name: format!("{}/fc-identity", metric.tag()),
            residual: worst,
            tolerance: 1e-8,
        });
    }
    out
}

/// Random ONB pair with principal angles at most `max_angle`.
fn angle_bounded_pair(
    rng: &mut impl rand::Rng,
    n: usize,
    p: usize,
    max_angle: f64,
) -> (OnbPoint, OnbPoint) {
    let u = OnbPoint::new(crate::rng::sample_orthonormal(rng, n, p)).expect("orthonormal");
    let g = standard_normal_mat(rng, n, p);
    let horiz = &g - u.as_mat() * (u.as_mat().transpose() * &g);
    // Cap the largest principal angle: the spectral norm of the tangent.
    let (_, sigma, _) = crate::linalg::svd_thin(&horiz).expect("svd");
    let spectral = sigma[0].max(1e-12);
    let target = max_angle * rng.gen::<f64>();
    let v = grassmann::exp_onb(&u, &horiz.scale(target / spectral)).expect("exp");
    (u, v)
}

/// Projector-log equivalence, gauge invariance and Exp/Log roundtrips.
pub fn grassmann_suite(seed: u64, pairs: usize) -> Vec<CheckResult> {
    let mut rng = rng_for(seed, "checks/grassmann");
    let mut worst_equiv = 0.0f64;
    let mut worst_gauge = 0.0f64;
    let mut worst_roundtrip = 0.0f64;
    for _ in 0..pairs {
        let n = 4 + (rng.gen::<u64>() % 5) as usize; // 4..=8
        let p = 1 + (rng.gen::<u64>() % (n.min(5) as u64 - 1)) as usize; // 1..=min(4, n-1)
        let max_angle = std::f64::consts::FRAC_PI_2 - 0.1;
        let (u, v) = angle_bounded_pair(&mut rng, n, p, max_angle);
        let pp = grassmann::tau(&u);
        let qq = grassmann::tau(&v);
        let conv = grassmann::log_projector(&pp, &qq);
        let direct = grassmann::log_projector_direct(&pp, &qq);
        match (&conv, &direct) {
            (Ok(a), Ok(b)) => {
                worst_equiv = worst_equiv.max((a.as_mat() - b.as_mat()).norm());
            }
            _ => worst_equiv = f64::INFINITY,
        }
        // Gauge invariance of the ONB-path log.
        if let Ok(base) = grassmann::log_projector_with_basis(&u, &v) {
            let r = crate::rng::sample_orthonormal(&mut rng, p, p);
            let ur = OnbPoint::new(u.as_mat() * r).expect("gauge");
            match grassmann::log_projector_with_basis(&ur, &v) {
                Ok(g) => worst_gauge = worst_gauge.max((base.as_mat() - g.as_mat()).norm()),
                Err(_) => worst_gauge = f64::INFINITY,
            }
            // Exp ∘ Log roundtrip.
            match conv.and_then(|d| grassmann::exp_projector(&pp, &d)) {
                Ok(back) => {
                    worst_roundtrip = worst_roundtrip.max((back.as_mat() - qq.as_mat()).norm())
                }
                Err(_) => worst_roundtrip = f64::INFINITY,
            }
        } else {
            worst_gauge = f64::INFINITY;
        }
    }
    vec![
        CheckResult {
            suite: "grassmann",
            name: "projector-log-equivalence".into(),
            residual: worst_equiv,
            tolerance: 1e-6,
        },
        CheckResult {
            suite: "grassmann",
            name: "gauge-invariance".into(),
            residual: worst_gauge,
            tolerance: 1e-9,
        },
        CheckResult {
            suite: "grassmann",
            name: "exp-log-roundtrip".into(),
            residual: worst_roundtrip,
            tolerance: 1e-8,
        },
    ]
}

fn structure_sample(rng: &mut impl rand::Rng, n: usize, p: usize, spread: f64) -> StructurePoint {
    let b = standard_normal_mat(rng, p, n - p).scale(spread);
    let u = grassmann::skew_param_onb(&b, n);
    let s = sample_spd(rng, p, 0.4);
    StructurePoint::new(u, s).expect("structure point")
}

/// Structure-space identities: componentwise gyrogroup laws, distance
/// reductions, batch/loop agreement, state freezing.
pub fn spsd_suite(seed: u64) -> Vec<CheckResult> {
    let cfg = SpsdConfig::default();
    let (n, p) = (5usize, 2usize);
    let mut rng = rng_for(seed, "checks/spsd");
    let mut out = Vec::new();

    let mut worst_id = 0.0f64;
    let mut worst_inv = 0.0f64;
    let mut worst_cancel = 0.0f64;
    for _ in 0..50 {
        let a = structure_sample(&mut rng, n, p, 0.4);
        let b = structure_sample(&mut rng, n, p, 0.4);
        let eye = StructurePoint::identity(n, p);
        if let Ok(r) = spsd::psd_add(&cfg, &eye, &a) {
            let du = grassmann::subspace_distance(&r.u, &a.u).unwrap_or(f64::INFINITY);
            worst_id = worst_id
                .max(du)
                .max(rel_residual(r.s.as_mat(), a.s.as_mat()));
        } else {
            worst_id = f64::INFINITY;
        }
        if let Ok(r) = spsd::psd_sub(&cfg, &a, &a) {
            let du = grassmann::subspace_distance(&r.u, &eye.u).unwrap_or(f64::INFINITY);
            worst_inv = worst_inv
                .max(du)
                .max(rel_residual(r.s.as_mat(), &Mat::identity(p, p)));
        } else {
            worst_inv = f64::INFINITY;
        }
        let cancel = spsd::psd_add(&cfg, &a, &b)
            .and_then(|ab| spsd::psd_sub(&cfg, &a, &ab))
            .map(|r| {
                grassmann::subspace_distance(&r.u, &b.u)
                    .unwrap_or(f64::INFINITY)
                    .max(rel_residual(r.s.as_mat(), b.s.as_mat()))
            })
            .unwrap_or(f64::INFINITY);
        worst_cancel = worst_cancel.max(cancel);
    }
    out.push(CheckResult {
        suite: "spsd",
        name: "left-identity".into(),
        residual: worst_id,
        tolerance: 1e-8,
    });
    out.push(CheckResult {
        suite: "spsd",
        name: "left-inverse".into(),
        residual: worst_inv,
        tolerance: 1e-8,
    });
    out.push(CheckResult {
        suite: "spsd",
        name: "left-cancellation".into(),
        residual: worst_cancel,
        tolerance: 1e-8,
    });

    // Reduction identities: Grassmann-only and SPD-only normals.
    let x = structure_sample(&mut rng, n, p, 0.4);
    let base = structure_sample(&mut rng, n, p, 0.3);
    let a_s = sample_sym(&mut rng, p, 0.6);
    let spd_only = SpsdHyperplane::new(base.clone(), OnbPoint::identity(n, p), a_s.clone())
        .map_err(|e| e.to_string());
    let reduction_spd = match spd_only {
        Ok(h) => {
            let d = spsd::psd_pseudo_gyrodistance(&cfg, &x, &h).unwrap_or(f64::NAN);
            let spd_h = spd::SpdHyperplane::new(base.s.clone(), a_s).expect("normal");
            let d_spd =
                spd::pseudo_gyrodistance(cfg.spd_metric, &x.s, &spd_h).unwrap_or(f64::NAN);
            (d - d_spd).abs()
        }
        Err(_) => f64::INFINITY,
    };
    out.push(CheckResult {
        suite: "spsd",
        name: "reduction-spd-only".into(),
        residual: reduction_spd,
        tolerance: 1e-10,
    });

    // Batch vs scalar loop.
    let xs: Vec<SymMatrix> = (0..8)
        .map(|_| {
            let sp = structure_sample(&mut rng, n, p, 0.4);
            let full = spsd::assemble_psd(&sp.u, &sp.s);
            let bump = sample_spd(&mut rng, n, 0.05);
            SymMatrix::symmetrize_checked(full.as_mat() * 10.0 + bump.as_mat()).expect("psd")
        })
        .collect();
    let classes: Vec<SpsdHyperplane> = (0..2)
        .map(|_| {
            let bw = standard_normal_mat(&mut rng, p, n - p).scale(0.4);
            SpsdHyperplane::new(
                structure_sample(&mut rng, n, p, 0.3),
                grassmann::skew_param_onb(&bw, n),
                sample_sym(&mut rng, p, 0.5),
            )
            .expect("hyperplane")
        })
        .collect();
    let mut state = CommonSubspaceState::new(n, p);
    let batch_loop_residual = (|| -> Result<f64, String> {
        let d = spsd::batch_pseudo_gyrodistances(&cfg, &xs, &classes, &mut state, true, p)
            .map_err(|e| e.to_string())?;
        let mut loop_state = CommonSubspaceState::new(n, p);
        let us: Vec<OnbPoint> = xs
            .iter()
            .map(|x| spsd::spsd_decompose(x, p).map(|(u, _)| u))
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        let mean = spsd::gr_mean(&us).map_err(|e| e.to_string())?;
        loop_state.u_m =
            spsd::gr_geodesic(&loop_state.u_m, &mean, cfg.gamma).map_err(|e| e.to_string())?;
        let mut worst = (loop_state.u_m.as_mat() - state.u_m.as_mat()).norm();
        for (i, x) in xs.iter().enumerate() {
            let (u, _) = spsd::spsd_decompose(x, p).map_err(|e| e.to_string())?;
            let pt = spsd::canonicalize(x, &u, &loop_state.u_m).map_err(|e| e.to_string())?;
            for (c, h) in classes.iter().enumerate() {
                let v = spsd::psd_pseudo_gyrodistance(&cfg, &pt, h).map_err(|e| e.to_string())?;
                worst = worst.max((v - d[(i, c)]).abs());
            }
        }
        Ok(worst)
    })()
    .unwrap_or(f64::INFINITY);
    out.push(CheckResult {
        suite: "spsd",
        name: "batch-equals-loop".into(),
        residual: batch_loop_residual,
        tolerance: 1e-10,
    });

    // Evaluation freezes the state bit for bit.
    let frozen = state.clone();
    let freeze_residual =
        match spsd::batch_pseudo_gyrodistances(&cfg, &xs, &classes, &mut state, false, p) {
            Ok(_) => {
                if frozen == state {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            Err(_) => f64::INFINITY,
        };
    out.push(CheckResult {
        suite: "spsd",
        name: "eval-freezes-state".into(),
        residual: freeze_residual,
        tolerance: 0.0,
    });

    // Canonical representation: gauge invariance of the shape factor.
    let sp = structure_sample(&mut rng, n, p, 0.5);
    let full = spsd::assemble_psd(&sp.u, &sp.s);
    let w = structure_sample(&mut rng, n, p, 0.3).u;
    let gauge_residual = (|| -> Option<f64> {
        let base = spsd::canonicalize(&full, &sp.u, &w).ok()?;
        let r = crate::rng::sample_orthonormal(&mut rng, p, p);
        let gauged_u = OnbPoint::new(sp.u.as_mat() * r).ok()?;
        let gauged = spsd::canonicalize(&full, &gauged_u, &w).ok()?;
        Some((base.s.as_mat() - gauged.s.as_mat()).norm())
    })()
    .unwrap_or(f64::INFINITY);
    out.push(CheckResult {
        suite: "spsd",
        name: "canonicalize-gauge-invariance".into(),
        residual: gauge_residual,
        tolerance: 1e-9,
    });

    out
}

/// Finite-difference checks of every layer at a few seeds.
pub fn grad_suite(seed: u64, seeds_per_target: u64) -> Vec<CheckResult> {
    let mut out = Vec::new();
    for target in GRADCHECK_TARGETS {
        let mut worst = 0.0f64;
        for k in 0..seeds_per_target {
            let err = gradcheck_layer(target, seed.wrapping_add(k)).unwrap_or(f64::INFINITY);
            worst = worst.max(err);
        }
        out.push(CheckResult {
            suite: "grad",
            name: target.to_string(),
            residual: worst,
            tolerance: 1e-3,
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basis_suite_passes() {
        for r in basis_suite() {
            assert!(r.passed(), "{}/{}: {}", r.suite, r.name, r.residual);
        }
    }

    #[test]
    fn gyro_suite_small_sample_passes() {
        for r in gyro_suite(5, 10) {
            assert!(r.passed(), "{}/{}: {}", r.suite, r.name, r.residual);
        }
    }

    #[test]
    fn grassmann_suite_small_sample_passes() {
        for r in grassmann_suite(5, 25) {
            assert!(r.passed(), "{}/{}: {}", r.suite, r.name, r.residual);
        }
    }

    #[test]
    fn spsd_suite_passes() {
        for r in spsd_suite(5) {
            assert!(r.passed(), "{}/{}: {}", r.suite, r.name, r.residual);
        }
    }

    #[test]
    fn suites_are_deterministic() {
        let a = gyro_suite(9, 5);
        let b = gyro_suite(9, 5);
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x.residual.to_bits(), y.residual.to_bits());
        }
    }
}
