//! Trainable layers, heads, losses, optimizer and the reference models.
//!
//! Every trainable parameter lives in an unconstrained space: symmetric
//! matrices map onto SPD points through the metric's exponential at the
//! identity, and p×(n−p) blocks map onto Grassmann points through the skew
//! embedding. Manifold constraints therefore hold by construction after
//! every optimizer step.
//!
//! Per-sample losses are evaluated on independent tapes (safe to fan out
//! over threads); gradient sums and parameter updates are sequential and
//! in index order, so training is bit-reproducible for a fixed seed.

mod gcn;
mod gradcheck;
mod spd_net;

pub use gcn::{GcnConfig, GcnPerspective, GrGcn};
pub use gradcheck::{gradcheck_layer, GRADCHECK_TARGETS};
pub use spd_net::{as_singleton_sequences, GyroSpdNet, GyroSpsdNet, SpdNetConfig, SpdSample, SpsdHeadConfig};

pub use crate::data::{Graph, Split};

use std::path::Path;

use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::linalg::{self, LinalgError, Mat, SpdMatrix, SymMatrix};
use crate::spd::{self, SpdError, SpdMetric};

#[derive(Debug, Error)]
pub enum NnError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Spd(#[from] SpdError),
    #[error(transparent)]
    Grassmann(#[from] crate::grassmann::GrError),
    #[error(transparent)]
    Spsd(#[from] crate::spsd::SpsdError),
    #[error(transparent)]
    Data(#[from] crate::data::DataError),
    #[error("label {label} out of range for {classes} classes")]
    BadLabel { label: usize, classes: usize },
    #[error("cut locus at node {node}: {source}")]
    NodeCutLocus {
        node: usize,
        source: AutodiffError,
    },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, NnError>;

/// One metrics row: epoch, split, loss, accuracy, wall time in seconds.
/// Wall time is reported on stdout only; the metrics CSV stays
/// byte-deterministic.
#[derive(Debug, Clone)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub split: &'static str,
    pub loss: f64,
    pub accuracy: f64,
    pub wall_time: f64,
}

impl MetricsRecord {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{}\n",
            self.epoch, self.split, self.loss, self.accuracy
        )
    }
}

pub const METRICS_CSV_HEADER: &str = "epoch,split,loss,accuracy\n";

/// Outcome of a training run.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub records: Vec<MetricsRecord>,
    pub final_train_accuracy: f64,
    pub final_test_accuracy: f64,
}

/// Plain cross-entropy of raw logits.
pub fn cross_entropy(logits: &[f64], label: usize) -> Result<f64> {
    if label >= logits.len() {
        return Err(NnError::BadLabel {
            label,
            classes: logits.len(),
        });
    }
    let m = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let lse = m + logits.iter().map(|&z| (z - m).exp()).sum::<f64>().ln();
    Ok(lse - logits[label])
}

pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Named flat parameter storage. Order is fixed at construction; gradients
/// and optimizer state index into it positionally.
#[derive(Debug, Clone)]
pub struct ParamSet {
    entries: Vec<(String, Mat)>,
}

impl Default for ParamSet {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet {
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, value: Mat) -> usize {
        self.entries.push((name.into(), value));
        self.entries.len() - 1
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn value(&self, idx: usize) -> &Mat {
        &self.entries[idx].1
    }

    pub fn value_mut(&mut self, idx: usize) -> &mut Mat {
        &mut self.entries[idx].1
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.entries[idx].0
    }

    pub fn values(&self) -> impl Iterator<Item = &Mat> {
        self.entries.iter().map(|(_, m)| m)
    }

    /// Registers every parameter as a leaf on the tape, in index order.
    pub fn leaves<'t>(&self, tape: &'t crate::autodiff::Tape) -> Vec<crate::autodiff::Var<'t>> {
        self.entries
            .iter()
            .map(|(_, m)| tape.leaf(m.clone()))
            .collect()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)
            .map_err(|e| NnError::Checkpoint(format!("create {}: {e}", dir.display())))?;
        let mut manifest = format!("params={}\n", self.entries.len());
        for (i, (name, value)) in self.entries.iter().enumerate() {
            let file = format!("param_{i:04}.csv");
            linalg::write_matrix(&dir.join(&file), value)
                .map_err(|e| NnError::Checkpoint(e.to_string()))?;
            manifest.push_str(&format!("param.{i}.name={name}\nparam.{i}.file={file}\n"));
        }
        std::fs::write(dir.join("params.manifest"), manifest)
            .map_err(|e| NnError::Checkpoint(e.to_string()))?;
        Ok(())
    }

    /// Loads values into an existing layout; names and shapes must match.
    pub fn load_into(&mut self, dir: &Path) -> Result<()> {
        let manifest = std::fs::read_to_string(dir.join("params.manifest"))
            .map_err(|e| NnError::Checkpoint(format!("read manifest: {e}")))?;
        let mut files = vec![None; self.entries.len()];
        let mut names = vec![None; self.entries.len()];
        for line in manifest.lines() {
            if let Some((key, value)) = line.split_once('=') {
                if let Some(rest) = key.strip_prefix("param.") {
                    if let Some((idx, field)) = rest.split_once('.') {
                        let idx: usize = idx.parse().map_err(|_| {
                            NnError::Checkpoint(format!("bad manifest key {key}"))
                        })?;
                        if idx >= self.entries.len() {
                            return Err(NnError::Checkpoint(format!(
                                "manifest param index {idx} out of range"
                            )));
                        }
                        match field {
                            "name" => names[idx] = Some(value.to_string()),
                            "file" => files[idx] = Some(value.to_string()),
                            _ => {}
                        }
                    }
                }
            }
        }
        for i in 0..self.entries.len() {
            let name = names[i]
                .as_ref()
                .ok_or_else(|| NnError::Checkpoint(format!("missing name for param {i}")))?;
            if name != &self.entries[i].0 {
                return Err(NnError::Checkpoint(format!(
                    "parameter {i} name mismatch: checkpoint {name}, model {}",
                    self.entries[i].0
                )));
            }
            let file = files[i]
                .as_ref()
                .ok_or_else(|| NnError::Checkpoint(format!("missing file for param {i}")))?;
            let m = linalg::read_matrix(&dir.join(file))
                .map_err(|e| NnError::Checkpoint(e.to_string()))?;
            if m.shape() != self.entries[i].1.shape() {
                return Err(NnError::Checkpoint(format!(
                    "parameter {i} shape mismatch: {:?} vs {:?}",
                    m.shape(),
                    self.entries[i].1.shape()
                )));
            }
            self.entries[i].1 = m;
        }
        Ok(())
    }
}

/// Adam with bias correction; one moment pair per parameter tensor.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u32,
    m: Vec<Mat>,
    v: Vec<Mat>,
}

impl Adam {
    pub fn new(params: &ParamSet, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: params.values().map(|p| Mat::zeros(p.nrows(), p.ncols())).collect(),
            v: params.values().map(|p| Mat::zeros(p.nrows(), p.ncols())).collect(),
        }
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &[Mat]) {
        assert_eq!(grads.len(), params.len(), "gradient count mismatch");
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (idx, g) in grads.iter().enumerate() {
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            *m = m.scale(self.beta1) + g.scale(1.0 - self.beta1);
            *v = v.scale(self.beta2) + g.component_mul(g).scale(1.0 - self.beta2);
            let p = params.value_mut(idx);
            for r in 0..p.nrows() {
                for c in 0..p.ncols() {
                    let mhat = m[(r, c)] / bc1;
                    let vhat = v[(r, c)] / bc2;
                    p[(r, c)] -= self.lr * mhat / (vhat.sqrt() + self.eps);
                }
            }
        }
    }
}

/// Materializes a symmetric parameter as an SPD point through the metric's
/// exponential at the identity.
pub fn spd_point_from_param(metric: SpdMetric, a: &Mat) -> Result<SpdMatrix> {
    let sym = SymMatrix::symmetrize_checked(a.clone())?;
    Ok(spd::unlift_point(
        metric,
        &spd::lift_tangent(metric, &sym),
    )?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{rng_for, standard_normal_mat};

    #[test]
    fn cross_entropy_basics() {
        let c = 5;
        let uniform = vec![0.7; c];
        let loss = cross_entropy(&uniform, 3).unwrap();
        assert!((loss - (c as f64).ln()).abs() < 1e-12);
        let mut confident = vec![0.0; 4];
        confident[1] = 50.0;
        assert!(cross_entropy(&confident, 1).unwrap() < 1e-12);
        assert!(matches!(
            cross_entropy(&confident, 9),
            Err(NnError::BadLabel { .. })
        ));
    }

    #[test]
    fn adam_converges_on_quadratic_bowl() {
        let mut params = ParamSet::new();
        let mut rng = rng_for(1, "nn/adam");
        let target = standard_normal_mat(&mut rng, 3, 3);
        params.push("x", standard_normal_mat(&mut rng, 3, 3));
        let mut adam = Adam::new(&params, 1e-2);
        for _ in 0..5000 {
            let g = (params.value(0) - &target).scale(2.0);
            adam.step(&mut params, &[g]);
        }
        let err = (params.value(0) - &target).norm();
        assert!(err < 1e-6, "residual {err}");
    }

    #[test]
    fn param_roundtrip_through_checkpoint() {
        let mut params = ParamSet::new();
        let mut rng = rng_for(2, "nn/ckpt");
        params.push("a", standard_normal_mat(&mut rng, 2, 3));
        params.push("b.c", standard_normal_mat(&mut rng, 4, 1));
        let dir = std::env::temp_dir().join(format!("gyronet-ckpt-{}", std::process::id()));
        params.save(&dir).unwrap();
        let mut other = params.clone();
        *other.value_mut(0) = Mat::zeros(2, 3);
        other.load_into(&dir).unwrap();
        assert_eq!(other.value(0), params.value(0));
        assert_eq!(other.value(1), params.value(1));
        std::fs::remove_dir_all(&dir).ok();
    }
}
