//! Ingestion pipelines and synthetic dataset generators.
//!
//! Time series become SPD sequences through per-frame Gaussian embeddings
//! and windowed covariance; graphs are loaded from simple text formats
//! (edge list TSV `src\tdst`, features CSV with one row per node, labels
//! CSV `node,label`) or generated from a stochastic block model. Every
//! pipeline is deterministic given its input bytes, seed and configuration.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use thiserror::Error;

use crate::linalg::{self, LinalgError, Mat, SpdFnTag, SpdMatrix, SymMatrix, Vector};
use crate::rng::{rng_for, sample_sym, standard_normal};

#[derive(Debug, Error)]
pub enum DataError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{0}")]
    Argument(String),
}

type Result<T> = std::result::Result<T, DataError>;

// ---------------------------------------------------------------------------
// Time series → SPD sequences
// ---------------------------------------------------------------------------

/// T frames of d-dimensional features, row per frame.
#[derive(Debug, Clone)]
pub struct TimeSeries {
    frames: Mat,
}

impl TimeSeries {
    pub fn new(frames: Mat) -> Result<Self> {
        linalg::ensure_finite(&frames)?;
        if frames.nrows() == 0 || frames.ncols() == 0 {
            return Err(DataError::Argument("empty time series".into()));
        }
        Ok(TimeSeries { frames })
    }

    pub fn len(&self) -> usize {
        self.frames.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.frames.ncols()
    }

    pub fn frame(&self, t: usize) -> Vector {
        self.frames.row(t).transpose()
    }
}

/// `Y = [[Σ + μμᵀ, μ], [μᵀ, 1]]` — the SPD embedding of a Gaussian; its
/// Schur complement with respect to the lower-right 1 is `Σ`.
pub fn gaussian_embed(mu: &Vector, sigma: &SpdMatrix) -> Result<SpdMatrix> {
    let d = mu.len();
    if sigma.size() != d {
        return Err(DataError::Argument(format!(
            "mean dim {d} vs covariance size {}",
            sigma.size()
        )));
    }
    let mut y = Mat::zeros(d + 1, d + 1);
    y.view_mut((0, 0), (d, d))
        .copy_from(&(sigma.as_mat() + mu * mu.transpose()));
    for i in 0..d {
        y[(i, d)] = mu[i];
        y[(d, i)] = mu[i];
    }
    y[(d, d)] = 1.0;
    Ok(SpdMatrix::from_mat(y)?)
}

/// Determinant-normalized Gaussian embedding with `k` replicated mean
/// columns:
/// `(det Σ)^{-1/(n+k)} [[Σ + kμμᵀ, μ(k)], [μ(k)ᵀ, I_k]]`.
pub fn beta_embed(mu: &Vector, sigma: &SpdMatrix, k: usize) -> Result<SymMatrix> {
    let d = mu.len();
    if sigma.size() != d {
        return Err(DataError::Argument(format!(
            "mean dim {d} vs covariance size {}",
            sigma.size()
        )));
    }
    if k == 0 {
        return Err(DataError::Argument("beta_embed requires k >= 1".into()));
    }
    let det = sigma.as_mat().determinant();
    if det <= 0.0 {
        return Err(DataError::Argument("covariance must be SPD".into()));
    }
    let scale = det.powf(-1.0 / (d + k) as f64);
    let mut y = Mat::zeros(d + k, d + k);
    y.view_mut((0, 0), (d, d))
        .copy_from(&(sigma.as_mat() + (mu * mu.transpose()).scale(k as f64)));
    for col in 0..k {
        for i in 0..d {
            y[(i, d + col)] = mu[i];
            y[(d + col, i)] = mu[i];
        }
        y[(d + col, d + col)] = 1.0;
    }
    Ok(SymMatrix::new(y.scale(scale))?)
}

/// Windowing configuration for [`windowed_spd`].
///
/// When `block_size` divides the frame dimension, each frame is treated as
/// a set of block observations (optionally paired with a configured
/// neighbor block) and per-frame Gaussian statistics are computed across
/// them; otherwise the frame itself is the mean with a unit covariance.
#[derive(Debug, Clone)]
pub struct WindowConfig {
    pub window: usize,
    /// Base regularizer factor; the added ridge is `eps·(1 + mean diag)·I`.
    pub eps: f64,
    pub block_size: Option<usize>,
    pub neighbor_pairs: Option<Vec<(usize, usize)>>,
}

impl WindowConfig {
    pub fn new(window: usize, eps: f64) -> Self {
        WindowConfig {
            window,
            eps,
            block_size: None,
            neighbor_pairs: None,
        }
    }
}

fn frame_stats(series: &TimeSeries, t: usize, cfg: &WindowConfig) -> Result<(Vector, SpdMatrix)> {
    let frame = series.frame(t);
    let d = frame.len();
    let q = match cfg.block_size {
        Some(q) if q > 0 && d % q == 0 && d / q >= 2 => q,
        _ => {
            // Single observation: point mass with unit covariance.
            return Ok((frame, SpdMatrix::identity(d)));
        }
    };
    let blocks: Vec<Vector> = (0..d / q)
        .map(|b| Vector::from_fn(q, |i, _| frame[b * q + i]))
        .collect();
    let observations: Vec<Vector> = match &cfg.neighbor_pairs {
        Some(pairs) => pairs
            .iter()
            .map(|&(a, b)| {
                let mut v = Vector::zeros(2 * q);
                v.rows_mut(0, q).copy_from(&blocks[a]);
                v.rows_mut(q, q).copy_from(&blocks[b]);
                v
            })
            .collect(),
        None => blocks,
    };
    let dim = observations[0].len();
    let mut mean = Vector::zeros(dim);
    for o in &observations {
        mean += o;
    }
    mean /= observations.len() as f64;
    let mut cov = Mat::zeros(dim, dim);
    for o in &observations {
        let c = o - &mean;
        cov += &c * c.transpose();
    }
    cov /= observations.len() as f64;
    let ridge = 1e-8 * (1.0 + cov.diagonal().mean());
    cov += Mat::identity(dim, dim).scale(ridge);
    Ok((mean, SpdMatrix::from_mat_symmetrize(cov)?))
}

/// Flattens the lower part (including the diagonal) column-major over
/// `i ≥ j`.
pub fn flatten_lower(m: &Mat) -> Vector {
    let n = m.nrows();
    let mut out = Vector::zeros(n * (n + 1) / 2);
    let mut k = 0;
    for j in 0..n {
        for i in j..n {
            out[k] = m[(i, j)];
            k += 1;
        }
    }
    out
}

/// Windowed covariance pipeline: per frame, a Gaussian embedding is built
/// and its matrix log flattened; per non-overlapping window of length
/// `window`, the covariance of those vectors plus the ridge
/// `eps·(1 + mean diag)·I` yields one SPD matrix.
pub fn windowed_spd(series: &TimeSeries, cfg: &WindowConfig) -> Result<Vec<SpdMatrix>> {
    let c = cfg.window;
    if c < 2 {
        return Err(DataError::Argument("window must be at least 2".into()));
    }
    if series.len() < c {
        return Err(DataError::Argument(format!(
            "series length {} below window {c}",
            series.len()
        )));
    }
    let mut lifted: Vec<Vector> = Vec::with_capacity(series.len());
    for t in 0..series.len() {
        let (mu, sigma) = frame_stats(series, t, cfg)?;
        let y = gaussian_embed(&mu, &sigma)?;
        let log_y = linalg::spd_fn(y.as_sym(), SpdFnTag::Log)?;
        lifted.push(flatten_lower(log_y.as_mat()));
    }
    let n = lifted[0].len();
    let count = (series.len() - c) / c + 1;
    let mut out = Vec::with_capacity(count);
    for w in 0..count {
        let start = w * c;
        let mut mean = Vector::zeros(n);
        for t in start..start + c {
            mean += &lifted[t];
        }
        mean /= c as f64;
        let mut z = Mat::zeros(n, n);
        for t in start..start + c {
            let d = &lifted[t] - &mean;
            z += &d * d.transpose();
        }
        z /= c as f64;
        let eps = cfg.eps * (1.0 + z.diagonal().mean());
        z += Mat::identity(n, n).scale(eps);
        out.push(SpdMatrix::from_mat_symmetrize(z)?);
    }
    Ok(out)
}

/// Two-scale preset: one window covering the whole series plus two windows
/// of half length.
pub fn pyramid_windows(series: &TimeSeries, eps: f64) -> Result<Vec<SpdMatrix>> {
    let full = WindowConfig::new(series.len(), eps);
    let half = WindowConfig::new(series.len() / 2, eps);
    let mut out = windowed_spd(series, &full)?;
    out.extend(windowed_spd(series, &half)?);
    Ok(out)
}

// ---------------------------------------------------------------------------
// Synthetic datasets
// ---------------------------------------------------------------------------

/// Labeled SPD samples around per-class prototypes `exp(A_c)`, sampled as
/// `exp(A_c + σ·noise)`. Balanced and deterministic per seed.
#[derive(Debug, Clone)]
pub struct SpdClassData {
    pub samples: Vec<(SpdMatrix, usize)>,
    pub prototypes: Vec<SymMatrix>,
}

pub fn synth_spd_classes(
    classes: usize,
    per_class: usize,
    n: usize,
    noise: f64,
    seed: u64,
) -> SpdClassData {
    let mut rng = rng_for(seed, "data/synth-spd");
    let prototypes: Vec<SymMatrix> = (0..classes).map(|_| sample_sym(&mut rng, n, 1.0)).collect();
    let mut samples = Vec::with_capacity(classes * per_class);
    for (label, proto) in prototypes.iter().enumerate() {
        for _ in 0..per_class {
            let bump = sample_sym(&mut rng, n, noise);
            let log = SymMatrix::symmetrize_checked(proto.as_mat() + bump.as_mat())
                .expect("finite sum");
            let sample = SpdMatrix::new(
                linalg::spd_fn(&log, SpdFnTag::Exp).expect("exp is total"),
            )
            .expect("exp of symmetric is SPD");
            samples.push((sample, label));
        }
    }
    SpdClassData {
        samples,
        prototypes,
    }
}

// ---------------------------------------------------------------------------
// Graphs
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Dev,
    Test,
}

/// Undirected graph with self-loops, node features, labels and a
/// train/dev/test assignment.
#[derive(Debug, Clone)]
pub struct Graph {
    adjacency: Vec<Vec<usize>>,
    pub features: Mat,
    pub labels: Vec<usize>,
    pub split: Vec<Split>,
}

impl Graph {
    /// Builds from an edge set: symmetrizes, deduplicates and inserts
    /// self-loops, so every neighborhood is nonempty.
    pub fn new(
        n_nodes: usize,
        edges: &[(usize, usize)],
        features: Mat,
        labels: Vec<usize>,
        split: Vec<Split>,
    ) -> Result<Self> {
        if features.nrows() != n_nodes || labels.len() != n_nodes || split.len() != n_nodes {
            return Err(DataError::Argument(format!(
                "inconsistent node counts: {n_nodes} nodes, {} feature rows, {} labels, {} split entries",
                features.nrows(),
                labels.len(),
                split.len()
            )));
        }
        let mut adjacency: Vec<Vec<usize>> = (0..n_nodes).map(|i| vec![i]).collect();
        for &(a, b) in edges {
            if a >= n_nodes || b >= n_nodes {
                return Err(DataError::Argument(format!(
                    "edge ({a},{b}) out of range for {n_nodes} nodes"
                )));
            }
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
        for nb in &mut adjacency {
            nb.sort_unstable();
            nb.dedup();
        }
        Ok(Graph {
            adjacency,
            features,
            labels,
            split,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.adjacency.len()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    /// Undirected edges (a < b) excluding self-loops.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (a, nbs) in self.adjacency.iter().enumerate() {
            for &b in nbs {
                if a < b {
                    out.push((a, b));
                }
            }
        }
        out
    }

    pub fn nodes_in(&self, split: Split) -> Vec<usize> {
        (0..self.n_nodes())
            .filter(|&i| self.split[i] == split)
            .collect()
    }

    pub fn n_classes(&self) -> usize {
        self.labels.iter().copied().max().map_or(0, |m| m + 1)
    }
}

/// 70/15/15 split by a seeded shuffle.
pub fn split_70_15_15(n: usize, seed: u64) -> Vec<Split> {
    let mut rng = rng_for(seed, "data/split");
    let mut order: Vec<usize> = (0..n).collect();
    // Fisher-Yates with the domain generator.
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let train_end = (n as f64 * 0.70).round() as usize;
    let dev_end = (n as f64 * 0.85).round() as usize;
    let mut split = vec![Split::Train; n];
    for (rank, &node) in order.iter().enumerate() {
        split[node] = if rank < train_end {
            Split::Train
        } else if rank < dev_end {
            Split::Dev
        } else {
            Split::Test
        };
    }
    split
}

/// Stochastic block model with `classes` equal communities: intra-community
/// edges with probability `p_in`, inter with `p_out`; features are the
/// one-hot community plus Gaussian noise (σ = 0.1); 70/15/15 split.
pub fn synth_sbm_graph(
    nodes: usize,
    classes: usize,
    p_in: f64,
    p_out: f64,
    feature_dim: usize,
    seed: u64,
) -> Result<Graph> {
    if p_in <= p_out {
        return Err(DataError::Argument(format!(
            "p_in ({p_in}) must exceed p_out ({p_out})"
        )));
    }
    if feature_dim < classes {
        return Err(DataError::Argument(format!(
            "feature dim {feature_dim} below class count {classes}"
        )));
    }
    let mut rng = rng_for(seed, "data/synth-sbm");
    let labels: Vec<usize> = (0..nodes).map(|i| i % classes).collect();
    let mut edges = Vec::new();
    for a in 0..nodes {
        for b in (a + 1)..nodes {
            let p = if labels[a] == labels[b] { p_in } else { p_out };
            if rng.gen::<f64>() < p {
                edges.push((a, b));
            }
        }
    }
    let features = Mat::from_fn(nodes, feature_dim, |i, j| {
        let one_hot = if j == labels[i] { 1.0 } else { 0.0 };
        one_hot + 0.1 * standard_normal(&mut rng)
    });
    // from_fn fills column-major; regenerate row-major for a documented,
    // stable layout: one row of noise per node.
    let mut rng = rng_for(seed, "data/synth-sbm/features");
    let mut features = features;
    for i in 0..nodes {
        for j in 0..feature_dim {
            let one_hot = if j == labels[i] { 1.0 } else { 0.0 };
            features[(i, j)] = one_hot + 0.1 * standard_normal(&mut rng);
        }
    }
    let split = split_70_15_15(nodes, seed);
    Graph::new(nodes, &edges, features, labels, split)
}

/// Loads a graph from an edge list (TSV `src\tdst`), a features CSV (row
/// per node, aligned with the dense id order) and a labels CSV
/// (`node,label`). Node ids are remapped to dense indices in sorted order.
pub fn load_graph(edge_path: &Path, feature_path: &Path, label_path: &Path) -> Result<Graph> {
    let read = |path: &Path| -> Result<String> {
        std::fs::read_to_string(path).map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })
    };
    let label_text = read(label_path)?;
    let mut labels_by_id: BTreeMap<usize, usize> = BTreeMap::new();
    for (idx, line) in label_text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut it = line.split(',');
        let parse = |tok: Option<&str>, what: &str| -> Result<usize> {
            tok.map(str::trim)
                .filter(|s| !s.is_empty())
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| DataError::Parse {
                    path: label_path.display().to_string(),
                    line: line_no,
                    message: format!("cannot parse {what}"),
                })
        };
        let node = parse(it.next(), "node id")?;
        let label = parse(it.next(), "label")?;
        if it.next().is_some() {
            return Err(DataError::Parse {
                path: label_path.display().to_string(),
                line: line_no,
                message: "expected exactly two fields".into(),
            });
        }
        if labels_by_id.insert(node, label).is_some() {
            return Err(DataError::Parse {
                path: label_path.display().to_string(),
                line: line_no,
                message: format!("duplicate node id {node}"),
            });
        }
    }
    if labels_by_id.is_empty() {
        return Err(DataError::Argument("empty label file".into()));
    }
    let ids: Vec<usize> = labels_by_id.keys().copied().collect();
    let dense: BTreeMap<usize, usize> = ids.iter().enumerate().map(|(d, &id)| (id, d)).collect();
    let labels: Vec<usize> = ids.iter().map(|id| labels_by_id[id]).collect();

    let edge_text = read(edge_path)?;
    let mut edges = Vec::new();
    for (idx, line) in edge_text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut it = line.split('\t');
        let mut next_id = |what: &str| -> Result<usize> {
            let raw = it
                .next()
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| DataError::Parse {
                    path: edge_path.display().to_string(),
                    line: line_no,
                    message: format!("cannot parse {what}"),
                })?;
            dense.get(&raw).copied().ok_or_else(|| DataError::Parse {
                path: edge_path.display().to_string(),
                line: line_no,
                message: format!("unknown node id {raw}"),
            })
        };
        let a = next_id("source id")?;
        let b = next_id("target id")?;
        edges.push((a, b));
    }

    let features = linalg::read_matrix(feature_path).map_err(|e| DataError::Parse {
        path: feature_path.display().to_string(),
        line: 0,
        message: e.to_string(),
    })?;
    if features.nrows() != ids.len() {
        return Err(DataError::Argument(format!(
            "feature rows ({}) do not match labeled nodes ({})",
            features.nrows(),
            ids.len()
        )));
    }
    let split = vec![Split::Train; ids.len()];
    Graph::new(ids.len(), &edges, features, labels, split)
}

/// Writes the three graph files read back by [`load_graph`].
pub fn write_graph(
    graph: &Graph,
    edge_path: &Path,
    feature_path: &Path,
    label_path: &Path,
) -> Result<()> {
    let mut edge_text = String::new();
    for (a, b) in graph.edges() {
        edge_text.push_str(&format!("{a}\t{b}\n"));
    }
    let mut label_text = String::new();
    for (i, l) in graph.labels.iter().enumerate() {
        label_text.push_str(&format!("{i},{l}\n"));
    }
    let write = |path: &Path, text: &str| -> Result<()> {
        std::fs::write(path, text).map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })
    };
    write(edge_path, &edge_text)?;
    write(label_path, &label_text)?;
    linalg::write_matrix(feature_path, &graph.features).map_err(|e| DataError::Argument(e.to_string()))?;
    Ok(())
}
