//! SPD classification models: a gyro convolutional layer feeding either an
//! SPD MLR head or a structure-space (SPSD) MLR head.
//!
//! The default configuration mirrors the reference pipelines: the
//! convolution uses the Affine-Invariant metric, the SPD MLR head the
//! Log-Euclidean one. When the convolution emits more than one window the
//! outputs are block-diagonally concatenated before the head.

use crate::autodiff::{Tape, Var};
use crate::batch;
use crate::grassmann::{log_identity_var, skew_embed_var};
use crate::linalg::{Mat, SpdFnTag, SpdMatrix, SymMatrix};
use crate::nn::{
    argmax, cross_entropy, spd_point_from_param, Adam, MetricsRecord, NnError, ParamSet, Result,
    TrainReport,
};
use crate::rng::{rng_for, sample_sym, standard_normal_mat};
use crate::spd::{self, SpdMetric};
use crate::spsd::{self, CommonSubspaceState, SpsdConfig};

/// Shapes and metrics of the conv + head pipeline.
#[derive(Debug, Clone)]
pub struct SpdNetConfig {
    /// Input SPD size per sequence element.
    pub n: usize,
    /// Conv output size.
    pub m: usize,
    pub window: usize,
    pub stride: usize,
    /// Length of the input sequences (fixed per model).
    pub seq_len: usize,
    pub conv_metric: SpdMetric,
    pub mlr_metric: SpdMetric,
    pub classes: usize,
    /// Initialization scale for the unconstrained parameters.
    pub init_scale: f64,
}

impl SpdNetConfig {
    pub fn synthetic_default(n: usize, classes: usize) -> Self {
        SpdNetConfig {
            n,
            m: n,
            window: 1,
            stride: 1,
            seq_len: 1,
            conv_metric: SpdMetric::ai(0.0),
            mlr_metric: SpdMetric::LogEuclidean,
            classes,
            init_scale: 0.1,
        }
    }

    fn conv_outputs(&self) -> usize {
        (self.seq_len - self.window) / self.stride + 1
    }

    /// Size of the SPD matrix fed to the head: conv outputs are pooled by
    /// block-diagonal concatenation when more than one window remains.
    pub fn pooled_size(&self) -> usize {
        self.m * self.conv_outputs()
    }

    fn validate(&self) -> Result<()> {
        if self.window == 0 || self.stride == 0 || self.window > self.seq_len {
            return Err(NnError::Config(format!(
                "invalid window/stride {}/{} for sequence length {}",
                self.window, self.stride, self.seq_len
            )));
        }
        if self.classes < 2 {
            return Err(NnError::Config("need at least two classes".into()));
        }
        self.conv_metric
            .check_beta(self.m)
            .map_err(NnError::Spd)?;
        Ok(())
    }
}

/// Parameter indices of the convolutional layer: per output axis, `window`
/// symmetric blocks for the base point and one symmetric normal of size
/// `window·n`.
#[derive(Debug, Clone)]
pub(crate) struct ConvBlock {
    pub(crate) metric: SpdMetric,
    pub(crate) m: usize,
    pub(crate) window: usize,
    pub(crate) stride: usize,
    pub(crate) idx_base_blocks: Vec<Vec<usize>>,
    pub(crate) idx_normal: Vec<usize>,
}

impl ConvBlock {
    pub(crate) fn init(cfg: &SpdNetConfig, params: &mut ParamSet, seed: u64) -> Self {
        let mut rng = rng_for(seed, "nn/conv/init");
        let pairs = spd::sym_pairs(cfg.m);
        let mut idx_base_blocks = Vec::with_capacity(pairs.len());
        let mut idx_normal = Vec::with_capacity(pairs.len());
        for k in 0..pairs.len() {
            let blocks: Vec<usize> = (0..cfg.window)
                .map(|l| {
                    params.push(
                        format!("conv.{k}.base{l}"),
                        sample_sym(&mut rng, cfg.n, cfg.init_scale).into_mat(),
                    )
                })
                .collect();
            idx_base_blocks.push(blocks);
            idx_normal.push(params.push(
                format!("conv.{k}.normal"),
                sample_sym(&mut rng, cfg.window * cfg.n, cfg.init_scale).into_mat(),
            ));
        }
        ConvBlock {
            metric: cfg.conv_metric,
            m: cfg.m,
            window: cfg.window,
            stride: cfg.stride,
            idx_base_blocks,
            idx_normal,
        }
    }

    /// Signed layer value for one output axis on the tape.
    pub(crate) fn value_var<'t>(
        &self,
        x: Var<'t>,
        base_blocks: &[Var<'t>],
        normal: Var<'t>,
        tape: &'t Tape,
    ) -> Result<Var<'t>> {
        let v = match self.metric {
            SpdMetric::AffineInvariant { .. } => {
                let inv_sqrt: Vec<Var<'t>> = base_blocks
                    .iter()
                    .map(|a| a.sym().scale(-0.5).spd_fn(SpdFnTag::Exp))
                    .collect::<std::result::Result<_, _>>()?;
                let pih = tape.block_diag(&inv_sqrt);
                let mid = (pih * x * pih).sym();
                let lg = mid.spd_fn(SpdFnTag::Log)?;
                lg.frob(normal.sym())
            }
            SpdMetric::LogEuclidean => {
                let log_x = x.sym().spd_fn(SpdFnTag::Log)?;
                let log_p_blocks: Vec<Var<'t>> =
                    base_blocks.iter().map(|a| a.sym()).collect();
                let log_p = tape.block_diag(&log_p_blocks);
                (log_x - log_p).frob(normal.sym())
            }
            SpdMetric::LogCholesky => {
                let lx = x.sym().cholesky()?;
                let ax = lx.lower_strict() + lx.diag_part().diag_fn(crate::autodiff::DiagFnTag::Log)?;
                // ψ of the base point is the half-lower of each block's
                // tangent, assembled block-diagonally.
                let psi_blocks: Vec<Var<'t>> =
                    base_blocks.iter().map(|a| a.sym().half_lower()).collect();
                let ap = tape.block_diag(&psi_blocks);
                (ax - ap).frob(normal.sym().half_lower())
            }
        };
        Ok(v)
    }

    /// Convolution of a sequence of SPD constants (or intermediate vars).
    pub(crate) fn forward_var<'t>(
        &self,
        tape: &'t Tape,
        param_vars: &[Var<'t>],
        seq: &[Var<'t>],
    ) -> Result<Vec<Var<'t>>> {
        let count = (seq.len() - self.window) / self.stride + 1;
        let mut outputs = Vec::with_capacity(count);
        for t in 0..count {
            let win: Vec<Var<'t>> = seq[t * self.stride..t * self.stride + self.window].to_vec();
            let x = if win.len() == 1 {
                win[0]
            } else {
                tape.block_diag(&win)
            };
            let mut values = Vec::with_capacity(self.idx_normal.len());
            for k in 0..self.idx_normal.len() {
                let blocks: Vec<Var<'t>> = self.idx_base_blocks[k]
                    .iter()
                    .map(|&i| param_vars[i])
                    .collect();
                values.push(self.value_var(x, &blocks, param_vars[self.idx_normal[k]], tape)?);
            }
            outputs.push(assemble_output_var(tape, self.metric, self.m, &values)?);
        }
        Ok(outputs)
    }

    /// Plain-value convolution through the reference layer math (used for
    /// the SPSD common-subspace update, which is not differentiated).
    pub(crate) fn forward_plain(&self, params: &ParamSet, seq: &[SpdMatrix]) -> Result<Vec<SpdMatrix>> {
        let pairs = self.idx_normal.len();
        let mut base_blocks = Vec::with_capacity(pairs);
        let mut normal = Vec::with_capacity(pairs);
        for k in 0..pairs {
            let blocks: Vec<SpdMatrix> = self.idx_base_blocks[k]
                .iter()
                .map(|&i| spd_point_from_param(self.metric, params.value(i)))
                .collect::<Result<_>>()?;
            base_blocks.push(blocks);
            normal.push(spd_point_from_param(
                self.metric,
                params.value(self.idx_normal[k]),
            )?);
        }
        let conv = spd::SpdConvParams {
            base_blocks,
            normal,
            m: self.m,
            window: self.window,
            stride: self.stride,
        };
        Ok(spd::conv_forward(self.metric, seq, &conv)?)
    }
}

/// FC/MLR output assembly on the tape from the signed values.
fn assemble_output_var<'t>(
    tape: &'t Tape,
    metric: SpdMetric,
    m: usize,
    values: &[Var<'t>],
) -> Result<Var<'t>> {
    match metric {
        SpdMetric::AffineInvariant { beta } => {
            let basis = spd::assembly_basis(m, spd::ai_alpha(m, beta));
            let y = tape.lin_comb(values, &basis);
            Ok(y.sym().spd_fn(SpdFnTag::Exp)?)
        }
        SpdMetric::LogEuclidean => {
            let basis = spd::assembly_basis(m, 0.0);
            let y = tape.lin_comb(values, &basis);
            Ok(y.sym().spd_fn(SpdFnTag::Exp)?)
        }
        SpdMetric::LogCholesky => {
            let mut scalars = Vec::with_capacity(values.len());
            let mut basis = Vec::with_capacity(values.len());
            for ((i, j), v) in spd::sym_pairs(m).into_iter().zip(values.iter()) {
                let mut e = Mat::zeros(m, m);
                if i == j {
                    e[(i, i)] = 1.0;
                    scalars.push(v.diag_fn(crate::autodiff::DiagFnTag::Exp)?);
                } else {
                    e[(j, i)] = 1.0;
                    scalars.push(*v);
                }
                basis.push(e);
            }
            let ybar = tape.lin_comb(&scalars, &basis);
            Ok(ybar * ybar.t())
        }
    }
}

/// SPD MLR head: one symmetric base log and one symmetric normal log per
/// class; logits are the signed hyperplane inner products.
#[derive(Debug, Clone)]
pub(crate) struct SpdMlrHead {
    pub(crate) metric: SpdMetric,
    pub(crate) classes: usize,
    pub(crate) idx_base: Vec<usize>,
    pub(crate) idx_normal: Vec<usize>,
}

impl SpdMlrHead {
    pub(crate) fn init(metric: SpdMetric, size: usize, classes: usize, params: &mut ParamSet, seed: u64) -> Self {
        let mut rng = rng_for(seed, "nn/mlr/init");
        let mut idx_base = Vec::with_capacity(classes);
        let mut idx_normal = Vec::with_capacity(classes);
        for c in 0..classes {
            idx_base.push(params.push(
                format!("mlr.{c}.base"),
                sample_sym(&mut rng, size, 0.1).into_mat(),
            ));
            idx_normal.push(params.push(
                format!("mlr.{c}.normal"),
                sample_sym(&mut rng, size, 0.3).into_mat(),
            ));
        }
        SpdMlrHead {
            metric,
            classes,
            idx_base,
            idx_normal,
        }
    }

    pub(crate) fn logits_var<'t>(
        &self,
        tape: &'t Tape,
        param_vars: &[Var<'t>],
        x: Var<'t>,
    ) -> Result<Var<'t>> {
        let mut scalars = Vec::with_capacity(self.classes);
        match self.metric {
            SpdMetric::AffineInvariant { .. } => {
                for c in 0..self.classes {
                    let pih = param_vars[self.idx_base[c]]
                        .sym()
                        .scale(-0.5)
                        .spd_fn(SpdFnTag::Exp)?;
                    let lg = (pih * x * pih).sym().spd_fn(SpdFnTag::Log)?;
                    scalars.push(lg.frob(param_vars[self.idx_normal[c]].sym()));
                }
            }
            SpdMetric::LogEuclidean => {
                let log_x = x.sym().spd_fn(SpdFnTag::Log)?;
                for c in 0..self.classes {
                    let diff = log_x - param_vars[self.idx_base[c]].sym();
                    scalars.push(diff.frob(param_vars[self.idx_normal[c]].sym()));
                }
            }
            SpdMetric::LogCholesky => {
                let lx = x.sym().cholesky()?;
                let ax = lx.lower_strict()
                    + lx.diag_part().diag_fn(crate::autodiff::DiagFnTag::Log)?;
                for c in 0..self.classes {
                    let ap = param_vars[self.idx_base[c]].sym().half_lower();
                    let aw = param_vars[self.idx_normal[c]].sym().half_lower();
                    scalars.push((ax - ap).frob(aw));
                }
            }
        }
        Ok(stack_scalars(tape, &scalars))
    }
}

/// Structure-space MLR head over PSD inputs of size `n_in`, rank `p`.
#[derive(Debug, Clone)]
pub struct SpsdHeadConfig {
    pub p: usize,
    pub lambda: f64,
    pub gamma: f64,
    pub spd_metric: SpdMetric,
}

impl Default for SpsdHeadConfig {
    fn default() -> Self {
        SpsdHeadConfig {
            p: 2,
            lambda: 1.0,
            gamma: 0.1,
            spd_metric: SpdMetric::ai(0.0),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct SpsdMlrHead {
    pub(crate) cfg: SpsdConfig,
    pub(crate) n_in: usize,
    pub(crate) p: usize,
    pub(crate) classes: usize,
    pub(crate) idx_subspace_base: Vec<usize>,
    pub(crate) idx_shape_base: Vec<usize>,
    pub(crate) idx_subspace_normal: Vec<usize>,
    pub(crate) idx_shape_normal: Vec<usize>,
}

impl SpsdMlrHead {
    pub(crate) fn init(
        head: &SpsdHeadConfig,
        n_in: usize,
        classes: usize,
        params: &mut ParamSet,
        seed: u64,
    ) -> Result<Self> {
        if head.p == 0 || head.p >= n_in {
            return Err(NnError::Config(format!(
                "structure-space rank {} must lie in (0, {n_in})",
                head.p
            )));
        }
        let mut rng = rng_for(seed, "nn/spsd/init");
        let p = head.p;
        let mut idx_subspace_base = Vec::new();
        let mut idx_shape_base = Vec::new();
        let mut idx_subspace_normal = Vec::new();
        let mut idx_shape_normal = Vec::new();
        for c in 0..classes {
            idx_subspace_base.push(params.push(
                format!("spsd.{c}.subspace_base"),
                standard_normal_mat(&mut rng, p, n_in - p).scale(0.1),
            ));
            idx_shape_base.push(params.push(
                format!("spsd.{c}.shape_base"),
                sample_sym(&mut rng, p, 0.1).into_mat(),
            ));
            // Nonzero init keeps the class normals non-degenerate.
            idx_subspace_normal.push(params.push(
                format!("spsd.{c}.subspace_normal"),
                standard_normal_mat(&mut rng, p, n_in - p).scale(0.3),
            ));
            idx_shape_normal.push(params.push(
                format!("spsd.{c}.shape_normal"),
                sample_sym(&mut rng, p, 0.3).into_mat(),
            ));
        }
        Ok(SpsdMlrHead {
            cfg: SpsdConfig {
                lambda: head.lambda,
                spd_metric: head.spd_metric,
                gamma: head.gamma,
            },
            n_in,
            p,
            classes,
            idx_subspace_base,
            idx_shape_base,
            idx_subspace_normal,
            idx_shape_normal,
        })
    }

    /// Structure-space logits of a PSD input on the tape; the common
    /// subspace is a frozen constant inside one batch.
    pub(crate) fn logits_var<'t>(
        &self,
        tape: &'t Tape,
        param_vars: &[Var<'t>],
        x: Var<'t>,
        state: &CommonSubspaceState,
    ) -> Result<Var<'t>> {
        let (n, p) = (self.n_in, self.p);
        let metric = self.cfg.spd_metric;
        // Rank-p truncation and canonical alignment to the common subspace.
        let (u_full, _, _) = x.sym().svd()?;
        let u_p = u_full.slice(0, 0, n, p);
        let u_m = tape.constant(state.u_m.as_mat().clone());
        let m_align = u_p.t() * u_m;
        {
            let (_, sv, _) = crate::linalg::svd_thin(&m_align.value())?;
            let smallest = sv[sv.len() - 1];
            if smallest < crate::grassmann::CUT_LOCUS_TOL {
                return Err(NnError::Spsd(spsd::SpsdError::Alignment {
                    sigma_min: smallest,
                }));
            }
        }
        let (y_rot, _, v_rot) = m_align.svd()?;
        let u_bar = u_p * y_rot;
        let s_bar = (v_rot * (u_bar.t() * x * u_bar) * v_rot.t()).sym();
        let u_c = u_bar * v_rot.t();

        let mut scalars = Vec::with_capacity(self.classes);
        for c in 0..self.classes {
            // Grassmann term: ½ Tr(Log_I(τ(R_Pᵀ U)) · Δ_W), with
            // Δ_W = [[0, −B_W], [−B_Wᵀ, 0]] linear in the parameter.
            let b_p = param_vars[self.idx_subspace_base[c]];
            let rot = crate::autodiff::mat_exp_var(tape, skew_embed_var(b_p, n));
            let diff_u = rot.t() * u_c;
            let d_diff = log_identity_var(tape, diff_u)?;
            let b_w = param_vars[self.idx_subspace_normal[c]];
            let top = b_w.pad(n, n, 0, p);
            let d_w = (top + top.t()).scale(-1.0);
            let gr_term = d_diff.frob(d_w).scale(0.5 * self.cfg.lambda);

            let sp_term = self.shape_inner_var(
                s_bar,
                param_vars[self.idx_shape_base[c]],
                param_vars[self.idx_shape_normal[c]],
            )?;
            scalars.push(gr_term + sp_term);
        }
        let _ = metric;
        Ok(stack_scalars(tape, &scalars))
    }

    /// `⟨⊖S_P ⊕ S̄, S_W⟩^g` on the tape, for the configured shape metric.
    fn shape_inner_var<'t>(
        &self,
        s_bar: Var<'t>,
        a_base: Var<'t>,
        a_normal: Var<'t>,
    ) -> Result<Var<'t>> {
        let v = match self.cfg.spd_metric {
            SpdMetric::AffineInvariant { beta } => {
                let pih = a_base.sym().scale(-0.5).spd_fn(SpdFnTag::Exp)?;
                let lg = (pih * s_bar * pih).sym().spd_fn(SpdFnTag::Log)?;
                let main = lg.frob(a_normal.sym());
                if beta != 0.0 {
                    main + lg.trace().frob(a_normal.sym().trace()).scale(beta)
                } else {
                    main
                }
            }
            SpdMetric::LogEuclidean => {
                let lg = s_bar.sym().spd_fn(SpdFnTag::Log)?;
                (lg - a_base.sym()).frob(a_normal.sym())
            }
            SpdMetric::LogCholesky => {
                let ls = s_bar.sym().cholesky()?;
                let a_s = ls.lower_strict()
                    + ls.diag_part().diag_fn(crate::autodiff::DiagFnTag::Log)?;
                let a_p = a_base.sym().half_lower();
                (a_s - a_p).frob(a_normal.sym().half_lower())
            }
        };
        Ok(v)
    }
}

/// Stacks 1×1 scalars into a 1×C logits row.
fn stack_scalars<'t>(tape: &'t Tape, scalars: &[Var<'t>]) -> Var<'t> {
    let c = scalars.len();
    let basis: Vec<Mat> = (0..c)
        .map(|k| {
            let mut e = Mat::zeros(1, c);
            e[(0, k)] = 1.0;
            e
        })
        .collect();
    tape.lin_comb(scalars, &basis)
}

/// Labeled SPD sequences.
pub type SpdSample = (Vec<SpdMatrix>, usize);

fn singletons(data: &[(SpdMatrix, usize)]) -> Vec<SpdSample> {
    data.iter()
        .map(|(x, l)| (vec![x.clone()], *l))
        .collect()
}

// ---------------------------------------------------------------------------
// Models
// ---------------------------------------------------------------------------

/// Conv (AI by default) into an SPD MLR head (LE by default).
pub struct GyroSpdNet {
    pub cfg: SpdNetConfig,
    pub params: ParamSet,
    pub(crate) conv: ConvBlock,
    pub(crate) head: SpdMlrHead,
}

impl GyroSpdNet {
    pub fn new(cfg: SpdNetConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamSet::new();
        let conv = ConvBlock::init(&cfg, &mut params, seed);
        let head = SpdMlrHead::init(
            cfg.mlr_metric,
            cfg.pooled_size(),
            cfg.classes,
            &mut params,
            seed.wrapping_add(1),
        );
        Ok(GyroSpdNet {
            cfg,
            params,
            conv,
            head,
        })
    }

    fn logits_var<'t>(
        &self,
        tape: &'t Tape,
        param_vars: &[Var<'t>],
        seq: &[SpdMatrix],
    ) -> Result<Var<'t>> {
        let seq_vars: Vec<Var<'t>> = seq
            .iter()
            .map(|x| tape.constant(x.as_mat().clone()))
            .collect();
        let outs = self.conv.forward_var(tape, param_vars, &seq_vars)?;
        let pooled = if outs.len() == 1 {
            outs[0]
        } else {
            tape.block_diag(&outs)
        };
        self.head.logits_var(tape, param_vars, pooled)
    }

    pub fn logits(&self, seq: &[SpdMatrix]) -> Result<Vec<f64>> {
        let tape = Tape::new();
        let vars = self.params.leaves(&tape);
        let row = self.logits_var(&tape, &vars, seq)?;
        Ok(row.value().iter().copied().collect())
    }

    /// Per-sample loss and parameter gradients.
    fn grad_on_sample(&self, sample: &SpdSample) -> Result<(f64, Vec<Mat>)> {
        let tape = Tape::new();
        let vars = self.params.leaves(&tape);
        let logits = self.logits_var(&tape, &vars, &sample.0)?;
        let loss = logits.softmax_cross_entropy(sample.1)?;
        let grads = tape.backward(loss)?;
        let out = vars.iter().map(|v| grads.get(*v)).collect();
        Ok((loss.value()[(0, 0)], out))
    }

    pub fn evaluate(&self, data: &[SpdSample]) -> Result<(f64, f64)> {
        evaluate_model(data, |seq| self.logits(seq))
    }

    pub fn train(
        &mut self,
        train: &[SpdSample],
        test: &[SpdSample],
        epochs: usize,
        lr: f64,
        batch_size: usize,
        seed: u64,
    ) -> Result<TrainReport> {
        let mut adam = Adam::new(&self.params, lr);
        let mut records = Vec::new();
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut rng = rng_for(seed, "nn/spd/shuffle");
        let started = std::time::Instant::now();
        for epoch in 0..epochs {
            shuffle(&mut order, &mut rng);
            for chunk in order.chunks(batch_size.max(1)) {
                let samples: Vec<&SpdSample> = chunk.iter().map(|&i| &train[i]).collect();
                let grads = batch::map(&samples, |s| self.grad_on_sample(s));
                let mut total: Vec<Mat> = self
                    .params
                    .values()
                    .map(|p| Mat::zeros(p.nrows(), p.ncols()))
                    .collect();
                let mut count = 0.0;
                for g in grads {
                    let (_, gs) = g?;
                    for (t, g) in total.iter_mut().zip(gs) {
                        *t += g;
                    }
                    count += 1.0;
                }
                for t in &mut total {
                    *t /= count;
                }
                adam.step(&mut self.params, &total);
            }
            self.assert_manifold_params()?;
            let (loss, acc) = self.evaluate(train)?;
            records.push(MetricsRecord {
                epoch,
                split: "train",
                loss,
                accuracy: acc,
                wall_time: started.elapsed().as_secs_f64(),
            });
        }
        let (train_loss, train_acc) = self.evaluate(train)?;
        let (test_loss, test_acc) = self.evaluate(test)?;
        records.push(MetricsRecord {
            epoch: epochs,
            split: "train_final",
            loss: train_loss,
            accuracy: train_acc,
            wall_time: started.elapsed().as_secs_f64(),
        });
        records.push(MetricsRecord {
            epoch: epochs,
            split: "test",
            loss: test_loss,
            accuracy: test_acc,
            wall_time: started.elapsed().as_secs_f64(),
        });
        Ok(TrainReport {
            records,
            final_train_accuracy: train_acc,
            final_test_accuracy: test_acc,
        })
    }

    /// Every materialized parameter must still be a valid manifold point.
    fn assert_manifold_params(&self) -> Result<()> {
        for idx in self
            .conv
            .idx_base_blocks
            .iter()
            .flatten()
            .chain(self.conv.idx_normal.iter())
        {
            spd_point_from_param(self.conv.metric, self.params.value(*idx))?;
        }
        for idx in self.head.idx_base.iter().chain(self.head.idx_normal.iter()) {
            spd_point_from_param(self.head.metric, self.params.value(*idx))?;
        }
        Ok(())
    }

    pub fn train_on_singletons(
        &mut self,
        train: &[(SpdMatrix, usize)],
        test: &[(SpdMatrix, usize)],
        epochs: usize,
        lr: f64,
        batch_size: usize,
        seed: u64,
    ) -> Result<TrainReport> {
        let tr = singletons(train);
        let te = singletons(test);
        self.train(&tr, &te, epochs, lr, batch_size, seed)
    }
}

/// Conv into a structure-space MLR head with a persistent common subspace.
pub struct GyroSpsdNet {
    pub cfg: SpdNetConfig,
    pub head_cfg: SpsdHeadConfig,
    pub params: ParamSet,
    pub(crate) conv: ConvBlock,
    pub(crate) head: SpsdMlrHead,
    pub state: CommonSubspaceState,
}

impl GyroSpsdNet {
    pub fn new(cfg: SpdNetConfig, head_cfg: SpsdHeadConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamSet::new();
        let conv = ConvBlock::init(&cfg, &mut params, seed);
        let head = SpsdMlrHead::init(
            &head_cfg,
            cfg.pooled_size(),
            cfg.classes,
            &mut params,
            seed.wrapping_add(1),
        )?;
        let state = CommonSubspaceState::new(cfg.pooled_size(), head_cfg.p);
        Ok(GyroSpsdNet {
            cfg,
            head_cfg,
            params,
            conv,
            head,
            state,
        })
    }

    fn pooled_plain(&self, seq: &[SpdMatrix]) -> Result<SymMatrix> {
        let outs = self.conv.forward_plain(&self.params, seq)?;
        let pooled = crate::linalg::concat_spd(&outs)?;
        Ok(pooled.as_sym().clone())
    }

    /// Common-subspace update from the detached conv outputs of one batch,
    /// in the prescribed order: truncate, mean, geodesic step.
    fn update_state(&mut self, batch: &[&SpdSample]) -> Result<()> {
        let pooled: Vec<Result<SymMatrix>> =
            batch::map(batch, |s| self.pooled_plain(&s.0));
        let mut us = Vec::with_capacity(batch.len());
        for p in pooled {
            let (u, _) = spsd::spsd_decompose(&p?, self.head.p)?;
            us.push(u);
        }
        let mean = spsd::gr_mean(&us)?;
        self.state.u_m = spsd::gr_geodesic(&self.state.u_m, &mean, self.head.cfg.gamma)?;
        Ok(())
    }

    fn logits_var<'t>(
        &self,
        tape: &'t Tape,
        param_vars: &[Var<'t>],
        seq: &[SpdMatrix],
    ) -> Result<Var<'t>> {
        let seq_vars: Vec<Var<'t>> = seq
            .iter()
            .map(|x| tape.constant(x.as_mat().clone()))
            .collect();
        let outs = self.conv.forward_var(tape, param_vars, &seq_vars)?;
        let pooled = if outs.len() == 1 {
            outs[0]
        } else {
            tape.block_diag(&outs)
        };
        self.head.logits_var(tape, param_vars, pooled, &self.state)
    }

    pub fn logits(&self, seq: &[SpdMatrix]) -> Result<Vec<f64>> {
        let tape = Tape::new();
        let vars = self.params.leaves(&tape);
        let row = self.logits_var(&tape, &vars, seq)?;
        Ok(row.value().iter().copied().collect())
    }

    fn grad_on_sample(&self, sample: &SpdSample) -> Result<(f64, Vec<Mat>)> {
        let tape = Tape::new();
        let vars = self.params.leaves(&tape);
        let logits = self.logits_var(&tape, &vars, &sample.0)?;
        let loss = logits.softmax_cross_entropy(sample.1)?;
        let grads = tape.backward(loss)?;
        let out = vars.iter().map(|v| grads.get(*v)).collect();
        Ok((loss.value()[(0, 0)], out))
    }

    pub fn evaluate(&self, data: &[SpdSample]) -> Result<(f64, f64)> {
        evaluate_model(data, |seq| self.logits(seq))
    }

    pub fn train(
        &mut self,
        train: &[SpdSample],
        test: &[SpdSample],
        epochs: usize,
        lr: f64,
        batch_size: usize,
        seed: u64,
    ) -> Result<TrainReport> {
        let mut adam = Adam::new(&self.params, lr);
        let mut records = Vec::new();
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut rng = rng_for(seed, "nn/spsd/shuffle");
        let started = std::time::Instant::now();
        for epoch in 0..epochs {
            shuffle(&mut order, &mut rng);
            for chunk in order.chunks(batch_size.max(1)) {
                let samples: Vec<&SpdSample> = chunk.iter().map(|&i| &train[i]).collect();
                // State moves first (training mode), then the frozen state
                // feeds every tape in the batch.
                self.update_state(&samples)?;
                let grads = batch::map(&samples, |s| self.grad_on_sample(s));
                let mut total: Vec<Mat> = self
                    .params
                    .values()
                    .map(|p| Mat::zeros(p.nrows(), p.ncols()))
                    .collect();
                let mut count = 0.0;
                for g in grads {
                    let (_, gs) = g?;
                    for (t, g) in total.iter_mut().zip(gs) {
                        *t += g;
                    }
                    count += 1.0;
                }
                for t in &mut total {
                    *t /= count;
                }
                adam.step(&mut self.params, &total);
            }
            let (loss, acc) = self.evaluate(train)?;
            records.push(MetricsRecord {
                epoch,
                split: "train",
                loss,
                accuracy: acc,
                wall_time: started.elapsed().as_secs_f64(),
            });
        }
        let (train_loss, train_acc) = self.evaluate(train)?;
        let (test_loss, test_acc) = self.evaluate(test)?;
        records.push(MetricsRecord {
            epoch: epochs,
            split: "train_final",
            loss: train_loss,
            accuracy: train_acc,
            wall_time: started.elapsed().as_secs_f64(),
        });
        records.push(MetricsRecord {
            epoch: epochs,
            split: "test",
            loss: test_loss,
            accuracy: test_acc,
            wall_time: started.elapsed().as_secs_f64(),
        });
        Ok(TrainReport {
            records,
            final_train_accuracy: train_acc,
            final_test_accuracy: test_acc,
        })
    }

    pub fn train_on_singletons(
        &mut self,
        train: &[(SpdMatrix, usize)],
        test: &[(SpdMatrix, usize)],
        epochs: usize,
        lr: f64,
        batch_size: usize,
        seed: u64,
    ) -> Result<TrainReport> {
        let tr = singletons(train);
        let te = singletons(test);
        self.train(&tr, &te, epochs, lr, batch_size, seed)
    }
}

fn evaluate_model(
    data: &[SpdSample],
    logits: impl Fn(&[SpdMatrix]) -> Result<Vec<f64>> + Sync,
) -> Result<(f64, f64)> {
    let results = batch::map(data, |(seq, label)| -> Result<(f64, bool)> {
        let z = logits(seq)?;
        let loss = cross_entropy(&z, *label)?;
        Ok((loss, argmax(&z) == *label))
    });
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    for r in results {
        let (l, ok) = r?;
        loss_sum += l;
        correct += ok as usize;
    }
    let n = data.len().max(1) as f64;
    Ok((loss_sum / n, correct as f64 / n))
}

fn shuffle(order: &mut [usize], rng: &mut impl rand::Rng) {
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
}

/// Builds a labeled singleton-sequence dataset view (shared by the CLI).
pub fn as_singleton_sequences(data: &[(SpdMatrix, usize)]) -> Vec<SpdSample> {
    singletons(data)
}
