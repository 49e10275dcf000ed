//! Reverse-mode gradient engine over the matrix kernels.
//!
//! A [`Tape`] records a define-by-run graph of matrix operations; it is
//! rebuilt on every forward pass and never shared between threads (one tape
//! per training thread). [`Var`] is a cheap handle into the tape. Calling
//! [`Tape::backward`] on a scalar loss propagates cotangents through each
//! recorded primitive once, in reverse topological order.
//!
//! Factorization-backed primitives (`spd_fn`, `cholesky`, `qr`, `svd`)
//! cache their forward decompositions on the node so the backward pass can
//! reuse them. Matrix functions of symmetric inputs differentiate through
//! the eigendecomposition with the divided-difference (Loewner) matrix of
//! the scalar function; degenerate eigenvalue pairs fall back to `f'` at the
//! pair midpoint. The SVD adjoint refuses inputs with a singular-value gap
//! below [`SVD_GAP_TOL`] instead of silently emitting huge gradients.

use std::cell::RefCell;
use std::ops::{Add, Mul, Sub};

use thiserror::Error;

use crate::linalg::{self, LinalgError, Mat, SpdFnTag, Vector};

/// Eigenvalue pairs closer than this use the derivative limit instead of the
/// divided difference.
pub const LOEWNER_TOL: f64 = 1e-9;
/// Singular-value gaps below this make the SVD adjoint a conditioning error.
pub const SVD_GAP_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("loss must be a 1x1 scalar, got {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },
    #[error("operation {0} has no registered adjoint")]
    UnsupportedOp(&'static str),
    #[error("ill-conditioned for differentiation: {0}")]
    Conditioning(String),
    #[error("non-finite value during {0}")]
    NotFinite(&'static str),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("label {label} out of range for {classes} classes")]
    BadLabel { label: usize, classes: usize },
}

type Result<T> = std::result::Result<T, AutodiffError>;

/// Elementwise scalar functions applied to the diagonal of a matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiagFnTag {
    Exp,
    Log,
    Arctan,
}

impl DiagFnTag {
    fn apply(self, x: f64) -> f64 {
        match self {
            DiagFnTag::Exp => x.exp(),
            DiagFnTag::Log => x.ln(),
            DiagFnTag::Arctan => x.atan(),
        }
    }

    fn derivative(self, x: f64) -> f64 {
        match self {
            DiagFnTag::Exp => x.exp(),
            DiagFnTag::Log => 1.0 / x,
            DiagFnTag::Arctan => 1.0 / (1.0 + x * x),
        }
    }
}

enum Op {
    Leaf,
    Constant,
    MatMul,
    Add,
    Sub,
    Scale(f64),
    Transpose,
    Trace,
    Frob,
    SymFn { tag: SpdFnTag, q: Mat, lam: Vector },
    Cholesky,
    Qr,
    Svd,
    Inverse,
    BlockDiag { sizes: Vec<(usize, usize)> },
    Slice { r0: usize, c0: usize, rows: usize, cols: usize },
    Pad { r0: usize, c0: usize },
    ReshapeRowMajor,
    LinComb { basis: Vec<Mat> },
    DiagFn(DiagFnTag),
    MaskStrictLower,
    MaskDiag,
    SoftmaxCe { label: usize },
}

struct Node {
    op: Op,
    inputs: Vec<(usize, usize)>,
    outputs: Vec<Mat>,
}

/// Topologically ordered record of one forward pass.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to one output of a recorded node.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
    out: usize,
}

/// Per-node cotangents produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Mat>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient for the first output of `v`'s node; zero if unreachable
    /// from the loss.
    pub fn get(&self, v: Var<'_>) -> Mat {
        match &self.grads[v.id] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.id];
                Mat::zeros(r, c)
            }
        }
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, op: Op, inputs: Vec<(usize, usize)>, outputs: Vec<Mat>) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { op, inputs, outputs });
        nodes.len() - 1
    }

    fn value_of(&self, id: usize, out: usize) -> Mat {
        self.nodes.borrow()[id].outputs[out].clone()
    }

    /// Differentiable input; receives a gradient in [`Tape::backward`].
    pub fn leaf(&self, m: Mat) -> Var<'_> {
        let id = self.push(Op::Leaf, vec![], vec![m]);
        Var { tape: self, id, out: 0 }
    }

    /// Non-differentiable input; gradients are not propagated into it.
    pub fn constant(&self, m: Mat) -> Var<'_> {
        let id = self.push(Op::Constant, vec![], vec![m]);
        Var { tape: self, id, out: 0 }
    }

    /// Re-creates a handle to the first output of a raw node id.
    pub fn var(&self, id: usize) -> Var<'_> {
        Var { tape: self, id, out: 0 }
    }

    /// Block-diagonal concatenation.
    pub fn block_diag(&self, parts: &[Var<'_>]) -> Var<'_> {
        assert!(!parts.is_empty(), "block_diag needs at least one block");
        let mats: Vec<Mat> = parts.iter().map(|v| v.value()).collect();
        let sizes: Vec<(usize, usize)> = mats.iter().map(|m| (m.nrows(), m.ncols())).collect();
        let out = linalg::block_diag(&mats).expect("nonempty");
        let inputs = parts.iter().map(|v| (v.id, v.out)).collect();
        let id = self.push(Op::BlockDiag { sizes }, inputs, vec![out]);
        Var { tape: self, id, out: 0 }
    }

    /// `Σ_k scalar_k · basis_k` for 1×1 scalar nodes and constant basis
    /// matrices; the adjoint of each scalar is `⟨grad, basis_k⟩_F`.
    pub fn lin_comb(&self, scalars: &[Var<'_>], basis: &[Mat]) -> Var<'_> {
        assert_eq!(scalars.len(), basis.len(), "lin_comb arity mismatch");
        assert!(!basis.is_empty(), "lin_comb needs at least one term");
        let (r, c) = (basis[0].nrows(), basis[0].ncols());
        let mut out = Mat::zeros(r, c);
        for (s, b) in scalars.iter().zip(basis.iter()) {
            let v = s.value();
            assert_eq!((v.nrows(), v.ncols()), (1, 1), "lin_comb scalars must be 1x1");
            out += b.scale(v[(0, 0)]);
        }
        let inputs = scalars.iter().map(|v| (v.id, v.out)).collect();
        let id = self.push(Op::LinComb { basis: basis.to_vec() }, inputs, vec![out]);
        Var { tape: self, id, out: 0 }
    }

    /// The orthogonal-matrix logarithm is a verification oracle; recording
    /// it for differentiation is rejected.
    pub fn mat_log_orthogonal(&self, _o: Var<'_>) -> Result<Var<'_>> {
        Err(AutodiffError::UnsupportedOp("mat_log_orthogonal"))
    }

    /// Reverse pass from a scalar loss. Every node is visited once; leaves
    /// not reachable from the loss keep a zero gradient.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let lv = &nodes[loss.id].outputs[loss.out];
        if lv.nrows() != 1 || lv.ncols() != 1 {
            return Err(AutodiffError::NonScalarLoss {
                rows: lv.nrows(),
                cols: lv.ncols(),
            });
        }
        let mut grads: Vec<Vec<Option<Mat>>> = nodes
            .iter()
            .map(|n| vec![None; n.outputs.len()])
            .collect();
        grads[loss.id][loss.out] = Some(Mat::from_element(1, 1, 1.0));

        for id in (0..=loss.id).rev() {
            if !grads[id].iter().any(Option::is_some) {
                continue;
            }
            let node = &nodes[id];
            let out_grads: Vec<Option<Mat>> = grads[id].clone();
            let input_grads = backward_node(node, &out_grads, &nodes)?;
            for ((src_id, src_out), g) in node.inputs.iter().zip(input_grads.into_iter()) {
                if let Some(g) = g {
                    if matches!(nodes[*src_id].op, Op::Constant) {
                        continue;
                    }
                    match &mut grads[*src_id][*src_out] {
                        Some(acc) => *acc += g,
                        slot @ None => *slot = Some(g),
                    }
                }
            }
        }

        let shapes = nodes
            .iter()
            .map(|n| (n.outputs[0].nrows(), n.outputs[0].ncols()))
            .collect();
        let first_output = grads.into_iter().map(|mut g| g.swap_remove(0)).collect();
        Ok(Gradients {
            grads: first_output,
            shapes,
        })
    }
}

impl<'t> Var<'t> {
    pub fn value(&self) -> Mat {
        self.tape.value_of(self.id, self.out)
    }

    pub fn shape(&self) -> (usize, usize) {
        let nodes = self.tape.nodes.borrow();
        let v = &nodes[self.id].outputs[self.out];
        (v.nrows(), v.ncols())
    }

    pub fn node_id(&self) -> usize {
        self.id
    }

    fn unary(&self, op: Op, out: Mat) -> Var<'t> {
        let id = self.tape.push(op, vec![(self.id, self.out)], vec![out]);
        Var { tape: self.tape, id, out: 0 }
    }

    fn binary(&self, other: Var<'t>, op: Op, out: Mat) -> Var<'t> {
        assert!(
            std::ptr::eq(self.tape, other.tape),
            "vars from different tapes"
        );
        let id = self.tape.push(
            op,
            vec![(self.id, self.out), (other.id, other.out)],
            vec![out],
        );
        Var { tape: self.tape, id, out: 0 }
    }

    pub fn matmul(&self, other: Var<'t>) -> Var<'t> {
        let out = self.value() * other.value();
        self.binary(other, Op::MatMul, out)
    }

    pub fn scale(&self, c: f64) -> Var<'t> {
        let out = self.value().scale(c);
        self.unary(Op::Scale(c), out)
    }

    pub fn t(&self) -> Var<'t> {
        let out = self.value().transpose();
        self.unary(Op::Transpose, out)
    }

    /// Symmetric part `(X + Xᵀ)/2` (composite of primitives).
    pub fn sym(&self) -> Var<'t> {
        (*self + self.t()).scale(0.5)
    }

    pub fn trace(&self) -> Var<'t> {
        let v = self.value();
        assert_eq!(v.nrows(), v.ncols(), "trace of non-square");
        self.unary(Op::Trace, Mat::from_element(1, 1, v.trace()))
    }

    /// Frobenius inner product `⟨X, Y⟩_F` as a 1×1 scalar.
    pub fn frob(&self, other: Var<'t>) -> Var<'t> {
        let a = self.value();
        let b = other.value();
        assert_eq!(a.shape(), b.shape(), "frob shape mismatch");
        let s = a.dot(&b);
        self.binary(other, Op::Frob, Mat::from_element(1, 1, s))
    }

    /// Matrix function of a symmetric input via eigendecomposition.
    pub fn spd_fn(&self, tag: SpdFnTag) -> Result<Var<'t>> {
        let v = self.value();
        let s = linalg::SymMatrix::symmetrize_checked(v)?;
        let (out, q, lam) = linalg::spd_fn_values(&s, tag)?;
        Ok(self.unary(Op::SymFn { tag, q, lam }, out.into_mat()))
    }

    pub fn cholesky(&self) -> Result<Var<'t>> {
        let v = self.value();
        let s = linalg::SymMatrix::symmetrize_checked(v)?;
        let p = linalg::SpdMatrix::new(s)?;
        let l = linalg::cholesky(&p)?;
        Ok(self.unary(Op::Cholesky, l.into_mat()))
    }

    /// Thin QR; returns `(Q, R)`.
    pub fn qr(&self) -> Result<(Var<'t>, Var<'t>)> {
        let (q, r) = linalg::qr_thin(&self.value())?;
        let id = self
            .tape
            .push(Op::Qr, vec![(self.id, self.out)], vec![q, r]);
        Ok((
            Var { tape: self.tape, id, out: 0 },
            Var { tape: self.tape, id, out: 1 },
        ))
    }

    /// Thin SVD; returns `(U, S, V)` with `S` a k×k diagonal matrix.
    pub fn svd(&self) -> Result<(Var<'t>, Var<'t>, Var<'t>)> {
        let (u, sigma, v) = linalg::svd_thin(&self.value())?;
        let s = Mat::from_diagonal(&sigma);
        let id = self
            .tape
            .push(Op::Svd, vec![(self.id, self.out)], vec![u, s, v]);
        Ok((
            Var { tape: self.tape, id, out: 0 },
            Var { tape: self.tape, id, out: 1 },
            Var { tape: self.tape, id, out: 2 },
        ))
    }

    pub fn inverse(&self) -> Result<Var<'t>> {
        let v = self.value();
        let inv = v
            .try_inverse()
            .ok_or_else(|| AutodiffError::Conditioning("singular matrix inverse".into()))?;
        Ok(self.unary(Op::Inverse, inv))
    }

    pub fn slice(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> Var<'t> {
        let v = self.value();
        let out = v.view((r0, c0), (rows, cols)).into_owned();
        self.unary(Op::Slice { r0, c0, rows, cols }, out)
    }

    /// Places this block into a zero matrix of shape `out_rows×out_cols` at
    /// `(r0, c0)`; the adjoint of [`Var::slice`].
    pub fn pad(&self, out_rows: usize, out_cols: usize, r0: usize, c0: usize) -> Var<'t> {
        let v = self.value();
        let mut out = Mat::zeros(out_rows, out_cols);
        out.view_mut((r0, c0), (v.nrows(), v.ncols())).copy_from(&v);
        self.unary(Op::Pad { r0, c0 }, out)
    }

    /// Row-major reshape.
    pub fn reshape(&self, rows: usize, cols: usize) -> Var<'t> {
        let v = self.value();
        assert_eq!(v.len(), rows * cols, "reshape size mismatch");
        let out = reshape_row_major(&v, rows, cols);
        self.unary(Op::ReshapeRowMajor, out)
    }

    /// Applies `f` to the diagonal; output is diagonal (off-diagonal input
    /// entries are dropped). With 1×1 values this is a scalar function.
    pub fn diag_fn(&self, tag: DiagFnTag) -> Result<Var<'t>> {
        let v = self.value();
        let k = v.nrows().min(v.ncols());
        let mut out = Mat::zeros(v.nrows(), v.ncols());
        for i in 0..k {
            let x = v[(i, i)];
            if tag == DiagFnTag::Log && x <= 0.0 {
                return Err(AutodiffError::Conditioning(format!(
                    "diag log of non-positive entry {x:.3e} at {i}"
                )));
            }
            out[(i, i)] = tag.apply(x);
        }
        Ok(self.unary(Op::DiagFn(tag), out))
    }

    pub fn lower_strict(&self) -> Var<'t> {
        let out = linalg::lower_strict(&self.value());
        self.unary(Op::MaskStrictLower, out)
    }

    pub fn diag_part(&self) -> Var<'t> {
        let out = linalg::diag_part(&self.value());
        self.unary(Op::MaskDiag, out)
    }

    /// Strictly-lower part plus half the diagonal (composite).
    pub fn half_lower(&self) -> Var<'t> {
        self.lower_strict() + self.diag_part().scale(0.5)
    }

    /// Cross-entropy of a 1×C logits row against `label`, as a 1×1 scalar.
    pub fn softmax_cross_entropy(&self, label: usize) -> Result<Var<'t>> {
        let z = self.value();
        if z.nrows() != 1 {
            return Err(AutodiffError::Shape(format!(
                "softmax_cross_entropy expects a 1xC row, got {}x{}",
                z.nrows(),
                z.ncols()
            )));
        }
        let c = z.ncols();
        if label >= c {
            return Err(AutodiffError::BadLabel { label, classes: c });
        }
        let m = z.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = m + z.iter().map(|&x| (x - m).exp()).sum::<f64>().ln();
        let loss = lse - z[(0, label)];
        Ok(self.unary(Op::SoftmaxCe { label }, Mat::from_element(1, 1, loss)))
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        let out = self.value() + rhs.value();
        self.binary(rhs, Op::Add, out)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        let out = self.value() - rhs.value();
        self.binary(rhs, Op::Sub, out)
    }
}

/// `*` is matrix multiplication.
impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        self.matmul(rhs)
    }
}

fn reshape_row_major(v: &Mat, rows: usize, cols: usize) -> Mat {
    let in_cols = v.ncols();
    Mat::from_fn(rows, cols, |r, c| {
        let flat = r * cols + c;
        v[(flat / in_cols, flat % in_cols)]
    })
}

/// Matrix exponential on the tape: scaling and squaring around a
/// fixed-order Taylor core, built from matmul/add/scale so no custom
/// adjoint is needed.
pub fn mat_exp_var<'t>(tape: &'t Tape, a: Var<'t>) -> Var<'t> {
    let v = a.value();
    let n = v.nrows();
    assert_eq!(n, v.ncols(), "mat_exp of non-square");
    let norm = v.norm();
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil().max(0.0) as u32
    } else {
        0
    };
    let x = a.scale(0.5f64.powi(squarings as i32));
    let eye = tape.constant(Mat::identity(n, n));
    const ORDER: usize = 18;
    let mut t = eye;
    for k in (1..=ORDER).rev() {
        t = eye + (x * t).scale(1.0 / k as f64);
    }
    for _ in 0..squarings {
        t = t * t;
    }
    t
}

fn loewner(tag: SpdFnTag, lam: &Vector) -> Mat {
    let n = lam.len();
    Mat::from_fn(n, n, |i, j| {
        let (a, b) = (lam[i], lam[j]);
        if (a - b).abs() < LOEWNER_TOL {
            tag.derivative(0.5 * (a + b))
        } else {
            (tag.apply(a) - tag.apply(b)) / (a - b)
        }
    })
}

/// Lower triangle with halved diagonal, zero above — the cotangent mask for
/// the Cholesky adjoint.
fn phi_half(m: &Mat) -> Mat {
    let n = m.nrows();
    let mut out = Mat::zeros(n, n);
    for r in 0..n {
        for c in 0..r {
            out[(r, c)] = m[(r, c)];
        }
        out[(r, r)] = 0.5 * m[(r, r)];
    }
    out
}

fn solve_upper(r: &Mat, b: Mat) -> Result<Mat> {
    r.solve_upper_triangular(&b)
        .ok_or_else(|| AutodiffError::Conditioning("triangular solve failed".into()))
}

fn backward_node(
    node: &Node,
    out_grads: &[Option<Mat>],
    nodes: &[Node],
) -> Result<Vec<Option<Mat>>> {
    let input_value = |k: usize| -> &Mat {
        let (id, out) = node.inputs[k];
        &nodes[id].outputs[out]
    };
    let g0 = || out_grads[0].clone();

    let grads = match &node.op {
        Op::Leaf | Op::Constant => vec![],
        Op::MatMul => {
            let a = input_value(0);
            let b = input_value(1);
            match g0() {
                Some(g) => vec![Some(&g * b.transpose()), Some(a.transpose() * &g)],
                None => vec![None, None],
            }
        }
        Op::Add => vec![g0(), g0()],
        Op::Sub => vec![g0(), g0().map(|g| -g)],
        Op::Scale(c) => vec![g0().map(|g| g.scale(*c))],
        Op::Transpose => vec![g0().map(|g| g.transpose())],
        Op::Trace => {
            let n = input_value(0).nrows();
            vec![g0().map(|g| Mat::identity(n, n).scale(g[(0, 0)]))]
        }
        Op::Frob => {
            let a = input_value(0);
            let b = input_value(1);
            match g0() {
                Some(g) => {
                    let s = g[(0, 0)];
                    vec![Some(b.scale(s)), Some(a.scale(s))]
                }
                None => vec![None, None],
            }
        }
        Op::SymFn { tag, q, lam } => vec![g0().map(|g| {
            let gs = linalg::sym(&g);
            let core = (q.transpose() * gs * q).component_mul(&loewner(*tag, lam));
            linalg::sym(&(q * core * q.transpose()))
        })],
        Op::Cholesky => match g0() {
            Some(gl) => {
                let l = &node.outputs[0];
                let p = phi_half(&(l.transpose() * gl));
                // gA = L^{-T} P L^{-1}, then symmetrized.
                let x = solve_upper(&l.transpose(), p)?;
                let w = solve_upper(&l.transpose(), x.transpose())?;
                vec![Some(linalg::sym(&w.transpose()))]
            }
            None => vec![None],
        },
        Op::Qr => {
            let q = &node.outputs[0];
            let r = &node.outputs[1];
            let p = r.nrows();
            let n = q.nrows();
            let gq = out_grads[0].clone().unwrap_or_else(|| Mat::zeros(n, p));
            let gr = out_grads[1].clone().unwrap_or_else(|| Mat::zeros(p, p));
            let s = q.transpose() * &gq - &gr * r.transpose();
            let skew = &s - s.transpose();
            let w = linalg::lower_strict(&skew) + &gr * r.transpose();
            let b = q * w + (Mat::identity(n, n) - q * q.transpose()) * &gq;
            // gA = B R^{-T}: solve R gAᵀ = Bᵀ.
            let ga_t = solve_upper(r, b.transpose())?;
            vec![Some(ga_t.transpose())]
        }
        Op::Svd => {
            let u = &node.outputs[0];
            let s = &node.outputs[1];
            let v = &node.outputs[2];
            let (n, k) = (u.nrows(), u.ncols());
            let m = v.nrows();
            let sv: Vec<f64> = (0..k).map(|i| s[(i, i)]).collect();
            for i in 0..k {
                for j in (i + 1)..k {
                    if (sv[i] - sv[j]).abs() < SVD_GAP_TOL {
                        return Err(AutodiffError::Conditioning(format!(
                            "svd adjoint: singular values {i} and {j} within {SVD_GAP_TOL:.0e}"
                        )));
                    }
                }
            }
            let gu = out_grads[0].clone();
            let gs = out_grads[1].clone();
            let gv = out_grads[2].clone();
            let f = Mat::from_fn(k, k, |i, j| {
                if i == j {
                    0.0
                } else {
                    1.0 / (sv[j] * sv[j] - sv[i] * sv[i])
                }
            });
            let sig = Mat::from_fn(k, k, |i, j| if i == j { sv[i] } else { 0.0 });
            let mut core = Mat::zeros(k, k);
            if let Some(gu) = &gu {
                let j = (u.transpose() * gu - gu.transpose() * u).component_mul(&f);
                core += j * &sig;
            }
            if let Some(gv) = &gv {
                let j = (v.transpose() * gv - gv.transpose() * v).component_mul(&f);
                core += &sig * j;
            }
            if let Some(gs) = &gs {
                core += linalg::diag_part(gs);
            }
            let mut ga = u * core * v.transpose();
            let smallest = sv.iter().cloned().fold(f64::INFINITY, f64::min);
            let needs_u_proj = n > k && gu.is_some();
            let needs_v_proj = m > k && gv.is_some();
            if (needs_u_proj || needs_v_proj) && smallest < 1e-12 {
                return Err(AutodiffError::Conditioning(
                    "svd adjoint: vanishing singular value with rectangular input".into(),
                ));
            }
            let sig_inv = Mat::from_fn(k, k, |i, j| {
                if i == j && sv[i] > 0.0 {
                    1.0 / sv[i]
                } else {
                    0.0
                }
            });
            if needs_u_proj {
                let gu = gu.as_ref().unwrap();
                ga += (Mat::identity(n, n) - u * u.transpose()) * gu * &sig_inv * v.transpose();
            }
            if needs_v_proj {
                let gv = gv.as_ref().unwrap();
                ga += u * &sig_inv * gv.transpose() * (Mat::identity(m, m) - v * v.transpose());
            }
            vec![Some(ga)]
        }
        Op::Inverse => vec![g0().map(|g| {
            let inv_t = node.outputs[0].transpose();
            -(&inv_t * g * &inv_t)
        })],
        Op::BlockDiag { sizes } => match g0() {
            Some(g) => {
                let mut out = Vec::with_capacity(sizes.len());
                let (mut r0, mut c0) = (0, 0);
                for &(r, c) in sizes {
                    out.push(Some(g.view((r0, c0), (r, c)).into_owned()));
                    r0 += r;
                    c0 += c;
                }
                out
            }
            None => vec![None; sizes.len()],
        },
        Op::Slice { r0, c0, rows, cols } => {
            let (ir, ic) = (input_value(0).nrows(), input_value(0).ncols());
            vec![g0().map(|g| {
                let mut out = Mat::zeros(ir, ic);
                out.view_mut((*r0, *c0), (*rows, *cols)).copy_from(&g);
                out
            })]
        }
        Op::Pad { r0, c0, .. } => {
            let (ir, ic) = (input_value(0).nrows(), input_value(0).ncols());
            vec![g0().map(|g| g.view((*r0, *c0), (ir, ic)).into_owned())]
        }
        Op::ReshapeRowMajor => {
            let (ir, ic) = (input_value(0).nrows(), input_value(0).ncols());
            vec![g0().map(|g| reshape_row_major(&g, ir, ic))]
        }
        Op::LinComb { basis } => match g0() {
            Some(g) => basis
                .iter()
                .map(|b| Some(Mat::from_element(1, 1, g.dot(b))))
                .collect(),
            None => vec![None; basis.len()],
        },
        Op::DiagFn(tag) => {
            let x = input_value(0);
            vec![g0().map(|g| {
                let k = x.nrows().min(x.ncols());
                let mut out = Mat::zeros(x.nrows(), x.ncols());
                for i in 0..k {
                    out[(i, i)] = g[(i, i)] * tag.derivative(x[(i, i)]);
                }
                out
            })]
        }
        Op::MaskStrictLower => vec![g0().map(|g| linalg::lower_strict(&g))],
        Op::MaskDiag => vec![g0().map(|g| linalg::diag_part(&g))],
        Op::SoftmaxCe { label } => {
            let z = input_value(0);
            vec![g0().map(|g| {
                let m = z.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                let exps: Vec<f64> = z.iter().map(|&x| (x - m).exp()).collect();
                let sum: f64 = exps.iter().sum();
                let s = g[(0, 0)];
                Mat::from_fn(1, z.ncols(), |_, c| {
                    let p = exps[c] / sum;
                    s * (p - if c == *label { 1.0 } else { 0.0 })
                })
            })]
        }
    };
    Ok(grads)
}

/// Evaluates `f` on a fresh tape over the given leaf values and returns the
/// scalar loss value.
fn eval_loss<F>(f: &F, xs: &[Mat]) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = xs.iter().map(|m| tape.leaf(m.clone())).collect();
    let loss = f(&tape, &vars)?;
    let v = loss.value();
    if v.nrows() != 1 || v.ncols() != 1 {
        return Err(AutodiffError::NonScalarLoss {
            rows: v.nrows(),
            cols: v.ncols(),
        });
    }
    let x = v[(0, 0)];
    if !x.is_finite() {
        return Err(AutodiffError::NotFinite("gradcheck evaluation"));
    }
    Ok(x)
}

/// Compares the tape gradient of a scalar function against central finite
/// differences over every entry of every leaf. The step is
/// `1e-5 · max(1, |entry|)` and errors are normalized by
/// `max(1, |analytic|)`. Returns the maximum relative error.
pub fn gradcheck_fn<F>(f: F, inputs: &[Mat]) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|m| tape.leaf(m.clone())).collect();
    let loss = f(&tape, &vars)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Mat> = vars.iter().map(|v| grads.get(*v)).collect();

    let mut max_rel = 0.0f64;
    for (k, x0) in inputs.iter().enumerate() {
        for r in 0..x0.nrows() {
            for c in 0..x0.ncols() {
                let h = 1e-5 * x0[(r, c)].abs().max(1.0);
                let mut xs_plus: Vec<Mat> = inputs.to_vec();
                xs_plus[k][(r, c)] += h;
                let mut xs_minus: Vec<Mat> = inputs.to_vec();
                xs_minus[k][(r, c)] -= h;
                let fd = (eval_loss(&f, &xs_plus)? - eval_loss(&f, &xs_minus)?) / (2.0 * h);
                let an = analytic[k][(r, c)];
                let rel = (fd - an).abs() / an.abs().max(1.0);
                max_rel = max_rel.max(rel);
            }
        }
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{rng_for, sample_spd, sample_sym, standard_normal_mat};

    #[test]
    fn trace_gradient_is_identity() {
        let tape = Tape::new();
        let x = tape.leaf(standard_normal_mat(&mut rng_for(1, "ad/tr"), 3, 3));
        let loss = x.trace();
        let g = tape.backward(loss).unwrap().get(x);
        assert!((g - Mat::identity(3, 3)).norm() < 1e-14);
    }

    #[test]
    fn frob_norm_gradient_is_2x() {
        let tape = Tape::new();
        let xv = standard_normal_mat(&mut rng_for(2, "ad/fro"), 3, 4);
        let x = tape.leaf(xv.clone());
        let loss = x.frob(x);
        let g = tape.backward(loss).unwrap().get(x);
        assert!((g - xv.scale(2.0)).norm() < 1e-14);
    }

    #[test]
    fn trace_log_gradient_is_inverse() {
        let tape = Tape::new();
        let p = tape.leaf(Mat::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 3.0]));
        let loss = p.spd_fn(SpdFnTag::Log).unwrap().trace();
        let g = tape.backward(loss).unwrap().get(p);
        let expected = Mat::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 1.0 / 3.0]);
        assert!((g - expected).norm() < 1e-12);
    }

    #[test]
    fn unreachable_leaf_gets_zero() {
        let tape = Tape::new();
        let x = tape.leaf(Mat::identity(2, 2));
        let y = tape.leaf(Mat::identity(2, 2));
        let loss = x.trace();
        let g = tape.backward(loss).unwrap().get(y);
        assert_eq!(g, Mat::zeros(2, 2));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let tape = Tape::new();
        let x = tape.leaf(Mat::identity(2, 2));
        assert!(matches!(
            tape.backward(x),
            Err(AutodiffError::NonScalarLoss { .. })
        ));
    }

    #[test]
    fn oracle_op_rejected_at_record() {
        let tape = Tape::new();
        let x = tape.leaf(Mat::identity(2, 2));
        assert!(matches!(
            tape.mat_log_orthogonal(x),
            Err(AutodiffError::UnsupportedOp("mat_log_orthogonal"))
        ));
    }

    #[test]
    fn gradcheck_trace_of_square() {
        let x = standard_normal_mat(&mut rng_for(3, "ad/gc1"), 4, 4);
        let err = gradcheck_fn(|_, vs| Ok((vs[0] * vs[0]).trace()), &[x]).unwrap();
        assert!(err < 1e-7, "max rel err {err}");
    }

    #[test]
    fn gradcheck_log_frobenius() {
        let p = sample_spd(&mut rng_for(4, "ad/gc2"), 4, 0.6);
        let err = gradcheck_fn(
            |_, vs| {
                let l = vs[0].sym().spd_fn(SpdFnTag::Log)?;
                Ok(l.frob(l))
            },
            &[p.into_mat()],
        )
        .unwrap();
        assert!(err < 1e-5, "max rel err {err}");
    }

    #[test]
    fn gradcheck_elementary_ops() {
        let mut rng = rng_for(5, "ad/gc3");
        let a = standard_normal_mat(&mut rng, 3, 4);
        let b = standard_normal_mat(&mut rng, 4, 3);
        let err = gradcheck_fn(
            |_, vs| {
                let prod = vs[0] * vs[1];
                Ok((prod + prod.t().scale(0.5) - prod.scale(0.25)).trace())
            },
            &[a, b],
        )
        .unwrap();
        assert!(err < 1e-7, "max rel err {err}");
    }

    #[test]
    fn gradcheck_spd_fns() {
        for (i, tag) in [SpdFnTag::Exp, SpdFnTag::Log, SpdFnTag::Sqrt, SpdFnTag::InvSqrt]
            .into_iter()
            .enumerate()
        {
            let mut rng = rng_for(6 + i as u64, "ad/gc4");
            let p = sample_spd(&mut rng, 4, 0.5);
            let w = sample_sym(&mut rng, 4, 1.0);
            let err = gradcheck_fn(
                move |tape, vs| {
                    let f = vs[0].sym().spd_fn(tag)?;
                    Ok(f.frob(tape.constant(w.as_mat().clone())))
                },
                &[p.into_mat()],
            )
            .unwrap();
            assert!(err < 1e-4, "{tag:?}: max rel err {err}");
        }
    }

    #[test]
    fn gradcheck_cholesky() {
        let mut rng = rng_for(11, "ad/gc5");
        let p = sample_spd(&mut rng, 4, 0.5);
        let w = standard_normal_mat(&mut rng, 4, 4);
        let err = gradcheck_fn(
            move |tape, vs| {
                let l = vs[0].sym().cholesky()?;
                Ok(l.frob(tape.constant(w.clone())))
            },
            &[p.into_mat()],
        )
        .unwrap();
        assert!(err < 1e-5, "max rel err {err}");
    }

    #[test]
    fn gradcheck_qr() {
        let mut rng = rng_for(12, "ad/gc6");
        let x = standard_normal_mat(&mut rng, 5, 3);
        let wq = standard_normal_mat(&mut rng, 5, 3);
        let wr = standard_normal_mat(&mut rng, 3, 3);
        let err = gradcheck_fn(
            move |tape, vs| {
                let (q, r) = vs[0].qr()?;
                Ok(q.frob(tape.constant(wq.clone())) + r.frob(tape.constant(wr.clone())))
            },
            &[x],
        )
        .unwrap();
        assert!(err < 1e-5, "max rel err {err}");
    }

    #[test]
    fn gradcheck_svd_all_outputs() {
        let mut rng = rng_for(13, "ad/gc7");
        // Constructed with well-separated singular values.
        let u = crate::rng::sample_orthonormal(&mut rng, 5, 3);
        let v = crate::rng::sample_orthonormal(&mut rng, 3, 3);
        let s = Mat::from_diagonal(&Vector::from_vec(vec![3.0, 1.7, 0.6]));
        let x = u * s * v.transpose();
        let wu = standard_normal_mat(&mut rng, 5, 3);
        let wv = standard_normal_mat(&mut rng, 3, 3);
        let ws = standard_normal_mat(&mut rng, 3, 3);
        let err = gradcheck_fn(
            move |tape, vs| {
                let (u, s, v) = vs[0].svd()?;
                Ok(u.frob(tape.constant(wu.clone()))
                    + s.frob(tape.constant(ws.clone()))
                    + v.frob(tape.constant(wv.clone())))
            },
            &[x],
        )
        .unwrap();
        assert!(err < 1e-4, "max rel err {err}");
    }

    #[test]
    fn svd_adjoint_rejects_small_gap() {
        let tape = Tape::new();
        let x = tape.leaf(Mat::identity(3, 3));
        let (u, _, _) = x.svd().unwrap();
        let loss = u.frob(tape.constant(Mat::identity(3, 3)));
        assert!(matches!(
            tape.backward(loss),
            Err(AutodiffError::Conditioning(_))
        ));
    }

    #[test]
    fn gradcheck_inverse_blockdiag_slice_pad_reshape() {
        let mut rng = rng_for(14, "ad/gc8");
        let p = sample_spd(&mut rng, 3, 0.4).into_mat();
        let b = standard_normal_mat(&mut rng, 2, 3);
        let err = gradcheck_fn(
            |tape, vs| {
                let inv = vs[0].inverse()?;
                let blk = tape.block_diag(&[inv, vs[1]]);
                let sl = blk.slice(1, 1, 3, 4);
                let rs = sl.reshape(4, 3);
                let pd = rs.pad(5, 4, 1, 1);
                Ok(pd.frob(pd))
            },
            &[p, b],
        )
        .unwrap();
        assert!(err < 1e-6, "max rel err {err}");
    }

    #[test]
    fn gradcheck_lincomb_diagfn_masks() {
        let mut rng = rng_for(15, "ad/gc9");
        let x = sample_spd(&mut rng, 3, 0.4).into_mat();
        let b1 = standard_normal_mat(&mut rng, 2, 2);
        let b2 = standard_normal_mat(&mut rng, 2, 2);
        let err = gradcheck_fn(
            move |tape, vs| {
                let t1 = vs[0].trace();
                let l = vs[0].sym().cholesky()?;
                let t2 = l.diag_part().diag_fn(DiagFnTag::Log)?.trace();
                let combo = tape.lin_comb(&[t1, t2], &[b1.clone(), b2.clone()]);
                let low = vs[0].lower_strict().frob(vs[0].half_lower());
                Ok(combo.frob(combo) + low)
            },
            &[x],
        )
        .unwrap();
        assert!(err < 1e-5, "max rel err {err}");
    }

    #[test]
    fn gradcheck_arctan_diag_and_softmax() {
        let mut rng = rng_for(16, "ad/gc10");
        let d = Mat::from_diagonal(&Vector::from_vec(vec![0.3, 1.2, -0.5]));
        let z = standard_normal_mat(&mut rng, 1, 4);
        let err = gradcheck_fn(
            |_, vs| {
                let a = vs[0].diag_fn(DiagFnTag::Arctan)?.trace();
                let ce = vs[1].softmax_cross_entropy(2)?;
                Ok(a + ce)
            },
            &[d, z],
        )
        .unwrap();
        assert!(err < 1e-7, "max rel err {err}");
    }

    #[test]
    fn gradcheck_mat_exp_composite() {
        let mut rng = rng_for(17, "ad/gc11");
        let a = standard_normal_mat(&mut rng, 3, 3).scale(0.8);
        let w = standard_normal_mat(&mut rng, 3, 3);
        let err = gradcheck_fn(
            move |tape, vs| {
                let e = mat_exp_var(tape, vs[0]);
                Ok(e.frob(tape.constant(w.clone())))
            },
            &[a],
        )
        .unwrap();
        assert!(err < 1e-6, "max rel err {err}");
    }

    #[test]
    fn symmetric_input_symmetric_gradient() {
        let mut rng = rng_for(18, "ad/sym");
        let s = standard_normal_mat(&mut rng, 4, 4);
        let tape = Tape::new();
        let x = tape.leaf(s);
        let loss = x.sym().spd_fn(SpdFnTag::Exp).unwrap().trace();
        let g = tape.backward(loss).unwrap().get(x);
        assert!((&g - g.transpose()).norm() < 1e-12);
    }

    #[test]
    fn mat_exp_var_matches_kernel() {
        let mut rng = rng_for(19, "ad/expv");
        let a = standard_normal_mat(&mut rng, 4, 4);
        let tape = Tape::new();
        let v = tape.leaf(a.clone());
        let e = mat_exp_var(&tape, v);
        assert!((e.value() - linalg::mat_exp(&a)).norm() < 1e-12);
    }
}
