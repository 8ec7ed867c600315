//! Dense float64 matrices with reverse-mode automatic differentiation.
//!
//! The operation set is exactly what the classifiers in [`crate::model`]
//! need — matrix product, transpose, broadcast add, tanh / relu /
//! sigmoid, row softmax, concatenation, column mean, dropout, row/column
//! gather, and two loss heads — recorded on a [`Tape`] and differentiated
//! in reverse. Everything is plain `f64` on the heap: the target is
//! correctness and reproducibility at clinical-corpus scale (hundreds of
//! transcripts), not throughput.
//!
//! Shape errors are programming errors and panic immediately with both
//! shapes in the message; runtime conditions (non-scalar loss, reusing a
//! spent tape) are `Result`s. Gradient correctness is enforced by
//! [`fd_check`], a central-finite-difference oracle the test suite runs
//! against every model configuration.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::fmt;
use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors surfaced by graph evaluation (shape errors panic instead).
#[derive(Debug, Error)]
pub enum TensorError {
    /// `backward` requires a 1×1 loss.
    #[error("loss must be 1x1, got {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },
    /// Each tape supports a single backward pass.
    #[error("tape already consumed by a previous backward pass")]
    TapeConsumed,
}

/// A dense row-major float64 matrix.
///
/// Serialization keeps exact `f64` values (JSON round-trips are
/// bit-lossless for finite floats), so checkpoints restore training state
/// exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MatrixRepr", into = "MatrixRepr")]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct MatrixRepr {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl TryFrom<MatrixRepr> for Matrix {
    type Error = String;

    fn try_from(r: MatrixRepr) -> Result<Self, String> {
        if r.rows == 0 || r.cols == 0 {
            return Err(format!("matrix dims must be positive, got {}x{}", r.rows, r.cols));
        }
        if r.data.len() != r.rows * r.cols {
            return Err(format!(
                "matrix data length {} does not match {}x{}",
                r.data.len(),
                r.rows,
                r.cols
            ));
        }
        Ok(Matrix {
            rows: r.rows,
            cols: r.cols,
            data: r.data,
        })
    }
}

impl From<Matrix> for MatrixRepr {
    fn from(m: Matrix) -> MatrixRepr {
        MatrixRepr {
            rows: m.rows,
            cols: m.cols,
            data: m.data,
        }
    }
}

impl Matrix {
    /// All-zeros matrix. Dimensions must be positive.
    pub fn zeros(rows: usize, cols: usize) -> Matrix {
        Matrix::filled(rows, cols, 0.0)
    }

    /// Constant-filled matrix.
    pub fn filled(rows: usize, cols: usize, value: f64) -> Matrix {
        assert!(rows > 0 && cols > 0, "matrix dims must be positive, got {rows}x{cols}");
        Matrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    /// Builds from row-major data; panics unless `data.len() == rows*cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Matrix {
        assert!(rows > 0 && cols > 0, "matrix dims must be positive, got {rows}x{cols}");
        assert_eq!(
            data.len(),
            rows * cols,
            "data length {} does not match {rows}x{cols}",
            data.len()
        );
        Matrix { rows, cols, data }
    }

    /// Builds from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Matrix {
        assert!(!rows.is_empty(), "matrix needs at least one row");
        let cols = rows[0].len();
        let data: Vec<f64> = rows
            .iter()
            .inspect(|r| assert_eq!(r.len(), cols, "ragged rows: {} vs {cols}", r.len()))
            .flatten()
            .copied()
            .collect();
        Matrix::from_vec(rows.len(), cols, data)
    }

    /// The n×n identity.
    pub fn identity(n: usize) -> Matrix {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    /// Uniform init on ±sqrt(6 / (rows + cols)), the usual variance-
    /// preserving range for tanh layers.
    pub fn glorot_uniform<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| rng.gen_range(-limit..limit))
            .collect();
        Matrix::from_vec(rows, cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

impl fmt::Display for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "[{}x{}]", self.rows, self.cols)?;
        for r in 0..self.rows {
            for c in 0..self.cols {
                write!(f, "{}{:10.4}", if c > 0 { " " } else { "" }, self.get(r, c))?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

// Plain (untracked) matrix arithmetic used by the op forwards.

fn matmul_values(a: &Matrix, b: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        for k in 0..a.cols {
            let aik = a.get(i, k);
            if aik == 0.0 {
                continue;
            }
            for j in 0..b.cols {
                out.data[i * b.cols + j] += aik * b.get(k, j);
            }
        }
    }
    out
}

fn transpose_values(a: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(a.cols, a.rows);
    for r in 0..a.rows {
        for c in 0..a.cols {
            out.set(c, r, a.get(r, c));
        }
    }
    out
}

fn map_values(a: &Matrix, f: impl Fn(f64) -> f64) -> Matrix {
    Matrix {
        rows: a.rows,
        cols: a.cols,
        data: a.data.iter().map(|&x| f(x)).collect(),
    }
}

fn add_values(a: &Matrix, b: &Matrix) -> Matrix {
    let mut out = a.clone();
    for (o, &x) in out.data.iter_mut().zip(&b.data) {
        *o += x;
    }
    out
}

fn row_softmax_values(a: &Matrix) -> Matrix {
    let mut out = a.clone();
    for r in 0..a.rows {
        let row = &mut out.data[r * a.cols..(r + 1) * a.cols];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            sum += *x;
        }
        for x in row.iter_mut() {
            *x /= sum;
        }
    }
    out
}

const BCE_CLAMP: f64 = 1e-12;
const CE_CLAMP: f64 = 1e-12;

/// One recorded operation: parents by node index plus whatever the
/// backward rule needs.
enum Op {
    Leaf,
    MatMul(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    /// Adds a column vector to every column of a matrix.
    AddColBroadcast(usize, usize),
    Scale(usize, f64),
    Tanh(usize),
    Relu(usize),
    Sigmoid(usize),
    RowSoftmax(usize),
    /// Horizontal concatenation: each output row is the left row followed
    /// by the right row.
    ConcatRows(usize, usize),
    MeanOverColumns(usize),
    /// Mask entries are pre-scaled: 1/(1-rate) where kept, 0 where
    /// dropped, so the forward is a plain elementwise product.
    Dropout(usize, Matrix),
    PickRows(usize, Vec<usize>),
    PickCols(usize, Vec<usize>),
    /// Mean binary cross-entropy of an n×1 probability column against
    /// 0/1 targets.
    BceLoss(usize, Vec<f64>),
    /// Weighted cross-entropy from probability rows: entries are
    /// (row, class, weight); the loss is the weighted mean of
    /// -ln p[row][class] over the entries.
    CeFromProbs(usize, Vec<(usize, usize, f64)>),
}

struct Node {
    value: Matrix,
    requires_grad: bool,
    grad: Option<Matrix>,
    op: Op,
}

struct TapeInner {
    nodes: Vec<Node>,
    consumed: bool,
}

/// A recording of forward operations, differentiated once by
/// [`Var::backward`]. Cheap to clone (shared handle); confined to one
/// thread — run parallel training folds on separate tapes.
#[derive(Clone)]
pub struct Tape {
    inner: Rc<RefCell<TapeInner>>,
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

impl Tape {
    pub fn new() -> Tape {
        Tape {
            inner: Rc::new(RefCell::new(TapeInner {
                nodes: Vec::new(),
                consumed: false,
            })),
        }
    }

    /// Records an input matrix. Gradients flow into it only when
    /// `requires_grad` is set (frozen parameters record with `false`).
    pub fn leaf(&self, value: Matrix, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    /// Convenience constant (no gradient).
    pub fn constant(&self, value: Matrix) -> Var {
        self.leaf(value, false)
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Matrix, requires_grad: bool, op: Op) -> Var {
        let mut inner = self.inner.borrow_mut();
        inner.nodes.push(Node {
            value,
            requires_grad,
            grad: None,
            op,
        });
        Var {
            tape: self.clone(),
            index: inner.nodes.len() - 1,
        }
    }

    fn value_of(&self, index: usize) -> Matrix {
        self.inner.borrow().nodes[index].value.clone()
    }

    fn requires(&self, index: usize) -> bool {
        self.inner.borrow().nodes[index].requires_grad
    }
}

/// A matrix value recorded on a [`Tape`].
#[derive(Clone)]
pub struct Var {
    tape: Tape,
    index: usize,
}

fn assert_same_tape(a: &Var, b: &Var) {
    assert!(
        Rc::ptr_eq(&a.tape.inner, &b.tape.inner),
        "operands live on different tapes"
    );
}

impl Var {
    /// A copy of the forward value.
    pub fn value(&self) -> Matrix {
        self.tape.value_of(self.index)
    }

    pub fn shape(&self) -> (usize, usize) {
        let inner = self.tape.inner.borrow();
        inner.nodes[self.index].value.shape()
    }

    /// The scalar in a 1×1 value; panics otherwise.
    pub fn scalar(&self) -> f64 {
        let v = self.value();
        assert_eq!(v.shape(), (1, 1), "scalar() on {}x{} value", v.rows(), v.cols());
        v.get(0, 0)
    }

    /// The gradient accumulated by the last backward pass, if any flowed
    /// here. `None` before backward or on `requires_grad = false` nodes.
    pub fn grad(&self) -> Option<Matrix> {
        self.tape.inner.borrow().nodes[self.index].grad.clone()
    }

    /// Matrix product `self · rhs`.
    pub fn matmul(&self, rhs: &Var) -> Var {
        assert_same_tape(self, rhs);
        let (ar, ac) = self.shape();
        let (br, bc) = rhs.shape();
        assert_eq!(
            ac, br,
            "matmul shape mismatch: {ar}x{ac} · {br}x{bc}"
        );
        let value = matmul_values(&self.value(), &rhs.value());
        let req = self.tape.requires(self.index) || self.tape.requires(rhs.index);
        self.tape.push(value, req, Op::MatMul(self.index, rhs.index))
    }

    pub fn transpose(&self) -> Var {
        let value = transpose_values(&self.value());
        let req = self.tape.requires(self.index);
        self.tape.push(value, req, Op::Transpose(self.index))
    }

    /// Elementwise sum of two equal-shape matrices.
    pub fn add(&self, rhs: &Var) -> Var {
        assert_same_tape(self, rhs);
        let (a, b) = (self.shape(), rhs.shape());
        assert_eq!(a, b, "add shape mismatch: {}x{} + {}x{}", a.0, a.1, b.0, b.1);
        let value = add_values(&self.value(), &rhs.value());
        let req = self.tape.requires(self.index) || self.tape.requires(rhs.index);
        self.tape.push(value, req, Op::Add(self.index, rhs.index))
    }

    /// Adds a column vector to every column: `self (r×c) + col (r×1)`.
    pub fn add_col_broadcast(&self, col: &Var) -> Var {
        assert_same_tape(self, col);
        let (r, c) = self.shape();
        let (br, bc) = col.shape();
        assert!(
            br == r && bc == 1,
            "add_col_broadcast shape mismatch: {r}x{c} + {br}x{bc} (need {r}x1)"
        );
        let colv = col.value();
        let mut value = self.value();
        for i in 0..r {
            for j in 0..c {
                let v = value.get(i, j) + colv.get(i, 0);
                value.set(i, j, v);
            }
        }
        let req = self.tape.requires(self.index) || self.tape.requires(col.index);
        self.tape
            .push(value, req, Op::AddColBroadcast(self.index, col.index))
    }

    pub fn scale(&self, c: f64) -> Var {
        let value = map_values(&self.value(), |x| c * x);
        let req = self.tape.requires(self.index);
        self.tape.push(value, req, Op::Scale(self.index, c))
    }

    pub fn tanh(&self) -> Var {
        let value = map_values(&self.value(), f64::tanh);
        let req = self.tape.requires(self.index);
        self.tape.push(value, req, Op::Tanh(self.index))
    }

    pub fn relu(&self) -> Var {
        let value = map_values(&self.value(), |x| x.max(0.0));
        let req = self.tape.requires(self.index);
        self.tape.push(value, req, Op::Relu(self.index))
    }

    pub fn sigmoid(&self) -> Var {
        let value = map_values(&self.value(), |x| 1.0 / (1.0 + (-x).exp()));
        let req = self.tape.requires(self.index);
        self.tape.push(value, req, Op::Sigmoid(self.index))
    }

    /// Softmax independently over each row, computed with max-subtraction
    /// so large logits cannot overflow.
    pub fn row_softmax(&self) -> Var {
        let value = row_softmax_values(&self.value());
        let req = self.tape.requires(self.index);
        self.tape.push(value, req, Op::RowSoftmax(self.index))
    }

    /// Joins rows side by side: `(r×c1, r×c2) → r×(c1+c2)`.
    pub fn concat_rows(&self, rhs: &Var) -> Var {
        assert_same_tape(self, rhs);
        let (ar, ac) = self.shape();
        let (br, bc) = rhs.shape();
        assert_eq!(
            ar, br,
            "concat_rows shape mismatch: {ar}x{ac} | {br}x{bc} (row counts differ)"
        );
        let (a, b) = (self.value(), rhs.value());
        let mut value = Matrix::zeros(ar, ac + bc);
        for i in 0..ar {
            for j in 0..ac {
                value.set(i, j, a.get(i, j));
            }
            for j in 0..bc {
                value.set(i, ac + j, b.get(i, j));
            }
        }
        let req = self.tape.requires(self.index) || self.tape.requires(rhs.index);
        self.tape
            .push(value, req, Op::ConcatRows(self.index, rhs.index))
    }

    /// Column-wise mean: `r×c → r×1`.
    pub fn mean_over_columns(&self) -> Var {
        let (r, c) = self.shape();
        let v = self.value();
        let mut value = Matrix::zeros(r, 1);
        for i in 0..r {
            let mut sum = 0.0;
            for j in 0..c {
                sum += v.get(i, j);
            }
            value.set(i, 0, sum / c as f64);
        }
        let req = self.tape.requires(self.index);
        self.tape.push(value, req, Op::MeanOverColumns(self.index))
    }

    /// Inverted dropout: during training each entry is kept with
    /// probability `1 - rate` and scaled by `1/(1 - rate)`; in eval mode
    /// the input passes through untouched.
    pub fn dropout<R: Rng>(&self, rate: f64, training: bool, rng: &mut R) -> Var {
        assert!((0.0..1.0).contains(&rate), "dropout rate must be in [0,1), got {rate}");
        if !training || rate == 0.0 {
            return self.clone();
        }
        let (r, c) = self.shape();
        let keep_scale = 1.0 / (1.0 - rate);
        let mask = Matrix::from_vec(
            r,
            c,
            (0..r * c)
                .map(|_| if rng.gen_bool(1.0 - rate) { keep_scale } else { 0.0 })
                .collect(),
        );
        let v = self.value();
        let mut value = v.clone();
        for (o, &m) in value.data.iter_mut().zip(&mask.data) {
            *o *= m;
        }
        let req = self.tape.requires(self.index);
        self.tape.push(value, req, Op::Dropout(self.index, mask))
    }

    /// Gathers rows by index (repeats allowed).
    pub fn pick_rows(&self, ids: &[usize]) -> Var {
        assert!(!ids.is_empty(), "pick_rows needs at least one index");
        let (r, c) = self.shape();
        for &i in ids {
            assert!(i < r, "pick_rows index {i} out of range for {r}x{c}");
        }
        let v = self.value();
        let mut value = Matrix::zeros(ids.len(), c);
        for (out_r, &src_r) in ids.iter().enumerate() {
            for j in 0..c {
                value.set(out_r, j, v.get(src_r, j));
            }
        }
        let req = self.tape.requires(self.index);
        self.tape
            .push(value, req, Op::PickRows(self.index, ids.to_vec()))
    }

    /// Gathers columns by index (repeats allowed).
    pub fn pick_cols(&self, ids: &[usize]) -> Var {
        assert!(!ids.is_empty(), "pick_cols needs at least one index");
        let (r, c) = self.shape();
        for &j in ids {
            assert!(j < c, "pick_cols index {j} out of range for {r}x{c}");
        }
        let v = self.value();
        let mut value = Matrix::zeros(r, ids.len());
        for i in 0..r {
            for (out_c, &src_c) in ids.iter().enumerate() {
                value.set(i, out_c, v.get(i, src_c));
            }
        }
        let req = self.tape.requires(self.index);
        self.tape
            .push(value, req, Op::PickCols(self.index, ids.to_vec()))
    }

    /// Mean binary cross-entropy of an n×1 probability column against 0/1
    /// targets, with probabilities clamped to `[1e-12, 1 - 1e-12]`.
    pub fn bce_loss(&self, targets: &[f64]) -> Var {
        let (r, c) = self.shape();
        assert_eq!(c, 1, "bce_loss needs an nx1 column, got {r}x{c}");
        assert_eq!(
            targets.len(),
            r,
            "bce_loss target count {} does not match {r} predictions",
            targets.len()
        );
        for &t in targets {
            assert!(t == 0.0 || t == 1.0, "bce_loss targets must be 0 or 1, got {t}");
        }
        let p = self.value();
        let mut sum = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            let pc = p.get(i, 0).clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            sum -= t * pc.ln() + (1.0 - t) * (1.0 - pc).ln();
        }
        let value = Matrix::filled(1, 1, sum / r as f64);
        let req = self.tape.requires(self.index);
        self.tape
            .push(value, req, Op::BceLoss(self.index, targets.to_vec()))
    }

    /// Weighted mean cross-entropy read off probability rows: each entry
    /// `(row, class, weight)` contributes `-weight · ln p[row][class]`
    /// (argument clamped below at 1e-12), averaged over the entries.
    /// With no entries the loss is a constant zero.
    pub fn ce_from_probs(&self, entries: &[(usize, usize, f64)]) -> Var {
        let (r, c) = self.shape();
        for &(row, class, _) in entries {
            assert!(
                row < r && class < c,
                "ce_from_probs entry ({row},{class}) out of range for {r}x{c}"
            );
        }
        if entries.is_empty() {
            return self.tape.constant(Matrix::zeros(1, 1));
        }
        let p = self.value();
        let mut sum = 0.0;
        for &(row, class, w) in entries {
            sum -= w * p.get(row, class).max(CE_CLAMP).ln();
        }
        let value = Matrix::filled(1, 1, sum / entries.len() as f64);
        let req = self.tape.requires(self.index);
        self.tape
            .push(value, req, Op::CeFromProbs(self.index, entries.to_vec()))
    }

    /// Reverse pass from a 1×1 loss: accumulates `dLoss/dNode` into every
    /// reachable node whose `requires_grad` is set. Consumes the tape —
    /// a second call reports [`TensorError::TapeConsumed`].
    pub fn backward(&self) -> Result<(), TensorError> {
        let mut inner = self.tape.inner.borrow_mut();
        let (rows, cols) = inner.nodes[self.index].value.shape();
        if (rows, cols) != (1, 1) {
            return Err(TensorError::NonScalarLoss { rows, cols });
        }
        if inner.consumed {
            return Err(TensorError::TapeConsumed);
        }
        inner.consumed = true;

        let n = inner.nodes.len();
        let mut grads: Vec<Option<Matrix>> = (0..n).map(|_| None).collect();
        grads[self.index] = Some(Matrix::filled(1, 1, 1.0));

        for i in (0..=self.index).rev() {
            let Some(g) = grads[i].clone() else { continue };
            if !inner.nodes[i].requires_grad {
                continue;
            }
            let acc = |grads: &mut Vec<Option<Matrix>>,
                       nodes: &[Node],
                       parent: usize,
                       delta: Matrix| {
                if !nodes[parent].requires_grad {
                    return;
                }
                match &mut grads[parent] {
                    Some(m) => {
                        for (o, &d) in m.data.iter_mut().zip(&delta.data) {
                            *o += d;
                        }
                    }
                    slot @ None => *slot = Some(delta),
                }
            };

            match &inner.nodes[i].op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (a, b) = (*a, *b);
                    let av = inner.nodes[a].value.clone();
                    let bv = inner.nodes[b].value.clone();
                    let da = matmul_values(&g, &transpose_values(&bv));
                    let db = matmul_values(&transpose_values(&av), &g);
                    acc(&mut grads, &inner.nodes, a, da);
                    acc(&mut grads, &inner.nodes, b, db);
                }
                Op::Transpose(a) => {
                    let a = *a;
                    acc(&mut grads, &inner.nodes, a, transpose_values(&g));
                }
                Op::Add(a, b) => {
                    let (a, b) = (*a, *b);
                    acc(&mut grads, &inner.nodes, a, g.clone());
                    acc(&mut grads, &inner.nodes, b, g);
                }
                Op::AddColBroadcast(a, col) => {
                    let (a, col) = (*a, *col);
                    let mut dcol = Matrix::zeros(g.rows, 1);
                    for r in 0..g.rows {
                        let mut sum = 0.0;
                        for c in 0..g.cols {
                            sum += g.get(r, c);
                        }
                        dcol.set(r, 0, sum);
                    }
                    acc(&mut grads, &inner.nodes, a, g);
                    acc(&mut grads, &inner.nodes, col, dcol);
                }
                Op::Scale(a, c) => {
                    let (a, c) = (*a, *c);
                    acc(&mut grads, &inner.nodes, a, map_values(&g, |x| c * x));
                }
                Op::Tanh(a) => {
                    let a = *a;
                    let y = &inner.nodes[i].value;
                    let mut da = g.clone();
                    for (d, &yv) in da.data.iter_mut().zip(&y.data) {
                        *d *= 1.0 - yv * yv;
                    }
                    acc(&mut grads, &inner.nodes, a, da);
                }
                Op::Relu(a) => {
                    let a = *a;
                    let x = &inner.nodes[a].value;
                    let mut da = g.clone();
                    for (d, &xv) in da.data.iter_mut().zip(&x.data) {
                        if xv <= 0.0 {
                            *d = 0.0;
                        }
                    }
                    acc(&mut grads, &inner.nodes, a, da);
                }
                Op::Sigmoid(a) => {
                    let a = *a;
                    let y = &inner.nodes[i].value;
                    let mut da = g.clone();
                    for (d, &yv) in da.data.iter_mut().zip(&y.data) {
                        *d *= yv * (1.0 - yv);
                    }
                    acc(&mut grads, &inner.nodes, a, da);
                }
                Op::RowSoftmax(a) => {
                    let a = *a;
                    let y = &inner.nodes[i].value;
                    let mut da = Matrix::zeros(g.rows, g.cols);
                    for r in 0..g.rows {
                        let mut dot = 0.0;
                        for c in 0..g.cols {
                            dot += g.get(r, c) * y.get(r, c);
                        }
                        for c in 0..g.cols {
                            da.set(r, c, y.get(r, c) * (g.get(r, c) - dot));
                        }
                    }
                    acc(&mut grads, &inner.nodes, a, da);
                }
                Op::ConcatRows(a, b) => {
                    let (a, b) = (*a, *b);
                    let ac = inner.nodes[a].value.cols();
                    let bc = inner.nodes[b].value.cols();
                    let mut da = Matrix::zeros(g.rows, ac);
                    let mut db = Matrix::zeros(g.rows, bc);
                    for r in 0..g.rows {
                        for c in 0..ac {
                            da.set(r, c, g.get(r, c));
                        }
                        for c in 0..bc {
                            db.set(r, c, g.get(r, ac + c));
                        }
                    }
                    acc(&mut grads, &inner.nodes, a, da);
                    acc(&mut grads, &inner.nodes, b, db);
                }
                Op::MeanOverColumns(a) => {
                    let a = *a;
                    let (r, c) = inner.nodes[a].value.shape();
                    let mut da = Matrix::zeros(r, c);
                    for i2 in 0..r {
                        let share = g.get(i2, 0) / c as f64;
                        for j in 0..c {
                            da.set(i2, j, share);
                        }
                    }
                    acc(&mut grads, &inner.nodes, a, da);
                }
                Op::Dropout(a, mask) => {
                    let a = *a;
                    let mut da = g.clone();
                    for (d, &m) in da.data.iter_mut().zip(&mask.data) {
                        *d *= m;
                    }
                    acc(&mut grads, &inner.nodes, a, da);
                }
                Op::PickRows(a, ids) => {
                    let a = *a;
                    let (r, c) = inner.nodes[a].value.shape();
                    let mut da = Matrix::zeros(r, c);
                    for (out_r, &src_r) in ids.iter().enumerate() {
                        for j in 0..c {
                            let v = da.get(src_r, j) + g.get(out_r, j);
                            da.set(src_r, j, v);
                        }
                    }
                    acc(&mut grads, &inner.nodes, a, da);
                }
                Op::PickCols(a, ids) => {
                    let a = *a;
                    let (r, c) = inner.nodes[a].value.shape();
                    let mut da = Matrix::zeros(r, c);
                    for i2 in 0..r {
                        for (out_c, &src_c) in ids.iter().enumerate() {
                            let v = da.get(i2, src_c) + g.get(i2, out_c);
                            da.set(i2, src_c, v);
                        }
                    }
                    acc(&mut grads, &inner.nodes, a, da);
                }
                Op::BceLoss(a, targets) => {
                    let a = *a;
                    let p = &inner.nodes[a].value;
                    let gs = g.get(0, 0);
                    let n_s = targets.len() as f64;
                    let mut da = Matrix::zeros(p.rows(), 1);
                    for (r, &t) in targets.iter().enumerate() {
                        let raw = p.get(r, 0);
                        // Gradient of the clamp is zero outside the band.
                        if raw <= BCE_CLAMP || raw >= 1.0 - BCE_CLAMP {
                            continue;
                        }
                        da.set(r, 0, gs * (raw - t) / (raw * (1.0 - raw)) / n_s);
                    }
                    acc(&mut grads, &inner.nodes, a, da);
                }
                Op::CeFromProbs(a, entries) => {
                    let a = *a;
                    let p = &inner.nodes[a].value;
                    let gs = g.get(0, 0);
                    let m = entries.len() as f64;
                    let mut da = Matrix::zeros(p.rows(), p.cols());
                    for &(row, class, w) in entries {
                        let raw = p.get(row, class);
                        if raw <= CE_CLAMP {
                            continue;
                        }
                        let v = da.get(row, class) - gs * w / raw / m;
                        da.set(row, class, v);
                    }
                    acc(&mut grads, &inner.nodes, a, da);
                }
            }
        }

        for (node, grad) in inner.nodes.iter_mut().zip(grads) {
            if node.requires_grad {
                node.grad = Some(grad.unwrap_or_else(|| {
                    let (r, c) = node.value.shape();
                    Matrix::zeros(r, c)
                }));
            }
        }
        Ok(())
    }
}

/// Compares analytic gradients against central finite differences.
///
/// `f` must build a scalar loss from the named parameter leaves it is
/// given, deterministically (no dropout, no RNG). The analytic pass runs
/// `f` once on a recording tape and differentiates; the numeric pass
/// re-evaluates `f` at ±`epsilon` around every parameter coordinate.
/// Returns the worst relative error `|a - n| / max(1e-8, |a| + |n|)`
/// over all coordinates.
///
/// ```
/// use std::collections::BTreeMap;
/// use adlex::tensor::{fd_check, Matrix};
///
/// let mut params = BTreeMap::new();
/// params.insert("x".to_string(), Matrix::from_vec(1, 3, vec![0.5, -1.0, 2.0]));
/// // loss = x · xᵀ, a quadratic with gradient 2x.
/// let err = fd_check(&params, 1e-5, |_tape, vars| {
///     let x = &vars["x"];
///     x.matmul(&x.transpose())
/// })
/// .unwrap();
/// assert!(err < 1e-9, "relative error {err}");
/// ```
pub fn fd_check<F>(
    params: &BTreeMap<String, Matrix>,
    epsilon: f64,
    f: F,
) -> Result<f64, TensorError>
where
    F: Fn(&Tape, &BTreeMap<String, Var>) -> Var,
{
    // Analytic gradients.
    let tape = Tape::new();
    let vars: BTreeMap<String, Var> = params
        .iter()
        .map(|(name, m)| (name.clone(), tape.leaf(m.clone(), true)))
        .collect();
    let loss = f(&tape, &vars);
    let (r, c) = loss.shape();
    if (r, c) != (1, 1) {
        return Err(TensorError::NonScalarLoss { rows: r, cols: c });
    }
    loss.backward()?;
    let analytic: BTreeMap<String, Matrix> = vars
        .iter()
        .map(|(name, v)| (name.clone(), v.grad().expect("leaf requires grad")))
        .collect();

    let eval = |perturbed: &BTreeMap<String, Matrix>| -> f64 {
        let tape = Tape::new();
        let vars: BTreeMap<String, Var> = perturbed
            .iter()
            .map(|(name, m)| (name.clone(), tape.leaf(m.clone(), false)))
            .collect();
        f(&tape, &vars).scalar()
    };

    let mut worst = 0.0f64;
    let mut work = params.clone();
    for (name, m) in params {
        for i in 0..m.data().len() {
            let orig = m.data()[i];
            work.get_mut(name).unwrap().data_mut()[i] = orig + epsilon;
            let plus = eval(&work);
            work.get_mut(name).unwrap().data_mut()[i] = orig - epsilon;
            let minus = eval(&work);
            work.get_mut(name).unwrap().data_mut()[i] = orig;

            let numeric = (plus - minus) / (2.0 * epsilon);
            let a = analytic[name].data()[i];
            let err = (a - numeric).abs() / (1e-8f64).max(a.abs() + numeric.abs());
            if err > worst {
                worst = err;
                log::debug!("fd_check worst so far: {name}[{i}] analytic {a} numeric {numeric}");
            }
        }
    }
    Ok(worst)
}
