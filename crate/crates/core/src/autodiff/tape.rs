//! Wengert tape: operations are appended in execution order and replayed in
//! reverse to propagate adjoints.
//!
//! Every node is a 2-D row-major buffer. Elementwise binary ops broadcast
//! along any axis of extent 1, and their adjoints are summed back over the
//! broadcast axes.

use super::{AutodiffError, ParamId, ParamStore};
use crate::scalar::Real;

/// Sigmoid inputs are clamped to this magnitude before `exp`.
pub const SIGMOID_CLAMP: f64 = 30.0;
/// Probabilities are clamped to `[EPS, 1 - EPS]` inside cross-entropy.
pub const PROB_EPS: f64 = 1e-12;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf(Option<ParamId>),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    MatMul(Var, Var),
    Transpose(Var),
    Scale(Var, T),
    AddScalar(Var),
    Sigmoid(Var),
    LeakyRelu(Var, T),
    Softplus(Var),
    Exp(Var),
    Floor(Var, T),
    Sum(Var),
    RowSums(Var),
    ConcatCols(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    StopGradient,
    CrossEntropy(Var, Vec<T>),
}

#[derive(Clone, Debug)]
struct Node<T> {
    value: Vec<T>,
    rows: usize,
    cols: usize,
    op: Op<T>,
    needs_grad: bool,
}

/// Record of one forward computation.
#[derive(Debug)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    consumed: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn broadcast_dims(a: (usize, usize), b: (usize, usize)) -> Option<(usize, usize)> {
    let dim = |x: usize, y: usize| match (x, y) {
        _ if x == y => Some(x),
        (1, y) => Some(y),
        (x, 1) => Some(x),
        _ => None,
    };
    Some((dim(a.0, b.0)?, dim(a.1, b.1)?))
}

#[inline]
fn bidx(i: usize, j: usize, rows: usize, cols: usize) -> usize {
    let r = if rows == 1 { 0 } else { i };
    let c = if cols == 1 { 0 } else { j };
    r * cols + c
}

fn sigmoid<T: Real>(x: T) -> T {
    let lim = T::lit(SIGMOID_CLAMP);
    let x = x.max(-lim).min(lim);
    T::one() / (T::one() + (-x).exp())
}

fn softplus<T: Real>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn dims(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    /// Single value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value[0]
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Vec<T>, rows: usize, cols: usize, op: Op<T>, needs_grad: bool) -> Var {
        debug_assert_eq!(value.len(), rows * cols);
        self.nodes.push(Node {
            value,
            rows,
            cols,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    // ── Leaves ──────────────────────────────────────────────────────────

    /// Copies a parameter onto the tape. Gradients flow back to it only
    /// when the parameter is trainable.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let t = store.get(id);
        let (r, c) = t.dims2();
        self.push(t.data().to_vec(), r, c, Op::Leaf(Some(id)), t.trainable())
    }

    pub fn constant(&mut self, rows: usize, cols: usize, data: Vec<T>) -> Result<Var, AutodiffError> {
        if rows == 0 || cols == 0 || rows * cols != data.len() {
            return Err(AutodiffError::DataLength {
                shape: vec![rows, cols],
                len: data.len(),
            });
        }
        Ok(self.push(data, rows, cols, Op::Leaf(None), false))
    }

    /// Column vector constant (`n x 1`).
    pub fn column(&mut self, data: Vec<T>) -> Result<Var, AutodiffError> {
        let n = data.len();
        self.constant(n, 1, data)
    }

    // ── Elementwise binary ──────────────────────────────────────────────

    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(T, T) -> T) -> Result<(Vec<T>, usize, usize), AutodiffError> {
        let (da, db) = (self.dims(a), self.dims(b));
        let (r, c) = broadcast_dims(da, db).ok_or(AutodiffError::ShapeMismatch {
            op: name,
            lhs: da,
            rhs: db,
        })?;
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                out.push(f(va[bidx(i, j, da.0, da.1)], vb[bidx(i, j, db.0, db.1)]));
            }
        }
        Ok((out, r, c))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (v, r, c) = self.binary(a, b, "add", |x, y| x + y)?;
        let ng = self.ng(&[a, b]);
        Ok(self.push(v, r, c, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (v, r, c) = self.binary(a, b, "sub", |x, y| x - y)?;
        let ng = self.ng(&[a, b]);
        Ok(self.push(v, r, c, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (v, r, c) = self.binary(a, b, "mul", |x, y| x * y)?;
        let ng = self.ng(&[a, b]);
        Ok(self.push(v, r, c, Op::Mul(a, b), ng))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (v, r, c) = self.binary(a, b, "div", |x, y| x / y)?;
        let ng = self.ng(&[a, b]);
        Ok(self.push(v, r, c, Op::Div(a, b), ng))
    }

    // ── Linear algebra ──────────────────────────────────────────────────

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let ((n, k), (k2, m)) = (self.dims(a), self.dims(b));
        if k != k2 {
            return Err(AutodiffError::ShapeMismatch {
                op: "matmul",
                lhs: (n, k),
                rhs: (k2, m),
            });
        }
        let out = matmul_raw(&self.nodes[a.0].value, &self.nodes[b.0].value, n, k, m);
        let ng = self.ng(&[a, b]);
        Ok(self.push(out, n, m, Op::MatMul(a, b), ng))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let (r, c) = self.dims(a);
        let out = transpose_raw(&self.nodes[a.0].value, r, c);
        let ng = self.ng(&[a]);
        self.push(out, c, r, Op::Transpose(a), ng)
    }

    // ── Elementwise unary ───────────────────────────────────────────────

    fn unary(&mut self, a: Var, op: Op<T>, f: impl Fn(T) -> T) -> Var {
        let (r, c) = self.dims(a);
        let out = self.nodes[a.0].value.iter().map(|&x| f(x)).collect();
        let ng = self.ng(&[a]);
        self.push(out, r, c, op, ng)
    }

    pub fn scale(&mut self, a: Var, k: T) -> Var {
        self.unary(a, Op::Scale(a, k), |x| x * k)
    }

    pub fn add_scalar(&mut self, a: Var, k: T) -> Var {
        self.unary(a, Op::AddScalar(a), |x| x + k)
    }

    /// `1 / (1 + exp(-x))` with the input clamped to `[-30, 30]`.
    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    /// `max(x, slope * x)`; the derivative at exactly zero is `slope`.
    pub fn leaky_relu(&mut self, a: Var, slope: T) -> Result<Var, AutodiffError> {
        if !(slope > T::zero() && slope < T::one()) {
            return Err(AutodiffError::InvalidSlope(slope.as_f64()));
        }
        Ok(self.unary(a, Op::LeakyRelu(a, slope), |x| if x > T::zero() { x } else { slope * x }))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, Op::Softplus(a), softplus)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), |x| x.exp())
    }

    /// `max(x, lo)` elementwise; clamped entries pass no gradient.
    pub fn floor(&mut self, a: Var, lo: T) -> Var {
        self.unary(a, Op::Floor(a, lo), |x| x.max(lo))
    }

    /// Identity forward; contributes nothing to `a`'s adjoint.
    pub fn stop_gradient(&mut self, a: Var) -> Var {
        let (r, c) = self.dims(a);
        let v = self.nodes[a.0].value.clone();
        self.push(v, r, c, Op::StopGradient, false)
    }

    /// Elementwise binary cross-entropy of probabilities `p` against labels
    /// of the same shape. `p` is clamped to `[1e-12, 1 - 1e-12]`.
    pub fn cross_entropy(&mut self, p: Var, labels: Vec<T>) -> Result<Var, AutodiffError> {
        let (r, c) = self.dims(p);
        if labels.len() != r * c {
            return Err(AutodiffError::ShapeMismatch {
                op: "cross_entropy",
                lhs: (r, c),
                rhs: (labels.len(), 1),
            });
        }
        let eps = T::lit(PROB_EPS);
        let out = self.nodes[p.0]
            .value
            .iter()
            .zip(&labels)
            .map(|(&q, &y)| {
                let q = q.max(eps).min(T::one() - eps);
                -(y * q.ln()) - (T::one() - y) * (T::one() - q).ln()
            })
            .collect();
        let ng = self.ng(&[p]);
        Ok(self.push(out, r, c, Op::CrossEntropy(p, labels), ng))
    }

    // ── Reductions and structure ────────────────────────────────────────

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].value.iter().fold(T::zero(), |acc, &x| acc + x);
        let ng = self.ng(&[a]);
        self.push(vec![s], 1, 1, Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.nodes[a.0].value.len();
        let s = self.sum(a);
        self.scale(s, T::one() / T::from_count(n))
    }

    /// Sums each row: `n x m -> n x 1`.
    pub fn row_sums(&mut self, a: Var) -> Var {
        let (r, c) = self.dims(a);
        let v = &self.nodes[a.0].value;
        let out = (0..r)
            .map(|i| v[i * c..(i + 1) * c].iter().fold(T::zero(), |acc, &x| acc + x))
            .collect();
        let ng = self.ng(&[a]);
        self.push(out, r, 1, Op::RowSums(a), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let first = *parts.first().ok_or(AutodiffError::EmptyConcat)?;
        let rows = self.dims(first).0;
        let mut cols = 0;
        for &p in parts {
            let d = self.dims(p);
            if d.0 != rows {
                return Err(AutodiffError::ShapeMismatch {
                    op: "concat_cols",
                    lhs: self.dims(first),
                    rhs: d,
                });
            }
            cols += d.1;
        }
        let mut out = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for &p in parts {
                let n = &self.nodes[p.0];
                out.extend_from_slice(&n.value[i * n.cols..(i + 1) * n.cols]);
            }
        }
        let ng = self.ng(parts);
        Ok(self.push(out, rows, cols, Op::ConcatCols(parts.to_vec()), ng))
    }

    /// Selects rows of `table` by index (embedding lookup / masking).
    pub fn gather_rows(&mut self, table: Var, idx: &[usize]) -> Result<Var, AutodiffError> {
        let (r, c) = self.dims(table);
        if idx.is_empty() {
            return Err(AutodiffError::EmptyGather);
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= r) {
            return Err(AutodiffError::IndexOutOfRange { index: bad, rows: r });
        }
        let v = &self.nodes[table.0].value;
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            out.extend_from_slice(&v[i * c..(i + 1) * c]);
        }
        let ng = self.ng(&[table]);
        Ok(self.push(out, idx.len(), c, Op::GatherRows(table, idx.to_vec()), ng))
    }

    // ── Reverse pass ────────────────────────────────────────────────────

    /// Propagates adjoints from a `1 x 1` loss and writes them into the
    /// gradient buffers of `store`. Trainable parameters not reachable from
    /// `loss` end with zero gradient.
    pub fn backward(&mut self, loss: Var, store: &mut ParamStore<T>) -> Result<(), AutodiffError> {
        if self.consumed {
            return Err(AutodiffError::TapeConsumed);
        }
        if self.dims(loss) != (1, 1) {
            return Err(AutodiffError::NonScalarLoss(self.dims(loss)));
        }
        self.consumed = true;
        store.zero_grads();

        let mut adj: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![T::one()]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let (rows, cols) = (node.rows, node.cols);
            let contribs = self.local_adjoints(node, &g, rows, cols);
            for (v, delta) in contribs {
                if !self.nodes[v.0].needs_grad {
                    continue;
                }
                match adj[v.0].as_mut() {
                    Some(acc) => acc.iter_mut().zip(&delta).for_each(|(a, d)| *a = *a + *d),
                    None => adj[v.0] = Some(delta),
                }
            }
            if let Op::Leaf(Some(id)) = node.op {
                store.get_mut(id).accumulate_grad(&g)?;
            }
        }
        Ok(())
    }

    fn reduce_to(&self, g: &[T], rows: usize, cols: usize, target: Var) -> Vec<T> {
        let (tr, tc) = self.dims(target);
        if (tr, tc) == (rows, cols) {
            return g.to_vec();
        }
        let mut out = vec![T::zero(); tr * tc];
        for i in 0..rows {
            for j in 0..cols {
                let k = bidx(i, j, tr, tc);
                out[k] = out[k] + g[i * cols + j];
            }
        }
        out
    }

    fn bval(&self, v: Var, i: usize, j: usize) -> T {
        let n = &self.nodes[v.0];
        n.value[bidx(i, j, n.rows, n.cols)]
    }

    fn local_adjoints(&self, node: &Node<T>, g: &[T], rows: usize, cols: usize) -> Vec<(Var, Vec<T>)> {
        let elementwise = |a: Var, f: &dyn Fn(usize, usize) -> T| -> Vec<T> {
            let mut full = Vec::with_capacity(rows * cols);
            for i in 0..rows {
                for j in 0..cols {
                    full.push(f(i, j));
                }
            }
            self.reduce_to(&full, rows, cols, a)
        };
        match &node.op {
            Op::Leaf(_) | Op::StopGradient => vec![],
            Op::Add(a, b) => vec![
                (*a, self.reduce_to(g, rows, cols, *a)),
                (*b, self.reduce_to(g, rows, cols, *b)),
            ],
            Op::Sub(a, b) => {
                let neg: Vec<T> = g.iter().map(|&x| -x).collect();
                vec![
                    (*a, self.reduce_to(g, rows, cols, *a)),
                    (*b, self.reduce_to(&neg, rows, cols, *b)),
                ]
            }
            Op::Mul(a, b) => vec![
                (*a, elementwise(*a, &|i, j| g[i * cols + j] * self.bval(*b, i, j))),
                (*b, elementwise(*b, &|i, j| g[i * cols + j] * self.bval(*a, i, j))),
            ],
            Op::Div(a, b) => vec![
                (*a, elementwise(*a, &|i, j| g[i * cols + j] / self.bval(*b, i, j))),
                (
                    *b,
                    elementwise(*b, &|i, j| {
                        let y = self.bval(*b, i, j);
                        -g[i * cols + j] * self.bval(*a, i, j) / (y * y)
                    }),
                ),
            ],
            Op::MatMul(a, b) => {
                let (n, k) = self.dims(*a);
                let m = cols;
                let av = &self.nodes[a.0].value;
                let bv = &self.nodes[b.0].value;
                let bt = transpose_raw(bv, k, m);
                let at = transpose_raw(av, n, k);
                vec![
                    (*a, matmul_raw(g, &bt, n, m, k)),
                    (*b, matmul_raw(&at, g, k, n, m)),
                ]
            }
            Op::Transpose(a) => vec![(*a, transpose_raw(g, rows, cols))],
            Op::Scale(a, k) => vec![(*a, g.iter().map(|&x| x * *k).collect())],
            Op::AddScalar(a) => vec![(*a, g.to_vec())],
            Op::Sigmoid(a) => vec![(
                *a,
                node.value.iter().zip(g).map(|(&y, &gi)| gi * y * (T::one() - y)).collect(),
            )],
            Op::LeakyRelu(a, slope) => vec![(
                *a,
                self.nodes[a.0]
                    .value
                    .iter()
                    .zip(g)
                    .map(|(&x, &gi)| if x > T::zero() { gi } else { gi * *slope })
                    .collect(),
            )],
            Op::Softplus(a) => vec![(
                *a,
                self.nodes[a.0].value.iter().zip(g).map(|(&x, &gi)| gi * sigmoid(x)).collect(),
            )],
            Op::Exp(a) => vec![(*a, node.value.iter().zip(g).map(|(&y, &gi)| gi * y).collect())],
            Op::Floor(a, lo) => vec![(
                *a,
                self.nodes[a.0]
                    .value
                    .iter()
                    .zip(g)
                    .map(|(&x, &gi)| if x > *lo { gi } else { T::zero() })
                    .collect(),
            )],
            Op::Sum(a) => {
                let n = self.nodes[a.0].value.len();
                vec![(*a, vec![g[0]; n])]
            }
            Op::RowSums(a) => {
                let (r, c) = self.dims(*a);
                let mut out = Vec::with_capacity(r * c);
                for gi in g.iter().take(r) {
                    out.extend(std::iter::repeat_n(*gi, c));
                }
                vec![(*a, out)]
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                let mut res = Vec::with_capacity(parts.len());
                for &p in parts {
                    let pc = self.dims(p).1;
                    let mut out = Vec::with_capacity(rows * pc);
                    for i in 0..rows {
                        out.extend_from_slice(&g[i * cols + offset..i * cols + offset + pc]);
                    }
                    offset += pc;
                    res.push((p, out));
                }
                res
            }
            Op::GatherRows(table, idx) => {
                let (r, c) = self.dims(*table);
                let mut out = vec![T::zero(); r * c];
                for (row, &i) in idx.iter().enumerate() {
                    for j in 0..c {
                        out[i * c + j] = out[i * c + j] + g[row * c + j];
                    }
                }
                vec![(*table, out)]
            }
            Op::CrossEntropy(p, labels) => {
                let eps = T::lit(PROB_EPS);
                let pv = &self.nodes[p.0].value;
                vec![(
                    *p,
                    pv.iter()
                        .zip(labels)
                        .zip(g)
                        .map(|((&q, &y), &gi)| {
                            if q < eps || q > T::one() - eps {
                                T::zero()
                            } else {
                                gi * (q - y) / (q * (T::one() - q))
                            }
                        })
                        .collect(),
                )]
            }
        }
    }
}

pub(crate) fn matmul_raw<T: Real>(a: &[T], b: &[T], n: usize, k: usize, m: usize) -> Vec<T> {
    let mut out = vec![T::zero(); n * m];
    for i in 0..n {
        let row = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == T::zero() {
                continue;
            }
            let brow = &b[p * m..(p + 1) * m];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o = *o + aip * bv;
            }
        }
    }
    out
}

pub(crate) fn transpose_raw<T: Copy>(a: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(a.len());
    for j in 0..cols {
        for i in 0..rows {
            out.push(a[i * cols + j]);
        }
    }
    out
}
