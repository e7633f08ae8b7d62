//! Reverse-mode automatic differentiation over a dynamically built graph.
//!
//! Nodes hold vector payloads. A node of length `b * d` is interpreted by the
//! batched operations (`matvec`, `affine`, `chunk_sum`, ...) as `b` stacked
//! samples of dimension `d`, so one graph differentiates a whole minibatch.
//! `backward` runs a single reverse sweep from a scalar root and leaves exact
//! partial derivatives on every leaf.

use crate::error::{HamflowError, Result};

/// Handle to a node on a [`Tape`]. Only valid for the tape that created it.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct NodeId(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op {
    /// Differentiable input (parameter or data the caller wants gradients for).
    Leaf,
    /// Constant; receives no adjoint.
    Constant,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    /// x * c for a fixed scalar c.
    Scale(NodeId, f64),
    /// x + c for a fixed scalar c.
    Offset(NodeId, f64),
    /// y[i] = x[i] * s[i / chunk]; broadcasts a per-sample scalar over chunks.
    BroadcastMul { x: NodeId, s: NodeId, chunk: usize },
    /// y[a*k + i] = s[a] * c[i]; outer product flattened row-major.
    Outer { s: NodeId, c: NodeId },
    Tanh(NodeId),
    Sigmoid(NodeId),
    /// log(sigmoid(x)), computed stably.
    LogSigmoid(NodeId),
    Exp(NodeId),
    Ln(NodeId),
    Square(NodeId),
    /// x^c for a fixed exponent c.
    Powf(NodeId, f64),
    Clamp(NodeId, f64, f64),
    /// Batched W x: x is `batch * cols`, output `batch * rows`.
    MatVec { w: NodeId, x: NodeId, rows: usize, cols: usize },
    /// Batched W^T x: x is `batch * rows`, output `batch * cols`.
    MatVecT { w: NodeId, x: NodeId, rows: usize, cols: usize },
    /// Batched W x + b with the bias broadcast over the batch.
    Affine { w: NodeId, x: NodeId, b: NodeId, rows: usize, cols: usize },
    Dot(NodeId, NodeId),
    Sum(NodeId),
    /// y[j] = sum of x[j*chunk .. (j+1)*chunk].
    ChunkSum { x: NodeId, chunk: usize },
    Concat(Vec<NodeId>),
    /// y[j] = x[offset + j*stride].
    Stride { x: NodeId, offset: usize, stride: usize },
    /// Row-major transpose of x viewed as rows x cols.
    Transpose { x: NodeId, rows: usize, cols: usize },
}

impl Op {
    fn for_each_input(&self, mut f: impl FnMut(NodeId)) {
        match self {
            Op::Leaf | Op::Constant => {}
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Div(a, b)
            | Op::Dot(a, b) => {
                f(*a);
                f(*b);
            }
            Op::Scale(a, _)
            | Op::Offset(a, _)
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::LogSigmoid(a)
            | Op::Exp(a)
            | Op::Ln(a)
            | Op::Square(a)
            | Op::Powf(a, _)
            | Op::Clamp(a, _, _)
            | Op::Sum(a) => f(*a),
            Op::BroadcastMul { x, s, .. } => {
                f(*x);
                f(*s);
            }
            Op::Outer { s, c } => {
                f(*s);
                f(*c);
            }
            Op::MatVec { w, x, .. } | Op::MatVecT { w, x, .. } => {
                f(*w);
                f(*x);
            }
            Op::Affine { w, x, b, .. } => {
                f(*w);
                f(*x);
                f(*b);
            }
            Op::ChunkSum { x, .. } | Op::Stride { x, .. } | Op::Transpose { x, .. } => f(*x),
            Op::Concat(parts) => parts.iter().copied().for_each(f),
        }
    }
}

/// Append-only computation graph. Every node's inputs precede it, so one
/// reverse pass over the node list is a full backward sweep.
pub struct Tape {
    ops: Vec<Op>,
    values: Vec<Vec<f64>>,
    adjoints: Vec<Vec<f64>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            ops: Vec::new(),
            values: Vec::new(),
            adjoints: Vec::new(),
        }
    }

    pub fn node_count(&self) -> usize {
        self.ops.len()
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.values[id.0]
    }

    pub fn scalar_value(&self, id: NodeId) -> f64 {
        debug_assert_eq!(self.values[id.0].len(), 1);
        self.values[id.0][0]
    }

    /// Adjoint of a node after [`Tape::backward`]. Zeros before the sweep.
    pub fn adjoint(&self, id: NodeId) -> &[f64] {
        &self.adjoints[id.0]
    }

    pub fn len_of(&self, id: NodeId) -> usize {
        self.values[id.0].len()
    }

    fn push(&mut self, op: Op, value: Vec<f64>) -> NodeId {
        let id = NodeId(self.ops.len());
        self.ops.push(op);
        self.values.push(value);
        id
    }

    // ── node constructors ────────────────────────────────────────────

    pub fn leaf(&mut self, value: Vec<f64>) -> NodeId {
        self.push(Op::Leaf, value)
    }

    pub fn constant(&mut self, value: Vec<f64>) -> NodeId {
        self.push(Op::Constant, value)
    }

    pub fn constant_scalar(&mut self, c: f64) -> NodeId {
        self.constant(vec![c])
    }

    // ── elementwise binary ───────────────────────────────────────────

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = zip_map(&self.values[a.0], &self.values[b.0], |x, y| x + y);
        self.push(Op::Add(a, b), v)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = zip_map(&self.values[a.0], &self.values[b.0], |x, y| x - y);
        self.push(Op::Sub(a, b), v)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = zip_map(&self.values[a.0], &self.values[b.0], |x, y| x * y);
        self.push(Op::Mul(a, b), v)
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = zip_map(&self.values[a.0], &self.values[b.0], |x, y| x / y);
        self.push(Op::Div(a, b), v)
    }

    // ── elementwise with constants ───────────────────────────────────

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.values[a.0].iter().map(|x| x * c).collect();
        self.push(Op::Scale(a, c), v)
    }

    pub fn offset(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.values[a.0].iter().map(|x| x + c).collect();
        self.push(Op::Offset(a, c), v)
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        self.scale(a, -1.0)
    }

    // ── broadcasting ─────────────────────────────────────────────────

    pub fn broadcast_mul(&mut self, x: NodeId, s: NodeId, chunk: usize) -> NodeId {
        let xs = &self.values[x.0];
        let ss = &self.values[s.0];
        assert_eq!(
            ss.len() * chunk,
            xs.len(),
            "broadcast_mul: scalar node times chunk must match x length"
        );
        let mut v = Vec::with_capacity(xs.len());
        for (a, &sv) in ss.iter().enumerate() {
            v.extend(xs[a * chunk..(a + 1) * chunk].iter().map(|x| x * sv));
        }
        self.push(Op::BroadcastMul { x, s, chunk }, v)
    }

    pub fn outer(&mut self, s: NodeId, c: NodeId) -> NodeId {
        let ss = &self.values[s.0];
        let cs = &self.values[c.0];
        let mut v = Vec::with_capacity(ss.len() * cs.len());
        for &sv in ss {
            v.extend(cs.iter().map(|x| x * sv));
        }
        self.push(Op::Outer { s, c }, v)
    }

    // ── elementwise unary ────────────────────────────────────────────

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.values[a.0].iter().map(|x| x.tanh()).collect();
        self.push(Op::Tanh(a), v)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.values[a.0].iter().map(|&x| sigmoid(x)).collect();
        self.push(Op::Sigmoid(a), v)
    }

    pub fn log_sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.values[a.0].iter().map(|&x| -softplus(-x)).collect();
        self.push(Op::LogSigmoid(a), v)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let v = self.values[a.0].iter().map(|x| x.exp()).collect();
        self.push(Op::Exp(a), v)
    }

    pub fn ln(&mut self, a: NodeId) -> NodeId {
        let v = self.values[a.0].iter().map(|x| x.ln()).collect();
        self.push(Op::Ln(a), v)
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        let v = self.values[a.0].iter().map(|x| x * x).collect();
        self.push(Op::Square(a), v)
    }

    pub fn powf(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.values[a.0].iter().map(|x| x.powf(c)).collect();
        self.push(Op::Powf(a, c), v)
    }

    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> NodeId {
        let v = self.values[a.0].iter().map(|x| x.clamp(lo, hi)).collect();
        self.push(Op::Clamp(a, lo, hi), v)
    }

    // ── linear algebra ───────────────────────────────────────────────

    pub fn matvec(&mut self, w: NodeId, x: NodeId, rows: usize, cols: usize) -> NodeId {
        let wv = &self.values[w.0];
        let xv = &self.values[x.0];
        assert_eq!(wv.len(), rows * cols, "matvec: weight shape mismatch");
        assert_eq!(xv.len() % cols, 0, "matvec: x not a multiple of cols");
        let batch = xv.len() / cols;
        let mut out = vec![0.0; batch * rows];
        matvec_forward(wv, xv, rows, cols, batch, &mut out);
        self.push(Op::MatVec { w, x, rows, cols }, out)
    }

    pub fn matvec_t(&mut self, w: NodeId, x: NodeId, rows: usize, cols: usize) -> NodeId {
        let wv = &self.values[w.0];
        let xv = &self.values[x.0];
        assert_eq!(wv.len(), rows * cols, "matvec_t: weight shape mismatch");
        assert_eq!(xv.len() % rows, 0, "matvec_t: x not a multiple of rows");
        let batch = xv.len() / rows;
        let mut out = vec![0.0; batch * cols];
        matvec_t_forward(wv, xv, rows, cols, batch, &mut out);
        self.push(Op::MatVecT { w, x, rows, cols }, out)
    }

    pub fn affine(&mut self, w: NodeId, x: NodeId, b: NodeId, rows: usize, cols: usize) -> NodeId {
        let wv = &self.values[w.0];
        let xv = &self.values[x.0];
        let bv = &self.values[b.0];
        assert_eq!(wv.len(), rows * cols, "affine: weight shape mismatch");
        assert_eq!(bv.len(), rows, "affine: bias shape mismatch");
        assert_eq!(xv.len() % cols, 0, "affine: x not a multiple of cols");
        let batch = xv.len() / cols;
        let mut out = vec![0.0; batch * rows];
        matvec_forward(wv, xv, rows, cols, batch, &mut out);
        for chunk in out.chunks_mut(rows) {
            for (o, &bi) in chunk.iter_mut().zip(bv.iter()) {
                *o += bi;
            }
        }
        self.push(Op::Affine { w, x, b, rows, cols }, out)
    }

    // ── reductions and reshaping ─────────────────────────────────────

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = dot_slice(&self.values[a.0], &self.values[b.0]);
        self.push(Op::Dot(a, b), vec![v])
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let v = self.values[a.0].iter().sum();
        self.push(Op::Sum(a), vec![v])
    }

    pub fn chunk_sum(&mut self, x: NodeId, chunk: usize) -> NodeId {
        let xv = &self.values[x.0];
        assert_eq!(xv.len() % chunk, 0, "chunk_sum: length not a multiple of chunk");
        let v = xv.chunks(chunk).map(|c| c.iter().sum()).collect();
        self.push(Op::ChunkSum { x, chunk }, v)
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        let mut v = Vec::new();
        for id in parts {
            v.extend_from_slice(&self.values[id.0]);
        }
        self.push(Op::Concat(parts.to_vec()), v)
    }

    pub fn stride(&mut self, x: NodeId, offset: usize, stride: usize) -> NodeId {
        let xv = &self.values[x.0];
        assert!(stride > 0 && offset < stride && xv.len() % stride == 0);
        let v = xv.iter().skip(offset).step_by(stride).copied().collect();
        self.push(Op::Stride { x, offset, stride }, v)
    }

    pub fn transpose(&mut self, x: NodeId, rows: usize, cols: usize) -> NodeId {
        let xv = &self.values[x.0];
        assert_eq!(xv.len(), rows * cols, "transpose: shape mismatch");
        let mut v = vec![0.0; xv.len()];
        for r in 0..rows {
            for c in 0..cols {
                v[c * rows + r] = xv[r * cols + c];
            }
        }
        self.push(Op::Transpose { x, rows, cols }, v)
    }

    // ── backward sweep ───────────────────────────────────────────────

    /// Reverse sweep from a scalar root. Resets all adjoints first, then
    /// accumulates so that every leaf's adjoint equals d(root)/d(leaf).
    pub fn backward(&mut self, root: NodeId) -> Result<()> {
        if root.0 >= self.ops.len() {
            return Err(HamflowError::Usage(format!(
                "backward root {} not in graph of {} nodes",
                root.0,
                self.ops.len()
            )));
        }
        if self.values[root.0].len() != 1 {
            return Err(HamflowError::Usage(format!(
                "backward root must be scalar, got length {}",
                self.values[root.0].len()
            )));
        }
        self.adjoints.clear();
        self.adjoints.extend(self.values.iter().map(|v| vec![0.0; v.len()]));
        self.adjoints[root.0][0] = 1.0;

        // Only nodes the root depends on receive adjoint work.
        let mut reachable = vec![false; root.0 + 1];
        reachable[root.0] = true;
        for i in (0..=root.0).rev() {
            if reachable[i] {
                self.ops[i].for_each_input(|id| {
                    if id.0 <= root.0 {
                        reachable[id.0] = true;
                    }
                });
            }
        }

        for i in (0..=root.0).rev() {
            if !reachable[i] {
                continue;
            }
            let g = std::mem::take(&mut self.adjoints[i]);
            match &self.ops[i] {
                Op::Leaf | Op::Constant => {}
                Op::Add(a, b) => {
                    accumulate(&mut self.adjoints[a.0], &g, 1.0);
                    accumulate(&mut self.adjoints[b.0], &g, 1.0);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut self.adjoints[a.0], &g, 1.0);
                    accumulate(&mut self.adjoints[b.0], &g, -1.0);
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    for (k, &gk) in g.iter().enumerate() {
                        self.adjoints[a.0][k] += gk * self.values[b.0][k];
                    }
                    for (k, &gk) in g.iter().enumerate() {
                        self.adjoints[b.0][k] += gk * self.values[a.0][k];
                    }
                }
                Op::Div(a, b) => {
                    let (a, b) = (*a, *b);
                    for (k, &gk) in g.iter().enumerate() {
                        let bv = self.values[b.0][k];
                        self.adjoints[a.0][k] += gk / bv;
                        self.adjoints[b.0][k] -= gk * self.values[i][k] / bv;
                    }
                }
                Op::Scale(a, c) => accumulate(&mut self.adjoints[a.0], &g, *c),
                Op::Offset(a, _) => accumulate(&mut self.adjoints[a.0], &g, 1.0),
                Op::BroadcastMul { x, s, chunk } => {
                    let (x, s, chunk) = (*x, *s, *chunk);
                    for (k, &gk) in g.iter().enumerate() {
                        self.adjoints[x.0][k] += gk * self.values[s.0][k / chunk];
                    }
                    for (k, &gk) in g.iter().enumerate() {
                        self.adjoints[s.0][k / chunk] += gk * self.values[x.0][k];
                    }
                }
                Op::Outer { s, c } => {
                    let (s, c) = (*s, *c);
                    let k = self.values[c.0].len();
                    for (a, gr) in g.chunks(k).enumerate() {
                        self.adjoints[s.0][a] += dot_slice(gr, &self.values[c.0]);
                    }
                    for (a, gr) in g.chunks(k).enumerate() {
                        let sv = self.values[s.0][a];
                        for (j, &gj) in gr.iter().enumerate() {
                            self.adjoints[c.0][j] += gj * sv;
                        }
                    }
                }
                Op::Tanh(a) => {
                    let a = *a;
                    for (k, &gk) in g.iter().enumerate() {
                        let y = self.values[i][k];
                        self.adjoints[a.0][k] += gk * (1.0 - y * y);
                    }
                }
                Op::Sigmoid(a) => {
                    let a = *a;
                    for (k, &gk) in g.iter().enumerate() {
                        let y = self.values[i][k];
                        self.adjoints[a.0][k] += gk * y * (1.0 - y);
                    }
                }
                Op::LogSigmoid(a) => {
                    let a = *a;
                    for (k, &gk) in g.iter().enumerate() {
                        // d/dx log sigmoid(x) = 1 - sigmoid(x) = 1 - e^y
                        self.adjoints[a.0][k] += gk * (1.0 - self.values[i][k].exp());
                    }
                }
                Op::Exp(a) => {
                    let a = *a;
                    for (k, &gk) in g.iter().enumerate() {
                        self.adjoints[a.0][k] += gk * self.values[i][k];
                    }
                }
                Op::Ln(a) => {
                    let a = *a;
                    for (k, &gk) in g.iter().enumerate() {
                        self.adjoints[a.0][k] += gk / self.values[a.0][k];
                    }
                }
                Op::Square(a) => {
                    let a = *a;
                    for (k, &gk) in g.iter().enumerate() {
                        self.adjoints[a.0][k] += 2.0 * gk * self.values[a.0][k];
                    }
                }
                Op::Powf(a, c) => {
                    let (a, c) = (*a, *c);
                    for (k, &gk) in g.iter().enumerate() {
                        self.adjoints[a.0][k] += gk * c * self.values[a.0][k].powf(c - 1.0);
                    }
                }
                Op::Clamp(a, lo, hi) => {
                    let (a, lo, hi) = (*a, *lo, *hi);
                    for (k, &gk) in g.iter().enumerate() {
                        let x = self.values[a.0][k];
                        if x >= lo && x <= hi {
                            self.adjoints[a.0][k] += gk;
                        }
                    }
                }
                Op::MatVec { w, x, rows, cols } => {
                    let (w, x, rows, cols) = (*w, *x, *rows, *cols);
                    let batch = self.values[x.0].len() / cols;
                    // dW += g_b x_b^T; dx_b += W^T g_b
                    {
                        let dw = std::mem::take(&mut self.adjoints[w.0]);
                        let dw = rank_update(dw, &g, &self.values[x.0], rows, cols, batch);
                        self.adjoints[w.0] = dw;
                    }
                    let mut dx = std::mem::take(&mut self.adjoints[x.0]);
                    matvec_t_accumulate(&self.values[w.0], &g, rows, cols, batch, &mut dx);
                    self.adjoints[x.0] = dx;
                }
                Op::MatVecT { w, x, rows, cols } => {
                    let (w, x, rows, cols) = (*w, *x, *rows, *cols);
                    let batch = self.values[x.0].len() / rows;
                    // y_b = W^T x_b: dW += x_b g_b^T; dx_b += W g_b
                    {
                        let dw = std::mem::take(&mut self.adjoints[w.0]);
                        let dw = rank_update(dw, &self.values[x.0], &g, rows, cols, batch);
                        self.adjoints[w.0] = dw;
                    }
                    let mut dx = std::mem::take(&mut self.adjoints[x.0]);
                    matvec_accumulate(&self.values[w.0], &g, rows, cols, batch, &mut dx);
                    self.adjoints[x.0] = dx;
                }
                Op::Affine { w, x, b, rows, cols } => {
                    let (w, x, b, rows, cols) = (*w, *x, *b, *rows, *cols);
                    let batch = self.values[x.0].len() / cols;
                    {
                        let dw = std::mem::take(&mut self.adjoints[w.0]);
                        let dw = rank_update(dw, &g, &self.values[x.0], rows, cols, batch);
                        self.adjoints[w.0] = dw;
                    }
                    let mut dx = std::mem::take(&mut self.adjoints[x.0]);
                    matvec_t_accumulate(&self.values[w.0], &g, rows, cols, batch, &mut dx);
                    self.adjoints[x.0] = dx;
                    let db = &mut self.adjoints[b.0];
                    for chunk in g.chunks(rows) {
                        for (d, &gk) in db.iter_mut().zip(chunk.iter()) {
                            *d += gk;
                        }
                    }
                }
                Op::Dot(a, b) => {
                    let (a, b) = (*a, *b);
                    let g0 = g[0];
                    for (k, dv) in self.adjoints[a.0].iter_mut().enumerate() {
                        *dv += g0 * self.values[b.0][k];
                    }
                    for (k, dv) in self.adjoints[b.0].iter_mut().enumerate() {
                        *dv += g0 * self.values[a.0][k];
                    }
                }
                Op::Sum(a) => {
                    let g0 = g[0];
                    for dv in self.adjoints[a.0].iter_mut() {
                        *dv += g0;
                    }
                }
                Op::ChunkSum { x, chunk } => {
                    let (x, chunk) = (*x, *chunk);
                    for (k, dv) in self.adjoints[x.0].iter_mut().enumerate() {
                        *dv += g[k / chunk];
                    }
                }
                Op::Concat(parts) => {
                    let parts = parts.clone();
                    let mut off = 0;
                    for id in parts {
                        let n = self.values[id.0].len();
                        accumulate(&mut self.adjoints[id.0], &g[off..off + n], 1.0);
                        off += n;
                    }
                }
                Op::Stride { x, offset, stride } => {
                    let (x, offset, stride) = (*x, *offset, *stride);
                    for (j, &gj) in g.iter().enumerate() {
                        self.adjoints[x.0][offset + j * stride] += gj;
                    }
                }
                Op::Transpose { x, rows, cols } => {
                    let (x, rows, cols) = (*x, *rows, *cols);
                    for r in 0..rows {
                        for c in 0..cols {
                            self.adjoints[x.0][r * cols + c] += g[c * rows + r];
                        }
                    }
                }
            }
            self.adjoints[i] = g;
        }
        Ok(())
    }
}

// ── numeric kernels ──────────────────────────────────────────────────

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
fn dot_slice(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    // Four accumulators so the reduction vectorizes.
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let (av, bv) = (&a[i * 4..i * 4 + 4], &b[i * 4..i * 4 + 4]);
        acc[0] += av[0] * bv[0];
        acc[1] += av[1] * bv[1];
        acc[2] += av[2] * bv[2];
        acc[3] += av[3] * bv[3];
    }
    let mut tail = 0.0;
    for i in chunks * 4..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[2]) + (acc[1] + acc[3]) + tail
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    assert_eq!(a.len(), b.len(), "elementwise op on mismatched lengths");
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn accumulate(dst: &mut [f64], src: &[f64], scale: f64) {
    for (d, &s) in dst.iter_mut().zip(src.iter()) {
        *d += s * scale;
    }
}

/// out[b*rows + r] = sum_c w[r*cols + c] * x[b*cols + c]
///
/// Four samples share each weight-row load; the independent accumulator
/// chains keep the FMA units busy.
fn matvec_forward(w: &[f64], x: &[f64], rows: usize, cols: usize, batch: usize, out: &mut [f64]) {
    let mut b = 0;
    while b + 4 <= batch {
        let (x0, x1, x2, x3) = (
            &x[b * cols..(b + 1) * cols],
            &x[(b + 1) * cols..(b + 2) * cols],
            &x[(b + 2) * cols..(b + 3) * cols],
            &x[(b + 3) * cols..(b + 4) * cols],
        );
        for r in 0..rows {
            let wr = &w[r * cols..(r + 1) * cols];
            let (mut a0, mut a1, mut a2, mut a3) = (0.0, 0.0, 0.0, 0.0);
            for c in 0..cols {
                let wv = wr[c];
                a0 += wv * x0[c];
                a1 += wv * x1[c];
                a2 += wv * x2[c];
                a3 += wv * x3[c];
            }
            out[b * rows + r] = a0;
            out[(b + 1) * rows + r] = a1;
            out[(b + 2) * rows + r] = a2;
            out[(b + 3) * rows + r] = a3;
        }
        b += 4;
    }
    while b < batch {
        let xb = &x[b * cols..(b + 1) * cols];
        let ob = &mut out[b * rows..(b + 1) * rows];
        for (r, o) in ob.iter_mut().enumerate() {
            *o = dot_slice(&w[r * cols..(r + 1) * cols], xb);
        }
        b += 1;
    }
}

/// out[b*rows + r] += sum_c w[r*cols + c] * g[b*cols + c]  (W applied to g)
fn matvec_accumulate(w: &[f64], g: &[f64], rows: usize, cols: usize, batch: usize, out: &mut [f64]) {
    for b in 0..batch {
        let gb = &g[b * cols..(b + 1) * cols];
        let ob = &mut out[b * rows..(b + 1) * rows];
        for (r, o) in ob.iter_mut().enumerate() {
            *o += dot_slice(&w[r * cols..(r + 1) * cols], gb);
        }
    }
}

/// out[b*cols + c] = sum_r w[r*cols + c] * x[b*rows + r]  (W^T applied to x)
fn matvec_t_forward(w: &[f64], x: &[f64], rows: usize, cols: usize, batch: usize, out: &mut [f64]) {
    for b in 0..batch {
        let xb = &x[b * rows..(b + 1) * rows];
        let ob = &mut out[b * cols..(b + 1) * cols];
        for (r, &xr) in xb.iter().enumerate() {
            if xr != 0.0 {
                let wr = &w[r * cols..(r + 1) * cols];
                for (o, &wv) in ob.iter_mut().zip(wr.iter()) {
                    *o += wv * xr;
                }
            }
        }
    }
}

/// Same as matvec_t_forward but accumulating into out.
fn matvec_t_accumulate(
    w: &[f64],
    g: &[f64],
    rows: usize,
    cols: usize,
    batch: usize,
    out: &mut [f64],
) {
    let mut b = 0;
    while b + 2 <= batch {
        let (g0, g1) = (&g[b * rows..(b + 1) * rows], &g[(b + 1) * rows..(b + 2) * rows]);
        let (o0, o1) = out[b * cols..(b + 2) * cols].split_at_mut(cols);
        for r in 0..rows {
            let wr = &w[r * cols..(r + 1) * cols];
            let (s0, s1) = (g0[r], g1[r]);
            for c in 0..cols {
                o0[c] += wr[c] * s0;
                o1[c] += wr[c] * s1;
            }
        }
        b += 2;
    }
    while b < batch {
        let gb = &g[b * rows..(b + 1) * rows];
        let ob = &mut out[b * cols..(b + 1) * cols];
        for (r, &gr) in gb.iter().enumerate() {
            if gr != 0.0 {
                let wr = &w[r * cols..(r + 1) * cols];
                for (o, &wv) in ob.iter_mut().zip(wr.iter()) {
                    *o += wv * gr;
                }
            }
        }
        b += 1;
    }
}

/// dw[r*cols + c] += sum_b u[b*rows + r] * v[b*cols + c]
fn rank_update(
    mut dw: Vec<f64>,
    u: &[f64],
    v: &[f64],
    rows: usize,
    cols: usize,
    batch: usize,
) -> Vec<f64> {
    let mut b = 0;
    while b + 4 <= batch {
        let (v0, v1, v2, v3) = (
            &v[b * cols..(b + 1) * cols],
            &v[(b + 1) * cols..(b + 2) * cols],
            &v[(b + 2) * cols..(b + 3) * cols],
            &v[(b + 3) * cols..(b + 4) * cols],
        );
        for r in 0..rows {
            let (u0, u1, u2, u3) = (
                u[b * rows + r],
                u[(b + 1) * rows + r],
                u[(b + 2) * rows + r],
                u[(b + 3) * rows + r],
            );
            let dr = &mut dw[r * cols..(r + 1) * cols];
            for c in 0..cols {
                dr[c] += u0 * v0[c] + u1 * v1[c] + u2 * v2[c] + u3 * v3[c];
            }
        }
        b += 4;
    }
    while b < batch {
        let ub = &u[b * rows..(b + 1) * rows];
        let vb = &v[b * cols..(b + 1) * cols];
        for (r, &ur) in ub.iter().enumerate() {
            if ur != 0.0 {
                let dr = &mut dw[r * cols..(r + 1) * cols];
                for (d, &vc) in dr.iter_mut().zip(vb.iter()) {
                    *d += ur * vc;
                }
            }
        }
        b += 1;
    }
    dw
}
