//! Define-by-run reverse-mode autodiff over row-major f64 tensors.
//!
//! A [`Tape`] is rebuilt for every forward pass: each operation appends a node
//! holding its output values plus enough bookkeeping to run the chain rule
//! backwards. Node ids are handed out in creation order, so reverse id order
//! is a valid topological order and [`Tape::backward`] visits each node once.
//!
//! Broadcasting is deliberately narrow: two operands must have equal shapes,
//! or the smaller one must be a scalar (one element) or a leading prefix of
//! the larger shape (its value is repeated along the missing trailing axes).
//! Nothing else broadcasts; offenders get a dimension error naming both
//! shapes.

use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`]. Only valid for the tape that created it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(pub usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul { a: TensorId, b: TensorId },
    Add { a: TensorId, b: TensorId },
    Sub { a: TensorId, b: TensorId },
    Mul { a: TensorId, b: TensorId },
    Scale { x: TensorId, factor: f64 },
    Sigmoid { x: TensorId },
    Tanh { x: TensorId },
    SoftmaxLastAxis { x: TensorId },
    Reshape { x: TensorId },
    SumAxis { x: TensorId, axis: usize },
    SumAll { x: TensorId },
    Transpose { x: TensorId },
    SliceRows { x: TensorId, start: usize },
    SliceCols { x: TensorId, start: usize },
    ConcatCols { xs: Vec<TensorId> },
    EmbedCols { table: TensorId, ids: Vec<usize> },
    CrossEntropy { logits: TensorId, gold: usize },
}

#[derive(Debug)]
struct Node {
    data: Vec<f64>,
    shape: Vec<usize>,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    op: Op,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn is_prefix(small: &[usize], big: &[usize]) -> bool {
    small.len() < big.len() && big[..small.len()] == *small
}

/// The recorded computation. All operations append; nothing is ever rewritten
/// except gradients during [`Tape::backward`].
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    fn push(&mut self, data: Vec<f64>, shape: Vec<usize>, requires_grad: bool, op: Op) -> TensorId {
        debug_assert_eq!(data.len(), numel(&shape));
        let id = TensorId(self.nodes.len());
        self.nodes.push(Node {
            data,
            shape,
            grad: None,
            requires_grad,
            op,
        });
        id
    }

    fn node(&self, id: TensorId) -> &Node {
        &self.nodes[id.0]
    }

    fn requires(&self, ids: &[TensorId]) -> bool {
        ids.iter().any(|id| self.node(*id).requires_grad)
    }

    /// New leaf holding `data` with the given shape.
    pub fn leaf(&mut self, data: Vec<f64>, shape: Vec<usize>, requires_grad: bool) -> Result<TensorId> {
        if data.len() != numel(&shape) {
            return Err(Error::Contract(format!(
                "leaf data length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(self.push(data, shape, requires_grad, Op::Leaf))
    }

    /// Constant (non-differentiated) leaf.
    pub fn constant(&mut self, data: Vec<f64>, shape: Vec<usize>) -> Result<TensorId> {
        self.leaf(data, shape, false)
    }

    /// All-zero constant of the given shape.
    pub fn zeros(&mut self, shape: Vec<usize>) -> TensorId {
        let n = numel(&shape);
        self.push(vec![0.0; n], shape, false, Op::Leaf)
    }

    /// Rank-0 constant.
    pub fn scalar(&mut self, v: f64) -> TensorId {
        self.push(vec![v], vec![], false, Op::Leaf)
    }

    pub fn data(&self, id: TensorId) -> &[f64] {
        &self.node(id).data
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.node(id).shape
    }

    /// Value of a one-element tensor.
    pub fn value(&self, id: TensorId) -> f64 {
        debug_assert_eq!(self.node(id).data.len(), 1, "value() needs a scalar");
        self.node(id).data[0]
    }

    /// Gradient accumulated by the last [`Tape::backward`]; `None` before it.
    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.node(id).grad.as_deref()
    }

    /// 2-D matrix product: [p, q] x [q, r] -> [p, r].
    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (sa, sb) = (self.node(a).shape.clone(), self.node(b).shape.clone());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::dim("matmul", &sa, &sb));
        }
        let (p, q, r) = (sa[0], sa[1], sb[1]);
        let ad = &self.node(a).data;
        let bd = &self.node(b).data;
        let mut out = vec![0.0; p * r];
        for i in 0..p {
            for k in 0..q {
                let av = ad[i * q + k];
                if av != 0.0 {
                    let row = &bd[k * r..(k + 1) * r];
                    let orow = &mut out[i * r..(i + 1) * r];
                    for j in 0..r {
                        orow[j] += av * row[j];
                    }
                }
            }
        }
        let rg = self.requires(&[a, b]);
        Ok(self.push(out, vec![p, r], rg, Op::MatMul { a, b }))
    }

    fn elementwise_shapes(&self, op: &str, a: TensorId, b: TensorId) -> Result<Vec<usize>> {
        let sa = &self.node(a).shape;
        let sb = &self.node(b).shape;
        if sa == sb {
            Ok(sa.clone())
        } else if numel(sb) == 1 {
            Ok(sa.clone())
        } else if numel(sa) == 1 {
            Ok(sb.clone())
        } else if is_prefix(sb, sa) {
            Ok(sa.clone())
        } else if is_prefix(sa, sb) {
            Ok(sb.clone())
        } else {
            Err(Error::dim(op, sa, sb))
        }
    }

    fn binary(&mut self, name: &str, a: TensorId, b: TensorId, f: fn(f64, f64) -> f64, op: Op) -> Result<TensorId> {
        let shape = self.elementwise_shapes(name, a, b)?;
        let n = numel(&shape);
        // A one-element output with a larger input cannot happen: the output
        // shape is always the larger operand's.
        let ca = if n == 0 { 1 } else { n / self.node(a).data.len().max(1) };
        let cb = if n == 0 { 1 } else { n / self.node(b).data.len().max(1) };
        let ad = &self.node(a).data;
        let bd = &self.node(b).data;
        let mut out = vec![0.0; n];
        for (i, o) in out.iter_mut().enumerate() {
            *o = f(ad[i / ca], bd[i / cb]);
        }
        let rg = self.requires(&[a, b]);
        Ok(self.push(out, shape, rg, op))
    }

    /// Elementwise sum with scalar / trailing-prefix broadcast.
    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary("add", a, b, |x, y| x + y, Op::Add { a, b })
    }

    /// Elementwise difference with scalar / trailing-prefix broadcast.
    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub { a, b })
    }

    /// Elementwise product with scalar / trailing-prefix broadcast.
    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul { a, b })
    }

    /// Multiply every element by a constant.
    pub fn scale(&mut self, x: TensorId, factor: f64) -> TensorId {
        let data: Vec<f64> = self.node(x).data.iter().map(|v| v * factor).collect();
        let shape = self.node(x).shape.clone();
        let rg = self.node(x).requires_grad;
        self.push(data, shape, rg, Op::Scale { x, factor })
    }

    pub fn sigmoid(&mut self, x: TensorId) -> TensorId {
        let data: Vec<f64> = self.node(x).data.iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect();
        let shape = self.node(x).shape.clone();
        let rg = self.node(x).requires_grad;
        self.push(data, shape, rg, Op::Sigmoid { x })
    }

    pub fn tanh(&mut self, x: TensorId) -> TensorId {
        let data: Vec<f64> = self.node(x).data.iter().map(|v| v.tanh()).collect();
        let shape = self.node(x).shape.clone();
        let rg = self.node(x).requires_grad;
        self.push(data, shape, rg, Op::Tanh { x })
    }

    /// Softmax along the last axis, stabilized by subtracting the slice max.
    pub fn softmax_last_axis(&mut self, x: TensorId) -> Result<TensorId> {
        let shape = self.node(x).shape.clone();
        if shape.is_empty() {
            return Err(Error::Contract("softmax_last_axis needs rank >= 1".into()));
        }
        let k = shape[shape.len() - 1];
        let xd = &self.node(x).data;
        let mut out = vec![0.0; xd.len()];
        if k > 0 {
            for s in 0..xd.len() / k {
                let sl = &xd[s * k..(s + 1) * k];
                let m = sl.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for (j, &v) in sl.iter().enumerate() {
                    let e = (v - m).exp();
                    out[s * k + j] = e;
                    sum += e;
                }
                for j in 0..k {
                    out[s * k + j] /= sum;
                }
            }
        }
        let rg = self.node(x).requires_grad;
        Ok(self.push(out, shape, rg, Op::SoftmaxLastAxis { x }))
    }

    /// Relabel the shape; element count must not change.
    pub fn reshape(&mut self, x: TensorId, new_shape: Vec<usize>) -> Result<TensorId> {
        let old = &self.node(x).shape;
        if numel(old) != numel(&new_shape) {
            return Err(Error::dim("reshape", old, &new_shape));
        }
        let data = self.node(x).data.clone();
        let rg = self.node(x).requires_grad;
        Ok(self.push(data, new_shape, rg, Op::Reshape { x }))
    }

    /// Sum out one axis; the axis disappears from the shape.
    pub fn sum_axis(&mut self, x: TensorId, axis: usize) -> Result<TensorId> {
        let shape = self.node(x).shape.clone();
        if axis >= shape.len() {
            return Err(Error::Contract(format!(
                "sum_axis axis {axis} out of range for shape {shape:?}"
            )));
        }
        let outer: usize = shape[..axis].iter().product();
        let axis_n = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let xd = &self.node(x).data;
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for a in 0..axis_n {
                for i in 0..inner {
                    out[o * inner + i] += xd[(o * axis_n + a) * inner + i];
                }
            }
        }
        let mut new_shape = shape.clone();
        new_shape.remove(axis);
        let rg = self.node(x).requires_grad;
        Ok(self.push(out, new_shape, rg, Op::SumAxis { x, axis }))
    }

    /// Sum of all elements as a rank-0 tensor.
    pub fn sum_all(&mut self, x: TensorId) -> TensorId {
        let s: f64 = self.node(x).data.iter().sum();
        let rg = self.node(x).requires_grad;
        self.push(vec![s], vec![], rg, Op::SumAll { x })
    }

    /// 2-D transpose.
    pub fn transpose(&mut self, x: TensorId) -> Result<TensorId> {
        let shape = self.node(x).shape.clone();
        if shape.len() != 2 {
            return Err(Error::Contract(format!(
                "transpose needs rank 2, got {shape:?}"
            )));
        }
        let (r, c) = (shape[0], shape[1]);
        let xd = &self.node(x).data;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = xd[i * c + j];
            }
        }
        let rg = self.node(x).requires_grad;
        Ok(self.push(out, vec![c, r], rg, Op::Transpose { x }))
    }

    /// Rows [start, end) of a 2-D tensor.
    pub fn slice_rows(&mut self, x: TensorId, start: usize, end: usize) -> Result<TensorId> {
        let shape = self.node(x).shape.clone();
        if shape.len() != 2 {
            return Err(Error::Contract(format!(
                "slice_rows needs rank 2, got {shape:?}"
            )));
        }
        let (rows, cols) = (shape[0], shape[1]);
        if start > end || end > rows {
            return Err(Error::Contract(format!(
                "slice_rows range {start}..{end} out of bounds for {rows} rows"
            )));
        }
        let xd = &self.node(x).data;
        let out = xd[start * cols..end * cols].to_vec();
        let rg = self.node(x).requires_grad;
        Ok(self.push(out, vec![end - start, cols], rg, Op::SliceRows { x, start }))
    }

    /// Columns [start, end) of a 2-D tensor.
    pub fn slice_cols(&mut self, x: TensorId, start: usize, end: usize) -> Result<TensorId> {
        let shape = self.node(x).shape.clone();
        if shape.len() != 2 {
            return Err(Error::Contract(format!(
                "slice_cols needs rank 2, got {shape:?}"
            )));
        }
        let (rows, cols) = (shape[0], shape[1]);
        if start > end || end > cols {
            return Err(Error::Contract(format!(
                "slice_cols range {start}..{end} out of bounds for {cols} columns"
            )));
        }
        let w = end - start;
        let xd = &self.node(x).data;
        let mut out = vec![0.0; rows * w];
        for i in 0..rows {
            out[i * w..(i + 1) * w].copy_from_slice(&xd[i * cols + start..i * cols + end]);
        }
        let rg = self.node(x).requires_grad;
        Ok(self.push(out, vec![rows, w], rg, Op::SliceCols { x, start }))
    }

    /// Concatenate 2-D tensors along the column axis.
    pub fn concat_cols(&mut self, xs: &[TensorId]) -> Result<TensorId> {
        if xs.is_empty() {
            return Err(Error::Contract("concat_cols needs at least one input".into()));
        }
        let rows = {
            let s = &self.node(xs[0]).shape;
            if s.len() != 2 {
                return Err(Error::Contract(format!("concat_cols needs rank 2, got {s:?}")));
            }
            s[0]
        };
        let mut widths = Vec::with_capacity(xs.len());
        for &x in xs {
            let s = &self.node(x).shape;
            if s.len() != 2 || s[0] != rows {
                return Err(Error::dim("concat_cols", &self.node(xs[0]).shape.clone(), s));
            }
            widths.push(s[1]);
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; rows * total];
        let mut off = 0;
        for (&x, &w) in xs.iter().zip(&widths) {
            let xd = &self.node(x).data;
            for i in 0..rows {
                out[i * total + off..i * total + off + w].copy_from_slice(&xd[i * w..(i + 1) * w]);
            }
            off += w;
        }
        let rg = self.requires(xs);
        Ok(self.push(out, vec![rows, total], rg, Op::ConcatCols { xs: xs.to_vec() }))
    }

    /// Look up embedding rows for `ids` and lay them out as columns:
    /// output[:, t] = table[ids[t], :]. An empty id list yields shape [n, 0].
    pub fn embed_cols(&mut self, table: TensorId, ids: &[usize]) -> Result<TensorId> {
        let shape = self.node(table).shape.clone();
        if shape.len() != 2 {
            return Err(Error::Contract(format!(
                "embed_cols table needs rank 2, got {shape:?}"
            )));
        }
        let (vocab, n) = (shape[0], shape[1]);
        for &id in ids {
            if id >= vocab {
                return Err(Error::Vocabulary { id, vocab_size: vocab });
            }
        }
        let l = ids.len();
        let td = &self.node(table).data;
        let mut out = vec![0.0; n * l];
        for (t, &id) in ids.iter().enumerate() {
            for r in 0..n {
                out[r * l + t] = td[id * n + r];
            }
        }
        let rg = self.node(table).requires_grad;
        Ok(self.push(out, vec![n, l], rg, Op::EmbedCols { table, ids: ids.to_vec() }))
    }

    /// Cross-entropy of a logit vector against one gold index, computed as
    /// log-sum-exp(logits) - logits[gold]. Rank-0 output.
    pub fn cross_entropy(&mut self, logits: TensorId, gold: usize) -> Result<TensorId> {
        let shape = self.node(logits).shape.clone();
        if shape.len() != 1 || shape[0] == 0 {
            return Err(Error::Contract(format!(
                "cross_entropy needs a non-empty rank-1 tensor, got {shape:?}"
            )));
        }
        if gold >= shape[0] {
            return Err(Error::Contract(format!(
                "cross_entropy gold index {gold} out of range for {} logits",
                shape[0]
            )));
        }
        let xd = &self.node(logits).data;
        let m = xd.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + xd.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        let loss = lse - xd[gold];
        let rg = self.node(logits).requires_grad;
        Ok(self.push(vec![loss], vec![], rg, Op::CrossEntropy { logits, gold }))
    }

    fn add_grad(&mut self, id: TensorId, delta: Vec<f64>) {
        let g = self.nodes[id.0].grad.as_mut().expect("grads allocated");
        debug_assert_eq!(g.len(), delta.len());
        for (gi, di) in g.iter_mut().zip(delta) {
            *gi += di;
        }
    }

    /// Reverse pass from a scalar loss. Allocates a zero gradient for every
    /// node, seeds the loss with 1, then walks nodes in reverse creation
    /// order. Gradients of nodes reused as inputs accumulate by summation.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if self.node(loss).data.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a one-element loss, got shape {:?}",
                self.node(loss).shape
            )));
        }
        for node in &mut self.nodes {
            node.grad = Some(vec![0.0; node.data.len()]);
        }
        self.nodes[loss.0].grad.as_mut().unwrap()[0] = 1.0;

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let go = self.nodes[i].grad.clone().unwrap();
            let op = self.nodes[i].op.clone();
            match op {
                Op::Leaf => {}
                Op::MatMul { a, b } => {
                    let (p, q) = {
                        let s = &self.node(a).shape;
                        (s[0], s[1])
                    };
                    let r = self.node(b).shape[1];
                    let ad = self.node(a).data.clone();
                    let bd = self.node(b).data.clone();
                    let mut ga = vec![0.0; p * q];
                    let mut gb = vec![0.0; q * r];
                    for i2 in 0..p {
                        for j in 0..r {
                            let g = go[i2 * r + j];
                            if g != 0.0 {
                                for k in 0..q {
                                    ga[i2 * q + k] += g * bd[k * r + j];
                                    gb[k * r + j] += ad[i2 * q + k] * g;
                                }
                            }
                        }
                    }
                    self.add_grad(a, ga);
                    self.add_grad(b, gb);
                }
                Op::Add { a, b } | Op::Sub { a, b } | Op::Mul { a, b } => {
                    let n = go.len();
                    let na = self.node(a).data.len();
                    let nb = self.node(b).data.len();
                    let ca = if n == 0 { 1 } else { n / na.max(1) };
                    let cb = if n == 0 { 1 } else { n / nb.max(1) };
                    let mut ga = vec![0.0; na];
                    let mut gb = vec![0.0; nb];
                    match self.nodes[i].op {
                        Op::Add { .. } => {
                            for (idx, &g) in go.iter().enumerate() {
                                ga[idx / ca] += g;
                                gb[idx / cb] += g;
                            }
                        }
                        Op::Sub { .. } => {
                            for (idx, &g) in go.iter().enumerate() {
                                ga[idx / ca] += g;
                                gb[idx / cb] -= g;
                            }
                        }
                        Op::Mul { .. } => {
                            let ad = self.node(a).data.clone();
                            let bd = self.node(b).data.clone();
                            for (idx, &g) in go.iter().enumerate() {
                                ga[idx / ca] += g * bd[idx / cb];
                                gb[idx / cb] += g * ad[idx / ca];
                            }
                        }
                        _ => unreachable!(),
                    }
                    self.add_grad(a, ga);
                    self.add_grad(b, gb);
                }
                Op::Scale { x, factor } => {
                    let gx: Vec<f64> = go.iter().map(|g| g * factor).collect();
                    self.add_grad(x, gx);
                }
                Op::Sigmoid { x } => {
                    let y = &self.nodes[i].data;
                    let gx: Vec<f64> = go.iter().zip(y).map(|(g, s)| g * s * (1.0 - s)).collect();
                    self.add_grad(x, gx);
                }
                Op::Tanh { x } => {
                    let y = &self.nodes[i].data;
                    let gx: Vec<f64> = go.iter().zip(y).map(|(g, t)| g * (1.0 - t * t)).collect();
                    self.add_grad(x, gx);
                }
                Op::SoftmaxLastAxis { x } => {
                    let shape = &self.nodes[i].shape;
                    let k = shape[shape.len() - 1];
                    let y = self.nodes[i].data.clone();
                    let mut gx = vec![0.0; y.len()];
                    if k > 0 {
                        for s in 0..y.len() / k {
                            let ys = &y[s * k..(s + 1) * k];
                            let gs = &go[s * k..(s + 1) * k];
                            let dot: f64 = ys.iter().zip(gs).map(|(a2, b2)| a2 * b2).sum();
                            for j in 0..k {
                                gx[s * k + j] = ys[j] * (gs[j] - dot);
                            }
                        }
                    }
                    self.add_grad(x, gx);
                }
                Op::Reshape { x } => {
                    self.add_grad(x, go);
                }
                Op::SumAxis { x, axis } => {
                    let shape = self.node(x).shape.clone();
                    let outer: usize = shape[..axis].iter().product();
                    let axis_n = shape[axis];
                    let inner: usize = shape[axis + 1..].iter().product();
                    let mut gx = vec![0.0; numel(&shape)];
                    for o in 0..outer {
                        for a in 0..axis_n {
                            for idx in 0..inner {
                                gx[(o * axis_n + a) * inner + idx] += go[o * inner + idx];
                            }
                        }
                    }
                    self.add_grad(x, gx);
                }
                Op::SumAll { x } => {
                    let n = self.node(x).data.len();
                    self.add_grad(x, vec![go[0]; n]);
                }
                Op::Transpose { x } => {
                    let (r, c) = {
                        let s = &self.node(x).shape;
                        (s[0], s[1])
                    };
                    let mut gx = vec![0.0; r * c];
                    for i2 in 0..r {
                        for j in 0..c {
                            gx[i2 * c + j] = go[j * r + i2];
                        }
                    }
                    self.add_grad(x, gx);
                }
                Op::SliceRows { x, start } => {
                    let cols = self.node(x).shape[1];
                    let out_rows = self.nodes[i].shape[0];
                    let mut gx = vec![0.0; numel(&self.node(x).shape)];
                    for i2 in 0..out_rows {
                        for j in 0..cols {
                            gx[(start + i2) * cols + j] = go[i2 * cols + j];
                        }
                    }
                    self.add_grad(x, gx);
                }
                Op::SliceCols { x, start } => {
                    let (rows, cols) = {
                        let s = &self.node(x).shape;
                        (s[0], s[1])
                    };
                    let w = self.nodes[i].shape[1];
                    let mut gx = vec![0.0; rows * cols];
                    for i2 in 0..rows {
                        for j in 0..w {
                            gx[i2 * cols + start + j] = go[i2 * w + j];
                        }
                    }
                    self.add_grad(x, gx);
                }
                Op::ConcatCols { xs } => {
                    let rows = self.nodes[i].shape[0];
                    let total = self.nodes[i].shape[1];
                    let mut off = 0;
                    for &x in &xs {
                        let w = self.node(x).shape[1];
                        let mut gx = vec![0.0; rows * w];
                        for i2 in 0..rows {
                            for j in 0..w {
                                gx[i2 * w + j] = go[i2 * total + off + j];
                            }
                        }
                        self.add_grad(x, gx);
                        off += w;
                    }
                }
                Op::EmbedCols { table, ids } => {
                    let n = self.node(table).shape[1];
                    let l = ids.len();
                    let mut gt = vec![0.0; numel(&self.node(table).shape)];
                    for (t, &id) in ids.iter().enumerate() {
                        for r in 0..n {
                            gt[id * n + r] += go[r * l + t];
                        }
                    }
                    self.add_grad(table, gt);
                }
                Op::CrossEntropy { logits, gold } => {
                    let xd = self.node(logits).data.clone();
                    let m = xd.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let exps: Vec<f64> = xd.iter().map(|v| (v - m).exp()).collect();
                    let sum: f64 = exps.iter().sum();
                    let g = go[0];
                    let gx: Vec<f64> = exps
                        .iter()
                        .enumerate()
                        .map(|(k, e)| g * (e / sum - if k == gold { 1.0 } else { 0.0 }))
                        .collect();
                    self.add_grad(logits, gx);
                }
            }
        }
        Ok(())
    }

    /// Central difference (f(x + h e) - f(x - h e)) / 2h of a recorded scalar
    /// `loss` with respect to entry `entry` of leaf `leaf`, computed without
    /// subtractive cancellation.
    ///
    /// Instead of evaluating the graph twice and subtracting two nearly equal
    /// losses, the replay carries for every node the midpoint and the exact
    /// run-to-run difference of the two perturbed evaluations. Bilinear ops
    /// combine the pairs algebraically (the difference of a product is
    /// `m_a d_b + d_a m_b`, its midpoint `m_a m_b + d_a d_b / 4`), and the
    /// transcendental ops use difference identities such as
    /// `tanh p - tanh q = sinh(p - q) / (cosh p cosh q)` and
    /// `lse(x + d) - lse(x) = log1p(sum_j softmax(x)_j expm1(d_j))`, so the
    /// quotient keeps the h^2 truncation behaviour of a central difference
    /// while its rounding noise stays proportional to the difference itself.
    /// Nodes that do not depend on the perturbed leaf keep a difference of
    /// exactly zero.
    pub fn central_difference(&self, loss: TensorId, leaf: TensorId, entry: usize, h: f64) -> Result<f64> {
        if self.node(loss).data.len() != 1 {
            return Err(Error::Contract(format!(
                "central_difference needs a one-element loss, got shape {:?}",
                self.node(loss).shape
            )));
        }
        if !matches!(self.node(leaf).op, Op::Leaf) {
            return Err(Error::Contract(
                "central_difference target must be a leaf".into(),
            ));
        }
        if entry >= self.node(leaf).data.len() {
            return Err(Error::Contract(format!(
                "central_difference entry {entry} out of range for {} elements",
                self.node(leaf).data.len()
            )));
        }
        if !h.is_finite() || h <= 0.0 {
            return Err(Error::Contract(format!("central_difference step {h} must be positive")));
        }
        if leaf.0 >= loss.0 {
            // The loss was recorded before (or is) the leaf, so it cannot
            // depend on it.
            return Ok(0.0);
        }

        // Per replayed node: midpoint values (None = identical to the
        // recorded forward data) and run difference (None = all zero).
        let n_nodes = loss.0 + 1;
        let mut mids: Vec<Option<Vec<f64>>> = (0..n_nodes).map(|_| None).collect();
        let mut diffs: Vec<Option<Vec<f64>>> = (0..n_nodes).map(|_| None).collect();
        let mut seed = vec![0.0; self.node(leaf).data.len()];
        seed[entry] = 2.0 * h;
        diffs[leaf.0] = Some(seed);

        let mid = |mids: &[Option<Vec<f64>>], id: TensorId| -> Vec<f64> {
            match &mids[id.0] {
                Some(v) => v.clone(),
                None => self.node(id).data.clone(),
            }
        };
        let dif = |diffs: &[Option<Vec<f64>>], id: TensorId| -> Vec<f64> {
            match &diffs[id.0] {
                Some(v) => v.clone(),
                None => vec![0.0; self.node(id).data.len()],
            }
        };
        let touched =
            |diffs: &[Option<Vec<f64>>], ids: &[TensorId]| ids.iter().any(|id| diffs[id.0].is_some());

        for idx in leaf.0 + 1..n_nodes {
            let node = &self.nodes[idx];
            let (m_out, d_out) = match &node.op {
                Op::Leaf => continue,
                Op::MatMul { a, b } => {
                    if !touched(&diffs, &[*a, *b]) {
                        continue;
                    }
                    let (p, q) = (self.node(*a).shape[0], self.node(*a).shape[1]);
                    let r = self.node(*b).shape[1];
                    let (am, ad) = (mid(&mids, *a), dif(&diffs, *a));
                    let (bm, bd) = (mid(&mids, *b), dif(&diffs, *b));
                    let mut mo = vec![0.0; p * r];
                    let mut dd = vec![0.0; p * r];
                    for i in 0..p {
                        for k in 0..q {
                            let (av, dv) = (am[i * q + k], ad[i * q + k]);
                            if av == 0.0 && dv == 0.0 {
                                continue;
                            }
                            for j in 0..r {
                                let (bv, ev) = (bm[k * r + j], bd[k * r + j]);
                                mo[i * r + j] += av * bv + 0.25 * dv * ev;
                                dd[i * r + j] += av * ev + dv * bv;
                            }
                        }
                    }
                    (mo, dd)
                }
                Op::Add { a, b } | Op::Sub { a, b } | Op::Mul { a, b } => {
                    if !touched(&diffs, &[*a, *b]) {
                        continue;
                    }
                    let n = node.data.len();
                    let ca = if n == 0 { 1 } else { n / self.node(*a).data.len().max(1) };
                    let cb = if n == 0 { 1 } else { n / self.node(*b).data.len().max(1) };
                    let (am, ad) = (mid(&mids, *a), dif(&diffs, *a));
                    let (bm, bd) = (mid(&mids, *b), dif(&diffs, *b));
                    let mut mo = vec![0.0; n];
                    let mut dd = vec![0.0; n];
                    for i in 0..n {
                        let (x, dx) = (am[i / ca], ad[i / ca]);
                        let (y, dy) = (bm[i / cb], bd[i / cb]);
                        match node.op {
                            Op::Add { .. } => {
                                mo[i] = x + y;
                                dd[i] = dx + dy;
                            }
                            Op::Sub { .. } => {
                                mo[i] = x - y;
                                dd[i] = dx - dy;
                            }
                            Op::Mul { .. } => {
                                mo[i] = x * y + 0.25 * dx * dy;
                                dd[i] = x * dy + dx * y;
                            }
                            _ => unreachable!(),
                        }
                    }
                    (mo, dd)
                }
                Op::Scale { x, factor } => {
                    if !touched(&diffs, &[*x]) {
                        continue;
                    }
                    let (xm, xd) = (mid(&mids, *x), dif(&diffs, *x));
                    let mo = xm.iter().map(|v| v * factor).collect();
                    let dd = xd.iter().map(|v| v * factor).collect();
                    (mo, dd)
                }
                Op::Sigmoid { x } => {
                    if !touched(&diffs, &[*x]) {
                        continue;
                    }
                    let (xm, xd) = (mid(&mids, *x), dif(&diffs, *x));
                    let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
                    let mut mo = vec![0.0; xm.len()];
                    let mut dd = vec![0.0; xm.len()];
                    for i in 0..xm.len() {
                        let (m, d) = (xm[i], xd[i]);
                        if d == 0.0 {
                            mo[i] = sig(m);
                        } else {
                            let (p, q) = (m + 0.5 * d, m - 0.5 * d);
                            let exact = (0.5 * d).sinh() / (2.0 * (0.5 * p).cosh() * (0.5 * q).cosh());
                            dd[i] = if exact.is_finite() { exact } else { sig(p) - sig(q) };
                            mo[i] = 0.5 * (sig(p) + sig(q));
                        }
                    }
                    (mo, dd)
                }
                Op::Tanh { x } => {
                    if !touched(&diffs, &[*x]) {
                        continue;
                    }
                    let (xm, xd) = (mid(&mids, *x), dif(&diffs, *x));
                    let mut mo = vec![0.0; xm.len()];
                    let mut dd = vec![0.0; xm.len()];
                    for i in 0..xm.len() {
                        let (m, d) = (xm[i], xd[i]);
                        if d == 0.0 {
                            mo[i] = m.tanh();
                        } else {
                            let (p, q) = (m + 0.5 * d, m - 0.5 * d);
                            let exact = d.sinh() / (p.cosh() * q.cosh());
                            dd[i] = if exact.is_finite() { exact } else { p.tanh() - q.tanh() };
                            mo[i] = 0.5 * (p.tanh() + q.tanh());
                        }
                    }
                    (mo, dd)
                }
                Op::SoftmaxLastAxis { x } => {
                    if !touched(&diffs, &[*x]) {
                        continue;
                    }
                    let shape = &node.shape;
                    let k = shape[shape.len() - 1];
                    let (xm, xd) = (mid(&mids, *x), dif(&diffs, *x));
                    let mut mo = vec![0.0; xm.len()];
                    let mut dd = vec![0.0; xm.len()];
                    if k > 0 {
                        for s in 0..xm.len() / k {
                            let lo: Vec<f64> = (0..k).map(|j| xm[s * k + j] - 0.5 * xd[s * k + j]).collect();
                            let mx = lo.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                            let mut exps = vec![0.0; k];
                            let mut sum = 0.0;
                            for j in 0..k {
                                exps[j] = (lo[j] - mx).exp();
                                sum += exps[j];
                            }
                            let d_lse = {
                                let t: f64 =
                                    (0..k).map(|j| exps[j] / sum * xd[s * k + j].exp_m1()).sum();
                                t.ln_1p()
                            };
                            for j in 0..k {
                                let y_lo = exps[j] / sum;
                                let d = y_lo * (xd[s * k + j] - d_lse).exp_m1();
                                dd[s * k + j] = d;
                                mo[s * k + j] = y_lo + 0.5 * d;
                            }
                        }
                    }
                    (mo, dd)
                }
                Op::Reshape { x } => {
                    if !touched(&diffs, &[*x]) {
                        continue;
                    }
                    (mid(&mids, *x), dif(&diffs, *x))
                }
                Op::SumAxis { x, axis } => {
                    if !touched(&diffs, &[*x]) {
                        continue;
                    }
                    let shape = self.node(*x).shape.clone();
                    let outer: usize = shape[..*axis].iter().product();
                    let axis_n = shape[*axis];
                    let inner: usize = shape[*axis + 1..].iter().product();
                    let (xm, xd) = (mid(&mids, *x), dif(&diffs, *x));
                    let mut mo = vec![0.0; outer * inner];
                    let mut dd = vec![0.0; outer * inner];
                    for o in 0..outer {
                        for a in 0..axis_n {
                            for i in 0..inner {
                                mo[o * inner + i] += xm[(o * axis_n + a) * inner + i];
                                dd[o * inner + i] += xd[(o * axis_n + a) * inner + i];
                            }
                        }
                    }
                    (mo, dd)
                }
                Op::SumAll { x } => {
                    if !touched(&diffs, &[*x]) {
                        continue;
                    }
                    let (xm, xd) = (mid(&mids, *x), dif(&diffs, *x));
                    (vec![xm.iter().sum()], vec![xd.iter().sum()])
                }
                Op::Transpose { x } => {
                    if !touched(&diffs, &[*x]) {
                        continue;
                    }
                    let (r, c) = (self.node(*x).shape[0], self.node(*x).shape[1]);
                    let (xm, xd) = (mid(&mids, *x), dif(&diffs, *x));
                    let mut mo = vec![0.0; r * c];
                    let mut dd = vec![0.0; r * c];
                    for i in 0..r {
                        for j in 0..c {
                            mo[j * r + i] = xm[i * c + j];
                            dd[j * r + i] = xd[i * c + j];
                        }
                    }
                    (mo, dd)
                }
                Op::SliceRows { x, start } => {
                    if !touched(&diffs, &[*x]) {
                        continue;
                    }
                    let cols = self.node(*x).shape[1];
                    let out_rows = node.shape[0];
                    let (xm, xd) = (mid(&mids, *x), dif(&diffs, *x));
                    let range = start * cols..(start + out_rows) * cols;
                    (xm[range.clone()].to_vec(), xd[range].to_vec())
                }
                Op::SliceCols { x, start } => {
                    if !touched(&diffs, &[*x]) {
                        continue;
                    }
                    let (rows, cols) = (self.node(*x).shape[0], self.node(*x).shape[1]);
                    let w = node.shape[1];
                    let (xm, xd) = (mid(&mids, *x), dif(&diffs, *x));
                    let mut mo = vec![0.0; rows * w];
                    let mut dd = vec![0.0; rows * w];
                    for i in 0..rows {
                        for j in 0..w {
                            mo[i * w + j] = xm[i * cols + start + j];
                            dd[i * w + j] = xd[i * cols + start + j];
                        }
                    }
                    (mo, dd)
                }
                Op::ConcatCols { xs } => {
                    if !touched(&diffs, xs) {
                        continue;
                    }
                    let rows = node.shape[0];
                    let total = node.shape[1];
                    let mut mo = vec![0.0; rows * total];
                    let mut dd = vec![0.0; rows * total];
                    let mut off = 0;
                    for &x in xs {
                        let w = self.node(x).shape[1];
                        let (xm, xd) = (mid(&mids, x), dif(&diffs, x));
                        for i in 0..rows {
                            for j in 0..w {
                                mo[i * total + off + j] = xm[i * w + j];
                                dd[i * total + off + j] = xd[i * w + j];
                            }
                        }
                        off += w;
                    }
                    (mo, dd)
                }
                Op::EmbedCols { table, ids } => {
                    if !touched(&diffs, &[*table]) {
                        continue;
                    }
                    let n = self.node(*table).shape[1];
                    let l = ids.len();
                    let (tm, td) = (mid(&mids, *table), dif(&diffs, *table));
                    let mut mo = vec![0.0; n * l];
                    let mut dd = vec![0.0; n * l];
                    for (t, &id) in ids.iter().enumerate() {
                        for r in 0..n {
                            mo[r * l + t] = tm[id * n + r];
                            dd[r * l + t] = td[id * n + r];
                        }
                    }
                    (mo, dd)
                }
                Op::CrossEntropy { logits, gold } => {
                    if !touched(&diffs, &[*logits]) {
                        continue;
                    }
                    let (xm, xd) = (mid(&mids, *logits), dif(&diffs, *logits));
                    let lo: Vec<f64> = xm.iter().zip(&xd).map(|(m, d)| m - 0.5 * d).collect();
                    let mx = lo.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let mut sum = 0.0;
                    let mut exps = vec![0.0; lo.len()];
                    for (j, &v) in lo.iter().enumerate() {
                        exps[j] = (v - mx).exp();
                        sum += exps[j];
                    }
                    let d_lse = {
                        let t: f64 = (0..lo.len()).map(|j| exps[j] / sum * xd[j].exp_m1()).sum();
                        t.ln_1p()
                    };
                    let d = d_lse - xd[*gold];
                    let loss_lo = mx + sum.ln() - lo[*gold];
                    (vec![loss_lo + 0.5 * d], vec![d])
                }
            };
            mids[idx] = Some(m_out);
            diffs[idx] = Some(d_out);
        }

        let d = diffs[loss.0].as_ref().map_or(0.0, |d| d[0]);
        Ok(d / (2.0 * h))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn random_data(rng: &mut SplitMix64, n: usize, lo: f64, hi: f64) -> Vec<f64> {
        (0..n).map(|_| rng.uniform(lo, hi)).collect()
    }

    #[test]
    fn matmul_identity_returns_input() {
        let mut tape = Tape::new();
        let x = tape
            .leaf(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], vec![2, 3], false)
            .unwrap();
        let eye = tape
            .leaf(vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0], vec![3, 3], false)
            .unwrap();
        let y = tape.matmul(x, eye).unwrap();
        assert_eq!(tape.data(y), tape.data(x));
    }

    #[test]
    fn matmul_zero_annihilates() {
        let mut tape = Tape::new();
        let x = tape.leaf(vec![3.0; 6], vec![2, 3], false).unwrap();
        let z = tape.zeros(vec![3, 4]);
        let y = tape.matmul(x, z).unwrap();
        assert!(tape.data(y).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matmul_matches_triple_loop_oracle() {
        let mut rng = SplitMix64::new(11);
        for _ in 0..20 {
            let p = 1 + rng.next_below(5) as usize;
            let q = 1 + rng.next_below(5) as usize;
            let r = 1 + rng.next_below(5) as usize;
            let ad = random_data(&mut rng, p * q, -2.0, 2.0);
            let bd = random_data(&mut rng, q * r, -2.0, 2.0);
            let mut oracle = vec![0.0; p * r];
            for i in 0..p {
                for j in 0..r {
                    let mut acc = 0.0;
                    for k in 0..q {
                        acc += ad[i * q + k] * bd[k * r + j];
                    }
                    oracle[i * r + j] = acc;
                }
            }
            let mut tape = Tape::new();
            let a = tape.leaf(ad, vec![p, q], false).unwrap();
            let b = tape.leaf(bd, vec![q, r], false).unwrap();
            let c = tape.matmul(a, b).unwrap();
            for (got, want) in tape.data(c).iter().zip(&oracle) {
                assert!((got - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matmul_shape_mismatch_is_dimension_error() {
        let mut tape = Tape::new();
        let a = tape.zeros(vec![2, 3]);
        let b = tape.zeros(vec![4, 2]);
        match tape.matmul(a, b) {
            Err(Error::Dimension { lhs, rhs, .. }) => {
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![4, 2]);
            }
            other => panic!("expected dimension error, got {other:?}"),
        }
    }

    #[test]
    fn softmax_of_uniform_input_is_uniform() {
        let mut tape = Tape::new();
        let x = tape.leaf(vec![0.7; 5], vec![5], false).unwrap();
        let y = tape.softmax_last_axis(x).unwrap();
        for &v in tape.data(y) {
            assert!((v - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let vals = vec![0.3, -1.2, 2.5, 0.0];
        let mut tape = Tape::new();
        let a = tape.leaf(vals.clone(), vec![4], false).unwrap();
        let shifted: Vec<f64> = vals.iter().map(|v| v + 123.0).collect();
        let b = tape.leaf(shifted, vec![4], false).unwrap();
        let ya = tape.softmax_last_axis(a).unwrap();
        let yb = tape.softmax_last_axis(b).unwrap();
        for (x, y) in tape.data(ya).iter().zip(tape.data(yb)) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_survives_extreme_logits() {
        let mut tape = Tape::new();
        let x = tape.leaf(vec![1000.0, 0.0, -1000.0], vec![3], false).unwrap();
        let y = tape.softmax_last_axis(x).unwrap();
        let d = tape.data(y);
        assert!(d.iter().all(|v| v.is_finite()));
        assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((d[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sigmoid_midpoint_and_saturation() {
        let mut tape = Tape::new();
        let x = tape.leaf(vec![0.0, 40.0, -40.0], vec![3], false).unwrap();
        let y = tape.sigmoid(x);
        let d = tape.data(y);
        assert_eq!(d[0], 0.5);
        assert!((d[1] - 1.0).abs() < 1e-12);
        assert!(d[2].abs() < 1e-12);
    }

    #[test]
    fn reshape_round_trip_preserves_data_and_grads() {
        let mut tape = Tape::new();
        let x = tape.leaf(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], vec![2, 3], true).unwrap();
        let y = tape.reshape(x, vec![3, 2]).unwrap();
        let z = tape.reshape(y, vec![2, 3]).unwrap();
        assert_eq!(tape.data(z), tape.data(x));
        let sq = tape.mul(z, z).unwrap();
        let loss = tape.sum_all(sq);
        tape.backward(loss).unwrap();
        let gx = tape.grad(x).unwrap();
        for (g, v) in gx.iter().zip(tape.data(x).to_vec()) {
            assert!((g - 2.0 * v).abs() < 1e-12);
        }
    }

    #[test]
    fn sum_axis_counts_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(vec![1.0; 6], vec![2, 3], false).unwrap();
        let s1 = tape.sum_axis(x, 1).unwrap();
        assert_eq!(tape.shape(s1), &[2]);
        assert_eq!(tape.data(s1), &[3.0, 3.0]);
        let s0 = tape.sum_axis(x, 0).unwrap();
        assert_eq!(tape.shape(s0), &[3]);
        assert_eq!(tape.data(s0), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn sum_axis_middle_matches_loop_oracle() {
        let mut rng = SplitMix64::new(21);
        let (a, b, c) = (2usize, 3usize, 4usize);
        let xd = random_data(&mut rng, a * b * c, -1.0, 1.0);
        let mut oracle = vec![0.0; a * c];
        for i in 0..a {
            for j in 0..b {
                for k in 0..c {
                    oracle[i * c + k] += xd[(i * b + j) * c + k];
                }
            }
        }
        let mut tape = Tape::new();
        let x = tape.leaf(xd, vec![a, b, c], false).unwrap();
        let s = tape.sum_axis(x, 1).unwrap();
        assert_eq!(tape.shape(s), &[a, c]);
        for (got, want) in tape.data(s).iter().zip(&oracle) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn prefix_broadcast_add_repeats_along_trailing_axis() {
        let mut tape = Tape::new();
        let x = tape.leaf(vec![0.0; 6], vec![2, 3], false).unwrap();
        let b = tape.leaf(vec![10.0, 20.0], vec![2], false).unwrap();
        let y = tape.add(x, b).unwrap();
        assert_eq!(tape.data(y), &[10.0, 10.0, 10.0, 20.0, 20.0, 20.0]);
    }

    #[test]
    fn scalar_broadcast_and_incompatible_shapes() {
        let mut tape = Tape::new();
        let x = tape.leaf(vec![1.0, 2.0], vec![2], false).unwrap();
        let s = tape.scalar(5.0);
        let y = tape.add(x, s).unwrap();
        assert_eq!(tape.data(y), &[6.0, 7.0]);
        let bad = tape.zeros(vec![3]);
        assert!(matches!(tape.add(x, bad), Err(Error::Dimension { .. })));
        // Trailing-suffix alignment is not supported.
        let m = tape.zeros(vec![2, 3]);
        let suffix = tape.zeros(vec![3]);
        assert!(matches!(tape.add(m, suffix), Err(Error::Dimension { .. })));
    }

    #[test]
    fn broadcast_backward_sums_over_expanded_axes() {
        let mut tape = Tape::new();
        let x = tape.leaf(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], vec![2, 3], true).unwrap();
        let b = tape.leaf(vec![1.0, -1.0], vec![2], true).unwrap();
        let y = tape.mul(x, b).unwrap();
        let loss = tape.sum_all(y);
        tape.backward(loss).unwrap();
        // d loss / d b[i] = sum of row i of x.
        assert_eq!(tape.grad(b).unwrap(), &[6.0, 15.0]);
        assert_eq!(tape.grad(x).unwrap(), &[1.0, 1.0, 1.0, -1.0, -1.0, -1.0]);
    }

    #[test]
    fn backward_of_linear_functional_recovers_weights() {
        let mut tape = Tape::new();
        let x = tape.leaf(vec![0.5, -0.25, 4.0], vec![3], true).unwrap();
        let w = tape.leaf(vec![2.0, 3.0, -1.0], vec![3], false).unwrap();
        let y = tape.mul(x, w).unwrap();
        let loss = tape.sum_all(y);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[2.0, 3.0, -1.0]);
    }

    #[test]
    fn reused_tensor_accumulates_grad_like_doubling() {
        let mut ta = Tape::new();
        let x1 = ta.leaf(vec![1.5, -2.0], vec![2], true).unwrap();
        let y1 = ta.add(x1, x1).unwrap();
        let sq1 = ta.mul(y1, y1).unwrap();
        let l1 = ta.sum_all(sq1);
        ta.backward(l1).unwrap();

        let mut tb = Tape::new();
        let x2 = tb.leaf(vec![1.5, -2.0], vec![2], true).unwrap();
        let y2 = tb.scale(x2, 2.0);
        let sq2 = tb.mul(y2, y2).unwrap();
        let l2 = tb.sum_all(sq2);
        tb.backward(l2).unwrap();

        assert_eq!(ta.grad(x1).unwrap(), tb.grad(x2).unwrap());
    }

    #[test]
    fn disconnected_tensor_keeps_zero_grad() {
        let mut tape = Tape::new();
        let x = tape.leaf(vec![1.0], vec![1], true).unwrap();
        let unused = tape.leaf(vec![9.0], vec![1], true).unwrap();
        let loss = tape.sum_all(x);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(unused).unwrap(), &[0.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::new();
        let x = tape.leaf(vec![1.0, 2.0], vec![2], true).unwrap();
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn embed_cols_lays_rows_out_as_columns() {
        let mut tape = Tape::new();
        let table = tape
            .leaf(vec![0.0, 1.0, 10.0, 11.0, 20.0, 21.0], vec![3, 2], true)
            .unwrap();
        let e = tape.embed_cols(table, &[2, 0, 2]).unwrap();
        assert_eq!(tape.shape(e), &[2, 3]);
        assert_eq!(tape.data(e), &[20.0, 0.0, 20.0, 21.0, 1.0, 21.0]);
        let loss = tape.sum_all(e);
        tape.backward(loss).unwrap();
        // Token 2 used twice: its table row accumulates gradient 2.
        assert_eq!(tape.grad(table).unwrap(), &[1.0, 1.0, 0.0, 0.0, 2.0, 2.0]);
    }

    #[test]
    fn embed_cols_rejects_out_of_vocab_id() {
        let mut tape = Tape::new();
        let table = tape.zeros(vec![3, 2]);
        match tape.embed_cols(table, &[3]) {
            Err(Error::Vocabulary { id, vocab_size }) => {
                assert_eq!((id, vocab_size), (3, 3));
            }
            other => panic!("expected vocabulary error, got {other:?}"),
        }
    }

    #[test]
    fn embed_cols_of_empty_sequence_has_zero_columns() {
        let mut tape = Tape::new();
        let table = tape.zeros(vec![3, 4]);
        let e = tape.embed_cols(table, &[]).unwrap();
        assert_eq!(tape.shape(e), &[4, 0]);
    }

    #[test]
    fn cross_entropy_uniform_logits_is_log_v() {
        let mut tape = Tape::new();
        let x = tape.leaf(vec![0.0; 7], vec![7], false).unwrap();
        let l = tape.cross_entropy(x, 3).unwrap();
        assert!((tape.value(l) - (7.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_matches_direct_formula_and_grad_sums_to_zero() {
        let mut rng = SplitMix64::new(31);
        let logits = random_data(&mut rng, 9, -3.0, 3.0);
        let gold = 4;
        let mut tape = Tape::new();
        let x = tape.leaf(logits.clone(), vec![9], true).unwrap();
        let l = tape.cross_entropy(x, gold).unwrap();
        let z: f64 = logits.iter().map(|v| v.exp()).sum();
        let direct = -(logits[gold].exp() / z).ln();
        assert!((tape.value(l) - direct).abs() < 1e-12);
        tape.backward(l).unwrap();
        let g = tape.grad(x).unwrap();
        assert!(g.iter().sum::<f64>().abs() < 1e-12);
        // dL/dx = softmax - onehot.
        for (k, gv) in g.iter().enumerate() {
            let p = logits[k].exp() / z;
            let want = p - if k == gold { 1.0 } else { 0.0 };
            assert!((gv - want).abs() < 1e-12);
        }
    }

    #[test]
    fn cross_entropy_bad_gold_is_contract_error() {
        let mut tape = Tape::new();
        let x = tape.zeros(vec![4]);
        assert!(matches!(tape.cross_entropy(x, 4), Err(Error::Contract(_))));
    }

    #[test]
    fn slice_and_concat_are_inverse() {
        let mut rng = SplitMix64::new(41);
        let xd = random_data(&mut rng, 3 * 7, -1.0, 1.0);
        let mut tape = Tape::new();
        let x = tape.leaf(xd.clone(), vec![3, 7], true).unwrap();
        let left = tape.slice_cols(x, 0, 2).unwrap();
        let mid = tape.slice_cols(x, 2, 5).unwrap();
        let right = tape.slice_cols(x, 5, 7).unwrap();
        let back = tape.concat_cols(&[left, mid, right]).unwrap();
        assert_eq!(tape.data(back), &xd[..]);
        let sq = tape.mul(back, back).unwrap();
        let loss = tape.sum_all(sq);
        tape.backward(loss).unwrap();
        for (g, v) in tape.grad(x).unwrap().iter().zip(&xd) {
            assert!((g - 2.0 * v).abs() < 1e-12);
        }
    }

    #[test]
    fn slice_rows_routes_gradient_to_sliced_rows_only() {
        let mut tape = Tape::new();
        let x = tape.leaf((0..12).map(|v| v as f64).collect(), vec![4, 3], true).unwrap();
        let mid = tape.slice_rows(x, 1, 3).unwrap();
        assert_eq!(tape.data(mid), &[3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        let loss = tape.sum_all(mid);
        tape.backward(loss).unwrap();
        assert_eq!(
            tape.grad(x).unwrap(),
            &[0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0]
        );
    }

    #[test]
    fn transpose_backward_transposes_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], vec![2, 3], true).unwrap();
        let xt = tape.transpose(x).unwrap();
        assert_eq!(tape.shape(xt), &[3, 2]);
        assert_eq!(tape.data(xt), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        let w = tape.leaf((0..6).map(|v| v as f64).collect(), vec![3, 2], false).unwrap();
        let y = tape.mul(xt, w).unwrap();
        let loss = tape.sum_all(y);
        tape.backward(loss).unwrap();
        // Gradient of x[i][j] is w[j][i].
        assert_eq!(tape.grad(x).unwrap(), &[0.0, 2.0, 4.0, 1.0, 3.0, 5.0]);
    }

    #[test]
    fn composite_graph_matches_finite_differences() {
        use crate::gradcheck::finite_diff_check;
        let mut rng = SplitMix64::new(51);
        let wd = random_data(&mut rng, 3 * 4, -0.8, 0.8);
        let xd = random_data(&mut rng, 4 * 2, -0.8, 0.8);

        let run = |w: &[f64]| -> crate::error::Result<f64> {
            let mut tape = Tape::new();
            let wt = tape.leaf(w.to_vec(), vec![3, 4], true)?;
            let xt = tape.leaf(xd.clone(), vec![4, 2], false)?;
            let y = tape.matmul(wt, xt)?;
            let s = tape.sigmoid(y);
            let sm = tape.softmax_last_axis(s)?;
            let sq = tape.mul(sm, sm)?;
            let loss = tape.sum_all(sq);
            Ok(tape.value(loss))
        };

        let mut tape = Tape::new();
        let wt = tape.leaf(wd.clone(), vec![3, 4], true).unwrap();
        let xt = tape.leaf(xd.clone(), vec![4, 2], false).unwrap();
        let y = tape.matmul(wt, xt).unwrap();
        let s = tape.sigmoid(y);
        let sm = tape.softmax_last_axis(s).unwrap();
        let sq = tape.mul(sm, sm).unwrap();
        let loss = tape.sum_all(sq);
        tape.backward(loss).unwrap();
        let analytic = tape.grad(wt).unwrap().to_vec();

        let err = finite_diff_check(run, &wd, &analytic, 1e-5).unwrap();
        assert!(err < 1e-6, "relative error {err}");
    }

    #[test]
    fn central_difference_of_cubic_matches_closed_form() {
        // For y = x^3 the central difference is exactly 3 m^2 + h^2; with a
        // large step the truncation term is visible and must be reproduced.
        let (m, h) = (1.0, 1e-2);
        let mut tape = Tape::new();
        let x = tape.leaf(vec![m], vec![1], true).unwrap();
        let xx = tape.mul(x, x).unwrap();
        let xxx = tape.mul(xx, x).unwrap();
        let loss = tape.sum_all(xxx);
        let cd = tape.central_difference(loss, x, 0, h).unwrap();
        let expected = 3.0 * m * m + h * h;
        assert!((cd - expected).abs() < 1e-12, "cd {cd} vs {expected}");
    }

    #[test]
    fn central_difference_matches_two_run_evaluation_when_well_conditioned() {
        // On entries with healthy gradients the naive two-run difference is
        // accurate to ~1e-11, so the propagated version must agree with it,
        // truncation term included.
        let mut rng = SplitMix64::new(7);
        let wd = random_data(&mut rng, 12, -1.0, 1.0);
        let xd = random_data(&mut rng, 8, -1.0, 1.0);
        let build = |w: &[f64], tape: &mut Tape| -> (TensorId, TensorId) {
            let wt = tape.leaf(w.to_vec(), vec![3, 4], true).unwrap();
            let xt = tape.leaf(xd.clone(), vec![4, 2], false).unwrap();
            let y = tape.matmul(wt, xt).unwrap();
            let s = tape.sigmoid(y);
            let t = tape.tanh(s);
            let sm = tape.softmax_last_axis(t).unwrap();
            let sq = tape.mul(sm, t).unwrap();
            let ce_in = tape.reshape(sq, vec![6]).unwrap();
            let ce = tape.cross_entropy(ce_in, 1).unwrap();
            let tot = tape.sum_all(sq);
            let both = tape.add(ce, tot).unwrap();
            (wt, both)
        };
        let h = 1e-3;
        for entry in 0..wd.len() {
            let mut tape = Tape::new();
            let (wt, loss) = build(&wd, &mut tape);
            let propagated = tape.central_difference(loss, wt, entry, h).unwrap();

            let eval = |w: &[f64]| {
                let mut t = Tape::new();
                let (_, l) = build(w, &mut t);
                t.value(l)
            };
            let mut plus = wd.clone();
            plus[entry] += h;
            let mut minus = wd.clone();
            minus[entry] -= h;
            let naive = (eval(&plus) - eval(&minus)) / (2.0 * h);
            assert!(
                (propagated - naive).abs() <= 1e-9 * naive.abs().max(1.0),
                "entry {entry}: propagated {propagated} vs naive {naive}"
            );
        }
    }

    #[test]
    fn central_difference_of_shift_invariant_direction_is_roundoff_level() {
        // Adding the same bias to every logit leaves cross-entropy unchanged,
        // so the derivative along the bias is exactly zero; the propagated
        // difference must report it at roundoff level instead of the ~1e-10
        // cancellation noise of two separate evaluations.
        let mut rng = SplitMix64::new(11);
        let logits = random_data(&mut rng, 5, -2.0, 2.0);
        let mut tape = Tape::new();
        let lt = tape.leaf(logits, vec![5], false).unwrap();
        let bias = tape.leaf(vec![0.3], vec![1], true).unwrap();
        let shifted = tape.add(lt, bias).unwrap();
        let loss = tape.cross_entropy(shifted, 2).unwrap();
        let cd = tape.central_difference(loss, bias, 0, 1e-5).unwrap();
        assert!(cd.abs() < 1e-12, "shift direction leaked {cd}");
    }

    #[test]
    fn central_difference_of_disconnected_leaf_is_exactly_zero() {
        let mut tape = Tape::new();
        let unused = tape.leaf(vec![1.0, 2.0], vec![2], true).unwrap();
        let x = tape.leaf(vec![3.0], vec![1], true).unwrap();
        let loss = tape.sum_all(x);
        assert_eq!(tape.central_difference(loss, unused, 0, 1e-5).unwrap(), 0.0);
    }

    #[test]
    fn central_difference_through_every_op_matches_analytic_gradient() {
        // Exercise the remaining structural ops (transpose, slices, concat,
        // embed, sum_axis, scale, sub) in one graph and compare against the
        // backward pass; at h = 1e-6 truncation is negligible for this
        // well-scaled graph, so agreement should be near roundoff.
        let mut rng = SplitMix64::new(23);
        let table = random_data(&mut rng, 12, -1.0, 1.0);
        let mut tape = Tape::new();
        let tt = tape.leaf(table.clone(), vec![4, 3], true).unwrap();
        let cols = tape.embed_cols(tt, &[2, 0, 3, 1]).unwrap();
        let tr = tape.transpose(cols).unwrap();
        let top = tape.slice_rows(tr, 0, 2).unwrap();
        let bottom = tape.slice_rows(tr, 2, 4).unwrap();
        let wide = tape.concat_cols(&[top, bottom]).unwrap();
        let mid = tape.slice_cols(wide, 1, 5).unwrap();
        let scaled = tape.scale(mid, 1.7);
        let shifted_in = tape.scalar(0.4);
        let shifted = tape.sub(scaled, shifted_in).unwrap();
        let deep = tape.reshape(shifted, vec![2, 2, 2]).unwrap();
        let summed = tape.sum_axis(deep, 1).unwrap();
        let flat = tape.reshape(summed, vec![4]).unwrap();
        let loss = tape.cross_entropy(flat, 3).unwrap();
        tape.backward(loss).unwrap();
        let analytic = tape.grad(tt).unwrap().to_vec();
        for entry in 0..table.len() {
            let cd = tape.central_difference(loss, tt, entry, 1e-6).unwrap();
            let err = crate::gradcheck::relative_error(analytic[entry], cd);
            assert!(err < 1e-9, "entry {entry}: analytic {} cd {cd}", analytic[entry]);
        }
    }

    #[test]
    fn central_difference_rejects_bad_inputs() {
        let mut tape = Tape::new();
        let x = tape.leaf(vec![1.0, 2.0], vec![2], true).unwrap();
        let y = tape.mul(x, x).unwrap();
        let loss = tape.sum_all(y);
        assert!(tape.central_difference(y, x, 0, 1e-5).is_err());
        assert!(tape.central_difference(loss, y, 0, 1e-5).is_err());
        assert!(tape.central_difference(loss, x, 2, 1e-5).is_err());
        assert!(tape.central_difference(loss, x, 0, 0.0).is_err());
        assert!(tape.central_difference(loss, x, 0, 1e-5).is_ok());
    }
}
