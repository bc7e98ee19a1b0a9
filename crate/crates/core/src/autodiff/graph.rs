use super::tensor::{gemm_acc, gemm_at_acc, gemm_bt_acc, Tensor};
use std::collections::HashMap;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GraphError {
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("node {node} reads node {input}, which is not earlier in the graph")]
    Cycle { node: usize, input: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpTag {
    Leaf,
    MatMul,
    Add,
    Mul,
    Scale,
    Transpose,
    Softmax,
    LayerNorm,
    Gelu,
    EmbedLookup,
    CrossEntropy,
    Reshape,
    Concat,
    Slice,
    Sum,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Transpose(NodeId),
    Softmax(NodeId),
    LayerNorm { x: NodeId, rstd: Vec<f64> },
    Gelu(NodeId),
    EmbedLookup { table: NodeId, ids: Vec<usize> },
    CrossEntropy { logits: NodeId, targets: Vec<Option<usize>>, probs: Vec<f64>, count: usize },
    Reshape(NodeId),
    Concat(Vec<NodeId>),
    Slice { x: NodeId, start: usize, end: usize },
    Sum(NodeId),
}

impl Op {
    fn tag(&self) -> OpTag {
        match self {
            Op::Leaf => OpTag::Leaf,
            Op::MatMul(..) => OpTag::MatMul,
            Op::Add(..) => OpTag::Add,
            Op::Mul(..) => OpTag::Mul,
            Op::Scale(..) => OpTag::Scale,
            Op::Transpose(_) => OpTag::Transpose,
            Op::Softmax(_) => OpTag::Softmax,
            Op::LayerNorm { .. } => OpTag::LayerNorm,
            Op::Gelu(_) => OpTag::Gelu,
            Op::EmbedLookup { .. } => OpTag::EmbedLookup,
            Op::CrossEntropy { .. } => OpTag::CrossEntropy,
            Op::Reshape(_) => OpTag::Reshape,
            Op::Concat(_) => OpTag::Concat,
            Op::Slice { .. } => OpTag::Slice,
            Op::Sum(_) => OpTag::Sum,
        }
    }

    fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Scale(x, _)
            | Op::Transpose(x)
            | Op::Softmax(x)
            | Op::LayerNorm { x, .. }
            | Op::Gelu(x)
            | Op::Reshape(x)
            | Op::Slice { x, .. }
            | Op::Sum(x) => vec![*x],
            Op::EmbedLookup { table, .. } => vec![*table],
            Op::CrossEntropy { logits, .. } => vec![*logits],
            Op::Concat(xs) => xs.clone(),
        }
    }
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    param: Option<String>,
    requires_grad: bool,
}

/// Gradients produced by [`Graph::backward`].
#[derive(Debug, Default)]
pub struct Gradients {
    leaves: HashMap<NodeId, Tensor>,
    params: HashMap<String, Tensor>,
}

impl Gradients {
    /// Gradient of a trainable leaf (zeros if the loss never reached it).
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.leaves.get(&id)
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn params(&self) -> &HashMap<String, Tensor> {
        &self.params
    }

    pub fn into_params(self) -> HashMap<String, Tensor> {
        self.params
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-12;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// A define-by-run computation graph. Nodes are appended in evaluation order
/// and only ever read earlier nodes, so the node list is a topological order.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn suffix_broadcast(a: &[usize], b: &[usize]) -> bool {
    b.len() <= a.len() && a[a.len() - b.len()..] == *b
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].value.shape
    }

    pub fn op(&self, id: NodeId) -> OpTag {
        self.nodes[id.0].op.tag()
    }

    pub fn inputs(&self, id: NodeId) -> Vec<NodeId> {
        self.nodes[id.0].op.inputs()
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        let requires_grad = op.inputs().iter().any(|i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node { op, value, param: None, requires_grad });
        NodeId(self.nodes.len() - 1)
    }

    /// Named trainable leaf.
    pub fn param(&mut self, name: impl Into<String>, value: Tensor) -> NodeId {
        self.nodes.push(Node { op: Op::Leaf, value, param: Some(name.into()), requires_grad: true });
        NodeId(self.nodes.len() - 1)
    }

    /// Unnamed trainable leaf.
    pub fn var(&mut self, value: Tensor) -> NodeId {
        self.nodes.push(Node { op: Op::Leaf, value, param: None, requires_grad: true });
        NodeId(self.nodes.len() - 1)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.nodes.push(Node { op: Op::Leaf, value, param: None, requires_grad: false });
        NodeId(self.nodes.len() - 1)
    }

    /// `a[..., m, k] @ b[k, n]`, or batched `a[..., m, k] @ b[..., k, n]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (self.value(a), self.value(b));
        assert!(av.ndim() >= 2 && bv.ndim() >= 2, "matmul needs 2-D operands: {:?} @ {:?}", av.shape, bv.shape);
        let k = av.last_dim();
        let bk = bv.shape[bv.ndim() - 2];
        let n = bv.last_dim();
        assert_eq!(k, bk, "matmul inner dims: {:?} @ {:?}", av.shape, bv.shape);
        let mut shape = av.shape.clone();
        *shape.last_mut().unwrap() = n;
        let mut out = vec![0.0; shape.iter().product()];
        if bv.ndim() == 2 {
            gemm_acc(&av.data, &bv.data, &mut out, av.rows(), k, n);
        } else {
            assert_eq!(av.shape[..av.ndim() - 2], bv.shape[..bv.ndim() - 2], "matmul batch dims");
            let m = av.shape[av.ndim() - 2];
            let batches = av.numel() / (m * k).max(1);
            for bi in 0..batches {
                gemm_acc(
                    &av.data[bi * m * k..(bi + 1) * m * k],
                    &bv.data[bi * k * n..(bi + 1) * k * n],
                    &mut out[bi * m * n..(bi + 1) * m * n],
                    m,
                    k,
                    n,
                );
            }
        }
        self.push(Op::MatMul(a, b), Tensor::new(shape, out))
    }

    /// Elementwise add; `b` may broadcast over leading axes of `a`.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (self.value(a), self.value(b));
        assert!(suffix_broadcast(&av.shape, &bv.shape), "add: {:?} + {:?}", av.shape, bv.shape);
        let nb = bv.numel();
        let data = av.data.iter().enumerate().map(|(i, x)| x + bv.data[i % nb]).collect();
        let shape = av.shape.clone();
        self.push(Op::Add(a, b), Tensor::new(shape, data))
    }

    /// Elementwise product; `b` may broadcast over leading axes of `a`.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (self.value(a), self.value(b));
        assert!(suffix_broadcast(&av.shape, &bv.shape), "mul: {:?} * {:?}", av.shape, bv.shape);
        let nb = bv.numel();
        let data = av.data.iter().enumerate().map(|(i, x)| x * bv.data[i % nb]).collect();
        let shape = av.shape.clone();
        self.push(Op::Mul(a, b), Tensor::new(shape, data))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let xv = self.value(x);
        let t = Tensor::new(xv.shape.clone(), xv.data.iter().map(|v| v * c).collect());
        self.push(Op::Scale(x, c), t)
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let t = transpose_last2(xv);
        self.push(Op::Transpose(x), t)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let d = xv.last_dim();
        let mut out = xv.data.clone();
        for row in out.chunks_mut(d.max(1)) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        let shape = xv.shape.clone();
        self.push(Op::Softmax(x), Tensor::new(shape, out))
    }

    /// Normalizes each last-axis vector to zero mean and unit variance
    /// (no affine part; apply gain and bias with [`mul`](Self::mul) / [`add`](Self::add)).
    pub fn layer_norm(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let d = xv.last_dim();
        let mut out = xv.data.clone();
        let mut rstds = Vec::with_capacity(xv.rows());
        for row in out.chunks_mut(d.max(1)) {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            let rstd = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * rstd;
            }
            rstds.push(rstd);
        }
        let shape = xv.shape.clone();
        self.push(Op::LayerNorm { x, rstd: rstds }, Tensor::new(shape, out))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let data = xv.data.iter().map(|&v| 0.5 * v * (1.0 + (GELU_C * (v + 0.044715 * v * v * v)).tanh())).collect();
        let shape = xv.shape.clone();
        self.push(Op::Gelu(x), Tensor::new(shape, data))
    }

    /// Gathers rows of a `[vocab, dim]` table: output `[ids.len(), dim]`.
    pub fn embed(&mut self, table: NodeId, ids: &[usize]) -> NodeId {
        let tv = self.value(table);
        assert_eq!(tv.ndim(), 2, "embedding table must be 2-D");
        let (vocab, d) = (tv.shape[0], tv.shape[1]);
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            assert!(id < vocab, "token id {id} outside vocabulary of {vocab}");
            data.extend_from_slice(&tv.data[id * d..(id + 1) * d]);
        }
        self.push(Op::EmbedLookup { table, ids: ids.to_vec() }, Tensor::new(vec![ids.len(), d], data))
    }

    /// Mean softmax cross-entropy over the rows of `logits` that have a target.
    /// Rows with `None` are ignored; with no targets at all the loss is 0.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[Option<usize>]) -> NodeId {
        let lv = self.value(logits);
        let c = lv.last_dim();
        assert_eq!(lv.rows(), targets.len(), "one target per logits row");
        let mut probs = vec![0.0; lv.numel()];
        let mut loss = 0.0;
        let mut count = 0;
        for (r, t) in targets.iter().enumerate() {
            let row = lv.row(r);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = row.iter().map(|v| (v - m).exp()).sum();
            for (j, v) in row.iter().enumerate() {
                probs[r * c + j] = (v - m).exp() / s;
            }
            if let Some(t) = *t {
                assert!(t < c, "target {t} out of range for {c} classes");
                loss += s.ln() + m - row[t];
                count += 1;
            }
        }
        let value = if count == 0 { 0.0 } else { loss / count as f64 };
        self.push(Op::CrossEntropy { logits, targets: targets.to_vec(), probs, count }, Tensor::scalar(value))
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> NodeId {
        let xv = self.value(x);
        assert_eq!(shape.iter().product::<usize>(), xv.numel(), "reshape {:?} -> {shape:?}", xv.shape);
        let t = Tensor::new(shape.to_vec(), xv.data.clone());
        self.push(Op::Reshape(x), t)
    }

    /// Concatenates along the last axis; leading axes must agree.
    pub fn concat(&mut self, xs: &[NodeId]) -> NodeId {
        assert!(!xs.is_empty(), "concat of nothing");
        let lead = {
            let s = self.shape(xs[0]);
            s[..s.len() - 1].to_vec()
        };
        let widths: Vec<usize> = xs
            .iter()
            .map(|&x| {
                let s = self.shape(x);
                assert_eq!(s[..s.len() - 1], lead[..], "concat leading dims");
                s[s.len() - 1]
            })
            .collect();
        let total: usize = widths.iter().sum();
        let rows: usize = lead.iter().product();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&x, &w) in xs.iter().zip(&widths) {
                data.extend_from_slice(&self.value(x).data[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        self.push(Op::Concat(xs.to_vec()), Tensor::new(shape, data))
    }

    /// `x[..., start..end]`
    pub fn slice(&mut self, x: NodeId, start: usize, end: usize) -> NodeId {
        let xv = self.value(x);
        let d = xv.last_dim();
        assert!(start < end && end <= d, "slice {start}..{end} of last axis {d}");
        let w = end - start;
        let mut data = Vec::with_capacity(xv.rows() * w);
        for r in 0..xv.rows() {
            data.extend_from_slice(&xv.data[r * d + start..r * d + end]);
        }
        let mut shape = xv.shape.clone();
        *shape.last_mut().unwrap() = w;
        self.push(Op::Slice { x, start, end }, Tensor::new(shape, data))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s = self.value(x).data.iter().sum();
        self.push(Op::Sum(x), Tensor::scalar(s))
    }

    /// Reverse sweep from a scalar node.
    ///
    /// Every trainable leaf gets an entry; leaves the loss does not depend on
    /// get zeros.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients, GraphError> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(GraphError::NotScalar(lv.shape.clone()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            for inp in node.op.inputs() {
                if inp.0 >= i {
                    return Err(GraphError::Cycle { node: i, input: inp.0 });
                }
            }
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let (lower, upper) = grads.split_at_mut(i);
            let Some(g) = upper[0].as_deref() else { continue };
            self.propagate(i, g, lower);
        }
        let mut out = Gradients::default();
        for (i, node) in self.nodes.iter().enumerate().take(loss.0 + 1) {
            if !(matches!(node.op, Op::Leaf) && node.requires_grad) {
                continue;
            }
            let data = grads[i].take().unwrap_or_else(|| vec![0.0; node.value.numel()]);
            let t = Tensor::new(node.value.shape.clone(), data);
            if let Some(name) = &node.param {
                match out.params.get_mut(name) {
                    Some(acc) => acc.data.iter_mut().zip(&t.data).for_each(|(a, b)| *a += b),
                    None => {
                        out.params.insert(name.clone(), t.clone());
                    }
                }
            }
            out.leaves.insert(NodeId(i), t);
        }
        // Trainable leaves added after the loss node were never reached.
        for (i, node) in self.nodes.iter().enumerate().skip(loss.0 + 1) {
            if matches!(node.op, Op::Leaf) && node.requires_grad {
                let z = Tensor::zeros(&node.value.shape);
                if let Some(name) = &node.param {
                    out.params.entry(name.clone()).or_insert_with(|| z.clone());
                }
                out.leaves.insert(NodeId(i), z);
            }
        }
        Ok(out)
    }

    fn propagate(&self, i: usize, g: &[f64], lower: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let wants = |id: NodeId| self.nodes[id.0].requires_grad;
        macro_rules! acc {
            ($id:expr) => {
                slot(lower, $id.0, self.nodes[$id.0].value.numel())
            };
        }
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let k = av.last_dim();
                let n = bv.last_dim();
                if bv.ndim() == 2 {
                    let rows = av.rows();
                    if wants(*a) {
                        gemm_bt_acc(g, &bv.data, acc!(*a), rows, n, k);
                    }
                    if wants(*b) {
                        gemm_at_acc(&av.data, g, acc!(*b), rows, k, n);
                    }
                } else {
                    let m = av.shape[av.ndim() - 2];
                    let batches = av.numel() / (m * k).max(1);
                    for bi in 0..batches {
                        let gs = &g[bi * m * n..(bi + 1) * m * n];
                        if wants(*a) {
                            let da = acc!(*a);
                            gemm_bt_acc(gs, &bv.data[bi * k * n..(bi + 1) * k * n], &mut da[bi * m * k..(bi + 1) * m * k], m, n, k);
                        }
                        if wants(*b) {
                            let db = acc!(*b);
                            gemm_at_acc(&av.data[bi * m * k..(bi + 1) * m * k], gs, &mut db[bi * k * n..(bi + 1) * k * n], m, k, n);
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                if wants(*a) {
                    acc!(*a).iter_mut().zip(g).for_each(|(d, x)| *d += x);
                }
                if wants(*b) {
                    let db = acc!(*b);
                    let nb = db.len();
                    for (j, x) in g.iter().enumerate() {
                        db[j % nb] += x;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let nb = bv.numel();
                if wants(*a) {
                    let da = acc!(*a);
                    for (j, x) in g.iter().enumerate() {
                        da[j] += x * bv.data[j % nb];
                    }
                }
                if wants(*b) {
                    let db = acc!(*b);
                    for (j, x) in g.iter().enumerate() {
                        db[j % nb] += x * av.data[j];
                    }
                }
            }
            Op::Scale(x, c) => {
                acc!(*x).iter_mut().zip(g).for_each(|(d, v)| *d += v * c);
            }
            Op::Transpose(x) => {
                let gt = transpose_last2(&Tensor::new(node.value.shape.clone(), g.to_vec()));
                acc!(*x).iter_mut().zip(&gt.data).for_each(|(d, v)| *d += v);
            }
            Op::Softmax(x) => {
                let y = &node.value;
                let d = y.last_dim();
                let dx = acc!(*x);
                for r in 0..y.rows() {
                    let yr = &y.data[r * d..(r + 1) * d];
                    let gr = &g[r * d..(r + 1) * d];
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..d {
                        dx[r * d + j] += yr[j] * (gr[j] - dot);
                    }
                }
            }
            Op::LayerNorm { x, rstd } => {
                let y = &node.value;
                let d = y.last_dim();
                let dx = acc!(*x);
                for (r, &rs) in rstd.iter().enumerate() {
                    let yr = &y.data[r * d..(r + 1) * d];
                    let gr = &g[r * d..(r + 1) * d];
                    let mg = gr.iter().sum::<f64>() / d as f64;
                    let mgy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                    for j in 0..d {
                        dx[r * d + j] += rs * (gr[j] - mg - yr[j] * mgy);
                    }
                }
            }
            Op::Gelu(x) => {
                let xv = self.value(*x);
                let dx = acc!(*x);
                for (j, &v) in xv.data.iter().enumerate() {
                    let t = (GELU_C * (v + 0.044715 * v * v * v)).tanh();
                    let dt = (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * v * v);
                    dx[j] += g[j] * (0.5 * (1.0 + t) + 0.5 * v * dt);
                }
            }
            Op::EmbedLookup { table, ids } => {
                let d = self.value(*table).shape[1];
                let dt = acc!(*table);
                for (r, &id) in ids.iter().enumerate() {
                    for j in 0..d {
                        dt[id * d + j] += g[r * d + j];
                    }
                }
            }
            Op::CrossEntropy { logits, targets, probs, count } => {
                if *count == 0 {
                    return;
                }
                let c = self.value(*logits).last_dim();
                let scale = g[0] / *count as f64;
                let dl = acc!(*logits);
                for (r, t) in targets.iter().enumerate() {
                    let Some(t) = *t else { continue };
                    for j in 0..c {
                        let onehot = if j == t { 1.0 } else { 0.0 };
                        dl[r * c + j] += scale * (probs[r * c + j] - onehot);
                    }
                }
            }
            Op::Reshape(x) => {
                acc!(*x).iter_mut().zip(g).for_each(|(d, v)| *d += v);
            }
            Op::Concat(xs) => {
                let total = node.value.last_dim();
                let rows = node.value.rows();
                let mut off = 0;
                for &x in xs {
                    let w = self.value(x).last_dim();
                    if wants(x) {
                        let dx = acc!(x);
                        for r in 0..rows {
                            for j in 0..w {
                                dx[r * w + j] += g[r * total + off + j];
                            }
                        }
                    }
                    off += w;
                }
            }
            Op::Slice { x, start, end } => {
                let d = self.value(*x).last_dim();
                let w = end - start;
                let dx = acc!(*x);
                for r in 0..node.value.rows() {
                    for j in 0..w {
                        dx[r * d + start + j] += g[r * w + j];
                    }
                }
            }
            Op::Sum(x) => {
                acc!(*x).iter_mut().for_each(|d| *d += g[0]);
            }
        }
    }
}

fn slot(lower: &mut [Option<Vec<f64>>], index: usize, numel: usize) -> &mut Vec<f64> {
    lower[index].get_or_insert_with(|| vec![0.0; numel])
}

fn transpose_last2(x: &Tensor) -> Tensor {
    assert!(x.ndim() >= 2, "transpose needs at least 2 axes");
    let nd = x.ndim();
    let (m, n) = (x.shape[nd - 2], x.shape[nd - 1]);
    let batches = x.numel() / (m * n).max(1);
    let mut out = vec![0.0; x.numel()];
    for b in 0..batches {
        let src = &x.data[b * m * n..(b + 1) * m * n];
        let dst = &mut out[b * m * n..(b + 1) * m * n];
        for i in 0..m {
            for j in 0..n {
                dst[j * m + i] = src[i * n + j];
            }
        }
    }
    let mut shape = x.shape.clone();
    shape.swap(nd - 2, nd - 1);
    Tensor::new(shape, out)
}
