use std::ops::Range;

use crate::error::{Error, Result};
use crate::params::{Gradients, ParameterStore};
use crate::tensor::{Real, Tensor};

use super::kernels;

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpKind {
    Constant,
    Param,
    MatMul,
    AddBias,
    Add,
    Tanh,
    Relu,
    Embedding,
    MeanPool,
    Concat,
    SoftmaxCrossEntropy,
}

#[derive(Debug)]
enum Op<T> {
    Constant,
    Param { entry: usize },
    MatMul(NodeId, NodeId),
    AddBias(NodeId, NodeId),
    Add(NodeId, NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    Embedding { table: NodeId, indices: Vec<usize> },
    MeanPool { input: NodeId, segments: Vec<Range<usize>> },
    Concat(NodeId, NodeId),
    SoftmaxCrossEntropy { logits: NodeId, targets: Vec<usize>, probs: Vec<T> },
}

impl<T> Op<T> {
    fn kind(&self) -> OpKind {
        match self {
            Op::Constant => OpKind::Constant,
            Op::Param { .. } => OpKind::Param,
            Op::MatMul(..) => OpKind::MatMul,
            Op::AddBias(..) => OpKind::AddBias,
            Op::Add(..) => OpKind::Add,
            Op::Tanh(_) => OpKind::Tanh,
            Op::Relu(_) => OpKind::Relu,
            Op::Embedding { .. } => OpKind::Embedding,
            Op::MeanPool { .. } => OpKind::MeanPool,
            Op::Concat(..) => OpKind::Concat,
            Op::SoftmaxCrossEntropy { .. } => OpKind::SoftmaxCrossEntropy,
        }
    }
}

#[derive(Debug)]
struct Node<T> {
    op: Op<T>,
    value: Tensor<T>,
    requires_grad: bool,
}

/// Tape of operations recorded during one forward pass.
///
/// Nodes are appended in execution order, so the node vector is already a
/// topological order; backward walks it in reverse exactly once.
#[derive(Debug)]
pub struct Graph<T = f64> {
    nodes: Vec<Node<T>>,
    consumed: bool,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
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

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn kind(&self, id: NodeId) -> OpKind {
        self.nodes[id.0].op.kind()
    }

    /// Gradient of the last backward pass with respect to this node, if it was reached.
    pub fn grad(&self, id: NodeId) -> Option<&[T]> {
        self.nodes[id.0].value.grad()
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>, requires_grad: bool) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("{:?}", op.kind())));
        }
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn needs(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    fn dims2(&self, kernel: &'static str, id: NodeId) -> Result<(usize, usize)> {
        self.value(id)
            .dims2()
            .ok_or_else(|| Error::shape(kernel, format!("expected rank 2, got {:?}", self.value(id).shape())))
    }

    pub fn constant(&mut self, tensor: Tensor<T>) -> Result<NodeId> {
        self.push(Op::Constant, tensor, false)
    }

    /// Leaf whose gradient is reported under store entry `entry`.
    pub fn param(&mut self, entry: usize, tensor: Tensor<T>) -> Result<NodeId> {
        self.push(Op::Param { entry }, tensor, true)
    }

    /// Records every store entry as a parameter leaf, in store order.
    pub fn bind_params(&mut self, store: &ParameterStore<T>) -> Result<Vec<NodeId>> {
        (0..store.len())
            .map(|i| self.param(i, store.tensor(i).clone()))
            .collect()
    }

    /// Records every store entry as a constant (no gradients, evaluation only).
    pub fn bind_constants(&mut self, store: &ParameterStore<T>) -> Result<Vec<NodeId>> {
        (0..store.len())
            .map(|i| self.constant(store.tensor(i).clone()))
            .collect()
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.dims2("matmul", a)?;
        let (k2, n) = self.dims2("matmul", b)?;
        if k != k2 {
            return Err(Error::shape("matmul", format!("[{m}, {k}] x [{k2}, {n}]")));
        }
        let out = kernels::matmul(self.value(a).values(), self.value(b).values(), m, k, n);
        let rg = self.needs(&[a, b]);
        self.push(Op::MatMul(a, b), Tensor::new(vec![m, n], out)?, rg)
    }

    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let (m, n) = self.dims2("add_bias", a)?;
        let bshape = self.value(bias).shape();
        if bshape != [n] {
            return Err(Error::shape("add_bias", format!("input [{m}, {n}] with bias {bshape:?}")));
        }
        let b = self.value(bias).values();
        let out: Vec<T> = self
            .value(a)
            .values()
            .chunks_exact(n)
            .flat_map(|row| row.iter().zip(b).map(|(&x, &y)| x + y))
            .collect();
        let rg = self.needs(&[a, bias]);
        self.push(Op::AddBias(a, bias), Tensor::new(vec![m, n], out)?, rg)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::shape("add", format!("{sa:?} vs {sb:?}")));
        }
        let shape = sa.to_vec();
        let out = self
            .value(a)
            .values()
            .iter()
            .zip(self.value(b).values())
            .map(|(&x, &y)| x + y)
            .collect();
        let rg = self.needs(&[a, b]);
        self.push(Op::Add(a, b), Tensor::new(shape, out)?, rg)
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a);
        let out = Tensor::new(v.shape().to_vec(), v.values().iter().map(|x| x.tanh()).collect())?;
        let rg = self.needs(&[a]);
        self.push(Op::Tanh(a), out, rg)
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a);
        let out = Tensor::new(
            v.shape().to_vec(),
            v.values().iter().map(|&x| if x > T::zero() { x } else { T::zero() }).collect(),
        )?;
        let rg = self.needs(&[a]);
        self.push(Op::Relu(a), out, rg)
    }

    /// Gathers rows of `table` (shape `[vocab, dim]`) for each index.
    pub fn embedding(&mut self, table: NodeId, indices: &[usize]) -> Result<NodeId> {
        let (vocab, dim) = self.dims2("embedding", table)?;
        if indices.is_empty() {
            return Err(Error::shape("embedding", "no indices"));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= vocab) {
            return Err(Error::shape("embedding", format!("index {bad} outside table of {vocab} rows")));
        }
        let t = self.value(table);
        let out: Vec<T> = indices.iter().flat_map(|&i| t.row(i).iter().copied()).collect();
        let rg = self.needs(&[table]);
        self.push(
            Op::Embedding {
                table,
                indices: indices.to_vec(),
            },
            Tensor::new(vec![indices.len(), dim], out)?,
            rg,
        )
    }

    /// Averages each contiguous row segment into one output row.
    pub fn mean_pool(&mut self, input: NodeId, segments: &[Range<usize>]) -> Result<NodeId> {
        let (rows, cols) = self.dims2("mean_pool", input)?;
        if segments.is_empty() {
            return Err(Error::shape("mean_pool", "no segments"));
        }
        if let Some(bad) = segments.iter().find(|s| s.is_empty() || s.end > rows) {
            return Err(Error::shape("mean_pool", format!("segment {bad:?} invalid for {rows} rows")));
        }
        let x = self.value(input).values();
        let mut out = vec![T::zero(); segments.len() * cols];
        for (s, seg) in segments.iter().enumerate() {
            let dst = &mut out[s * cols..(s + 1) * cols];
            for r in seg.clone() {
                for (d, &v) in dst.iter_mut().zip(&x[r * cols..(r + 1) * cols]) {
                    *d = *d + v;
                }
            }
            let inv = T::one() / T::from_f64(seg.len() as f64);
            dst.iter_mut().for_each(|d| *d = *d * inv);
        }
        let rg = self.needs(&[input]);
        self.push(
            Op::MeanPool {
                input,
                segments: segments.to_vec(),
            },
            Tensor::new(vec![segments.len(), cols], out)?,
            rg,
        )
    }

    /// Concatenates two rank-2 tensors along the feature (column) axis.
    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ma, na) = self.dims2("concat", a)?;
        let (mb, nb) = self.dims2("concat", b)?;
        if ma != mb {
            return Err(Error::shape("concat", format!("[{ma}, {na}] with [{mb}, {nb}]")));
        }
        let (va, vb) = (self.value(a).values(), self.value(b).values());
        let mut out = Vec::with_capacity(ma * (na + nb));
        for r in 0..ma {
            out.extend_from_slice(&va[r * na..(r + 1) * na]);
            out.extend_from_slice(&vb[r * nb..(r + 1) * nb]);
        }
        let rg = self.needs(&[a, b]);
        self.push(Op::Concat(a, b), Tensor::new(vec![ma, na + nb], out)?, rg)
    }

    /// Mean over rows of `-ln softmax(logits)[target]`; a rank-0 result.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, targets: &[usize]) -> Result<NodeId> {
        let (m, n) = self.dims2("softmax_cross_entropy", logits)?;
        if targets.len() != m {
            return Err(Error::shape(
                "softmax_cross_entropy",
                format!("{m} logit rows but {} targets", targets.len()),
            ));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= n) {
            return Err(Error::shape("softmax_cross_entropy", format!("target {bad} outside {n} classes")));
        }
        let x = self.value(logits).values();
        let mut probs = vec![T::zero(); m * n];
        let mut total = T::zero();
        for r in 0..m {
            let row = &x[r * n..(r + 1) * n];
            let p = &mut probs[r * n..(r + 1) * n];
            let log_z = kernels::softmax_into(row, p);
            total = total + (log_z - row[targets[r]]);
        }
        let loss = total / T::from_f64(m as f64);
        let rg = self.needs(&[logits]);
        self.push(
            Op::SoftmaxCrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            Tensor::scalar(loss),
            rg,
        )
    }

    /// Reverse pass from a one-element `loss`. Returns gradients aligned with
    /// `store`; entries never reached get zeros. A graph can be differentiated once.
    pub fn backward(&mut self, loss: NodeId, store: &ParameterStore<T>) -> Result<Gradients<T>> {
        if self.consumed {
            return Err(Error::Graph("backward already ran on this graph; record a new forward pass".into()));
        }
        if loss.0 >= self.nodes.len() {
            return Err(Error::Graph("loss node does not belong to this graph".into()));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Graph(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            if !self.nodes[id].requires_grad {
                continue;
            }
            self.propagate(id, &g, &mut grads);
            grads[id] = Some(g);
        }

        let mut out = store.zero_gradients();
        for (id, node) in self.nodes.iter_mut().enumerate() {
            node.value.clear_grad();
            if let Some(g) = grads[id].take() {
                if let Op::Param { entry } = node.op {
                    let dst = out
                        .per_entry
                        .get_mut(entry)
                        .filter(|d| d.len() == g.len())
                        .ok_or_else(|| Error::Layout(format!("parameter node for entry {entry} does not match store")))?;
                    dst.iter_mut().zip(&g).for_each(|(d, &v)| *d = *d + v);
                }
                node.value.set_grad(g)?;
            }
        }
        if !out.is_finite() {
            return Err(Error::NonFinite("backward".into()));
        }
        Ok(out)
    }

    fn propagate(&self, id: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[id];
        match &node.op {
            Op::Constant | Op::Param { .. } => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2().expect("rank 2");
                let n = self.value(*b).dims2().expect("rank 2").1;
                if self.nodes[a.0].requires_grad {
                    let ga = kernels::matmul_a_bt(g, self.value(*b).values(), m, n, k);
                    accumulate(grads, *a, &ga);
                }
                if self.nodes[b.0].requires_grad {
                    let gb = kernels::matmul_at_b(self.value(*a).values(), g, m, k, n);
                    accumulate(grads, *b, &gb);
                }
            }
            Op::AddBias(a, bias) => {
                accumulate(grads, *a, g);
                if self.nodes[bias.0].requires_grad {
                    let n = self.value(*bias).len();
                    let mut gb = vec![T::zero(); n];
                    for row in g.chunks_exact(n) {
                        gb.iter_mut().zip(row).for_each(|(d, &v)| *d = *d + v);
                    }
                    accumulate(grads, *bias, &gb);
                }
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g);
                accumulate(grads, *b, g);
            }
            Op::Tanh(a) => {
                let y = node.value.values();
                let ga: Vec<T> = g.iter().zip(y).map(|(&g, &y)| g * (T::one() - y * y)).collect();
                accumulate(grads, *a, &ga);
            }
            Op::Relu(a) => {
                let x = self.value(*a).values();
                let ga: Vec<T> = g
                    .iter()
                    .zip(x)
                    .map(|(&g, &x)| if x > T::zero() { g } else { T::zero() })
                    .collect();
                accumulate(grads, *a, &ga);
            }
            Op::Embedding { table, indices } => {
                let (vocab, dim) = self.value(*table).dims2().expect("rank 2");
                let mut gt = vec![T::zero(); vocab * dim];
                for (r, &i) in indices.iter().enumerate() {
                    let dst = &mut gt[i * dim..(i + 1) * dim];
                    dst.iter_mut()
                        .zip(&g[r * dim..(r + 1) * dim])
                        .for_each(|(d, &v)| *d = *d + v);
                }
                accumulate(grads, *table, &gt);
            }
            Op::MeanPool { input, segments } => {
                let (rows, cols) = self.value(*input).dims2().expect("rank 2");
                let mut gi = vec![T::zero(); rows * cols];
                for (s, seg) in segments.iter().enumerate() {
                    let inv = T::one() / T::from_f64(seg.len() as f64);
                    let src = &g[s * cols..(s + 1) * cols];
                    for r in seg.clone() {
                        gi[r * cols..(r + 1) * cols]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(d, &v)| *d = *d + v * inv);
                    }
                }
                accumulate(grads, *input, &gi);
            }
            Op::Concat(a, b) => {
                let (m, na) = self.value(*a).dims2().expect("rank 2");
                let nb = self.value(*b).dims2().expect("rank 2").1;
                let w = na + nb;
                if self.nodes[a.0].requires_grad {
                    let ga: Vec<T> = (0..m).flat_map(|r| g[r * w..r * w + na].iter().copied()).collect();
                    accumulate(grads, *a, &ga);
                }
                if self.nodes[b.0].requires_grad {
                    let gb: Vec<T> = (0..m).flat_map(|r| g[r * w + na..(r + 1) * w].iter().copied()).collect();
                    accumulate(grads, *b, &gb);
                }
            }
            Op::SoftmaxCrossEntropy { logits, targets, probs } => {
                let m = targets.len();
                let n = probs.len() / m;
                let scale = g[0] / T::from_f64(m as f64);
                let mut gl: Vec<T> = probs.iter().map(|&p| p * scale).collect();
                for (r, &t) in targets.iter().enumerate() {
                    gl[r * n + t] = gl[r * n + t] - scale;
                }
                accumulate(grads, *logits, &gl);
            }
        }
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Vec<T>>], id: NodeId, g: &[T]) {
    match &mut grads[id.0] {
        Some(existing) => existing.iter_mut().zip(g).for_each(|(d, &v)| *d = *d + v),
        slot @ None => *slot = Some(g.to_vec()),
    }
}
