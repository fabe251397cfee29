//! Reverse-mode gradient tape over a closed set of dense-network ops.
//!
//! Nodes are appended in evaluation order, so the node index is already a
//! topological order and `backward` is a single reverse sweep. Parameters
//! are borrowed for the lifetime of the tape; the optimizer mutates them
//! only after the tape has been consumed.

use std::borrow::Cow;
use std::collections::{BTreeMap, HashMap};

use super::layer::{Activation, DenseLayer, ParamId};
use super::tensor::Tensor2;
use crate::error::{Error, Result};
use crate::scalar::{log_sum_exp, sigmoid, softplus, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    MatMul(NodeId, NodeId),
    AddBias(NodeId, NodeId),
    Add(NodeId, NodeId),
    Scale(NodeId, T),
    Act(NodeId, Activation),
    Concat(Vec<NodeId>),
    SelectColumns(NodeId, Vec<usize>),
    Bce {
        logits: NodeId,
        labels: Vec<T>,
    },
    CosineMargin {
        a: NodeId,
        b: NodeId,
        labels: Vec<T>,
        margin: T,
    },
    Triplet {
        anchor: NodeId,
        pos: NodeId,
        neg: NodeId,
        margin: T,
    },
    SquaredError {
        pred: NodeId,
        targets: Vec<T>,
    },
    TokenXent {
        logits: NodeId,
        tokens: Vec<Vec<usize>>,
        pad: usize,
        vocab: usize,
    },
    WeightedSum(Vec<(NodeId, T)>),
}

#[derive(Debug)]
struct Node<'a, T: Clone> {
    value: Cow<'a, Tensor2<T>>,
    op: Op<T>,
    param: Option<ParamId>,
}

/// Gradients keyed by parameter.
#[derive(Debug, Clone, Default)]
pub struct Gradients<T> {
    map: BTreeMap<ParamId, Tensor2<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, id: ParamId) -> Option<&Tensor2<T>> {
        self.map.get(&id)
    }

    pub fn insert(&mut self, id: ParamId, g: Tensor2<T>) {
        self.map.insert(id, g);
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor2<T>)> {
        self.map.iter().map(|(&k, v)| (k, v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Tensor2<T>)> {
        self.map.iter_mut().map(|(&k, v)| (k, v))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    fn accumulate(&mut self, id: ParamId, g: &Tensor2<T>) {
        match self.map.get_mut(&id) {
            Some(acc) => acc.add_assign(g).expect("parameter gradient shapes agree"),
            None => {
                self.map.insert(id, g.clone());
            }
        }
    }
}

#[derive(Debug, Default)]
pub struct Tape<'a, T: Scalar> {
    nodes: Vec<Node<'a, T>>,
    params: HashMap<ParamId, NodeId>,
}

impl<'a, T: Scalar> Tape<'a, T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor2<T> {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Cow<'a, Tensor2<T>>, op: Op<T>, name: &str) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("output of {name}")));
        }
        self.nodes.push(Node { value, op, param: None });
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, value: Tensor2<T>) -> NodeId {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op: Op::Leaf,
            param: None,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Registers a borrowed parameter; repeated registrations share a node.
    pub fn param(&mut self, id: ParamId, value: &'a Tensor2<T>) -> NodeId {
        if let Some(&node) = self.params.get(&id) {
            return node;
        }
        self.nodes.push(Node {
            value: Cow::Borrowed(value),
            op: Op::Leaf,
            param: Some(id),
        });
        let node = NodeId(self.nodes.len() - 1);
        self.params.insert(id, node);
        node
    }

    /// Copy of a node's value with no path back to its inputs.
    pub fn detach(&mut self, id: NodeId) -> NodeId {
        let v = self.value(id).clone();
        self.constant(v)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).matmul(self.value(b))?;
        self.push(Cow::Owned(v), Op::MatMul(a, b), "matmul")
    }

    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let v = self.value(x).add_column(self.value(bias))?;
        self.push(Cow::Owned(v), Op::AddBias(x, bias), "add_bias")
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).add(self.value(b))?;
        self.push(Cow::Owned(v), Op::Add(a, b), "add")
    }

    pub fn scale(&mut self, a: NodeId, k: T) -> Result<NodeId> {
        let v = self.value(a).scale(k);
        self.push(Cow::Owned(v), Op::Scale(a, k), "scale")
    }

    pub fn activation(&mut self, a: NodeId, act: Activation) -> Result<NodeId> {
        if act == Activation::Identity {
            return Ok(a);
        }
        let v = self.value(a).map(|x| act.apply(x));
        self.push(Cow::Owned(v), Op::Act(a, act), "activation")
    }

    /// Stacks feature blocks (rows) of same-batch tensors.
    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let values: Vec<&Tensor2<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Tensor2::vstack(&values)?;
        self.push(Cow::Owned(v), Op::Concat(parts.to_vec()), "concat")
    }

    /// Gathers columns (batch samples) by index; indices may repeat.
    pub fn select_columns(&mut self, a: NodeId, idx: &[usize]) -> Result<NodeId> {
        let src = self.value(a);
        let (rows, cols) = src.shape();
        let mut out = Tensor2::zeros(rows, idx.len());
        for (k, &j) in idx.iter().enumerate() {
            if j >= cols {
                return Err(Error::shape("select_columns", src.shape(), (rows, j + 1)));
            }
            for r in 0..rows {
                out.set(r, k, src.get(r, j));
            }
        }
        self.push(Cow::Owned(out), Op::SelectColumns(a, idx.to_vec()), "select_columns")
    }

    /// Mean binary cross-entropy with logits over a `1 x B` row.
    pub fn bce_with_logits(&mut self, logits: NodeId, labels: &[T]) -> Result<NodeId> {
        let z = self.value(logits);
        check_row(z, labels.len(), "bce_with_logits")?;
        let n = T::lit(labels.len() as f64);
        let total = z
            .as_slice()
            .iter()
            .zip(labels)
            .fold(T::zero(), |acc, (&z, &y)| acc + softplus(z) - y * z);
        let op = Op::Bce {
            logits,
            labels: labels.to_vec(),
        };
        self.push(Cow::Owned(Tensor2::scalar(total / n)), op, "bce_with_logits")
    }

    /// Mean cosine-distance margin loss over paired columns of `a` and `b`.
    pub fn cosine_margin(&mut self, a: NodeId, b: NodeId, labels: &[T], margin: T) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        check_pair(va, vb, labels.len(), "contrastive_cosine")?;
        let mut total = T::zero();
        for j in 0..labels.len() {
            let geom = CosGeom::new(va, vb, j)?;
            let d = T::one() - geom.cos;
            let y = labels[j];
            let hinge = (margin - d).max(T::zero());
            total += y * d * d + (T::one() - y) * hinge * hinge;
        }
        let n = T::lit(labels.len() as f64);
        let op = Op::CosineMargin {
            a,
            b,
            labels: labels.to_vec(),
            margin,
        };
        self.push(Cow::Owned(Tensor2::scalar(total / n)), op, "contrastive_cosine")
    }

    /// Mean L2 triplet hinge over columns.
    pub fn triplet(&mut self, anchor: NodeId, pos: NodeId, neg: NodeId, margin: T) -> Result<NodeId> {
        let (va, vp, vn) = (self.value(anchor), self.value(pos), self.value(neg));
        if va.shape() != vp.shape() || va.shape() != vn.shape() {
            return Err(Error::shape("contrastive_triplet", va.shape(), vn.shape()));
        }
        let b = va.cols();
        if b == 0 {
            return Err(Error::Empty("triplet batch".into()));
        }
        let mut total = T::zero();
        for j in 0..b {
            let dp = col_distance(va, vp, j);
            let dn = col_distance(va, vn, j);
            total += (margin + dp - dn).max(T::zero());
        }
        let op = Op::Triplet {
            anchor,
            pos,
            neg,
            margin,
        };
        self.push(
            Cow::Owned(Tensor2::scalar(total / T::lit(b as f64))),
            op,
            "contrastive_triplet",
        )
    }

    /// Mean squared error between a `1 x B` row and constant targets.
    pub fn squared_error(&mut self, pred: NodeId, targets: &[T]) -> Result<NodeId> {
        let p = self.value(pred);
        check_row(p, targets.len(), "squared_error")?;
        let total = p
            .as_slice()
            .iter()
            .zip(targets)
            .fold(T::zero(), |acc, (&p, &t)| acc + (p - t) * (p - t));
        let op = Op::SquaredError {
            pred,
            targets: targets.to_vec(),
        };
        let n = T::lit(targets.len() as f64);
        self.push(Cow::Owned(Tensor2::scalar(total / n)), op, "squared_error")
    }

    /// Token-level softmax cross-entropy. `logits` is `(len * vocab) x B`
    /// with position-major rows; each sample is averaged over its non-PAD
    /// positions, then samples are averaged.
    pub fn token_xent(&mut self, logits: NodeId, tokens: &[Vec<usize>], pad: usize, vocab: usize) -> Result<NodeId> {
        let v = self.value(logits);
        let per_sample = token_nll(v, tokens, pad, vocab)?;
        let n = T::lit(per_sample.len() as f64);
        let total = per_sample.iter().fold(T::zero(), |a, &b| a + b);
        let op = Op::TokenXent {
            logits,
            tokens: tokens.to_vec(),
            pad,
            vocab,
        };
        self.push(Cow::Owned(Tensor2::scalar(total / n)), op, "reconstruction")
    }

    pub fn weighted_sum(&mut self, terms: &[(NodeId, T)]) -> Result<NodeId> {
        let mut total = T::zero();
        for &(n, w) in terms {
            let v = self.value(n);
            if v.shape() != (1, 1) {
                return Err(Error::shape("weighted_sum", (1, 1), v.shape()));
            }
            total += w * v.item();
        }
        self.push(
            Cow::Owned(Tensor2::scalar(total)),
            Op::WeightedSum(terms.to_vec()),
            "weighted_sum",
        )
    }

    /// Runs the reverse sweep from `output` seeded with `seed`, returning the
    /// gradient of every registered parameter that `output` depends on. The
    /// tape is cleared afterwards.
    pub fn backward(&mut self, output: NodeId, seed: Tensor2<T>) -> Result<Gradients<T>> {
        if self.nodes.is_empty() || output.0 >= self.nodes.len() {
            return Err(Error::Usage("backward called without a recorded forward pass".into()));
        }
        if seed.shape() != self.value(output).shape() {
            return Err(Error::shape("backward seed", self.value(output).shape(), seed.shape()));
        }
        let mut grads: Vec<Option<Tensor2<T>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(seed);
        let mut out = Gradients::default();

        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {
                    if let Some(pid) = node.param {
                        out.accumulate(pid, &g);
                    }
                }
                Op::MatMul(a, b) => {
                    let ga = g.matmul_t(self.value(*b))?;
                    let gb = self.value(*a).t_matmul(&g)?;
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::AddBias(x, b) => {
                    let gb = g.sum_columns();
                    accumulate(&mut grads, *x, g);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Scale(a, k) => accumulate(&mut grads, *a, g.scale(*k)),
                Op::Act(a, act) => {
                    let act = *act;
                    let ga = g.zip_with(&node.value, "activation", |g, y| g * act.derivative_from_output(y))?;
                    accumulate(&mut grads, *a, ga);
                }
                Op::Concat(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let rows = self.value(p).rows();
                        accumulate(&mut grads, p, g.row_block(start, rows));
                        start += rows;
                    }
                }
                Op::SelectColumns(a, idx) => {
                    let (rows, cols) = self.value(*a).shape();
                    let mut ga = Tensor2::zeros(rows, cols);
                    for (k, &j) in idx.iter().enumerate() {
                        for r in 0..rows {
                            ga.set(r, j, ga.get(r, j) + g.get(r, k));
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::Bce { logits, labels } => {
                    let s = g.item() / T::lit(labels.len() as f64);
                    let z = self.value(*logits);
                    let gz: Vec<T> = z
                        .as_slice()
                        .iter()
                        .zip(labels)
                        .map(|(&z, &y)| s * (sigmoid(z) - y))
                        .collect();
                    accumulate(&mut grads, *logits, Tensor2::from_vec(1, gz.len(), gz)?);
                }
                Op::CosineMargin { a, b, labels, margin } => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let s = g.item() / T::lit(labels.len() as f64);
                    let mut ga = Tensor2::zeros(va.rows(), va.cols());
                    let mut gb = Tensor2::zeros(vb.rows(), vb.cols());
                    let two = T::lit(2.0);
                    for (j, &y) in labels.iter().enumerate() {
                        let geom = CosGeom::new(va, vb, j)?;
                        let d = T::one() - geom.cos;
                        let hinge = (*margin - d).max(T::zero());
                        // dL/dd, then dd/dcos = -1
                        let dl_dd = two * y * d - two * (T::one() - y) * hinge;
                        let dl_dcos = -dl_dd * s;
                        for r in 0..va.rows() {
                            let (x, z) = (va.get(r, j), vb.get(r, j));
                            let dcos_dx = z / (geom.na * geom.nb) - geom.cos * x / (geom.na * geom.na);
                            let dcos_dz = x / (geom.na * geom.nb) - geom.cos * z / (geom.nb * geom.nb);
                            ga.set(r, j, dl_dcos * dcos_dx);
                            gb.set(r, j, dl_dcos * dcos_dz);
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Triplet {
                    anchor,
                    pos,
                    neg,
                    margin,
                } => {
                    let (va, vp, vn) = (self.value(*anchor), self.value(*pos), self.value(*neg));
                    let s = g.item() / T::lit(va.cols() as f64);
                    let (rows, cols) = va.shape();
                    let mut ga = Tensor2::zeros(rows, cols);
                    let mut gp = Tensor2::zeros(rows, cols);
                    let mut gn = Tensor2::zeros(rows, cols);
                    for j in 0..cols {
                        let dp = col_distance(va, vp, j);
                        let dn = col_distance(va, vn, j);
                        if *margin + dp - dn <= T::zero() {
                            continue;
                        }
                        for r in 0..rows {
                            // zero-distance terms take the zero subgradient
                            let up = if dp > T::zero() {
                                (va.get(r, j) - vp.get(r, j)) / dp
                            } else {
                                T::zero()
                            };
                            let un = if dn > T::zero() {
                                (va.get(r, j) - vn.get(r, j)) / dn
                            } else {
                                T::zero()
                            };
                            ga.set(r, j, s * (up - un));
                            gp.set(r, j, -s * up);
                            gn.set(r, j, s * un);
                        }
                    }
                    accumulate(&mut grads, *anchor, ga);
                    accumulate(&mut grads, *pos, gp);
                    accumulate(&mut grads, *neg, gn);
                }
                Op::SquaredError { pred, targets } => {
                    let s = g.item() * T::lit(2.0) / T::lit(targets.len() as f64);
                    let p = self.value(*pred);
                    let gp: Vec<T> = p.as_slice().iter().zip(targets).map(|(&p, &t)| s * (p - t)).collect();
                    accumulate(&mut grads, *pred, Tensor2::from_vec(1, gp.len(), gp)?);
                }
                Op::TokenXent {
                    logits,
                    tokens,
                    pad,
                    vocab,
                } => {
                    let v = self.value(*logits);
                    let gl = token_xent_grad(v, tokens, *pad, *vocab, g.item())?;
                    accumulate(&mut grads, *logits, gl);
                }
                Op::WeightedSum(terms) => {
                    for &(n, w) in terms {
                        accumulate(&mut grads, n, Tensor2::scalar(g.item() * w));
                    }
                }
            }
        }
        self.clear();
        Ok(out)
    }

    pub fn clear(&mut self) {
        self.nodes.clear();
        self.params.clear();
    }
}

/// Records `activation(W x + b)` for a layer on the tape.
pub fn dense_forward<'a, T: Scalar>(tape: &mut Tape<'a, T>, layer: &'a DenseLayer<T>, x: NodeId) -> Result<NodeId> {
    let xs = tape.value(x).shape();
    if xs.0 != layer.input_dim() {
        return Err(Error::shape("dense_forward", layer.weight.shape(), xs));
    }
    let w = tape.param(layer.weight_id(), &layer.weight);
    let b = tape.param(layer.bias_id(), &layer.bias);
    let h = tape.matmul(w, x)?;
    let h = tape.add_bias(h, b)?;
    tape.activation(h, layer.activation)
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor2<T>>], id: NodeId, g: Tensor2<T>) {
    match &mut grads[id.0] {
        Some(acc) => acc.add_assign(&g).expect("node gradient shapes agree"),
        slot @ None => *slot = Some(g),
    }
}

fn check_row<T: Scalar>(t: &Tensor2<T>, n: usize, op: &'static str) -> Result<()> {
    if t.shape() != (1, n) {
        return Err(Error::shape(op, t.shape(), (1, n)));
    }
    if n == 0 {
        return Err(Error::Empty(format!("{op} batch")));
    }
    Ok(())
}

fn check_pair<T: Scalar>(a: &Tensor2<T>, b: &Tensor2<T>, n: usize, op: &'static str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, a.shape(), b.shape()));
    }
    if a.cols() != n {
        return Err(Error::shape(op, a.shape(), (a.rows(), n)));
    }
    if n == 0 {
        return Err(Error::Empty(format!("{op} batch")));
    }
    Ok(())
}

fn col_distance<T: Scalar>(a: &Tensor2<T>, b: &Tensor2<T>, j: usize) -> T {
    (0..a.rows())
        .fold(T::zero(), |acc, r| {
            let d = a.get(r, j) - b.get(r, j);
            acc + d * d
        })
        .sqrt()
}

struct CosGeom<T> {
    na: T,
    nb: T,
    cos: T,
}

impl<T: Scalar> CosGeom<T> {
    fn new(a: &Tensor2<T>, b: &Tensor2<T>, j: usize) -> Result<Self> {
        let (mut dot, mut aa, mut bb) = (T::zero(), T::zero(), T::zero());
        for r in 0..a.rows() {
            let (x, z) = (a.get(r, j), b.get(r, j));
            dot += x * z;
            aa += x * x;
            bb += z * z;
        }
        if aa == T::zero() || bb == T::zero() {
            return Err(Error::Numeric(format!(
                "zero-norm embedding in cosine distance (batch column {j})"
            )));
        }
        let (na, nb) = (aa.sqrt(), bb.sqrt());
        Ok(Self {
            na,
            nb,
            cos: dot / (na * nb),
        })
    }
}

/// Per-sample mean NLL over non-PAD positions.
pub(crate) fn token_nll<T: Scalar>(
    logits: &Tensor2<T>,
    tokens: &[Vec<usize>],
    pad: usize,
    vocab: usize,
) -> Result<Vec<T>> {
    let cols = tokens.len();
    if logits.cols() != cols || cols == 0 {
        return Err(Error::shape("reconstruction", logits.shape(), (logits.rows(), cols)));
    }
    let mut out = Vec::with_capacity(cols);
    let mut buf = vec![T::zero(); vocab];
    for (j, seq) in tokens.iter().enumerate() {
        if seq.len() * vocab != logits.rows() {
            return Err(Error::shape(
                "reconstruction",
                logits.shape(),
                (seq.len() * vocab, cols),
            ));
        }
        let mut total = T::zero();
        let mut count = 0usize;
        for (t, &tok) in seq.iter().enumerate() {
            if tok == pad {
                continue;
            }
            if tok >= vocab {
                return Err(Error::Format(format!("token id {tok} outside vocabulary of {vocab}")));
            }
            for (v, slot) in buf.iter_mut().enumerate() {
                *slot = logits.get(t * vocab + v, j);
            }
            total += log_sum_exp(&buf) - buf[tok];
            count += 1;
        }
        if count == 0 {
            return Err(Error::Empty("no scorable tokens".into()));
        }
        out.push(total / T::lit(count as f64));
    }
    Ok(out)
}

fn token_xent_grad<T: Scalar>(
    logits: &Tensor2<T>,
    tokens: &[Vec<usize>],
    pad: usize,
    vocab: usize,
    upstream: T,
) -> Result<Tensor2<T>> {
    let cols = tokens.len();
    let mut g = Tensor2::zeros(logits.rows(), cols);
    let mut buf = vec![T::zero(); vocab];
    let batch_scale = upstream / T::lit(cols as f64);
    for (j, seq) in tokens.iter().enumerate() {
        let count = seq.iter().filter(|&&t| t != pad).count();
        let s = batch_scale / T::lit(count as f64);
        for (t, &tok) in seq.iter().enumerate() {
            if tok == pad {
                continue;
            }
            for (v, slot) in buf.iter_mut().enumerate() {
                *slot = logits.get(t * vocab + v, j);
            }
            let lse = log_sum_exp(&buf);
            for v in 0..vocab {
                let p = (buf[v] - lse).exp();
                let target = if v == tok { T::one() } else { T::zero() };
                g.set(t * vocab + v, j, s * (p - target));
            }
        }
    }
    Ok(g)
}
