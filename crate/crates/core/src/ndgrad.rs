//! Dense f64 tensors and a small reverse-mode autodiff graph.
//!
//! A [`Graph`] is built once and never mutated by evaluation. Each call to
//! [`Graph::evaluate`] produces a fresh [`Evaluation`] holding forward values
//! and cached local partials; reverse sweeps run against that cache. Graphs can
//! therefore be shared across threads while every thread owns its own cache.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() || shape.contains(&0) {
            return Err(Error::BadTensor {
                shape,
                expected,
                found: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Handle to a node inside a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduce {
    Sum,
    /// Select one coordinate.
    Pick(usize),
    /// Inner product of two vectors of equal shape.
    Dot,
    /// Difference-of-logits-ratio over a logit vector for a 0-based class;
    /// `rectified` zeroes the misclassified branch.
    Dlr {
        class: usize,
        rectified: bool,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    Leaf {
        slot: usize,
    },
    /// `w x + b` with `w: [out, in]`, `x: [in]`, `b: [out]`.
    Affine {
        w: NodeId,
        x: NodeId,
        b: NodeId,
    },
    Relu(NodeId),
    Tanh(NodeId),
    LogSoftmax(NodeId),
    Scale {
        input: NodeId,
        factor: f64,
    },
    Elementwise {
        kind: Elementwise,
        lhs: NodeId,
        rhs: NodeId,
    },
    Reduce {
        kind: Reduce,
        input: NodeId,
        other: Option<NodeId>,
    },
}

#[derive(Debug, Clone)]
pub struct ComputeNode {
    pub op: Op,
    pub shape: Vec<usize>,
}

impl ComputeNode {
    pub fn parents(&self) -> Vec<NodeId> {
        match &self.op {
            Op::Leaf { .. } => vec![],
            Op::Affine { w, x, b } => vec![*w, *x, *b],
            Op::Relu(a) | Op::Tanh(a) | Op::LogSoftmax(a) => vec![*a],
            Op::Scale { input, .. } => vec![*input],
            Op::Elementwise { lhs, rhs, .. } => vec![*lhs, *rhs],
            Op::Reduce { input, other, .. } => {
                let mut v = vec![*input];
                v.extend(other.iter().copied());
                v
            }
        }
    }
}

/// Append-only DAG. Nodes can only reference earlier nodes, so insertion
/// order is a valid evaluation order.
#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<ComputeNode>,
    leaves: Vec<NodeId>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn nodes(&self) -> &[ComputeNode] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &ComputeNode {
        &self.nodes[id.0]
    }

    /// Leaf nodes in binding order.
    pub fn leaves(&self) -> &[NodeId] {
        &self.leaves
    }

    fn push(&mut self, op: Op, shape: Vec<usize>) -> NodeId {
        self.nodes.push(ComputeNode { op, shape });
        NodeId(self.nodes.len() - 1)
    }

    fn shape_of(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    fn mismatch(&self, expected: &[usize], found: &[usize]) -> Error {
        Error::ShapeMismatch {
            node: self.nodes.len(),
            expected: expected.to_vec(),
            found: found.to_vec(),
        }
    }

    pub fn leaf(&mut self, shape: &[usize]) -> NodeId {
        let slot = self.leaves.len();
        let id = self.push(Op::Leaf { slot }, shape.to_vec());
        self.leaves.push(id);
        id
    }

    pub fn affine(&mut self, w: NodeId, x: NodeId, b: NodeId) -> Result<NodeId> {
        let ws = self.shape_of(w).to_vec();
        if ws.len() != 2 {
            return Err(self.mismatch(&[0, 0], &ws));
        }
        let (rows, cols) = (ws[0], ws[1]);
        let xs = self.shape_of(x);
        if xs.iter().product::<usize>() != cols {
            return Err(self.mismatch(&[cols], xs));
        }
        let bs = self.shape_of(b);
        if bs.iter().product::<usize>() != rows {
            return Err(self.mismatch(&[rows], bs));
        }
        Ok(self.push(Op::Affine { w, x, b }, vec![rows]))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let s = self.shape_of(a).to_vec();
        self.push(Op::Relu(a), s)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let s = self.shape_of(a).to_vec();
        self.push(Op::Tanh(a), s)
    }

    pub fn log_softmax(&mut self, a: NodeId) -> NodeId {
        let s = self.shape_of(a).to_vec();
        self.push(Op::LogSoftmax(a), s)
    }

    pub fn scale(&mut self, input: NodeId, factor: f64) -> NodeId {
        let s = self.shape_of(input).to_vec();
        self.push(Op::Scale { input, factor }, s)
    }

    pub fn elementwise(&mut self, kind: Elementwise, lhs: NodeId, rhs: NodeId) -> Result<NodeId> {
        let (ls, rs) = (self.shape_of(lhs).to_vec(), self.shape_of(rhs).to_vec());
        if ls != rs {
            return Err(self.mismatch(&ls, &rs));
        }
        Ok(self.push(Op::Elementwise { kind, lhs, rhs }, ls))
    }

    pub fn add(&mut self, lhs: NodeId, rhs: NodeId) -> Result<NodeId> {
        self.elementwise(Elementwise::Add, lhs, rhs)
    }

    pub fn sub(&mut self, lhs: NodeId, rhs: NodeId) -> Result<NodeId> {
        self.elementwise(Elementwise::Sub, lhs, rhs)
    }

    pub fn mul(&mut self, lhs: NodeId, rhs: NodeId) -> Result<NodeId> {
        self.elementwise(Elementwise::Mul, lhs, rhs)
    }

    pub fn sum(&mut self, input: NodeId) -> NodeId {
        self.push(
            Op::Reduce {
                kind: Reduce::Sum,
                input,
                other: None,
            },
            vec![1],
        )
    }

    pub fn pick(&mut self, input: NodeId, index: usize) -> Result<NodeId> {
        let len: usize = self.shape_of(input).iter().product();
        if index >= len {
            return Err(self.mismatch(&[index + 1], &[len]));
        }
        Ok(self.push(
            Op::Reduce {
                kind: Reduce::Pick(index),
                input,
                other: None,
            },
            vec![1],
        ))
    }

    pub fn dot(&mut self, lhs: NodeId, rhs: NodeId) -> Result<NodeId> {
        let (ls, rs) = (self.shape_of(lhs).to_vec(), self.shape_of(rhs).to_vec());
        if ls != rs {
            return Err(self.mismatch(&ls, &rs));
        }
        Ok(self.push(
            Op::Reduce {
                kind: Reduce::Dot,
                input: lhs,
                other: Some(rhs),
            },
            vec![1],
        ))
    }

    /// DLR (or ReDLR when `rectified`) of a logit vector; `class` is 0-based.
    pub fn dlr(&mut self, logits: NodeId, class: usize, rectified: bool) -> Result<NodeId> {
        let len: usize = self.shape_of(logits).iter().product();
        if len < 3 || class >= len {
            return Err(self.mismatch(&[class.max(2) + 1], &[len]));
        }
        Ok(self.push(
            Op::Reduce {
                kind: Reduce::Dlr { class, rectified },
                input: logits,
                other: None,
            },
            vec![1],
        ))
    }

    /// Forward pass. `bindings[k]` feeds leaf slot `k`.
    pub fn evaluate<'g>(&'g self, bindings: &[&Tensor]) -> Result<Evaluation<'g>> {
        if bindings.len() < self.leaves.len() {
            return Err(Error::MissingBinding(bindings.len()));
        }
        let mut values: Vec<Vec<f64>> = Vec::with_capacity(self.nodes.len());
        let mut partials: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        for (idx, node) in self.nodes.iter().enumerate() {
            let v = match &node.op {
                Op::Leaf { slot } => {
                    let t = bindings[*slot];
                    if t.len() != node.shape.iter().product::<usize>() {
                        return Err(Error::ShapeMismatch {
                            node: idx,
                            expected: node.shape.clone(),
                            found: t.shape().to_vec(),
                        });
                    }
                    t.data().to_vec()
                }
                Op::Affine { w, x, b } => {
                    let cols = self.nodes[w.0].shape[1];
                    let (wv, xv, bv) = (&values[w.0], &values[x.0], &values[b.0]);
                    bv.iter()
                        .enumerate()
                        .map(|(i, bi)| {
                            let row = &wv[i * cols..(i + 1) * cols];
                            row.iter().zip(xv).map(|(a, c)| a * c).sum::<f64>() + bi
                        })
                        .collect()
                }
                Op::Relu(a) => values[a.0].iter().map(|&v| v.max(0.0)).collect(),
                Op::Tanh(a) => values[a.0].iter().map(|v| v.tanh()).collect(),
                Op::LogSoftmax(a) => {
                    let z = &values[a.0];
                    let lse = log_sum_exp(z);
                    let out: Vec<f64> = z.iter().map(|v| v - lse).collect();
                    partials[idx] = Some(out.iter().map(|v| v.exp()).collect());
                    out
                }
                Op::Scale { input, factor } => values[input.0].iter().map(|v| v * factor).collect(),
                Op::Elementwise { kind, lhs, rhs } => {
                    let (l, r) = (&values[lhs.0], &values[rhs.0]);
                    l.iter()
                        .zip(r)
                        .map(|(a, b)| match kind {
                            Elementwise::Add => a + b,
                            Elementwise::Sub => a - b,
                            Elementwise::Mul => a * b,
                        })
                        .collect()
                }
                Op::Reduce { kind, input, other } => {
                    let a = &values[input.0];
                    match kind {
                        Reduce::Sum => vec![a.iter().sum()],
                        Reduce::Pick(i) => vec![a[*i]],
                        Reduce::Dot => {
                            let b = &values[other.expect("dot has two operands").0];
                            vec![a.iter().zip(b).map(|(x, y)| x * y).sum()]
                        }
                        Reduce::Dlr { class, rectified } => {
                            let (value, grad) = dlr_with_grad(a, *class, *rectified);
                            partials[idx] = Some(grad);
                            vec![value]
                        }
                    }
                }
            };
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(idx));
            }
            values.push(v);
        }
        Ok(Evaluation {
            graph: self,
            values,
            partials,
        })
    }
}

pub(crate) fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Order of logit indices by decreasing value, ties broken by index.
pub(crate) fn order_statistics(z: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..z.len()).collect();
    idx.sort_by(|&a, &b| z[b].total_cmp(&z[a]));
    idx
}

/// Below this spread between top and third logit DLR is reported as 0.
pub const DLR_DENOMINATOR_GUARD: f64 = 1e-12;

/// DLR value and its gradient with respect to the logits.
///
/// The correct branch requires `class` to be the strict unique maximizer,
/// matching the membership rule of the classification set.
pub(crate) fn dlr_with_grad(z: &[f64], class: usize, rectified: bool) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; z.len()];
    let order = order_statistics(z);
    let (top, second, third) = (order[0], order[1], order[2]);
    let denom = z[top] - z[third];
    if denom < DLR_DENOMINATOR_GUARD {
        return (0.0, grad);
    }
    let correct = z
        .iter()
        .enumerate()
        .all(|(k, &v)| k == class || v < z[class]);
    if rectified && !correct {
        return (0.0, grad);
    }
    // loss = -(z_y - z_ref) / (z_top - z_third)
    let reference = if correct { second } else { top };
    let numer = z[class] - z[reference];
    let value = -numer / denom;
    grad[class] -= 1.0 / denom;
    grad[reference] += 1.0 / denom;
    grad[top] += numer / (denom * denom);
    grad[third] -= numer / (denom * denom);
    (value, grad)
}

/// Forward values of one graph evaluation.
#[derive(Debug, Clone)]
pub struct Evaluation<'g> {
    graph: &'g Graph,
    values: Vec<Vec<f64>>,
    partials: Vec<Option<Vec<f64>>>,
}

/// Result of a reverse sweep for a single leaf.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub tensor: Tensor,
    /// False when the leaf does not feed the root; `tensor` is then zero.
    pub reachable: bool,
}

/// Adjoints of every node after one reverse sweep.
#[derive(Debug, Clone)]
pub struct Adjoints {
    adjoints: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Adjoints {
    pub fn of(&self, node: NodeId) -> Gradient {
        match &self.adjoints[node.0] {
            Some(a) => Gradient {
                tensor: Tensor {
                    shape: self.shapes[node.0].clone(),
                    data: a.clone(),
                },
                reachable: true,
            },
            None => Gradient {
                tensor: Tensor::zeros(&self.shapes[node.0]),
                reachable: false,
            },
        }
    }
}

impl<'g> Evaluation<'g> {
    pub fn value(&self, node: NodeId) -> Tensor {
        Tensor {
            shape: self.graph.nodes[node.0].shape.clone(),
            data: self.values[node.0].clone(),
        }
    }

    pub fn scalar(&self, node: NodeId) -> Result<f64> {
        match self.values[node.0].as_slice() {
            [v] => Ok(*v),
            _ => Err(Error::NotScalar(node.0)),
        }
    }

    /// d(root)/d(leaf).
    pub fn gradient(&self, root: NodeId, leaf: NodeId) -> Result<Gradient> {
        Ok(self.backward(root)?.of(leaf))
    }

    /// One reverse sweep from a scalar root, filling adjoints for every node
    /// the root depends on.
    pub fn backward(&self, root: NodeId) -> Result<Adjoints> {
        let nodes = &self.graph.nodes;
        if self.values[root.0].len() != 1 {
            return Err(Error::NotScalar(root.0));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        adj[root.0] = Some(vec![1.0]);

        fn acc(adj: &mut [Option<Vec<f64>>], id: NodeId, len: usize) -> &mut Vec<f64> {
            adj[id.0].get_or_insert_with(|| vec![0.0; len])
        }

        for idx in (0..=root.0).rev() {
            let Some(a) = adj[idx].take() else { continue };
            let node = &nodes[idx];
            match &node.op {
                Op::Leaf { .. } => {}
                Op::Affine { w, x, b } => {
                    let cols = nodes[w.0].shape[1];
                    let (wv, xv) = (&self.values[w.0], &self.values[x.0]);
                    {
                        let gw = acc(&mut adj, *w, wv.len());
                        for (i, ai) in a.iter().enumerate() {
                            for (j, xj) in xv.iter().enumerate() {
                                gw[i * cols + j] += ai * xj;
                            }
                        }
                    }
                    {
                        let gx = acc(&mut adj, *x, xv.len());
                        for (i, ai) in a.iter().enumerate() {
                            for (j, g) in gx.iter_mut().enumerate() {
                                *g += wv[i * cols + j] * ai;
                            }
                        }
                    }
                    let gb = acc(&mut adj, *b, a.len());
                    for (g, ai) in gb.iter_mut().zip(&a) {
                        *g += ai;
                    }
                }
                Op::Relu(p) => {
                    let inp = &self.values[p.0];
                    let g = acc(&mut adj, *p, inp.len());
                    for ((g, ai), v) in g.iter_mut().zip(&a).zip(inp) {
                        // subgradient 0 at the kink
                        if *v > 0.0 {
                            *g += ai;
                        }
                    }
                }
                Op::Tanh(p) => {
                    let out = &self.values[idx];
                    let g = acc(&mut adj, *p, out.len());
                    for ((g, ai), t) in g.iter_mut().zip(&a).zip(out) {
                        *g += ai * (1.0 - t * t);
                    }
                }
                Op::LogSoftmax(p) => {
                    let probs = self.partials[idx].as_ref().expect("softmax cached");
                    let total: f64 = a.iter().sum();
                    let g = acc(&mut adj, *p, probs.len());
                    for ((g, ai), pr) in g.iter_mut().zip(&a).zip(probs) {
                        *g += ai - pr * total;
                    }
                }
                Op::Scale { input, factor } => {
                    let g = acc(&mut adj, *input, a.len());
                    for (g, ai) in g.iter_mut().zip(&a) {
                        *g += ai * factor;
                    }
                }
                Op::Elementwise { kind, lhs, rhs } => {
                    let (lv, rv) = (&self.values[lhs.0], &self.values[rhs.0]);
                    {
                        let gl = acc(&mut adj, *lhs, lv.len());
                        for (k, g) in gl.iter_mut().enumerate() {
                            *g += match kind {
                                Elementwise::Add | Elementwise::Sub => a[k],
                                Elementwise::Mul => a[k] * rv[k],
                            };
                        }
                    }
                    let gr = acc(&mut adj, *rhs, rv.len());
                    for (k, g) in gr.iter_mut().enumerate() {
                        *g += match kind {
                            Elementwise::Add => a[k],
                            Elementwise::Sub => -a[k],
                            Elementwise::Mul => a[k] * lv[k],
                        };
                    }
                }
                Op::Reduce { kind, input, other } => {
                    let seed = a[0];
                    let inp = &self.values[input.0];
                    match kind {
                        Reduce::Sum => {
                            for g in acc(&mut adj, *input, inp.len()).iter_mut() {
                                *g += seed;
                            }
                        }
                        Reduce::Pick(i) => {
                            acc(&mut adj, *input, inp.len())[*i] += seed;
                        }
                        Reduce::Dot => {
                            let o = other.expect("dot has two operands");
                            let ov = &self.values[o.0];
                            {
                                let gi = acc(&mut adj, *input, inp.len());
                                for (g, v) in gi.iter_mut().zip(ov) {
                                    *g += seed * v;
                                }
                            }
                            let go = acc(&mut adj, o, ov.len());
                            for (g, v) in go.iter_mut().zip(inp) {
                                *g += seed * v;
                            }
                        }
                        Reduce::Dlr { .. } => {
                            let local = self.partials[idx].as_ref().expect("dlr cached");
                            let g = acc(&mut adj, *input, inp.len());
                            for (g, l) in g.iter_mut().zip(local) {
                                *g += seed * l;
                            }
                        }
                    }
                }
            }
            adj[idx] = Some(a);
        }
        Ok(Adjoints {
            adjoints: adj,
            shapes: nodes.iter().map(|n| n.shape.clone()).collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
        (0..x.len())
            .map(|i| {
                let mut up = x.to_vec();
                let mut dn = x.to_vec();
                up[i] += h;
                dn[i] -= h;
                (f(&up) - f(&dn)) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn identity_graph_returns_input() {
        let mut g = Graph::new();
        let x = g.leaf(&[2]);
        let t = Tensor::vector(vec![0.2, 0.7]);
        let ev = g.evaluate(&[&t]).unwrap();
        assert_eq!(ev.value(x).data(), &[0.2, 0.7]);
    }

    #[test]
    fn relu_clips_negative() {
        let mut g = Graph::new();
        let x = g.leaf(&[2]);
        let r = g.relu(x);
        let t = Tensor::vector(vec![-1.0, 2.0]);
        assert_eq!(g.evaluate(&[&t]).unwrap().value(r).data(), &[0.0, 2.0]);
    }

    #[test]
    fn single_affine_layer() {
        let mut g = Graph::new();
        let w = g.leaf(&[1, 2]);
        let x = g.leaf(&[2]);
        let b = g.leaf(&[1]);
        let z = g.affine(w, x, b).unwrap();
        let wt = Tensor::matrix(1, 2, vec![1.0, 1.0]).unwrap();
        let xt = Tensor::vector(vec![1.0, 2.0]);
        let bt = Tensor::vector(vec![0.5]);
        let ev = g.evaluate(&[&wt, &xt, &bt]).unwrap();
        assert_eq!(ev.value(z).data(), &[3.5]);
    }

    #[test]
    fn square_derivative() {
        let mut g = Graph::new();
        let x = g.leaf(&[1]);
        let sq = g.dot(x, x).unwrap();
        let t = Tensor::scalar(3.0);
        let ev = g.evaluate(&[&t]).unwrap();
        let grad = ev.gradient(sq, x).unwrap();
        assert!(grad.reachable);
        assert_eq!(grad.tensor.data(), &[6.0]);
    }

    #[test]
    fn cross_entropy_gradient_is_softmax_minus_onehot() {
        let mut g = Graph::new();
        let z = g.leaf(&[3]);
        let ls = g.log_softmax(z);
        let pick = g.pick(ls, 1).unwrap();
        let ce = g.scale(pick, -1.0);
        let zt = Tensor::vector(vec![0.3, -1.2, 2.0]);
        let ev = g.evaluate(&[&zt]).unwrap();
        let grad = ev.gradient(ce, z).unwrap().tensor;
        let lse = log_sum_exp(zt.data());
        for (k, gk) in grad.data().iter().enumerate() {
            let p = (zt.data()[k] - lse).exp();
            let onehot = if k == 1 { 1.0 } else { 0.0 };
            assert!((gk - (p - onehot)).abs() < 1e-14);
        }
    }

    #[test]
    fn unreachable_leaf_is_flagged() {
        let mut g = Graph::new();
        let x = g.leaf(&[2]);
        let y = g.leaf(&[2]);
        let s = g.sum(x);
        let tx = Tensor::vector(vec![1.0, 2.0]);
        let ty = Tensor::vector(vec![3.0, 4.0]);
        let ev = g.evaluate(&[&tx, &ty]).unwrap();
        let grad = ev.gradient(s, y).unwrap();
        assert!(!grad.reachable);
        assert_eq!(grad.tensor.data(), &[0.0, 0.0]);
    }

    #[test]
    fn non_scalar_root_rejected() {
        let mut g = Graph::new();
        let x = g.leaf(&[2]);
        let t = Tensor::vector(vec![1.0, 2.0]);
        let ev = g.evaluate(&[&t]).unwrap();
        assert!(matches!(ev.gradient(x, x), Err(Error::NotScalar(_))));
    }

    #[test]
    fn shape_mismatch_on_binding() {
        let mut g = Graph::new();
        g.leaf(&[3]);
        let t = Tensor::vector(vec![1.0, 2.0]);
        assert!(matches!(
            g.evaluate(&[&t]),
            Err(Error::ShapeMismatch { .. })
        ));
        assert!(matches!(g.evaluate(&[]), Err(Error::MissingBinding(0))));
    }

    #[test]
    fn non_finite_reports_node() {
        let mut g = Graph::new();
        let x = g.leaf(&[1]);
        let y = g.scale(x, f64::MAX);
        let _z = g.scale(y, 10.0);
        let t = Tensor::scalar(1.0);
        assert!(matches!(g.evaluate(&[&t]), Err(Error::NonFinite(2))));
    }

    #[test]
    fn mixed_graph_matches_finite_differences() {
        // sum(tanh(W x + b) * relu(x')) + dlr(...)
        let mut g = Graph::new();
        let w = g.leaf(&[3, 2]);
        let x = g.leaf(&[2]);
        let b = g.leaf(&[3]);
        let z = g.affine(w, x, b).unwrap();
        let t = g.tanh(z);
        let r = g.relu(z);
        let m = g.mul(t, r).unwrap();
        let s = g.sum(m);
        let d = g.dlr(z, 0, false).unwrap();
        let root = g.add(s, d).unwrap();
        let wt = Tensor::matrix(3, 2, vec![0.4, -0.3, 1.1, 0.2, -0.7, 0.9]).unwrap();
        let bt = Tensor::vector(vec![0.1, -0.2, 0.05]);
        let xv = vec![0.6, 0.3];
        let f = |xs: &[f64]| {
            let xt = Tensor::vector(xs.to_vec());
            g.evaluate(&[&wt, &xt, &bt]).unwrap().scalar(root).unwrap()
        };
        let xt = Tensor::vector(xv.clone());
        let ev = g.evaluate(&[&wt, &xt, &bt]).unwrap();
        let grad = ev.gradient(root, x).unwrap().tensor;
        let fd = central_diff(f, &xv, 1e-6);
        for (a, b) in grad.data().iter().zip(&fd) {
            assert!((a - b).abs() < 1e-7, "{a} vs {b}");
        }
    }

    #[test]
    fn reevaluation_is_bit_identical() {
        let mut g = Graph::new();
        let x = g.leaf(&[3]);
        let ls = g.log_softmax(x);
        let s = g.sum(ls);
        let t = Tensor::vector(vec![0.1, 0.2, 0.3]);
        let a = g.evaluate(&[&t]).unwrap();
        let b = g.evaluate(&[&t]).unwrap();
        assert_eq!(
            a.scalar(s).unwrap().to_bits(),
            b.scalar(s).unwrap().to_bits()
        );
        let ga = a.gradient(s, x).unwrap().tensor;
        let gb = b.gradient(s, x).unwrap().tensor;
        assert_eq!(ga, gb);
    }
}
