//! Feedforward classifiers `f = f^l ∘ ... ∘ f^1`, `f^i(x) = σ(w^i x + b^i)`.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::ndgrad::{Graph, NodeId, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Self::Relu),
            "tanh" => Ok(Self::Tanh),
            "identity" => Ok(Self::Identity),
            other => Err(Error::InvalidConfig(format!(
                "unknown activation `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `[out, in]`, row-major.
    pub w: Tensor,
    /// `[out]`
    pub b: Tensor,
    pub activation: Activation,
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.w.shape()[0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    n: usize,
    m: usize,
    layers: Vec<Layer>,
}

impl Network {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        let first = layers
            .first()
            .ok_or_else(|| Error::InvalidNetwork("no layers".into()))?;
        let last = layers.last().expect("nonempty");
        let (n, m) = (first.in_dim(), last.out_dim());
        if m < 2 {
            return Err(Error::InvalidNetwork(format!(
                "need at least 2 classes, got {m}"
            )));
        }
        if last.activation != Activation::Identity {
            return Err(Error::InvalidNetwork(
                "final layer must output raw logits (identity activation)".into(),
            ));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::InvalidNetwork(format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    pair[0].out_dim(),
                    i + 1,
                    pair[1].in_dim()
                )));
            }
        }
        for (i, l) in layers.iter().enumerate() {
            if l.b.len() != l.out_dim() {
                return Err(Error::InvalidNetwork(format!(
                    "layer {i}: bias length mismatch"
                )));
            }
            if !l.w.is_finite() || !l.b.is_finite() {
                return Err(Error::InvalidNetwork(format!(
                    "layer {i}: non-finite weights"
                )));
            }
        }
        Ok(Self { n, m, layers })
    }

    /// Fan-scaled uniform initialization in `[-a, a]`, `a = sqrt(6 / (in + out))`,
    /// with zero biases. Hidden layers use `activation`; the output layer is linear.
    pub fn init(
        n: usize,
        hidden: &[usize],
        m: usize,
        activation: Activation,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dims = vec![n];
        dims.extend_from_slice(hidden);
        dims.push(m);
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for (k, pair) in dims.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-a..=a))
                .collect();
            let act = if k + 2 == dims.len() {
                Activation::Identity
            } else {
                activation
            };
            layers.push(Layer {
                w: Tensor::matrix(fan_out, fan_in, w)?,
                b: Tensor::vector(vec![0.0; fan_out]),
                activation: act,
            });
        }
        Self::new(layers)
    }

    pub fn input_dim(&self) -> usize {
        self.n
    }

    pub fn classes(&self) -> usize {
        self.m
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Parameters in binding order `w1, b1, w2, b2, ...`.
    pub fn params(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.iter().flat_map(|l| [&l.w, &l.b])
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers.iter_mut().flat_map(|l| [&mut l.w, &mut l.b])
    }

    pub fn param_count(&self) -> usize {
        self.params().map(Tensor::len).sum()
    }

    /// `θ <- θ - lr * grad`, one tensor per parameter in [`Network::params`] order.
    pub fn sgd_step(&mut self, grads: &[Tensor], lr: f64) {
        for (p, g) in self.params_mut().zip(grads) {
            for (pv, gv) in p.data_mut().iter_mut().zip(g.data()) {
                *pv -= lr * gv;
            }
        }
    }

    pub fn graph(&self) -> NetworkGraph {
        NetworkGraph::build(self)
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.graph().logits(self, x)
    }

    pub fn forward_batch(&self, data: &LabeledDataset) -> Result<Vec<Vec<f64>>> {
        let g = self.graph();
        data.samples()
            .iter()
            .map(|s| g.logits(self, &s.x))
            .collect()
    }

    /// Membership in the classification set: the argmax of the logits is
    /// exactly `{y}`.
    pub fn in_s(&self, x: &[f64], y: usize) -> Result<bool> {
        Ok(correctly_classified(&self.forward(x)?, y))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: NetworkFile = serde_json::from_str(text)?;
        file.try_into()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&NetworkFile::from(self))?)
    }
}

/// Strict unique argmax test; `y` is 1-based. Ties count as misclassified.
pub fn correctly_classified(logits: &[f64], y: usize) -> bool {
    let k = y - 1;
    logits
        .iter()
        .enumerate()
        .all(|(j, &v)| j == k || v < logits[k])
}

/// Fraction of samples in the classification set.
pub fn clean_accuracy(net: &Network, data: &LabeledDataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let g = net.graph();
    let mut hits = 0usize;
    for s in data.samples() {
        if correctly_classified(&g.logits(net, &s.x)?, s.y) {
            hits += 1;
        }
    }
    Ok(hits as f64 / data.len() as f64)
}

/// Autodiff graph mirroring a network's structure. Leaf slot 0 is the input,
/// followed by `w1, b1, w2, b2, ...`.
#[derive(Debug, Clone)]
pub struct NetworkGraph {
    pub graph: Graph,
    pub input: NodeId,
    pub params: Vec<NodeId>,
    pub logits: NodeId,
}

impl NetworkGraph {
    pub fn build(net: &Network) -> Self {
        let mut graph = Graph::new();
        let input = graph.leaf(&[net.n]);
        let mut params = Vec::new();
        let mut h = input;
        for layer in &net.layers {
            let w = graph.leaf(layer.w.shape());
            let b = graph.leaf(layer.b.shape());
            params.extend([w, b]);
            let z = graph.affine(w, h, b).expect("network shapes validated");
            h = match layer.activation {
                Activation::Relu => graph.relu(z),
                Activation::Tanh => graph.tanh(z),
                Activation::Identity => z,
            };
        }
        Self {
            graph,
            input,
            params,
            logits: h,
        }
    }

    pub fn bindings<'a>(net: &'a Network, x: &'a Tensor) -> Vec<&'a Tensor> {
        let mut b = Vec::with_capacity(1 + 2 * net.layers.len());
        b.push(x);
        b.extend(net.params());
        b
    }

    pub fn logits(&self, net: &Network, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != net.n {
            return Err(Error::Dimension {
                expected: net.n,
                found: x.len(),
            });
        }
        let xt = Tensor::vector(x.to_vec());
        let ev = self.graph.evaluate(&Self::bindings(net, &xt))?;
        Ok(ev.value(self.logits).into_vec())
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerFile {
    #[serde(rename = "in")]
    in_dim: usize,
    #[serde(rename = "out")]
    out_dim: usize,
    activation: Activation,
    w: Vec<Vec<f64>>,
    b: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkFile {
    n: usize,
    m: usize,
    layers: Vec<LayerFile>,
}

impl From<&Network> for NetworkFile {
    fn from(net: &Network) -> Self {
        let layers = net
            .layers
            .iter()
            .map(|l| LayerFile {
                in_dim: l.in_dim(),
                out_dim: l.out_dim(),
                activation: l.activation,
                w: l.w.data().chunks(l.in_dim()).map(<[f64]>::to_vec).collect(),
                b: l.b.data().to_vec(),
            })
            .collect();
        Self {
            n: net.n,
            m: net.m,
            layers,
        }
    }
}

impl TryFrom<NetworkFile> for Network {
    type Error = Error;

    fn try_from(file: NetworkFile) -> Result<Self> {
        let mut layers = Vec::with_capacity(file.layers.len());
        for (i, l) in file.layers.into_iter().enumerate() {
            if l.w.len() != l.out_dim || l.w.iter().any(|row| row.len() != l.in_dim) {
                return Err(Error::InvalidNetwork(format!(
                    "layer {i}: weight matrix is not {}x{}",
                    l.out_dim, l.in_dim
                )));
            }
            if l.b.len() != l.out_dim {
                return Err(Error::InvalidNetwork(format!(
                    "layer {i}: bias has {} entries, expected {}",
                    l.b.len(),
                    l.out_dim
                )));
            }
            layers.push(Layer {
                w: Tensor::matrix(l.out_dim, l.in_dim, l.w.concat())?,
                b: Tensor::vector(l.b),
                activation: l.activation,
            });
        }
        let net = Network::new(layers)?;
        if net.n != file.n || net.m != file.m {
            return Err(Error::InvalidNetwork(format!(
                "header says n={}, m={} but layers give n={}, m={}",
                file.n, file.m, net.n, net.m
            )));
        }
        Ok(net)
    }
}
