//! Minibatch SGD: clean training, training with the `δΥ` penalty, and
//! training on W-FGSM perturbed batches. Both robust schemes read `Υ` from a
//! snapshot `θ*` of the previous epoch's parameters.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::losses::{LossKind, Objective};
use crate::model::Network;
use crate::ndgrad::Tensor;
use crate::sensitivity::{first_order_steps, upsilon_with};
use crate::transport::{dual_norm, h_map, project_features, Coupling, ProjectionMode, ThreatModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    #[default]
    Clean,
    /// SGD on `J + δΥ`.
    Regularized,
    /// SGD on W-FGSM perturbed batches.
    Perturbed,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clean" => Ok(Self::Clean),
            "regularized" => Ok(Self::Regularized),
            "perturbed" => Ok(Self::Perturbed),
            other => Err(Error::InvalidConfig(format!(
                "unknown training method `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub method: Method,
    pub threat: ThreatModel,
    pub loss: LossKind,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub fd_epsilon: f64,
    pub seed: u64,
}

pub const DEFAULT_FD_EPSILON: f64 = 1e-4;

impl TrainConfig {
    pub fn new(method: Method, threat: ThreatModel) -> Self {
        Self {
            method,
            threat,
            loss: LossKind::Ce,
            lr: 0.1,
            epochs: 50,
            batch_size: 32,
            fd_epsilon: DEFAULT_FD_EPSILON,
            seed: 0,
        }
    }

    pub fn lr(mut self, lr: f64) -> Self {
        self.lr = lr;
        self
    }

    pub fn epochs(mut self, epochs: usize) -> Self {
        self.epochs = epochs;
        self
    }

    pub fn batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size;
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn method(mut self, method: Method) -> Self {
        self.method = method;
        self
    }

    fn validate(&self, data: &LabeledDataset) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if !(self.fd_epsilon > 0.0 && self.fd_epsilon.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "fd_epsilon must be positive, got {}",
                self.fd_epsilon
            )));
        }
        if self.batch_size == 0 || self.batch_size > data.len() {
            return Err(Error::InvalidConfig(format!(
                "batch size {} must lie in 1..={}",
                self.batch_size,
                data.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub network: Network,
    /// Mean minibatch loss of each epoch (on the batches actually trained on).
    pub epoch_losses: Vec<f64>,
    /// `Υ` at the start-of-epoch snapshot; empty for clean training or `δ = 0`.
    pub epoch_upsilon: Vec<f64>,
    /// Epochs where `Υ` vanished and the robust term was skipped.
    pub degenerate_epochs: usize,
    /// How many times each sample was used.
    pub visits: Vec<usize>,
}

/// Mean loss and mean parameter gradient over a batch.
fn batch_gradient(
    obj: &Objective<'_>,
    features: &[Vec<f64>],
    labels: &[usize],
) -> Result<(f64, Vec<Tensor>)> {
    let per_sample: Vec<_> = features
        .par_iter()
        .zip(labels.par_iter())
        .map(|(x, &y)| obj.full_grad(x, y))
        .collect::<Result<_>>()?;
    let mut total = 0.0;
    let mut acc: Vec<Tensor> = obj
        .network()
        .params()
        .map(|p| Tensor::zeros(p.shape()))
        .collect();
    for g in &per_sample {
        total += g.value;
        accumulate(&mut acc, &g.params, 1.0);
    }
    let inv = 1.0 / features.len() as f64;
    scale(&mut acc, inv);
    Ok((total * inv, acc))
}

fn accumulate(acc: &mut [Tensor], add: &[Tensor], weight: f64) {
    for (a, b) in acc.iter_mut().zip(add) {
        for (u, v) in a.data_mut().iter_mut().zip(b.data()) {
            *u += weight * v;
        }
    }
}

fn scale(acc: &mut [Tensor], factor: f64) {
    for a in acc {
        for u in a.data_mut() {
            *u *= factor;
        }
    }
}

/// Forward difference `(f(x + εv) - f(x)) / ε` of a vector-valued `f`,
/// i.e. the directional derivative along `v` of a parameter gradient.
pub fn mixed_directional_derivative<F>(
    f: F,
    x: &[f64],
    v: &[f64],
    fd_epsilon: f64,
) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let base = f(x)?;
    let shifted: Vec<f64> = x.iter().zip(v).map(|(a, b)| a + fd_epsilon * b).collect();
    let moved = f(&shifted)?;
    Ok(moved
        .iter()
        .zip(&base)
        .map(|(m, b)| (m - b) / fd_epsilon)
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegularizerGrad {
    /// `∇_θ Υ`, one tensor per parameter.
    pub grads: Vec<Tensor>,
    /// The snapshot `Υ*` was zero; `grads` are all zero.
    pub degenerate: bool,
}

fn flatten(ts: &[Tensor]) -> Vec<f64> {
    ts.iter().flat_map(|t| t.data().iter().copied()).collect()
}

fn unflatten(flat: &[f64], like: &[Tensor]) -> Vec<Tensor> {
    let mut out = Vec::with_capacity(like.len());
    let mut at = 0;
    for t in like {
        let len = t.len();
        out.push(
            Tensor::new(t.shape().to_vec(), flat[at..at + len].to_vec())
                .expect("shape taken from a tensor"),
        );
        at += len;
    }
    out
}

/// Batch estimate of `∇_θ Υ = Υ*^{1-q} E[⟨∇_x∇_θ J, h(∇_x J)⟩ ‖∇_x J‖_s^{q-1}]`
/// with the mixed term taken by a forward difference along `h(∇_x J)`.
/// `upsilon_star` is `Υ` at the previous-epoch snapshot.
pub fn grad_theta_upsilon(
    net: &Network,
    loss: LossKind,
    batch: &LabeledDataset,
    threat: &ThreatModel,
    fd_epsilon: f64,
    upsilon_star: f64,
) -> Result<RegularizerGrad> {
    let zeros: Vec<Tensor> = net.params().map(|p| Tensor::zeros(p.shape())).collect();
    if upsilon_star == 0.0 {
        return Ok(RegularizerGrad {
            grads: zeros,
            degenerate: true,
        });
    }
    let obj = Objective::new(net, loss)?;
    let q = threat.q_exponent();
    let s = threat.s();
    let param_grad =
        |x: &[f64], y: usize| -> Result<Vec<f64>> { Ok(flatten(&obj.full_grad(x, y)?.params)) };
    let terms: Vec<Option<(f64, Vec<f64>)>> = batch
        .samples()
        .par_iter()
        .map(|sample| {
            let g = obj.input_grad(&sample.x, sample.y)?;
            let v = h_map(&g, s);
            if v.iter().all(|c| *c == 0.0) {
                return Ok(None);
            }
            let weight = if q == 1.0 {
                1.0
            } else {
                dual_norm(&g, s).powf(q - 1.0)
            };
            let d = mixed_directional_derivative(
                |x| param_grad(x, sample.y),
                &sample.x,
                &v,
                fd_epsilon,
            )?;
            Ok(Some((weight, d)))
        })
        .collect::<Result<_>>()?;
    let mut acc = vec![0.0; net.param_count()];
    for (w, d) in terms.iter().flatten() {
        for (a, v) in acc.iter_mut().zip(d) {
            *a += w * v;
        }
    }
    let factor = upsilon_star.powf(1.0 - q) / batch.len() as f64;
    for a in &mut acc {
        *a *= factor;
    }
    Ok(RegularizerGrad {
        grads: unflatten(&acc, &zeros),
        degenerate: false,
    })
}

/// W-FGSM step on a batch, projected with the batch as its own measure.
fn perturb_batch(
    net: &Network,
    loss: LossKind,
    batch: &LabeledDataset,
    threat: &ThreatModel,
    upsilon_star: f64,
) -> Result<LabeledDataset> {
    let obj = Objective::new(net, loss)?;
    let grads: Vec<Vec<f64>> = obj
        .batch_input_grads(batch)?
        .into_iter()
        .map(|(_, g)| g)
        .collect();
    let steps = first_order_steps(&grads, upsilon_star, threat, threat.delta());
    let moved: Vec<Vec<f64>> = batch
        .samples()
        .iter()
        .zip(&steps)
        .map(|(s, d)| s.x.iter().zip(d).map(|(a, b)| a + b).collect())
        .collect();
    let proj = project_features(
        batch,
        &moved,
        threat,
        Coupling::Identity,
        ProjectionMode::Ball,
    )?;
    batch.with_features(proj.features)
}

fn diverged(err: Error, epoch: usize, batch: usize, net: &Network) -> Error {
    match err {
        Error::NonFinite(_) => Error::Diverged {
            epoch,
            batch,
            snapshot: Box::new(net.clone()),
        },
        other => other,
    }
}

pub fn train(net: &Network, data: &LabeledDataset, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate(data)?;
    if net.input_dim() != data.dim() || net.classes() != data.classes() {
        return Err(Error::Dimension {
            expected: net.input_dim(),
            found: data.dim(),
        });
    }
    let robust = config.method != Method::Clean && config.threat.delta() > 0.0;
    let mut net = net.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut outcome_losses = Vec::with_capacity(config.epochs);
    let mut epoch_upsilon = Vec::new();
    let mut degenerate_epochs = 0;
    let mut visits = vec![0usize; data.len()];

    for epoch in 0..config.epochs {
        let upsilon_star = if robust {
            let obj = Objective::new(&net, config.loss)?;
            let ups = upsilon_with(&obj, data, &config.threat)
                .map_err(|e| diverged(e, epoch, 0, &net))?
                .upsilon;
            epoch_upsilon.push(ups);
            if ups == 0.0 {
                degenerate_epochs += 1;
            }
            ups
        } else {
            0.0
        };
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let mut batch = data.subset(chunk)?;
            for &i in chunk {
                visits[i] += 1;
            }
            if robust && config.method == Method::Perturbed && upsilon_star > 0.0 {
                batch = perturb_batch(&net, config.loss, &batch, &config.threat, upsilon_star)
                    .map_err(|e| diverged(e, epoch, b, &net))?;
            }
            let obj = Objective::new(&net, config.loss)?;
            let (loss, mut grads) = batch_gradient(&obj, &batch.features(), &batch.labels())
                .map_err(|e| diverged(e, epoch, b, &net))?;
            if !loss.is_finite() {
                return Err(diverged(Error::NonFinite(0), epoch, b, &net));
            }
            if robust && config.method == Method::Regularized {
                let reg = grad_theta_upsilon(
                    &net,
                    config.loss,
                    &batch,
                    &config.threat,
                    config.fd_epsilon,
                    upsilon_star,
                )
                .map_err(|e| diverged(e, epoch, b, &net))?;
                accumulate(&mut grads, &reg.grads, config.threat.delta());
            }
            net.sgd_step(&grads, config.lr);
            epoch_loss += loss;
            batches += 1;
        }
        outcome_losses.push(epoch_loss / batches as f64);
    }
    Ok(TrainOutcome {
        network: net,
        epoch_losses: outcome_losses,
        epoch_upsilon,
        degenerate_epochs,
        visits,
    })
}

pub fn train_clean(
    net: &Network,
    data: &LabeledDataset,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    train(net, data, &config.method(Method::Clean))
}

pub fn train_regularized(
    net: &Network,
    data: &LabeledDataset,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    train(net, data, &config.method(Method::Regularized))
}

pub fn train_perturbed(
    net: &Network,
    data: &LabeledDataset,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    train(net, data, &config.method(Method::Perturbed))
}
