//! Cross-entropy, DLR and rectified DLR, composed with a network to give
//! `J(x, y) = L(f(x), y)` and its input and parameter gradients.
//!
//! Class labels are 1-based throughout.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::model::{Network, NetworkGraph};
use crate::ndgrad::{dlr_with_grad, log_sum_exp, Graph, NodeId, Tensor};
use crate::transport::{dual_norm, NormIndex};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Ce,
    Dlr,
    Redlr,
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ce" => Ok(Self::Ce),
            "dlr" => Ok(Self::Dlr),
            "redlr" => Ok(Self::Redlr),
            other => Err(Error::InvalidConfig(format!("unknown loss `{other}`"))),
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Ce => "ce",
            Self::Dlr => "dlr",
            Self::Redlr => "redlr",
        })
    }
}

impl LossKind {
    /// Smallest class count the loss is defined for.
    pub fn min_classes(self) -> usize {
        match self {
            Self::Ce => 2,
            Self::Dlr | Self::Redlr => 3,
        }
    }

    pub fn eval(self, z: &[f64], y: usize) -> f64 {
        match self {
            Self::Ce => ce(z, y),
            Self::Dlr => dlr(z, y),
            Self::Redlr => redlr(z, y),
        }
    }
}

/// `-(log softmax(z))_y`
pub fn ce(z: &[f64], y: usize) -> f64 {
    log_sum_exp(z) - z[y - 1]
}

pub fn dlr(z: &[f64], y: usize) -> f64 {
    dlr_with_grad(z, y - 1, false).0
}

pub fn redlr(z: &[f64], y: usize) -> f64 {
    dlr_with_grad(z, y - 1, true).0
}

/// Gradient of the loss with respect to the logits.
pub fn logit_grad(kind: LossKind, z: &[f64], y: usize) -> Vec<f64> {
    match kind {
        LossKind::Ce => {
            let lse = log_sum_exp(z);
            z.iter()
                .enumerate()
                .map(|(k, v)| (v - lse).exp() - if k + 1 == y { 1.0 } else { 0.0 })
                .collect()
        }
        LossKind::Dlr => dlr_with_grad(z, y - 1, false).1,
        LossKind::Redlr => dlr_with_grad(z, y - 1, true).1,
    }
}

/// Network composed with a loss, one graph per class so labels never force a
/// rebuild. Shareable across threads.
#[derive(Debug, Clone)]
pub struct Objective<'a> {
    net: &'a Network,
    kind: LossKind,
    base: NetworkGraph,
    per_class: Vec<(Graph, NodeId)>,
}

/// Loss value with input and parameter gradients for one sample.
#[derive(Debug, Clone)]
pub struct SampleGrad {
    pub value: f64,
    pub input: Vec<f64>,
    /// One tensor per parameter, in [`Network::params`] order.
    pub params: Vec<Tensor>,
}

impl<'a> Objective<'a> {
    pub fn new(net: &'a Network, kind: LossKind) -> Result<Self> {
        if net.classes() < kind.min_classes() {
            return Err(Error::InvalidConfig(format!(
                "{kind} loss needs at least {} classes, network has {}",
                kind.min_classes(),
                net.classes()
            )));
        }
        let base = net.graph();
        let per_class = (0..net.classes())
            .map(|class| {
                let mut g = base.graph.clone();
                let root = match kind {
                    LossKind::Ce => {
                        let ls = g.log_softmax(base.logits);
                        let pick = g.pick(ls, class).expect("class in range");
                        g.scale(pick, -1.0)
                    }
                    LossKind::Dlr => g.dlr(base.logits, class, false).expect("m >= 3"),
                    LossKind::Redlr => g.dlr(base.logits, class, true).expect("m >= 3"),
                };
                (g, root)
            })
            .collect();
        Ok(Self {
            net,
            kind,
            base,
            per_class,
        })
    }

    pub fn network(&self) -> &Network {
        self.net
    }

    pub fn kind(&self) -> LossKind {
        self.kind
    }

    fn check(&self, x: &[f64], y: usize) -> Result<()> {
        if x.len() != self.net.input_dim() {
            return Err(Error::Dimension {
                expected: self.net.input_dim(),
                found: x.len(),
            });
        }
        if y == 0 || y > self.net.classes() {
            return Err(Error::InvalidDataset(format!(
                "label {y} outside 1..={}",
                self.net.classes()
            )));
        }
        Ok(())
    }

    pub fn value(&self, x: &[f64], y: usize) -> Result<f64> {
        self.check(x, y)?;
        let (g, root) = &self.per_class[y - 1];
        let xt = Tensor::vector(x.to_vec());
        g.evaluate(&NetworkGraph::bindings(self.net, &xt))?
            .scalar(*root)
    }

    /// `(J, ∇_x J)`
    pub fn value_and_input_grad(&self, x: &[f64], y: usize) -> Result<(f64, Vec<f64>)> {
        self.check(x, y)?;
        let (g, root) = &self.per_class[y - 1];
        let xt = Tensor::vector(x.to_vec());
        let ev = g.evaluate(&NetworkGraph::bindings(self.net, &xt))?;
        let value = ev.scalar(*root)?;
        let grad = ev.gradient(*root, self.base.input)?;
        Ok((value, grad.tensor.into_vec()))
    }

    pub fn input_grad(&self, x: &[f64], y: usize) -> Result<Vec<f64>> {
        Ok(self.value_and_input_grad(x, y)?.1)
    }

    /// Value with input and parameter gradients from one reverse sweep.
    pub fn full_grad(&self, x: &[f64], y: usize) -> Result<SampleGrad> {
        self.check(x, y)?;
        let (g, root) = &self.per_class[y - 1];
        let xt = Tensor::vector(x.to_vec());
        let ev = g.evaluate(&NetworkGraph::bindings(self.net, &xt))?;
        let adj = ev.backward(*root)?;
        Ok(SampleGrad {
            value: ev.scalar(*root)?,
            input: adj.of(self.base.input).tensor.into_vec(),
            params: self.base.params.iter().map(|&p| adj.of(p).tensor).collect(),
        })
    }

    /// Per-sample `(J, ∇_x J)` over a dataset, in dataset order.
    pub fn batch_input_grads(&self, data: &LabeledDataset) -> Result<Vec<(f64, Vec<f64>)>> {
        self.batch_input_grads_at(&data.features(), &data.labels())
    }

    pub fn batch_input_grads_at(
        &self,
        features: &[Vec<f64>],
        labels: &[usize],
    ) -> Result<Vec<(f64, Vec<f64>)>> {
        features
            .par_iter()
            .zip(labels.par_iter())
            .map(|(x, &y)| self.value_and_input_grad(x, y))
            .collect()
    }

    pub fn batch_values(&self, features: &[Vec<f64>], labels: &[usize]) -> Result<Vec<f64>> {
        features
            .par_iter()
            .zip(labels.par_iter())
            .map(|(x, &y)| self.value(x, y))
            .collect()
    }

    /// Mean loss over a dataset, reduced in dataset order.
    pub fn mean_loss(&self, data: &LabeledDataset) -> Result<f64> {
        let values = self.batch_values(&data.features(), &data.labels())?;
        Ok(values.iter().sum::<f64>() / values.len() as f64)
    }
}

pub fn loss_value(net: &Network, kind: LossKind, x: &[f64], y: usize) -> Result<f64> {
    Objective::new(net, kind)?.value(x, y)
}

pub fn input_grad(net: &Network, kind: LossKind, x: &[f64], y: usize) -> Result<Vec<f64>> {
    Objective::new(net, kind)?.input_grad(x, y)
}

/// Empirical Lipschitz estimate: the largest dual norm `‖∇_x J‖_s` over the
/// samples. This is a lower estimate of the true constant, not a certificate.
pub fn estimate_lipschitz(
    net: &Network,
    kind: LossKind,
    data: &LabeledDataset,
    s: NormIndex,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let obj = Objective::new(net, kind)?;
    Ok(max_dual_norm(
        obj.batch_input_grads(data)?
            .iter()
            .map(|(_, g)| g.as_slice()),
        s,
    ))
}

pub(crate) fn max_dual_norm<'a>(grads: impl Iterator<Item = &'a [f64]>, s: NormIndex) -> f64 {
    grads.map(|g| dual_norm(g, s)).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Activation, Layer};
    use proptest::prelude::*;

    fn identity_net(m: usize) -> Network {
        let mut w = vec![0.0; m * m];
        for i in 0..m {
            w[i * m + i] = 1.0;
        }
        Network::new(vec![Layer {
            w: Tensor::matrix(m, m, w).unwrap(),
            b: Tensor::vector(vec![0.0; m]),
            activation: Activation::Identity,
        }])
        .unwrap()
    }

    #[test]
    fn ce_values() {
        assert!((ce(&[0.0, 0.0], 1) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((ce(&[3f64.ln(), 0.0], 1) - (4.0f64 / 3.0).ln()).abs() < 1e-15);
        let z = [0.4, -1.3, 2.2];
        let shifted: Vec<f64> = z.iter().map(|v| v + 5.0).collect();
        assert!((ce(&z, 2) - ce(&shifted, 2)).abs() < 1e-12);
    }

    #[test]
    fn dlr_branches() {
        assert!((dlr(&[3.0, 1.0, 0.0], 1) + 2.0 / 3.0).abs() < 1e-15);
        assert!((dlr(&[1.0, 3.0, 0.0], 1) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(dlr(&[4.0, 4.0, 4.0], 2), 0.0);
        assert_eq!(logit_grad(LossKind::Dlr, &[4.0, 4.0, 4.0], 2), vec![0.0; 3]);
    }

    #[test]
    fn redlr_rectifies_misclassified() {
        assert!((redlr(&[3.0, 1.0, 0.0], 1) + 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(redlr(&[1.0, 3.0, 0.0], 1), 0.0);
        assert_eq!(
            logit_grad(LossKind::Redlr, &[1.0, 3.0, 0.0], 1),
            vec![0.0; 3]
        );
        // a tie at the top is not a correct classification
        assert_eq!(
            logit_grad(LossKind::Redlr, &[2.0, 2.0, 0.0], 1),
            vec![0.0; 3]
        );
    }

    #[test]
    fn identity_net_composes_with_ce() {
        let net = identity_net(3);
        let x = [0.2, 0.9, 0.4];
        assert!((loss_value(&net, LossKind::Ce, &x, 2).unwrap() - ce(&x, 2)).abs() < 1e-15);
        let g = input_grad(&net, LossKind::Ce, &x, 2).unwrap();
        let expect = logit_grad(LossKind::Ce, &x, 2);
        for (a, b) in g.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn redlr_input_grad_zero_when_misclassified() {
        let net = identity_net(3);
        let g = input_grad(&net, LossKind::Redlr, &[0.1, 0.8, 0.3], 1).unwrap();
        assert_eq!(g, vec![0.0; 3]);
    }

    #[test]
    fn dlr_rejects_two_class_networks() {
        assert!(Objective::new(&identity_net(2), LossKind::Dlr).is_err());
    }

    #[test]
    fn lipschitz_estimate() {
        use crate::data::Sample;
        // J = -(log softmax)_y on a 2-class identity net: gradient (p1 - 1, p2)
        let net = identity_net(2);
        let d1 = LabeledDataset::new(
            2,
            2,
            vec![Sample {
                x: vec![0.5, 0.5],
                y: 1,
            }],
        )
        .unwrap();
        let d2 = LabeledDataset::new(
            2,
            2,
            vec![Sample {
                x: vec![0.0, 1.0],
                y: 1,
            }],
        )
        .unwrap();
        let both = LabeledDataset::new(2, 2, [d1.samples(), d2.samples()].concat()).unwrap();
        let l1 = estimate_lipschitz(&net, LossKind::Ce, &d1, NormIndex::Two).unwrap();
        let l2 = estimate_lipschitz(&net, LossKind::Ce, &d2, NormIndex::Two).unwrap();
        let l12 = estimate_lipschitz(&net, LossKind::Ce, &both, NormIndex::Two).unwrap();
        assert!((l1 - 0.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(l12, l1.max(l2));
        assert_eq!(
            max_dual_norm([[3.0, 4.0].as_slice()].into_iter(), NormIndex::Two),
            5.0
        );
        assert_eq!(
            max_dual_norm([[0.0, 0.0].as_slice()].into_iter(), NormIndex::One),
            0.0
        );
    }

    fn logits3() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-20.0f64..20.0, 3)
    }

    proptest! {
        #[test]
        fn ce_positive(z in prop::collection::vec(-30.0f64..30.0, 2..6), y in 1usize..6) {
            let y = (y - 1) % z.len() + 1;
            prop_assert!(ce(&z, y) > 0.0 || z.iter().enumerate().all(|(k, v)| k + 1 == y || z[y - 1] - v > 30.0));
        }

        #[test]
        fn dlr_bounded_and_rectified(z in logits3(), y in 1usize..=3) {
            let d = dlr(&z, y);
            let r = redlr(&z, y);
            prop_assert!((-1.0..=1.0).contains(&d));
            prop_assert!((-1.0..=0.0).contains(&r));
            prop_assert_eq!(r, d.min(0.0));
            if !crate::model::correctly_classified(&z, y) {
                prop_assert_eq!(r, 0.0);
                prop_assert!(logit_grad(LossKind::Redlr, &z, y).iter().all(|g| *g == 0.0));
            }
        }

        #[test]
        fn dlr_depends_only_on_order_statistics(
            z in prop::collection::vec(-10.0f64..10.0, 5), y in 1usize..=5, extra in 0.0f64..1.0,
        ) {
            // lowering any logit that ranks below third and is not z_y leaves DLR unchanged
            let order = crate::ndgrad::order_statistics(&z);
            let mut moved = z.clone();
            for &k in &order[3..] {
                if k + 1 != y {
                    moved[k] -= extra;
                }
            }
            prop_assert_eq!(dlr(&z, y), dlr(&moved, y));
        }
    }
}
