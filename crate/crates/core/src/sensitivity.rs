//! First-order sensitivity of the worst-case loss to the ball radius.
//!
//! `Υ = (E ‖∇_x J‖_s^q)^{1/q}` gives `V(δ) ≈ V(0) + δΥ`, and the first-order
//! worst-case measure moves each sample by `δ h(∇_x J) (‖∇_x J‖_s / Υ)^{q-1}`.

use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::losses::{LossKind, Objective};
use crate::model::Network;
use crate::transport::{dual_norm, h_map, ThreatModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub upsilon: f64,
    /// Mean clean loss.
    pub v0: f64,
    pub per_sample_dual_norms: Vec<f64>,
    pub threat: ThreatModel,
    pub loss: LossKind,
}

/// `L^q` mean of the dual norms, folded in sample order.
pub fn upsilon_from_norms(norms: &[f64], q: f64) -> f64 {
    let mean = norms.iter().map(|n| n.powf(q)).sum::<f64>() / norms.len() as f64;
    mean.powf(1.0 / q)
}

pub fn upsilon(
    net: &Network,
    loss: LossKind,
    data: &LabeledDataset,
    threat: &ThreatModel,
) -> Result<SensitivityReport> {
    let obj = Objective::new(net, loss)?;
    upsilon_with(&obj, data, threat)
}

pub fn upsilon_with(
    obj: &Objective<'_>,
    data: &LabeledDataset,
    threat: &ThreatModel,
) -> Result<SensitivityReport> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let grads = obj.batch_input_grads(data)?;
    let norms: Vec<f64> = grads
        .iter()
        .map(|(_, g)| dual_norm(g, threat.s()))
        .collect();
    let v0 = grads.iter().map(|(v, _)| v).sum::<f64>() / grads.len() as f64;
    Ok(SensitivityReport {
        upsilon: upsilon_from_norms(&norms, threat.q_exponent()),
        v0,
        per_sample_dual_norms: norms,
        threat: *threat,
        loss: obj.kind(),
    })
}

/// `V(0) + δΥ`
pub fn first_order_adv_loss(v0: f64, delta: f64, upsilon: f64) -> f64 {
    v0 + delta * upsilon
}

/// `(‖g‖_s / Υ)^{q-1}`, with zero gradients never moving (also for `q = 1`).
pub fn displacement_weight(grad_norm: f64, upsilon: f64, q: f64) -> f64 {
    if grad_norm == 0.0 {
        0.0
    } else if q == 1.0 {
        1.0
    } else {
        (grad_norm / upsilon).powf(q - 1.0)
    }
}

/// Per-sample steps `step * h(g) * (‖g‖_s / Υ)^{q-1}`.
pub fn first_order_steps(
    grads: &[Vec<f64>],
    upsilon: f64,
    threat: &ThreatModel,
    step: f64,
) -> Vec<Vec<f64>> {
    let q = threat.q_exponent();
    grads
        .iter()
        .map(|g| {
            let w = displacement_weight(dual_norm(g, threat.s()), upsilon, q);
            h_map(g, threat.s())
                .into_iter()
                .map(|h| step * h * w)
                .collect()
        })
        .collect()
}

/// The first-order worst-case measure `Q_δ` as a displacement field.
#[derive(Debug, Clone, PartialEq)]
pub struct FirstOrderShift {
    /// Displaced samples, clamped to the unit box.
    pub displaced: LabeledDataset,
    /// Displacement of each sample before clamping.
    pub displacements: Vec<Vec<f64>>,
    pub upsilon: f64,
    /// `Υ = 0`: nothing moved.
    pub degenerate: bool,
}

impl FirstOrderShift {
    /// Pre-clamp positions `x + Δx`.
    pub fn unclamped(&self, data: &LabeledDataset) -> Vec<Vec<f64>> {
        data.samples()
            .iter()
            .zip(&self.displacements)
            .map(|(s, d)| s.x.iter().zip(d).map(|(a, b)| a + b).collect())
            .collect()
    }
}

pub fn qdelta_displace(
    net: &Network,
    loss: LossKind,
    data: &LabeledDataset,
    threat: &ThreatModel,
) -> Result<FirstOrderShift> {
    let obj = Objective::new(net, loss)?;
    qdelta_displace_with(&obj, data, threat)
}

pub fn qdelta_displace_with(
    obj: &Objective<'_>,
    data: &LabeledDataset,
    threat: &ThreatModel,
) -> Result<FirstOrderShift> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let grads: Vec<Vec<f64>> = obj
        .batch_input_grads(data)?
        .into_iter()
        .map(|(_, g)| g)
        .collect();
    let norms: Vec<f64> = grads.iter().map(|g| dual_norm(g, threat.s())).collect();
    let ups = upsilon_from_norms(&norms, threat.q_exponent());
    if ups == 0.0 {
        return Ok(FirstOrderShift {
            displaced: data.clone(),
            displacements: vec![vec![0.0; data.dim()]; data.len()],
            upsilon: 0.0,
            degenerate: true,
        });
    }
    let displacements = first_order_steps(&grads, ups, threat, threat.delta());
    let moved = data
        .samples()
        .iter()
        .zip(&displacements)
        .map(|(s, d)| s.x.iter().zip(d).map(|(a, b)| a + b).collect())
        .collect();
    Ok(FirstOrderShift {
        displaced: data.with_features(moved)?,
        displacements,
        upsilon: ups,
        degenerate: false,
    })
}
