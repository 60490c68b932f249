//! Distributional first-order attacks: W-FGSM (one step of size `δ`) and
//! W-PGD (iterated steps of size `ratio·δ/I` with projection back onto the
//! Wasserstein ball). At `p = r = ∞` these are classical FGSM and PGD.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::losses::{LossKind, Objective};
use crate::model::{correctly_classified, Network};
use crate::sensitivity::{first_order_steps, upsilon_from_norms};
use crate::transport::{
    dual_norm, h_map, identity_distance, norm, project_features, Coupling, NormIndex,
    ProjectionMode, ThreatModel,
};

/// Where the per-iteration `Υ` normalizer is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpsilonSource {
    /// Current iterate set, recomputed every iteration.
    #[default]
    Iterate,
    /// Clean data, computed once.
    Clean,
}

impl std::str::FromStr for UpsilonSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iterate" => Ok(Self::Iterate),
            "clean" => Ok(Self::Clean),
            other => Err(Error::InvalidConfig(format!(
                "unknown upsilon source `{other}`"
            ))),
        }
    }
}

pub const DEFAULT_RATIO: f64 = 2.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub threat: ThreatModel,
    pub loss: LossKind,
    pub steps: usize,
    /// Step size is `ratio * δ / steps`.
    pub ratio: f64,
    pub seed: u64,
    pub coupling: Coupling,
    pub projection: ProjectionMode,
    pub upsilon_source: UpsilonSource,
    /// Extra runs from random starts inside the ball.
    pub restarts: usize,
}

impl AttackConfig {
    pub fn new(threat: ThreatModel, loss: LossKind) -> Self {
        Self {
            threat,
            loss,
            steps: 50,
            ratio: DEFAULT_RATIO,
            seed: 0,
            coupling: Coupling::Identity,
            projection: ProjectionMode::Ball,
            upsilon_source: UpsilonSource::Iterate,
            restarts: 0,
        }
    }

    pub fn steps(mut self, steps: usize) -> Self {
        self.steps = steps;
        self
    }

    pub fn ratio(mut self, ratio: f64) -> Self {
        self.ratio = ratio;
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn step_size(&self) -> f64 {
        self.ratio * self.threat.delta() / self.steps as f64
    }

    fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidConfig(
                "attack needs at least one step".into(),
            ));
        }
        if !(self.ratio > 0.0 && self.ratio.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "ratio must be positive, got {}",
                self.ratio
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackResult {
    /// Returned iterate, clamped to the box.
    pub adversarial: LabeledDataset,
    /// Pre-clamp distance of the returned iterate from the clean data.
    pub achieved_distance: f64,
    /// Accuracy of every visited iterate; entry 0 is the clean data.
    pub accuracy_trajectory: Vec<f64>,
    /// Mean loss of every visited iterate; entry 0 is the clean data.
    pub loss_trajectory: Vec<f64>,
    pub final_adv_accuracy: f64,
    /// Largest mean loss seen over all iterates.
    pub max_mean_loss: f64,
    /// Index into the trajectories of the returned iterate.
    pub best_iterate: usize,
    /// `Υ` vanished at some iteration so no step was taken there.
    pub degenerate: bool,
}

/// Accuracy and mean loss of a candidate in one forward pass per sample.
fn score(net: &Network, loss: LossKind, data: &LabeledDataset) -> Result<(f64, f64)> {
    let logits = net.forward_batch(data)?;
    let mut hits = 0usize;
    let mut total = 0.0;
    for (z, s) in logits.iter().zip(data.samples()) {
        if correctly_classified(z, s.y) {
            hits += 1;
        }
        total += loss.eval(z, s.y);
    }
    let n = data.len() as f64;
    Ok((hits as f64 / n, total / n))
}

/// Tracks the best iterate: lowest accuracy, later iterates winning ties.
struct Tracker {
    accuracy: Vec<f64>,
    losses: Vec<f64>,
    best: Option<(usize, f64, LabeledDataset, f64)>,
    degenerate: bool,
}

impl Tracker {
    fn new() -> Self {
        Self {
            accuracy: Vec::new(),
            losses: Vec::new(),
            best: None,
            degenerate: false,
        }
    }

    fn push(&mut self, acc: f64, loss: f64, iterate: &LabeledDataset, distance: f64) {
        let idx = self.accuracy.len();
        self.accuracy.push(acc);
        self.losses.push(loss);
        if self.best.as_ref().is_none_or(|b| acc <= b.1) {
            self.best = Some((idx, acc, iterate.clone(), distance));
        }
    }

    fn finish(self) -> AttackResult {
        let (best_iterate, final_adv_accuracy, adversarial, achieved_distance) =
            self.best.expect("clean data recorded");
        AttackResult {
            adversarial,
            achieved_distance,
            max_mean_loss: self
                .losses
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max),
            accuracy_trajectory: self.accuracy,
            loss_trajectory: self.losses,
            final_adv_accuracy,
            best_iterate,
            degenerate: self.degenerate,
        }
    }
}

fn input_grads(obj: &Objective<'_>, data: &LabeledDataset) -> Result<Vec<Vec<f64>>> {
    Ok(obj
        .batch_input_grads(data)?
        .into_iter()
        .map(|(_, g)| g)
        .collect())
}

fn upsilon_of(grads: &[Vec<f64>], threat: &ThreatModel) -> f64 {
    let norms: Vec<f64> = grads.iter().map(|g| dual_norm(g, threat.s())).collect();
    upsilon_from_norms(&norms, threat.q_exponent())
}

/// One distributional ascent step from `current` with projection onto the
/// ball around `clean`. Returns `(next iterate, pre-clamp distance, degenerate)`.
fn ascent_step(
    obj: &Objective<'_>,
    clean: &LabeledDataset,
    current: &LabeledDataset,
    config: &AttackConfig,
    step: f64,
    clean_upsilon: Option<f64>,
) -> Result<(LabeledDataset, f64, bool)> {
    let threat = &config.threat;
    let grads = input_grads(obj, current)?;
    let ups = clean_upsilon.unwrap_or_else(|| upsilon_of(&grads, threat));
    if ups == 0.0 {
        let d = identity_distance(clean, &current.features(), threat);
        return Ok((current.clone(), d, true));
    }
    let moves = first_order_steps(&grads, ups, threat, step);
    let perturbed: Vec<Vec<f64>> = current
        .samples()
        .iter()
        .zip(&moves)
        .map(|(s, m)| s.x.iter().zip(m).map(|(a, b)| a + b).collect())
        .collect();
    let proj = project_features(
        clean,
        &perturbed,
        threat,
        config.coupling,
        config.projection,
    )?;
    Ok((
        clean.with_features(proj.features)?,
        proj.distance_after,
        false,
    ))
}

/// Single first-order step of size `δ`, projected and clamped.
pub fn wfgsm(net: &Network, data: &LabeledDataset, config: &AttackConfig) -> Result<AttackResult> {
    let obj = Objective::new(net, config.loss)?;
    let (acc0, loss0) = score(net, config.loss, data)?;
    let (next, distance, degenerate) =
        ascent_step(&obj, data, data, config, config.threat.delta(), None)?;
    let (acc, loss) = score(net, config.loss, &next)?;
    Ok(AttackResult {
        adversarial: next,
        achieved_distance: distance,
        accuracy_trajectory: vec![acc0, acc],
        loss_trajectory: vec![loss0, loss],
        final_adv_accuracy: acc,
        max_mean_loss: loss0.max(loss),
        best_iterate: 1,
        degenerate,
    })
}

fn random_start(
    data: &LabeledDataset,
    config: &AttackConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(LabeledDataset, f64)> {
    let delta = config.threat.delta();
    let noisy: Vec<Vec<f64>> = data
        .samples()
        .iter()
        .map(|s| {
            s.x.iter()
                .map(|v| v + rng.random_range(-1.0..=1.0) * delta)
                .collect()
        })
        .collect();
    let proj = project_features(
        data,
        &noisy,
        &config.threat,
        config.coupling,
        ProjectionMode::Ball,
    )?;
    Ok((data.with_features(proj.features)?, proj.distance_after))
}

/// Iterated distributional attack. Returns the visited iterate (clean data
/// included) with the lowest accuracy, later iterates winning ties.
pub fn wpgd(net: &Network, data: &LabeledDataset, config: &AttackConfig) -> Result<AttackResult> {
    config.validate()?;
    let obj = Objective::new(net, config.loss)?;
    let step = config.step_size();
    let clean_upsilon = match config.upsilon_source {
        UpsilonSource::Clean => Some(upsilon_of(&input_grads(&obj, data)?, &config.threat)),
        UpsilonSource::Iterate => None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut tracker = Tracker::new();
    let (acc0, loss0) = score(net, config.loss, data)?;
    tracker.push(acc0, loss0, data, 0.0);

    for restart in 0..=config.restarts {
        let mut current = if restart == 0 {
            data.clone()
        } else {
            let (start, d) = random_start(data, config, &mut rng)?;
            let (acc, loss) = score(net, config.loss, &start)?;
            tracker.push(acc, loss, &start, d);
            start
        };
        for _ in 0..config.steps {
            let (next, distance, degenerate) =
                ascent_step(&obj, data, &current, config, step, clean_upsilon)?;
            tracker.degenerate |= degenerate;
            let (acc, loss) = score(net, config.loss, &next)?;
            tracker.push(acc, loss, &next, distance);
            current = next;
        }
    }
    Ok(tracker.finish())
}

/// Pointwise PGD: every sample ascends on its own and is projected onto its
/// own `l_r` ball of radius `δ`. Only defined for `p = ∞`.
pub fn classic_pgd(
    net: &Network,
    data: &LabeledDataset,
    config: &AttackConfig,
) -> Result<AttackResult> {
    config.validate()?;
    let threat = &config.threat;
    if threat.p() != NormIndex::Inf {
        return Err(Error::InvalidConfig("classic PGD needs p = inf".into()));
    }
    let obj = Objective::new(net, config.loss)?;
    let (alpha, delta) = (config.step_size(), threat.delta());
    let mut tracker = Tracker::new();
    let (acc0, loss0) = score(net, config.loss, data)?;
    tracker.push(acc0, loss0, data, 0.0);

    let mut current = data.clone();
    for _ in 0..config.steps {
        let grads = input_grads(&obj, &current)?;
        let mut next = Vec::with_capacity(data.len());
        let mut worst: f64 = 0.0;
        for ((orig, cur), g) in data.samples().iter().zip(current.samples()).zip(&grads) {
            let dir = h_map(g, threat.s());
            let moved: Vec<f64> = cur.x.iter().zip(&dir).map(|(x, d)| x + alpha * d).collect();
            let projected: Vec<f64> = match threat.r() {
                NormIndex::Inf => orig
                    .x
                    .iter()
                    .zip(&moved)
                    .map(|(&o, &v)| v.max(o - delta).min(o + delta))
                    .collect(),
                _ => {
                    let disp: Vec<f64> = orig.x.iter().zip(&moved).map(|(o, v)| v - o).collect();
                    let len = norm(&disp, threat.r());
                    if len > delta {
                        orig.x
                            .iter()
                            .zip(&moved)
                            .map(|(o, v)| o + delta / len * (v - o))
                            .collect()
                    } else {
                        moved
                    }
                }
            };
            let d = orig
                .x
                .iter()
                .zip(&projected)
                .map(|(o, v)| v - o)
                .collect::<Vec<_>>();
            worst = worst.max(norm(&d, threat.r()));
            next.push(projected);
        }
        current = data.with_features(next)?;
        let (acc, loss) = score(net, config.loss, &current)?;
        tracker.push(acc, loss, &current, worst);
    }
    Ok(tracker.finish())
}
