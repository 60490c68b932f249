//! Adversarial accuracy, the relative robustness `R_δ = A_δ / A`, its
//! attack-based upper bound and sensitivity-based lower bounds, and the
//! concentration-based out-of-sample guarantees.

use serde::{Deserialize, Serialize};

use crate::attack::{wpgd, AttackConfig, AttackResult, DEFAULT_RATIO};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::losses::{LossKind, Objective};
use crate::model::{clean_accuracy, correctly_classified, Network};
use crate::sensitivity::{qdelta_displace_with, upsilon_with};
use crate::transport::{NormIndex, ThreatModel};

/// Below this `W(0) - V(0)` the lower bounds are undefined.
pub const DENOMINATOR_GUARD: f64 = 1e-12;

pub const CAVEAT: &str = "asymptotic, first-order: o(delta) and o(epsilon) remainders are dropped";

/// Fraction of the attacked samples that are still correctly classified.
pub fn adv_accuracy(net: &Network, adversarial: &LabeledDataset) -> Result<f64> {
    clean_accuracy(net, adversarial)
}

/// Clean losses split over correctly (`C0`) and incorrectly (`W0`)
/// classified samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionalLosses {
    pub c0: f64,
    pub w0: f64,
    pub a: f64,
    pub v0: f64,
}

impl ConditionalLosses {
    /// `|V0 - (A C0 + (1-A) W0)|`
    pub fn tower_residual(&self) -> f64 {
        (self.v0 - (self.a * self.c0 + (1.0 - self.a) * self.w0)).abs()
    }
}

pub fn conditional_clean_losses(
    net: &Network,
    loss: LossKind,
    data: &LabeledDataset,
) -> Result<ConditionalLosses> {
    let obj = Objective::new(net, loss)?;
    conditional_with(&obj, data)
}

fn conditional_with(obj: &Objective<'_>, data: &LabeledDataset) -> Result<ConditionalLosses> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let logits = obj.network().forward_batch(data)?;
    let values = obj.batch_values(&data.features(), &data.labels())?;
    let (mut right, mut wrong) = ((0usize, 0.0), (0usize, 0.0));
    for ((z, s), v) in logits.iter().zip(data.samples()).zip(&values) {
        let bucket = if correctly_classified(z, s.y) {
            &mut right
        } else {
            &mut wrong
        };
        bucket.0 += 1;
        bucket.1 += v;
    }
    if right.0 == 0 || wrong.0 == 0 {
        return Err(Error::Degenerate(format!(
            "clean accuracy is {}: conditional losses need both classified and misclassified samples",
            if right.0 == 0 { 0 } else { 1 }
        )));
    }
    let n = data.len() as f64;
    Ok(ConditionalLosses {
        c0: right.1 / right.0 as f64,
        w0: wrong.1 / wrong.0 as f64,
        a: right.0 as f64 / n,
        v0: values.iter().sum::<f64>() / n,
    })
}

/// `Q_δ(S) / A`
pub fn r_upper(a: f64, a_attacked: f64) -> Result<f64> {
    if a <= 0.0 {
        return Err(Error::Degenerate("clean accuracy is 0".into()));
    }
    Ok(a_attacked / a)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LowerBounds {
    /// `(W0 - E_{Q_δ} J) / (W0 - V0)`
    pub tilde: f64,
    /// `(W0 - V0 - δΥ) / (W0 - V0)`
    pub bar: f64,
    pub lower: f64,
}

fn gap(cond: &ConditionalLosses) -> Result<f64> {
    let gap = cond.w0 - cond.v0;
    if gap < DENOMINATOR_GUARD {
        return Err(Error::Degenerate(format!(
            "W0 - V0 = {gap:e} leaves the lower bound undefined"
        )));
    }
    Ok(gap)
}

pub fn r_lower(
    cond: &ConditionalLosses,
    delta: f64,
    upsilon: f64,
    e_qdelta_loss: f64,
) -> Result<LowerBounds> {
    let g = gap(cond)?;
    let tilde = (cond.w0 - e_qdelta_loss) / g;
    let bar = (g - delta * upsilon) / g;
    Ok(LowerBounds {
        tilde,
        bar,
        lower: tilde.min(bar),
    })
}

/// `(W0 - V(δ,n)) / (W0 - V0)` for a given estimate `V(δ,n)`.
pub fn r_lower_from(cond: &ConditionalLosses, v_delta_n: f64) -> Result<f64> {
    Ok((cond.w0 - v_delta_n) / gap(cond)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefinedLower {
    pub r_lower_n: f64,
    /// Largest mean loss reached by the `n`-step attack.
    pub v_delta_n: f64,
    pub attack: AttackResult,
}

/// Refined lower bound with `V(δ,n)` from an `n`-step W-PGD on `J`.
pub fn r_lower_n(
    net: &Network,
    data: &LabeledDataset,
    config: &AttackConfig,
) -> Result<RefinedLower> {
    let cond = conditional_clean_losses(net, config.loss, data)?;
    let attack = wpgd(net, data, config)?;
    Ok(RefinedLower {
        r_lower_n: r_lower_from(&cond, attack.max_mean_loss)?,
        v_delta_n: attack.max_mean_loss,
        attack,
    })
}

/// Loss for the reference attack: ReDLR at finite `p`, CE at `p = ∞`.
pub fn reference_loss(threat: &ThreatModel, classes: usize) -> LossKind {
    match threat.p() {
        NormIndex::Inf => LossKind::Ce,
        _ if classes >= LossKind::Redlr.min_classes() => LossKind::Redlr,
        _ => LossKind::Ce,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertifyOptions {
    pub steps: usize,
    pub ratio: f64,
    pub seed: u64,
    /// Overrides [`reference_loss`].
    pub reference_loss: Option<LossKind>,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        Self {
            steps: 50,
            ratio: DEFAULT_RATIO,
            seed: 0,
            reference_loss: None,
        }
    }
}

#[allow(non_snake_case)]
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobustnessReport {
    pub A: f64,
    pub A_delta: f64,
    pub R: f64,
    pub R_upper: f64,
    pub R_lower_tilde: f64,
    pub R_lower_bar: f64,
    pub R_lower: f64,
    pub R_lower_n: f64,
    pub V0: f64,
    pub C0: f64,
    pub W0: f64,
    pub Upsilon: f64,
    pub V_delta_n: f64,
    /// Accuracy under the first-order measure `Q_δ`.
    pub A_Qdelta: f64,
    pub E_Qdelta_J: f64,
    pub delta: f64,
    pub threat: ThreatModel,
    pub loss: LossKind,
    pub reference_loss: LossKind,
    pub steps: usize,
    pub caveat: String,
    pub warnings: Vec<String>,
}

/// Full robustness report for `net` on `data` under `threat`, with bounds
/// computed for `loss` and `A_δ` estimated by W-PGD.
pub fn certify(
    net: &Network,
    loss: LossKind,
    data: &LabeledDataset,
    threat: &ThreatModel,
    options: &CertifyOptions,
) -> Result<RobustnessReport> {
    let obj = Objective::new(net, loss)?;
    let cond = conditional_with(&obj, data)?;
    let sens = upsilon_with(&obj, data, threat)?;
    let shift = qdelta_displace_with(&obj, data, threat)?;
    let a_q = adv_accuracy(net, &shift.displaced)?;
    let e_q = obj.mean_loss(&shift.displaced)?;
    let bounds = r_lower(&cond, threat.delta(), sens.upsilon, e_q)?;

    let attack_config = |kind| AttackConfig {
        steps: options.steps,
        ratio: options.ratio,
        seed: options.seed,
        ..AttackConfig::new(*threat, kind)
    };
    let reference = options
        .reference_loss
        .unwrap_or_else(|| reference_loss(threat, data.classes()));
    let refined = wpgd(net, data, &attack_config(loss))?;
    let attacked = if reference == loss {
        refined.clone()
    } else {
        wpgd(net, data, &attack_config(reference))?
    };

    let mut warnings = Vec::new();
    if loss == LossKind::Ce && cond.w0 <= cond.c0 {
        warnings.push(format!("W0 = {} does not exceed C0 = {}", cond.w0, cond.c0));
    }
    if shift.degenerate {
        warnings.push("Upsilon vanished; Q_delta equals the clean measure".into());
    }
    Ok(RobustnessReport {
        A: cond.a,
        A_delta: attacked.final_adv_accuracy,
        R: attacked.final_adv_accuracy / cond.a,
        R_upper: r_upper(cond.a, a_q)?,
        R_lower_tilde: bounds.tilde,
        R_lower_bar: bounds.bar,
        R_lower: bounds.lower,
        R_lower_n: r_lower_from(&cond, refined.max_mean_loss)?,
        V0: cond.v0,
        C0: cond.c0,
        W0: cond.w0,
        Upsilon: sens.upsilon,
        V_delta_n: refined.max_mean_loss,
        A_Qdelta: a_q,
        E_Qdelta_J: e_q,
        delta: threat.delta(),
        threat: *threat,
        loss,
        reference_loss: reference,
        steps: options.steps,
        caveat: CAVEAT.into(),
        warnings,
    })
}

/// Inputs of the empirical-measure concentration inequality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationParams {
    /// Constant depending on `p` and `n`; user supplied.
    pub k: f64,
    /// Feature dimension.
    pub n: usize,
    /// Training set size.
    pub n_train: usize,
    /// Test set size.
    pub m_test: usize,
    pub epsilon: f64,
    pub delta: f64,
}

pub const DEFAULT_K: f64 = 1.0;

impl ConcentrationParams {
    pub fn new(
        k: f64,
        n: usize,
        n_train: usize,
        m_test: usize,
        epsilon: f64,
        delta: f64,
    ) -> Result<Self> {
        if !(k > 0.0 && k.is_finite()) {
            return Err(Error::InvalidConfig(format!("K must be positive, got {k}")));
        }
        if n == 0 || n_train == 0 || m_test == 0 {
            return Err(Error::InvalidConfig(
                "dimension and sample sizes must be positive".into(),
            ));
        }
        for (name, v) in [("epsilon", epsilon), ("delta", delta)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be a nonnegative number, got {v}"
                )));
            }
        }
        Ok(Self {
            k,
            n,
            n_train,
            m_test,
            epsilon,
            delta,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SampleMode {
    /// `P(W_p(P̂, P) ≥ ε) ≤ K exp(-K N ε^n)`
    OneSample,
    /// `P(W_p(P̌, P̂) ≥ 2ε) ≤ 2K exp(-K ε^n min(M, N))`
    TwoSample,
}

/// Failure probability bound at radius `ε`, clipped to `[0, 1]`.
pub fn concentration_probability(params: &ConcentrationParams, mode: SampleMode) -> f64 {
    concentration_at(params, params.epsilon, mode)
}

fn concentration_at(params: &ConcentrationParams, radius: f64, mode: SampleMode) -> f64 {
    let k = params.k;
    let tail = radius.powi(params.n as i32);
    let bound = match mode {
        SampleMode::OneSample => k * (-k * params.n_train as f64 * tail).exp(),
        SampleMode::TwoSample => {
            2.0 * k * (-k * tail * params.n_train.min(params.m_test) as f64).exp()
        }
    };
    bound.clamp(0.0, 1.0)
}

/// One bound with the probability that it may fail.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Guarantee {
    /// `None` when the bound is undefined (degenerate denominator).
    pub bound: Option<f64>,
    pub failure_probability: f64,
    pub confidence: f64,
}

impl Guarantee {
    fn new(bound: Option<f64>, failure_probability: f64) -> Self {
        Self {
            bound,
            failure_probability,
            confidence: 1.0 - failure_probability,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OosGuarantees {
    /// Lower bound `Â R̂^l_{2ε}` on the test-set clean accuracy.
    pub clean_accuracy_lower: Guarantee,
    /// `R̄^l` at radius `2ε`.
    pub r_lower_2eps: f64,
    /// Upper bound `V̂(δ) + L̂ε` on the population adversarial loss.
    pub adversarial_loss_upper: Guarantee,
    /// Upper bound `(V̂(δ) - V̂(0) + 2L̂δ) / (Ŵ0 - Ĉ0)` on the accuracy shortfall.
    pub shortfall_upper: Guarantee,
    pub shortfall_denominator: f64,
    pub denominator_degenerate: bool,
    pub lipschitz: f64,
    pub params: ConcentrationParams,
    pub caveat: String,
}

/// Out-of-sample statements from a report computed on the training measure.
/// `R̂^l_{2ε}` uses the closed-form bound `R̄^l` at radius `2ε`.
pub fn oos_guarantees(
    report: &RobustnessReport,
    params: &ConcentrationParams,
    lipschitz: f64,
) -> Result<OosGuarantees> {
    if !(lipschitz >= 0.0 && lipschitz.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "Lipschitz constant must be nonnegative, got {lipschitz}"
        )));
    }
    let eps = params.epsilon;
    let g = report.W0 - report.V0;
    if g < DENOMINATOR_GUARD {
        return Err(Error::Degenerate(format!(
            "W0 - V0 = {g:e} leaves the lower bound undefined"
        )));
    }
    let r2 = (g - 2.0 * eps * report.Upsilon) / g;
    let denom = report.W0 - report.C0;
    let degenerate = denom.abs() < DENOMINATOR_GUARD;
    let shortfall = (!degenerate)
        .then(|| (report.V_delta_n - report.V0 + 2.0 * lipschitz * params.delta) / denom);
    Ok(OosGuarantees {
        clean_accuracy_lower: Guarantee::new(
            Some(report.A * r2),
            concentration_probability(params, SampleMode::TwoSample),
        ),
        r_lower_2eps: r2,
        adversarial_loss_upper: Guarantee::new(
            Some(report.V_delta_n + lipschitz * eps),
            concentration_probability(params, SampleMode::OneSample),
        ),
        shortfall_upper: Guarantee::new(
            shortfall,
            concentration_at(params, params.delta, SampleMode::OneSample),
        ),
        shortfall_denominator: denom,
        denominator_degenerate: degenerate,
        lipschitz,
        params: *params,
        caveat: CAVEAT.into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Sample;
    use crate::model::{Activation, Layer};
    use crate::ndgrad::Tensor;

    fn cond(a: f64, c0: f64, w0: f64) -> ConditionalLosses {
        ConditionalLosses {
            c0,
            w0,
            a,
            v0: a * c0 + (1.0 - a) * w0,
        }
    }

    #[test]
    fn tower_example() {
        let c = cond(0.75, 1.0, 5.0);
        assert_eq!(c.v0, 2.0);
        assert_eq!(c.tower_residual(), 0.0);
    }

    #[test]
    fn lower_bound_arithmetic() {
        let c = cond(0.75, 1.0, 5.0);
        let b = r_lower(&c, 0.1, 3.0, 2.3).unwrap();
        assert!((b.bar - 0.9).abs() < 1e-15);
        assert!((b.tilde - 0.9).abs() < 1e-15);
        assert_eq!(b.lower, b.tilde.min(b.bar));
        let zero = r_lower(&c, 0.0, 3.0, c.v0).unwrap();
        assert_eq!((zero.tilde, zero.bar), (1.0, 1.0));
    }

    #[test]
    fn lower_bound_is_affine_in_delta() {
        let c = cond(0.6, 0.4, 2.0);
        let at = |d| r_lower(&c, d, 1.7, 1.0).unwrap().bar;
        let slope = -1.7 / (c.w0 - c.v0);
        for d in [0.01, 0.05, 0.2] {
            assert!((at(d) - 1.0 - slope * d).abs() < 1e-14);
        }
    }

    #[test]
    fn degenerate_gap_and_accuracy() {
        let c = ConditionalLosses {
            c0: 1.0,
            w0: 1.0,
            a: 0.5,
            v0: 1.0,
        };
        assert!(r_lower(&c, 0.1, 1.0, 1.0).unwrap_err().is_degenerate());
        assert!(r_upper(0.0, 0.0).is_err());
        assert!((r_upper(0.9, 0.8).unwrap() - (8.0 / 9.0)).abs() < 1e-15);
        assert_eq!(r_upper(0.9, 0.9).unwrap(), 1.0);
    }

    fn identity_net() -> Network {
        Network::new(vec![Layer {
            w: Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
            b: Tensor::vector(vec![0.0, 0.0]),
            activation: Activation::Identity,
        }])
        .unwrap()
    }

    fn toy(labels: &[usize]) -> LabeledDataset {
        let xs = [[0.9, 0.1], [0.2, 0.7], [0.6, 0.4], [0.3, 0.8], [0.55, 0.5]];
        LabeledDataset::new(
            2,
            2,
            xs.iter()
                .zip(labels)
                .map(|(x, &y)| Sample { x: x.to_vec(), y })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn conditional_losses_and_accuracy_count() {
        let net = identity_net();
        let data = toy(&[1, 2, 2, 1, 1]);
        let c = conditional_clean_losses(&net, LossKind::Ce, &data).unwrap();
        assert_eq!(adv_accuracy(&net, &data).unwrap(), 0.6);
        assert_eq!(c.a, 0.6);
        assert!(c.tower_residual() < 1e-12);
        assert!(c.w0 > c.c0);
        let all = toy(&[1, 2, 1, 2, 1]);
        assert!(conditional_clean_losses(&net, LossKind::Ce, &all)
            .unwrap_err()
            .is_degenerate());
    }

    #[test]
    fn concentration_formulas() {
        let p = ConcentrationParams::new(1.0, 2, 1000, 1000, 0.5, 0.1).unwrap();
        assert_eq!(
            concentration_probability(&p, SampleMode::OneSample),
            (-250.0f64).exp()
        );
        assert_eq!(
            concentration_probability(&p, SampleMode::TwoSample),
            2.0 * (-250.0f64).exp()
        );
        let zero = ConcentrationParams::new(1.0, 2, 1000, 10, 0.0, 0.1).unwrap();
        assert_eq!(concentration_probability(&zero, SampleMode::OneSample), 1.0);
        assert_eq!(concentration_probability(&zero, SampleMode::TwoSample), 1.0);
        assert!(ConcentrationParams::new(0.0, 2, 1, 1, 0.1, 0.1).is_err());
    }

    fn report(a: f64, c0: f64, w0: f64, ups: f64, v_delta: f64) -> RobustnessReport {
        let v0 = a * c0 + (1.0 - a) * w0;
        RobustnessReport {
            A: a,
            A_delta: a,
            R: 1.0,
            R_upper: 1.0,
            R_lower_tilde: 1.0,
            R_lower_bar: 1.0,
            R_lower: 1.0,
            R_lower_n: 1.0,
            V0: v0,
            C0: c0,
            W0: w0,
            Upsilon: ups,
            V_delta_n: v_delta,
            A_Qdelta: a,
            E_Qdelta_J: v0,
            delta: 0.1,
            threat: ThreatModel::new(NormIndex::Two, NormIndex::Two, 0.1).unwrap(),
            loss: LossKind::Ce,
            reference_loss: LossKind::Ce,
            steps: 50,
            caveat: CAVEAT.into(),
            warnings: vec![],
        }
    }

    #[test]
    fn oos_degenerations() {
        let r = report(0.9, 0.2, 2.0, 1.5, 0.6);
        let eps0 = ConcentrationParams::new(1.0, 2, 100, 100, 0.0, 0.1).unwrap();
        let g = oos_guarantees(&r, &eps0, 3.0).unwrap();
        assert_eq!(g.clean_accuracy_lower.bound, Some(r.A));
        let lip0 = ConcentrationParams::new(1.0, 2, 100, 100, 0.05, 0.1).unwrap();
        let g = oos_guarantees(&r, &lip0, 0.0).unwrap();
        assert_eq!(g.adversarial_loss_upper.bound, Some(r.V_delta_n));
        assert_eq!(
            g.shortfall_upper.bound,
            Some((r.V_delta_n - r.V0) / (r.W0 - r.C0))
        );
        assert!(g.clean_accuracy_lower.bound.unwrap() < r.A);
    }

    #[test]
    fn report_json_field_names() {
        let json = serde_json::to_value(report(0.9, 0.2, 2.0, 1.5, 0.6)).unwrap();
        for key in [
            "A",
            "A_delta",
            "R",
            "R_upper",
            "R_lower_tilde",
            "R_lower_bar",
            "R_lower",
            "V0",
            "C0",
            "W0",
            "Upsilon",
            "V_delta_n",
            "delta",
            "threat",
            "loss",
        ] {
            assert!(json.get(key).is_some(), "{key}");
        }
    }

    proptest::proptest! {
        #[test]
        fn probabilities_are_clipped(
            k in 1e-3f64..10.0,
            n in 1usize..12,
            big_n in 1usize..100_000,
            big_m in 1usize..100_000,
            eps in 0.0f64..2.0,
        ) {
            let params = ConcentrationParams::new(k, n, big_n, big_m, eps, 0.1).unwrap();
            for mode in [SampleMode::OneSample, SampleMode::TwoSample] {
                let pr = concentration_probability(&params, mode);
                proptest::prop_assert!((0.0..=1.0).contains(&pr));
            }
        }

        #[test]
        fn bar_bound_is_affine_in_delta(a in 0.05f64..0.95, c0 in 0.0f64..1.0, extra in 0.1f64..5.0, ups in 0.0f64..20.0, d in 0.0f64..0.5) {
            let c = cond(a, c0, c0 + extra);
            let slope = -ups / (c.w0 - c.v0);
            let at = |delta: f64| r_lower(&c, delta, ups, 0.0).unwrap().bar;
            proptest::prop_assert!((at(0.0) - 1.0).abs() < 1e-12);
            proptest::prop_assert!((at(d) - (1.0 + slope * d)).abs() < 1e-9);
        }
    }
}
