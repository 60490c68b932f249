//! Central finite-difference check of reverse-mode gradients on random
//! networks, for every loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::losses::{LossKind, Objective};
use crate::model::{Activation, Network};
use crate::transport::{norm, NormIndex};

pub const FD_STEP: f64 = 1e-6;
pub const TOLERANCE: f64 = 1e-4;

/// `‖a - b‖₂ / max(‖a‖₂, ‖b‖₂, 1e-6)`
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff, NormIndex::Two)
        / norm(a, NormIndex::Two)
            .max(norm(b, NormIndex::Two))
            .max(1e-6)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub case: usize,
    pub loss: LossKind,
    pub input_error: f64,
    pub param_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub seed: u64,
    pub networks: usize,
    pub max_relative_error: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub cases: Vec<CaseResult>,
}

/// Random network with 1 to 3 layers, widths at most 8 and 3 to 5 classes.
/// Biases are random too, so that logits are not tied at a dead ReLU layer.
pub fn random_network(rng: &mut ChaCha8Rng) -> Result<Network> {
    let n = rng.random_range(1..=8);
    let m = rng.random_range(3..=5);
    let hidden: Vec<usize> = (0..rng.random_range(0..=2))
        .map(|_| rng.random_range(1..=8))
        .collect();
    let activation = if rng.random_bool(0.5) {
        Activation::Tanh
    } else {
        Activation::Relu
    };
    let mut net = Network::init(n, &hidden, m, activation, rng.random())?;
    for (i, p) in net.params_mut().enumerate() {
        if i % 2 == 1 {
            p.data_mut()
                .iter_mut()
                .for_each(|b| *b = rng.random_range(-0.5..0.5));
        }
    }
    Ok(net)
}

fn check_one(net: &Network, kind: LossKind, x: &[f64], y: usize) -> Result<(f64, f64)> {
    let obj = Objective::new(net, kind)?;
    let analytic = obj.full_grad(x, y)?;

    let mut fd_input = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let (mut up, mut down) = (x.to_vec(), x.to_vec());
        up[i] += FD_STEP;
        down[i] -= FD_STEP;
        fd_input.push((obj.value(&up, y)? - obj.value(&down, y)?) / (2.0 * FD_STEP));
    }

    let mut fd_params = Vec::with_capacity(net.param_count());
    let count: Vec<usize> = net.params().map(|p| p.len()).collect();
    for (t, &len) in count.iter().enumerate() {
        for j in 0..len {
            let shifted = |h: f64| -> Result<f64> {
                let mut copy = net.clone();
                copy.params_mut()
                    .nth(t)
                    .expect("parameter index")
                    .data_mut()[j] += h;
                Objective::new(&copy, kind)?.value(x, y)
            };
            fd_params.push((shifted(FD_STEP)? - shifted(-FD_STEP)?) / (2.0 * FD_STEP));
        }
    }
    let flat: Vec<f64> = analytic
        .params
        .iter()
        .flat_map(|t| t.data().iter().copied())
        .collect();
    Ok((
        relative_error(&analytic.input, &fd_input),
        relative_error(&flat, &fd_params),
    ))
}

/// Checks `networks` random networks under CE, DLR and ReDLR.
pub fn run(seed: u64, networks: usize) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases = Vec::with_capacity(3 * networks);
    for case in 0..networks {
        let net = random_network(&mut rng)?;
        let x: Vec<f64> = (0..net.input_dim()).map(|_| rng.random::<f64>()).collect();
        let y = rng.random_range(1..=net.classes());
        for kind in [LossKind::Ce, LossKind::Dlr, LossKind::Redlr] {
            let (input_error, param_error) = check_one(&net, kind, &x, y)?;
            cases.push(CaseResult {
                case,
                loss: kind,
                input_error,
                param_error,
            });
        }
    }
    let max = cases
        .iter()
        .map(|c| c.input_error.max(c.param_error))
        .fold(0.0, f64::max);
    Ok(GradcheckReport {
        seed,
        networks,
        max_relative_error: max,
        tolerance: TOLERANCE,
        passed: max <= TOLERANCE,
        cases,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suite_passes() {
        let report = run(11, 10).unwrap();
        assert_eq!(report.cases.len(), 30);
        assert!(report.passed, "max error {}", report.max_relative_error);
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(&[0.0], &[0.0]), 0.0);
        assert_eq!(relative_error(&[1.0, 0.0], &[0.0, 0.0]), 1.0);
    }
}
