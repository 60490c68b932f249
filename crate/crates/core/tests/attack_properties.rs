use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wdro::attack::{classic_pgd, wfgsm, wpgd, AttackConfig};
use wdro::data::{generate, DatasetSpec, Generator, LabeledDataset, Sample};
use wdro::losses::LossKind;
use wdro::model::{clean_accuracy, Activation, Network};
use wdro::training::{train, Method, TrainConfig};
use wdro::transport::{NormIndex, ThreatModel};

fn random_case(seed: u64, len: usize) -> (Network, LabeledDataset) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=4);
    let m = rng.random_range(3..=4);
    let net = Network::init(n, &[5], m, Activation::Tanh, seed).unwrap();
    let samples = (0..len)
        .map(|i| Sample {
            x: (0..n).map(|_| rng.random()).collect(),
            y: i % m + 1,
        })
        .collect();
    (net, LabeledDataset::new(n, m, samples).unwrap())
}

fn norm_index(i: u8) -> NormIndex {
    if i == 0 {
        NormIndex::Two
    } else {
        NormIndex::Inf
    }
}

fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

#[test]
fn wpgd_matches_grid_search_on_linear_1d() {
    // two classes, logits (w1 x + b1, w2 x + b2); CE of label 1 is softplus(z2 - z1)
    let mut net = Network::init(1, &[], 2, Activation::Identity, 0).unwrap();
    {
        let mut params = net.params_mut();
        params
            .next()
            .unwrap()
            .data_mut()
            .copy_from_slice(&[3.0, -2.0]);
        params
            .next()
            .unwrap()
            .data_mut()
            .copy_from_slice(&[0.5, -0.2]);
    }
    let data = LabeledDataset::new(
        1,
        2,
        vec![Sample { x: vec![0.4], y: 1 }, Sample { x: vec![0.6], y: 2 }],
    )
    .unwrap();
    let delta = 0.1;
    let loss_at = |d1: f64, d2: f64| {
        let l1 = softplus((-2.0 - 3.0) * (0.4 + d1) + (-0.2 - 0.5));
        let l2 = softplus((3.0 + 2.0) * (0.6 + d2) + (0.5 + 0.2));
        0.5 * (l1 + l2)
    };
    // W_2 ball: d1^2 + d2^2 <= 2 delta^2, boundary parametrized by angle
    let radius = 2f64.sqrt() * delta;
    let grid = (0..=200_000)
        .map(|k| {
            let t = std::f64::consts::TAU * k as f64 / 200_000.0;
            loss_at(radius * t.cos(), radius * t.sin())
        })
        .fold(f64::NEG_INFINITY, f64::max);

    let t = ThreatModel::new(NormIndex::Two, NormIndex::Two, delta).unwrap();
    let result = wpgd(&net, &data, &AttackConfig::new(t, LossKind::Ce).steps(200)).unwrap();
    assert!(
        (result.max_mean_loss - grid).abs() < 1e-5,
        "wpgd {} vs grid {grid}",
        result.max_mean_loss
    );
}

#[test]
fn accuracy_nonincreasing_in_budget() {
    let data = generate(
        &DatasetSpec::new(Generator::GaussianBlobs, 2, 3, 150, 1)
            .separation(3.0)
            .margin(0.2),
    )
    .unwrap();
    let idle = ThreatModel::new(NormIndex::Two, NormIndex::Two, 0.0).unwrap();
    let init = Network::init(2, &[8], 3, Activation::Tanh, 1).unwrap();
    let net = train(
        &init,
        &data,
        &TrainConfig::new(Method::Clean, idle)
            .epochs(60)
            .lr(0.5)
            .batch_size(16),
    )
    .unwrap()
    .network;
    for (p, r) in [
        (NormIndex::Two, NormIndex::Two),
        (NormIndex::Inf, NormIndex::Inf),
    ] {
        let mut previous = clean_accuracy(&net, &data).unwrap();
        for delta in [0.005, 0.01, 0.02, 0.04, 0.08] {
            let t = ThreatModel::new(p, r, delta).unwrap();
            let acc = wpgd(&net, &data, &AttackConfig::new(t, LossKind::Ce))
                .unwrap()
                .final_adv_accuracy;
            assert!(
                acc <= previous + 0.01,
                "p={p:?} delta={delta}: {acc} after {previous}"
            );
            previous = acc;
        }
    }
}

#[test]
fn zero_budget_returns_clean_data() {
    let (net, data) = random_case(3, 12);
    let t = ThreatModel::new(NormIndex::Inf, NormIndex::Inf, 0.0).unwrap();
    let cfg = AttackConfig::new(t, LossKind::Ce).steps(4);
    assert_eq!(wfgsm(&net, &data, &cfg).unwrap().adversarial, data);
    assert_eq!(classic_pgd(&net, &data, &cfg).unwrap().adversarial, data);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn returned_iterate_is_feasible(seed in 0u64..1000, p in 0u8..2, r in 0u8..2, delta in 0.001f64..0.4, steps in 1usize..8) {
        let (net, data) = random_case(seed, 10);
        let t = ThreatModel::new(norm_index(p), norm_index(r), delta).unwrap();
        let res = wpgd(&net, &data, &AttackConfig::new(t, LossKind::Dlr).steps(steps)).unwrap();
        prop_assert!(res.achieved_distance <= delta + 1e-9);
        prop_assert!((0.0..=1.0).contains(&res.final_adv_accuracy));
        prop_assert!(res.final_adv_accuracy <= clean_accuracy(&net, &data).unwrap());
        for s in res.adversarial.samples() {
            prop_assert!(s.x.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn same_seed_same_result(seed in 0u64..1000, restarts in 0usize..3) {
        let (net, data) = random_case(seed, 8);
        let t = ThreatModel::new(NormIndex::Two, NormIndex::Inf, 0.05).unwrap();
        let mut cfg = AttackConfig::new(t, LossKind::Ce).steps(5).seed(seed);
        cfg.restarts = restarts;
        prop_assert_eq!(wpgd(&net, &data, &cfg).unwrap(), wpgd(&net, &data, &cfg).unwrap());
    }

    #[test]
    fn pointwise_displacements_within_budget(seed in 0u64..1000, delta in 0.001f64..0.3) {
        let (net, data) = random_case(seed, 10);
        let t = ThreatModel::new(NormIndex::Inf, NormIndex::Two, delta).unwrap();
        let res = classic_pgd(&net, &data, &AttackConfig::new(t, LossKind::Ce).steps(5)).unwrap();
        for (a, b) in data.samples().iter().zip(res.adversarial.samples()) {
            let d = a.x.iter().zip(&b.x).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt();
            prop_assert!(d <= delta + 1e-9);
        }
    }
}
