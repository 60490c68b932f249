//! Sensitivity of the mean loss to a distributional shift, checked against
//! a W-PGD estimate of the worst-case loss at shrinking budgets.

use wdro::attack::{wpgd, AttackConfig};
use wdro::data::{generate, DatasetSpec, Generator};
use wdro::losses::LossKind;
use wdro::model::{Activation, Network};
use wdro::sensitivity::{first_order_adv_loss, qdelta_displace, upsilon};
use wdro::training::{train, Method, TrainConfig};
use wdro::transport::{NormIndex, ThreatModel};

fn main() -> wdro::Result<()> {
    let data = generate(
        &DatasetSpec::new(Generator::GaussianBlobs, 2, 3, 150, 0)
            .separation(3.0)
            .margin(0.2),
    )?;
    let idle = ThreatModel::new(NormIndex::Two, NormIndex::Two, 0.0)?;
    let init = Network::init(2, &[8], 3, Activation::Tanh, 0)?;
    let net = train(
        &init,
        &data,
        &TrainConfig::new(Method::Clean, idle)
            .epochs(100)
            .lr(0.5)
            .batch_size(16),
    )?
    .network;

    println!(
        "{:>8} {:>10} {:>10} {:>10}",
        "delta", "V0+dU", "W-PGD", "residual"
    );
    for delta in [0.04, 0.02, 0.01, 0.005] {
        let t = ThreatModel::new(NormIndex::Two, NormIndex::Two, delta)?;
        let s = upsilon(&net, LossKind::Ce, &data, &t)?;
        let linear = first_order_adv_loss(s.v0, delta, s.upsilon);
        let v = wpgd(&net, &data, &AttackConfig::new(t, LossKind::Ce))?.max_mean_loss;
        println!("{delta:>8} {linear:>10.6} {v:>10.6} {:>10.2e}", v - linear);
    }

    let t = ThreatModel::new(NormIndex::Two, NormIndex::Two, 0.02)?;
    let shift = qdelta_displace(&net, LossKind::Ce, &data, &t)?;
    println!(
        "first-order worst-case shift uses Upsilon = {:.4}",
        shift.upsilon
    );
    Ok(())
}
