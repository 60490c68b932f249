//! Robustness report for a trained net: the metric R, its first-order
//! bounds, and out-of-sample guarantees.

use wdro::data::{generate, DatasetSpec, Generator};
use wdro::losses::{estimate_lipschitz, LossKind};
use wdro::model::{Activation, Network};
use wdro::robustness::{certify, oos_guarantees, CertifyOptions, ConcentrationParams, DEFAULT_K};
use wdro::training::{train, Method, TrainConfig};
use wdro::transport::{NormIndex, ThreatModel};

fn main() -> wdro::Result<()> {
    let data = generate(
        &DatasetSpec::new(Generator::GaussianBlobs, 2, 3, 150, 4)
            .separation(3.0)
            .margin(0.2),
    )?;
    let idle = ThreatModel::new(NormIndex::Two, NormIndex::Two, 0.0)?;
    let init = Network::init(2, &[8], 3, Activation::Tanh, 4)?;
    let net = train(
        &init,
        &data,
        &TrainConfig::new(Method::Clean, idle)
            .epochs(100)
            .lr(0.5)
            .batch_size(16),
    )?
    .network;

    for delta in [0.0025, 0.005, 0.01, 0.02] {
        let t = ThreatModel::new(NormIndex::Two, NormIndex::Two, delta)?;
        let rep = certify(&net, LossKind::Ce, &data, &t, &CertifyOptions::default())?;
        println!(
            "delta {delta:<6} R_lower {:.4}  R_lower_n {:.4}  R {:.4}  R_upper {:.4}",
            rep.R_lower, rep.R_lower_n, rep.R, rep.R_upper
        );
    }

    let t = ThreatModel::new(NormIndex::Two, NormIndex::Two, 0.01)?;
    let rep = certify(&net, LossKind::Ce, &data, &t, &CertifyOptions::default())?;
    let params = ConcentrationParams::new(DEFAULT_K, 2, data.len(), 1000, 0.05, 0.01)?;
    let lip = estimate_lipschitz(&net, LossKind::Ce, &data, t.s())?;
    let oos = oos_guarantees(&rep, &params, lip)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&oos).expect("serializable")
    );
    Ok(())
}
