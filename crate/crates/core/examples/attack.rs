//! W-FGSM, W-PGD and pointwise PGD against a small trained classifier.

use wdro::attack::{classic_pgd, wfgsm, wpgd, AttackConfig};
use wdro::data::{generate, DatasetSpec, Generator};
use wdro::losses::LossKind;
use wdro::model::{clean_accuracy, Activation, Network};
use wdro::training::{train, Method, TrainConfig};
use wdro::transport::{NormIndex, ThreatModel};

fn main() -> wdro::Result<()> {
    let data = generate(
        &DatasetSpec::new(Generator::GaussianBlobs, 2, 3, 150, 2)
            .separation(3.0)
            .margin(0.2),
    )?;
    let idle = ThreatModel::new(NormIndex::Two, NormIndex::Two, 0.0)?;
    let init = Network::init(2, &[8], 3, Activation::Tanh, 2)?;
    let net = train(
        &init,
        &data,
        &TrainConfig::new(Method::Clean, idle)
            .epochs(100)
            .lr(0.5)
            .batch_size(16),
    )?
    .network;
    println!("clean accuracy {:.3}", clean_accuracy(&net, &data)?);

    let delta = 0.02;
    let w2 = ThreatModel::new(NormIndex::Two, NormIndex::Two, delta)?;
    let winf = ThreatModel::new(NormIndex::Inf, NormIndex::Two, delta)?;
    let runs = [
        (
            "W-FGSM W2 ce",
            wfgsm(&net, &data, &AttackConfig::new(w2, LossKind::Ce))?,
        ),
        (
            "W-PGD W2 ce",
            wpgd(&net, &data, &AttackConfig::new(w2, LossKind::Ce))?,
        ),
        (
            "W-PGD W2 redlr",
            wpgd(&net, &data, &AttackConfig::new(w2, LossKind::Redlr))?,
        ),
        (
            "PGD Winf ce",
            classic_pgd(&net, &data, &AttackConfig::new(winf, LossKind::Ce))?,
        ),
    ];
    for (name, r) in &runs {
        println!(
            "{name:<16} accuracy {:.3}  distance {:.5}  best iterate {}",
            r.final_adv_accuracy, r.achieved_distance, r.best_iterate
        );
    }
    Ok(())
}
