//! Clean, sensitivity-regularized and perturbed training on the same split,
//! compared by W-PGD accuracy on held-out data.

use wdro::attack::{wpgd, AttackConfig};
use wdro::data::{generate, DatasetSpec, Generator};
use wdro::losses::LossKind;
use wdro::model::{clean_accuracy, Activation, Network};
use wdro::training::{train, Method, TrainConfig};
use wdro::transport::{NormIndex, ThreatModel};

fn main() -> wdro::Result<()> {
    let data = generate(&DatasetSpec::new(Generator::GaussianBlobs, 10, 2, 200, 0).margin(0.1))?;
    let (train_set, test_set) = data.split(0.5, 0)?;
    let threat = ThreatModel::new(NormIndex::Inf, NormIndex::Inf, 0.03)?;
    let init = Network::init(10, &[8], 2, Activation::Tanh, 0)?;
    let base = TrainConfig::new(Method::Clean, threat)
        .epochs(60)
        .batch_size(20)
        .lr(0.1);

    for method in [Method::Clean, Method::Regularized, Method::Perturbed] {
        let out = train(&init, &train_set, &base.method(method))?;
        let adv = wpgd(
            &out.network,
            &test_set,
            &AttackConfig::new(threat, LossKind::Ce),
        )?;
        println!(
            "{method:?}: final epoch loss {:.4}, clean {:.3}, attacked {:.3}",
            out.epoch_losses.last().copied().unwrap_or(f64::NAN),
            clean_accuracy(&out.network, &test_set)?,
            adv.final_adv_accuracy
        );
    }
    Ok(())
}
