//! Exact optimal transport between two labelled point clouds, and the
//! projection of a perturbed cloud back onto a Wasserstein ball.

use wdro::data::{generate, DatasetSpec, Generator};
use wdro::transport::{
    empirical_wasserstein, exact_ot, project_ball, Coupling, NormIndex, ProjectionMode, ThreatModel,
};

fn main() -> wdro::Result<()> {
    let a = generate(&DatasetSpec::new(Generator::GaussianBlobs, 2, 2, 200, 1))?;
    let b = generate(&DatasetSpec::new(Generator::GaussianBlobs, 2, 2, 200, 2))?;
    for (p, r) in [
        (NormIndex::Two, NormIndex::Two),
        (NormIndex::Inf, NormIndex::Two),
        (NormIndex::Two, NormIndex::Inf),
    ] {
        let t = ThreatModel::new(p, r, 0.0)?;
        let plan = exact_ot(&a, &b, &t)?;
        let identity = empirical_wasserstein(&a, &b, &t, None)?;
        println!(
            "W_{p:?} with l_{r:?}: optimal {:.4}, identity coupling {identity:.4}",
            plan.cost
        );
    }

    // shift everything by 0.05 per coordinate, then pull back into a ball of radius 0.02
    let moved: Vec<Vec<f64>> = a
        .features()
        .iter()
        .map(|x| x.iter().map(|v| v + 0.05).collect())
        .collect();
    let shifted = a.with_features(moved.clone())?;
    let t = ThreatModel::new(NormIndex::Two, NormIndex::Two, 0.02)?;
    let projected = project_ball(&a, &moved, &t, Coupling::Identity, ProjectionMode::Ball)?;
    println!(
        "shifted cloud at {:.4}, projected to {:.4} (budget 0.02)",
        empirical_wasserstein(&a, &shifted, &t, None)?,
        empirical_wasserstein(&a, &projected, &t, None)?
    );
    Ok(())
}
