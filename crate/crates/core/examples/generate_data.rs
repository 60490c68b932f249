//! Draws the three synthetic tasks, splits one and writes it to CSV.

use wdro::data::{generate, DatasetSpec, Generator, LabeledDataset};

fn main() -> wdro::Result<()> {
    for kind in [
        Generator::GaussianBlobs,
        Generator::ConcentricRings,
        Generator::XorGrid,
    ] {
        let data = generate(&DatasetSpec::new(kind, 2, 3, 300, 7))?;
        let per_class: Vec<usize> = (1..=3)
            .map(|c| data.labels().iter().filter(|&&y| y == c).count())
            .collect();
        println!("{kind:?}: {} samples, per class {per_class:?}", data.len());
    }

    let blobs =
        generate(&DatasetSpec::new(Generator::GaussianBlobs, 2, 3, 300, 7).separation(3.0))?;
    let (train, test) = blobs.split(0.8, 7)?;
    let path = std::env::temp_dir().join("wdro_blobs.csv");
    train.save_csv(&path)?;
    let back = LabeledDataset::load_csv(&path, None)?;
    println!(
        "train {} / test {}; CSV round trip exact: {}",
        train.len(),
        test.len(),
        back == train
    );
    Ok(())
}
