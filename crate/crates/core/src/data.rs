//! Labeled datasets on the unit box, synthetic generators and CSV I/O.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Vec<f64>,
    /// 1-based class label.
    pub y: usize,
}

/// Nonempty list of samples with features in `[0,1]^n` and labels in `1..=m`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    n: usize,
    m: usize,
    samples: Vec<Sample>,
}

impl LabeledDataset {
    /// Validating constructor: rejects out-of-box features and bad labels.
    pub fn new(n: usize, m: usize, samples: Vec<Sample>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if m < 2 {
            return Err(Error::InvalidDataset(format!(
                "need at least 2 classes, got {m}"
            )));
        }
        for (i, s) in samples.iter().enumerate() {
            if s.x.len() != n {
                return Err(Error::InvalidDataset(format!(
                    "sample {i} has {} features, expected {n}",
                    s.x.len()
                )));
            }
            if let Some(v) = s.x.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::InvalidDataset(format!(
                    "sample {i} has feature {v} outside [0,1]"
                )));
            }
            if s.y == 0 || s.y > m {
                return Err(Error::InvalidDataset(format!(
                    "sample {i} has label {} outside 1..={m}",
                    s.y
                )));
            }
        }
        Ok(Self { n, m, samples })
    }

    /// Same as [`LabeledDataset::new`] but clamps features into `[0,1]` first.
    pub fn clamped(n: usize, m: usize, mut samples: Vec<Sample>) -> Result<Self> {
        for s in &mut samples {
            clamp_unit(&mut s.x);
        }
        Self::new(n, m, samples)
    }

    /// Replaces features, keeping labels, and clamps into the box.
    pub fn with_features(&self, features: Vec<Vec<f64>>) -> Result<Self> {
        if features.len() != self.samples.len() {
            return Err(Error::Dimension {
                expected: self.samples.len(),
                found: features.len(),
            });
        }
        let samples = features
            .into_iter()
            .zip(&self.samples)
            .map(|(x, s)| Sample { x, y: s.y })
            .collect();
        Self::clamped(self.n, self.m, samples)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn classes(&self) -> usize {
        self.m
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn features(&self) -> Vec<Vec<f64>> {
        self.samples.iter().map(|s| s.x.clone()).collect()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.y).collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let samples = indices.iter().map(|&i| self.samples[i].clone()).collect();
        Self::new(self.n, self.m, samples)
    }

    pub fn load_csv(path: impl AsRef<Path>, classes: Option<usize>) -> Result<Self> {
        let path = path.as_ref();
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            message,
        };
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)?;
        let header = reader.headers()?.clone();
        if header.get(0) != Some("label") || header.len() < 2 {
            return Err(parse_err(
                "header must start with `label` followed by features".into(),
            ));
        }
        for (j, name) in header.iter().skip(1).enumerate() {
            if name != format!("f{j}") {
                return Err(parse_err(format!("expected column f{j}, found `{name}`")));
            }
        }
        let n = header.len() - 1;
        let mut samples = Vec::new();
        for (row, record) in reader.records().enumerate() {
            let record = record?;
            let y: usize = record[0]
                .trim()
                .parse()
                .map_err(|_| parse_err(format!("row {row}: bad label `{}`", &record[0])))?;
            let x = record
                .iter()
                .skip(1)
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| parse_err(format!("row {row}: {e}")))?;
            samples.push(Sample { x, y });
        }
        let m = match classes {
            Some(m) => m,
            None => samples.iter().map(|s| s.y).max().unwrap_or(0).max(2),
        };
        Self::new(n, m, samples).map_err(|e| parse_err(e.to_string()))
    }

    /// Writes `label,f0,...,f{n-1}` with 17 significant digits per feature.
    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut writer = csv::Writer::from_path(path)?;
        let mut header = vec!["label".to_string()];
        header.extend((0..self.n).map(|j| format!("f{j}")));
        writer.write_record(&header)?;
        for s in &self.samples {
            let mut row = vec![s.y.to_string()];
            row.extend(s.x.iter().map(|v| format!("{v:.16e}")));
            writer.write_record(&row)?;
        }
        writer.flush()?;
        Ok(())
    }

    /// Seeded shuffle into `(train, test)` with `round(fraction * N)` training samples.
    pub fn split(&self, fraction: f64, seed: u64) -> Result<(Self, Self)> {
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "split fraction {fraction} not in (0,1)"
            )));
        }
        let n_train = (fraction * self.len() as f64).round() as usize;
        if n_train == 0 || n_train == self.len() {
            return Err(Error::InvalidConfig(format!(
                "split of {} samples at {fraction} leaves an empty side",
                self.len()
            )));
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        Ok((self.subset(&idx[..n_train])?, self.subset(&idx[n_train..])?))
    }
}

pub fn clamp_unit(x: &mut [f64]) {
    for v in x {
        *v = v.clamp(0.0, 1.0);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Generator {
    GaussianBlobs,
    ConcentricRings,
    XorGrid,
}

impl std::str::FromStr for Generator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian-blobs" | "blobs" => Ok(Self::GaussianBlobs),
            "concentric-rings" | "rings" => Ok(Self::ConcentricRings),
            "xor-grid" | "xor" => Ok(Self::XorGrid),
            other => Err(Error::InvalidConfig(format!("unknown generator `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub generator: Generator,
    pub n: usize,
    pub m: usize,
    pub samples: usize,
    pub seed: u64,
    /// Gap between classes in units of the within-class standard deviation.
    pub separation: f64,
    /// The box mapping targets `[margin, 1 - margin]^n`.
    pub margin: f64,
}

impl DatasetSpec {
    pub fn new(generator: Generator, n: usize, m: usize, samples: usize, seed: u64) -> Self {
        Self {
            generator,
            n,
            m,
            samples,
            seed,
            separation: 4.0,
            margin: 0.05,
        }
    }

    pub fn separation(mut self, separation: f64) -> Self {
        self.separation = separation;
        self
    }

    pub fn margin(mut self, margin: f64) -> Self {
        self.margin = margin;
        self
    }
}

/// Draws a balanced dataset (label `i % m + 1` for the i-th draw) and maps it
/// affinely, with one common scale for every coordinate, onto the margin box.
pub fn generate(spec: &DatasetSpec) -> Result<LabeledDataset> {
    if spec.samples == 0 {
        return Err(Error::InvalidConfig("cannot generate 0 samples".into()));
    }
    if spec.m < 2 || spec.n == 0 {
        return Err(Error::InvalidConfig(format!(
            "need n >= 1 and m >= 2, got n={}, m={}",
            spec.n, spec.m
        )));
    }
    if !(0.0..0.5).contains(&spec.margin) {
        return Err(Error::InvalidConfig(format!(
            "margin {} not in [0, 0.5)",
            spec.margin
        )));
    }
    if matches!(
        spec.generator,
        Generator::ConcentricRings | Generator::XorGrid
    ) && spec.n < 2
    {
        return Err(Error::InvalidConfig(
            "rings and xor-grid need n >= 2".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let sep = spec.separation;
    let mut raw: Vec<Sample> = Vec::with_capacity(spec.samples);
    for i in 0..spec.samples {
        let class = i % spec.m;
        let mut x: Vec<f64> = (0..spec.n).map(|_| noise.sample(&mut rng)).collect();
        match spec.generator {
            Generator::GaussianBlobs => {
                if spec.m == 2 || spec.n == 1 {
                    // centers sep apart on the first axis
                    x[0] += sep * (class as f64 - (spec.m - 1) as f64 / 2.0);
                } else {
                    // regular polygon with neighbouring centers sep apart
                    let angle = std::f64::consts::TAU * class as f64 / spec.m as f64;
                    let radius = sep / (2.0 * (std::f64::consts::PI / spec.m as f64).sin());
                    x[0] += radius * angle.cos();
                    x[1] += radius * angle.sin();
                }
            }
            Generator::ConcentricRings => {
                let radius = sep * (class + 1) as f64;
                let angle = rng.random_range(0.0..std::f64::consts::TAU);
                x[0] = (radius + 0.5 * x[0]) * angle.cos();
                x[1] = (radius + 0.5 * x[1]) * angle.sin();
            }
            Generator::XorGrid => {
                let cells = spec.m.max(2);
                let (ci, cj) = loop {
                    let ci = rng.random_range(0..cells);
                    let cj = rng.random_range(0..cells);
                    if (ci + cj) % spec.m == class {
                        break (ci, cj);
                    }
                };
                x[0] =
                    ci as f64 * (sep + 1.0) + rng.random_range(0.0..1.0) * 0.5 + 0.5 * x[0].tanh();
                x[1] =
                    cj as f64 * (sep + 1.0) + rng.random_range(0.0..1.0) * 0.5 + 0.5 * x[1].tanh();
            }
        }
        raw.push(Sample { x, y: class + 1 });
    }

    let lo: Vec<f64> = (0..spec.n)
        .map(|j| raw.iter().map(|s| s.x[j]).fold(f64::INFINITY, f64::min))
        .collect();
    let hi: Vec<f64> = (0..spec.n)
        .map(|j| raw.iter().map(|s| s.x[j]).fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let span = lo
        .iter()
        .zip(&hi)
        .map(|(l, h)| h - l)
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let scale = (1.0 - 2.0 * spec.margin) / span;
    for s in &mut raw {
        for (j, v) in s.x.iter_mut().enumerate() {
            // center each coordinate inside the box
            let offset = 0.5 - scale * (lo[j] + hi[j]) / 2.0;
            *v = *v * scale + offset;
        }
        clamp_unit(&mut s.x);
    }
    LabeledDataset::new(spec.n, spec.m, raw)
}
