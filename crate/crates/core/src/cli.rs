//! Command-line front end. Every subcommand writes a JSON [`RunReport`]
//! holding the fully resolved configuration, content hashes of the inputs,
//! the numeric outputs and timings.
//!
//! Exit codes: 0 success, 1 invalid input or configuration, 2 numeric
//! degeneracy (`Υ = 0`, clean accuracy 0 or 1, `W0 - V0 ≈ 0`, divergence).

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::attack::{
    classic_pgd, wfgsm, wpgd, AttackConfig, AttackResult, UpsilonSource, DEFAULT_RATIO,
};
use crate::data::{generate, DatasetSpec, Generator, LabeledDataset};
use crate::error::{Error, Result};
use crate::gradcheck;
use crate::losses::{estimate_lipschitz, LossKind};
use crate::model::{clean_accuracy, Activation, Network};
use crate::robustness::{certify, oos_guarantees, CertifyOptions, ConcentrationParams, DEFAULT_K};
use crate::sensitivity::upsilon;
use crate::training::{train, Method, TrainConfig, DEFAULT_FD_EPSILON};
use crate::transport::{Coupling, NormIndex, ProjectionMode, ThreatModel};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_DEGENERATE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "wdro",
    version,
    about = "Wasserstein distributional robustness toolkit"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Generate a synthetic dataset
    Gen(GenArgs),
    /// Train a network
    Train(TrainArgs),
    /// Attack a network with W-FGSM, W-PGD or pointwise PGD
    Attack(AttackArgs),
    /// Compute the robustness report with certified bounds
    Certify(CertifyArgs),
    /// Out-of-sample guarantees from the training measure
    OosBound(OosArgs),
    /// Finite-difference check of the gradient engine
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ThreatArgs {
    /// Wasserstein order: 2 or inf
    #[arg(long, default_value = "2")]
    pub p: NormIndex,
    /// Ground norm on features: 1, 2 or inf
    #[arg(long, default_value = "2")]
    pub r: NormIndex,
    #[arg(long, default_value_t = 0.0)]
    pub delta: f64,
}

impl ThreatArgs {
    fn threat(&self) -> Result<ThreatModel> {
        ThreatModel::new(self.p, self.r, self.delta)
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GenArgs {
    #[arg(long, default_value = "gaussian-blobs")]
    pub kind: Generator,
    /// Feature dimension
    #[arg(long, default_value_t = 2)]
    pub n: usize,
    /// Number of classes
    #[arg(long, default_value_t = 2)]
    pub m: usize,
    /// Number of samples
    #[arg(long = "N", default_value_t = 200)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 4.0)]
    pub separation: f64,
    /// Distance kept from the faces of the unit box
    #[arg(long, default_value_t = 0.05)]
    pub margin: f64,
    #[arg(long)]
    pub out: PathBuf,
    /// Report path; defaults to `<out>.report.json`
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "clean")]
    pub method: Method,
    #[command(flatten)]
    #[serde(flatten)]
    pub threat: ThreatArgs,
    #[arg(long, default_value = "ce")]
    pub loss: LossKind,
    #[arg(long, default_value_t = 0.1)]
    pub lr: f64,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long, default_value_t = DEFAULT_FD_EPSILON)]
    pub fd_epsilon: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Hidden layer widths, comma separated
    #[arg(long, value_delimiter = ',', default_value = "16")]
    pub hidden: Vec<usize>,
    #[arg(long, default_value = "tanh")]
    pub activation: Activation,
    /// Start from this model instead of a fresh initialization
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackKind {
    Wpgd,
    Wfgsm,
    ClassicPgd,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct AttackArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub threat: ThreatArgs,
    #[arg(long, default_value = "ce")]
    pub loss: LossKind,
    #[arg(long, value_enum, default_value = "wpgd")]
    pub attack: AttackKind,
    #[arg(long, default_value_t = 50)]
    pub steps: usize,
    #[arg(long, default_value_t = DEFAULT_RATIO)]
    pub ratio: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0)]
    pub restarts: usize,
    #[arg(long, default_value = "iterate")]
    pub upsilon_source: UpsilonSource,
    #[arg(long, default_value = "identity")]
    pub coupling: Coupling,
    /// Always rescale onto the sphere of radius delta instead of projecting onto the ball
    #[arg(long)]
    pub project_to_sphere: bool,
    /// Also write the attacked dataset here
    #[arg(long)]
    pub adversarial: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CertifyArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub threat: ThreatArgs,
    #[arg(long, default_value = "ce")]
    pub loss: LossKind,
    /// Concentration constant
    #[arg(long = "K", default_value_t = DEFAULT_K)]
    #[serde(rename = "K")]
    pub k: f64,
    /// Radius for the out-of-sample statements; omitted means none are emitted
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Test-set size for the two-sample statement; defaults to the data size
    #[arg(long)]
    pub test_size: Option<usize>,
    /// Reference attack loss; defaults to redlr for finite p and ce for p = inf
    #[arg(long)]
    pub reference_loss: Option<LossKind>,
    #[arg(long, default_value_t = 50)]
    pub steps: usize,
    #[arg(long, default_value_t = DEFAULT_RATIO)]
    pub ratio: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct OosArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Training data
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub threat: ThreatArgs,
    #[arg(long, default_value = "ce")]
    pub loss: LossKind,
    #[arg(long = "K", default_value_t = DEFAULT_K)]
    #[serde(rename = "K")]
    pub k: f64,
    #[arg(long)]
    pub epsilon: f64,
    #[arg(long)]
    pub test_size: usize,
    /// Lipschitz constant of the loss; estimated from the data when omitted
    #[arg(long)]
    pub lipschitz: Option<f64>,
    #[arg(long, default_value_t = 50)]
    pub steps: usize,
    #[arg(long, default_value_t = DEFAULT_RATIO)]
    pub ratio: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub networks: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunReport {
    pub subcommand: String,
    /// `ok`, `invalid` or `degenerate`.
    pub status: String,
    pub error: Option<String>,
    pub config: Value,
    /// Git blob style SHA-256 of every input file.
    pub inputs: Vec<InputHash>,
    pub outputs: Value,
    pub warnings: Vec<String>,
    pub timings: Timings,
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputHash {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Timings {
    pub total_seconds: f64,
}

/// SHA-256 over `blob <len>\0<content>`.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(format!("blob {}\0", bytes.len()).as_bytes());
    hasher.update(bytes);
    hex::encode(hasher.finalize())
}

/// Seed for a named sub-stream of a run seed.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(label.as_bytes());
    hasher.update(seed.to_le_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

fn hash_file(path: &Path) -> Result<InputHash> {
    Ok(InputHash {
        path: path.display().to_string(),
        sha256: content_hash(&std::fs::read(path)?),
    })
}

/// What a subcommand produced before the report is assembled.
struct Outcome {
    outputs: Value,
    warnings: Vec<String>,
    /// Degeneracy flagged without an error.
    degenerate: bool,
}

impl Outcome {
    fn ok(outputs: Value) -> Self {
        Self {
            outputs,
            warnings: Vec::new(),
            degenerate: false,
        }
    }
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Gen(_) => "gen",
            Command::Train(_) => "train",
            Command::Attack(_) => "attack",
            Command::Certify(_) => "certify",
            Command::OosBound(_) => "oos-bound",
            Command::Gradcheck(_) => "gradcheck",
        }
    }

    fn report_path(&self) -> Option<PathBuf> {
        let sibling = |out: &Path| PathBuf::from(format!("{}.report.json", out.display()));
        match self {
            Command::Gen(a) => Some(a.report.clone().unwrap_or_else(|| sibling(&a.out))),
            Command::Train(a) => Some(a.report.clone().unwrap_or_else(|| sibling(&a.out))),
            Command::Attack(a) => Some(a.out.clone()),
            Command::Certify(a) => Some(a.out.clone()),
            Command::OosBound(a) => Some(a.out.clone()),
            Command::Gradcheck(a) => a.out.clone(),
        }
    }

    fn inputs(&self) -> Vec<&Path> {
        match self {
            Command::Gen(_) | Command::Gradcheck(_) => vec![],
            Command::Train(a) => std::iter::once(a.data.as_path())
                .chain(a.init.as_deref())
                .collect(),
            Command::Attack(a) => vec![&a.model, &a.data],
            Command::Certify(a) => vec![&a.model, &a.data],
            Command::OosBound(a) => vec![&a.model, &a.data],
        }
    }

    fn execute(&self) -> Result<Outcome> {
        match self {
            Command::Gen(a) => run_gen(a),
            Command::Train(a) => run_train(a),
            Command::Attack(a) => run_attack(a),
            Command::Certify(a) => run_certify(a),
            Command::OosBound(a) => run_oos(a),
            Command::Gradcheck(a) => run_gradcheck(a),
        }
    }
}

fn load_pair(model: &Path, data: &Path) -> Result<(Network, LabeledDataset)> {
    let net = Network::load(model)?;
    let data = LabeledDataset::load_csv(data, Some(net.classes()))?;
    if data.dim() != net.input_dim() {
        return Err(Error::Dimension {
            expected: net.input_dim(),
            found: data.dim(),
        });
    }
    Ok((net, data))
}

fn run_gen(a: &GenArgs) -> Result<Outcome> {
    let spec = DatasetSpec::new(a.kind, a.n, a.m, a.samples, derive_seed(a.seed, "data"))
        .separation(a.separation)
        .margin(a.margin);
    let data = generate(&spec)?;
    data.save_csv(&a.out)?;
    Ok(Outcome::ok(json!({
        "path": a.out.display().to_string(),
        "samples": data.len(),
        "n": data.dim(),
        "m": data.classes(),
        "sha256": content_hash(&std::fs::read(&a.out)?),
    })))
}

fn run_train(a: &TrainArgs) -> Result<Outcome> {
    let data = LabeledDataset::load_csv(&a.data, None)?;
    let net = match &a.init {
        Some(path) => Network::load(path)?,
        None => Network::init(
            data.dim(),
            &a.hidden,
            data.classes(),
            a.activation,
            derive_seed(a.seed, "model"),
        )?,
    };
    let config = TrainConfig {
        method: a.method,
        threat: a.threat.threat()?,
        loss: a.loss,
        lr: a.lr,
        epochs: a.epochs,
        batch_size: a.batch,
        fd_epsilon: a.fd_epsilon,
        seed: derive_seed(a.seed, "training"),
    };
    let out = match train(&net, &data, &config) {
        Err(Error::Diverged {
            epoch,
            batch,
            snapshot,
        }) => {
            let dump = PathBuf::from(format!("{}.diverged.json", a.out.display()));
            snapshot.save(&dump)?;
            return Err(Error::Degenerate(format!(
                "loss became non-finite at epoch {epoch}, batch {batch}; last finite parameters written to {}",
                dump.display()
            )));
        }
        other => other?,
    };
    out.network.save(&a.out)?;
    let mut outcome = Outcome::ok(json!({
        "path": a.out.display().to_string(),
        "epoch_losses": out.epoch_losses,
        "epoch_upsilon": out.epoch_upsilon,
        "degenerate_epochs": out.degenerate_epochs,
        "train_accuracy": clean_accuracy(&out.network, &data)?,
        "sha256": content_hash(&std::fs::read(&a.out)?),
    }));
    if out.degenerate_epochs > 0 {
        outcome.warnings.push(format!(
            "Upsilon vanished in {} epoch(s); the robust term was skipped there",
            out.degenerate_epochs
        ));
    }
    Ok(outcome)
}

fn attack_summary(res: &AttackResult) -> Value {
    json!({
        "achieved_distance": res.achieved_distance,
        "accuracy_trajectory": res.accuracy_trajectory,
        "loss_trajectory": res.loss_trajectory,
        "final_adv_accuracy": res.final_adv_accuracy,
        "max_mean_loss": res.max_mean_loss,
        "best_iterate": res.best_iterate,
        "degenerate": res.degenerate,
    })
}

fn run_attack(a: &AttackArgs) -> Result<Outcome> {
    let (net, data) = load_pair(&a.model, &a.data)?;
    let threat = a.threat.threat()?;
    let config = AttackConfig {
        steps: a.steps,
        ratio: a.ratio,
        seed: derive_seed(a.seed, "attack"),
        coupling: a.coupling,
        projection: if a.project_to_sphere {
            ProjectionMode::Sphere
        } else {
            ProjectionMode::Ball
        },
        upsilon_source: a.upsilon_source,
        restarts: a.restarts,
        ..AttackConfig::new(threat, a.loss)
    };
    let res = match a.attack {
        AttackKind::Wpgd => wpgd(&net, &data, &config)?,
        AttackKind::Wfgsm => wfgsm(&net, &data, &config)?,
        AttackKind::ClassicPgd => classic_pgd(&net, &data, &config)?,
    };
    if let Some(path) = &a.adversarial {
        res.adversarial.save_csv(path)?;
    }
    let sens = upsilon(&net, a.loss, &data, &threat)?;
    let mut outcome = Outcome::ok(json!({
        "clean_accuracy": clean_accuracy(&net, &data)?,
        "attack": attack_summary(&res),
        "sensitivity": sens,
    }));
    if res.degenerate {
        outcome.degenerate = true;
        outcome
            .warnings
            .push("Upsilon vanished at some iteration; no step was taken there".into());
    }
    Ok(outcome)
}

fn p_warning(p: NormIndex) -> Option<String> {
    (p == NormIndex::Inf).then(|| {
        "the concentration rate assumes 1 < p < n/2; p = inf lies outside that regime".to_string()
    })
}

fn run_certify(a: &CertifyArgs) -> Result<Outcome> {
    let (net, data) = load_pair(&a.model, &a.data)?;
    let threat = a.threat.threat()?;
    let options = CertifyOptions {
        steps: a.steps,
        ratio: a.ratio,
        seed: derive_seed(a.seed, "attack"),
        reference_loss: a.reference_loss,
    };
    let report = certify(&net, a.loss, &data, &threat, &options)?;
    let mut warnings = report.warnings.clone();
    let mut outputs = json!({ "robustness": report });
    if let Some(eps) = a.epsilon {
        let params = ConcentrationParams::new(
            a.k,
            data.dim(),
            data.len(),
            a.test_size.unwrap_or(data.len()),
            eps,
            threat.delta(),
        )?;
        let lip = estimate_lipschitz(&net, a.loss, &data, threat.s())?;
        outputs["oos"] = serde_json::to_value(oos_guarantees(&report, &params, lip)?)?;
        warnings.extend(p_warning(threat.p()));
    }
    Ok(Outcome {
        outputs,
        warnings,
        degenerate: false,
    })
}

fn run_oos(a: &OosArgs) -> Result<Outcome> {
    let (net, data) = load_pair(&a.model, &a.data)?;
    let threat = a.threat.threat()?;
    let options = CertifyOptions {
        steps: a.steps,
        ratio: a.ratio,
        seed: derive_seed(a.seed, "attack"),
        reference_loss: None,
    };
    let report = certify(&net, a.loss, &data, &threat, &options)?;
    let params = ConcentrationParams::new(
        a.k,
        data.dim(),
        data.len(),
        a.test_size,
        a.epsilon,
        threat.delta(),
    )?;
    let (lip, estimated) = match a.lipschitz {
        Some(l) => (l, false),
        None => (estimate_lipschitz(&net, a.loss, &data, threat.s())?, true),
    };
    let guarantees = oos_guarantees(&report, &params, lip)?;
    let mut warnings = report.warnings.clone();
    warnings.extend(p_warning(threat.p()));
    if estimated {
        warnings.push(
            "Lipschitz constant estimated as the largest gradient dual norm on the data".into(),
        );
    }
    if guarantees.denominator_degenerate {
        warnings.push("W0 - C0 is near zero; the shortfall bound is undefined".into());
    }
    Ok(Outcome {
        outputs: json!({ "robustness": report, "oos": guarantees, "lipschitz_estimated": estimated }),
        warnings,
        degenerate: guarantees.denominator_degenerate,
    })
}

fn run_gradcheck(a: &GradcheckArgs) -> Result<Outcome> {
    let report = gradcheck::run(a.seed, a.networks)?;
    let mut outcome = Outcome::ok(serde_json::to_value(&report)?);
    if !report.passed {
        outcome.degenerate = true;
        outcome.warnings.push(format!(
            "max relative error {:e} exceeds {:e}",
            report.max_relative_error, report.tolerance
        ));
    }
    Ok(outcome)
}

fn configure_threads() {
    if let Some(n) = std::env::var("WDRO_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
    {
        // Fails only if a pool already exists, e.g. when called twice in one process.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
}

fn write_report(path: &Path, report: &RunReport) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(report)? + "\n")?;
    Ok(())
}

/// Parses `argv` (program name first), runs the subcommand, writes the
/// report and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            return if err.use_stderr() {
                EXIT_INVALID
            } else {
                EXIT_OK
            };
        }
    };
    configure_threads();
    let command = cli.command;
    let started = Instant::now();
    let inputs: Result<Vec<InputHash>> = command.inputs().into_iter().map(hash_file).collect();
    let result = inputs.and_then(|inputs| command.execute().map(|o| (inputs, o)));
    let elapsed = started.elapsed().as_secs_f64();

    let config = serde_json::to_value(&command).unwrap_or(Value::Null);
    let config = config.get(command.name()).cloned().unwrap_or(config);
    let (report, code) = match result {
        Ok((inputs, outcome)) => {
            for w in &outcome.warnings {
                eprintln!("warning: {w}");
            }
            let code = if outcome.degenerate {
                EXIT_DEGENERATE
            } else {
                EXIT_OK
            };
            let report = RunReport {
                subcommand: command.name().into(),
                status: if outcome.degenerate {
                    "degenerate"
                } else {
                    "ok"
                }
                .into(),
                error: None,
                config,
                inputs,
                outputs: outcome.outputs,
                warnings: outcome.warnings,
                timings: Timings {
                    total_seconds: elapsed,
                },
            };
            (report, code)
        }
        Err(err) => {
            eprintln!("error: {err}");
            let degenerate = err.is_degenerate();
            let report = RunReport {
                subcommand: command.name().into(),
                status: if degenerate { "degenerate" } else { "invalid" }.into(),
                error: Some(err.to_string()),
                config,
                inputs: command
                    .inputs()
                    .into_iter()
                    .filter_map(|p| hash_file(p).ok())
                    .collect(),
                outputs: Value::Null,
                warnings: Vec::new(),
                timings: Timings {
                    total_seconds: elapsed,
                },
            };
            (
                report,
                if degenerate {
                    EXIT_DEGENERATE
                } else {
                    EXIT_INVALID
                },
            )
        }
    };
    match command.report_path() {
        Some(path) => {
            if let Err(err) = write_report(&path, &report) {
                eprintln!("error: cannot write report {}: {err}", path.display());
                return EXIT_INVALID;
            }
        }
        None => match serde_json::to_string_pretty(&report) {
            Ok(text) => {
                // a closed pipe is not an error worth a panic
                let _ = writeln!(std::io::stdout(), "{text}");
            }
            Err(err) => eprintln!("error: {err}"),
        },
    }
    code
}
