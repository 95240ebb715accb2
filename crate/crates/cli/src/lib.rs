//! Commands behind the `groupsparse` binary.
//!
//! Every command returns `Ok` with the text it wants printed, or a
//! [`CliError`] whose [`CliError::exit_code`] is 2 for bad input and 1 when a
//! check fails.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use groupsparse::data::{load_csv, load_idx, synth_teacher_student, Dataset, Split};
use groupsparse::network::{load_checkpoint, save_checkpoint};
use groupsparse::pruner::{compact, report, Accuracies, SparsityReport};
use groupsparse::trainer::{evaluate, train, train_unregularized, TrainingConfig, TrainingLog};
use groupsparse::verify::{run_boundary_check, run_prox_check};
use groupsparse::{Error, Network, NetworkSpec, RegularizerConfig, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Overrides `output_dir` from the config file.
pub const OUTPUT_DIR_ENV: &str = "GROUPSPARSE_OUTPUT_DIR";

pub const PRUNE_CHECK_INPUTS: usize = 100;
pub const PRUNE_CHECK_TOL: f64 = 1e-10;
pub const PROX_CHECK_TOL: f64 = 1e-6;
pub const PROX_CHECK_OBJECTIVE_TOL: f64 = 1e-8;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Failed(_) => 1,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Severed { .. } | Error::Diverged { .. } => CliError::Failed(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Where the training data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    Synthetic {
        seed: u64,
        teacher_width: usize,
        input_dim: usize,
        classes: usize,
        train_samples: usize,
        validation_samples: usize,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        #[serde(default)]
        validation_images: Option<PathBuf>,
        #[serde(default)]
        validation_labels: Option<PathBuf>,
    },
    Csv {
        train: PathBuf,
        #[serde(default)]
        validation: Option<PathBuf>,
    },
}

/// λ for the first `prefix` regularized blocks and another for the rest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoTier {
    pub prefix: usize,
    pub lambda_first: f64,
    pub lambda_rest: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegularizerSection {
    /// 0 for group sparsity, in `(0, 1]` for the sparse group Lasso.
    #[serde(default)]
    pub alpha: f64,
    /// One λ per regularized block.
    #[serde(default)]
    pub lambdas: Option<Vec<f64>>,
    #[serde(default)]
    pub two_tier: Option<TwoTier>,
}

impl RegularizerSection {
    pub fn build(&self, net: &Network) -> CliResult<RegularizerConfig> {
        let field = |e: Error| usage(format!("regularizer: {e}"));
        match (&self.lambdas, &self.two_tier) {
            (Some(l), None) => RegularizerConfig::for_network(net, l.clone(), self.alpha).map_err(field),
            (None, Some(t)) => {
                RegularizerConfig::two_tier(net, t.prefix, t.lambda_first, t.lambda_rest, self.alpha).map_err(field)
            }
            _ => Err(usage("regularizer: give exactly one of `lambdas` or `two_tier`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub network: NetworkSpec,
    pub training: TrainingConfig,
    /// Absent means plain momentum SGD.
    #[serde(default)]
    pub regularizer: Option<RegularizerSection>,
    pub data: DataConfig,
    pub output_dir: PathBuf,
    /// Seeds the weight initialization.
    pub seed: u64,
    /// Also train a λ = 0 network from the same seed and report the accuracy gap.
    #[serde(default)]
    pub paired_baseline: bool,
}

impl ExperimentConfig {
    /// Parses a config file; relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| usage(format!("invalid config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut cfg.data {
            DataConfig::Synthetic { .. } => {}
            DataConfig::Idx { train_images, train_labels, validation_images, validation_labels } => {
                rebase(train_images);
                rebase(train_labels);
                validation_images.iter_mut().for_each(rebase);
                validation_labels.iter_mut().for_each(rebase);
            }
            DataConfig::Csv { train, validation } => {
                rebase(train);
                validation.iter_mut().for_each(rebase);
            }
        }
        match std::env::var_os(OUTPUT_DIR_ENV) {
            Some(dir) => cfg.output_dir = PathBuf::from(dir),
            None => rebase(&mut cfg.output_dir),
        }
        cfg.training.validate().map_err(|e| usage(format!("training: {e}")))?;
        cfg.network.layout().map_err(|e| usage(format!("network: {e}")))?;
        Ok(cfg)
    }
}

fn require_file(field: &str, path: &Path) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(usage(format!("data.{field}: no such file {}", path.display())))
    }
}

/// Training set and optional validation set.
pub fn load_data(cfg: &DataConfig) -> CliResult<(Dataset, Option<Dataset>)> {
    match cfg {
        DataConfig::Synthetic { seed, teacher_width, input_dim, classes, train_samples, validation_samples } => {
            let (all, _) =
                synth_teacher_student(*seed, *teacher_width, *input_dim, *classes, train_samples + validation_samples)
                    .map_err(|e| usage(format!("data: {e}")))?;
            if *validation_samples == 0 {
                return Ok((all, None));
            }
            let (train, validation) = all.split_off(*train_samples)?;
            Ok((train, Some(validation)))
        }
        DataConfig::Idx { train_images, train_labels, validation_images, validation_labels } => {
            require_file("train_images", train_images)?;
            require_file("train_labels", train_labels)?;
            let train = load_idx(train_images, train_labels, Split::Train)?;
            let validation = match (validation_images, validation_labels) {
                (Some(i), Some(l)) => {
                    require_file("validation_images", i)?;
                    require_file("validation_labels", l)?;
                    Some(load_idx(i, l, Split::Validation)?)
                }
                (None, None) => None,
                _ => return Err(usage("data: give both validation_images and validation_labels or neither")),
            };
            Ok((train, validation))
        }
        DataConfig::Csv { train, validation } => {
            require_file("train", train)?;
            let t = load_csv(train, Split::Train)?;
            let v = match validation {
                Some(p) => {
                    require_file("validation", p)?;
                    Some(load_csv(p, Split::Validation)?)
                }
                None => None,
            };
            Ok((t, v))
        }
    }
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> CliResult<()> {
    fs::write(path, bytes).map_err(|e| CliError::Failed(format!("cannot write {}: {e}", path.display())))
}

fn write_log(path: &Path, log: &TrainingLog) -> CliResult<()> {
    let mut buf = Vec::new();
    log.write_jsonl(&mut buf)?;
    write(path, buf)
}

fn write_report(dir: &Path, r: &SparsityReport) -> CliResult<String> {
    let text = r.to_string();
    let json = serde_json::to_string_pretty(r).map_err(|e| CliError::Failed(e.to_string()))?;
    write(&dir.join("report.json"), json + "\n")?;
    write(&dir.join("report.txt"), format!("{text}\n"))?;
    Ok(text)
}

/// Trains per the config and writes `checkpoint.bin`, `log.jsonl`,
/// `report.json` and `report.txt` into the output directory (plus
/// `baseline_checkpoint.bin` and `baseline_log.jsonl` in paired mode).
pub fn cmd_train(config_path: &Path) -> CliResult<String> {
    let cfg = ExperimentConfig::load(config_path)?;
    let net = Network::init(cfg.network.clone(), cfg.seed)?;
    let rcfg = cfg.regularizer.as_ref().map(|r| r.build(&net)).transpose()?;
    let (train_set, validation) = load_data(&cfg.data)?;
    fs::create_dir_all(&cfg.output_dir)
        .map_err(|e| usage(format!("output_dir {}: {e}", cfg.output_dir.display())))?;

    let mut out = String::new();
    let (trained, log) = match &rcfg {
        Some(r) => train(&net, &train_set, validation.as_ref(), &cfg.training, r)?,
        None => train_unregularized(&net, &train_set, validation.as_ref(), &cfg.training)?,
    };
    for rec in &log.epochs {
        let val = rec.validation_accuracy.map_or_else(String::new, |v| format!(" val {:.4}", v));
        let _ = writeln!(
            out,
            "epoch {:>3} lr {:.4} loss {:.6} reg {:.6} train {:.4}{val} zeroed {:?}",
            rec.epoch, rec.learning_rate, rec.loss, rec.regularizer, rec.train_accuracy, rec.zeroed_per_layer
        );
    }
    save_checkpoint(&trained, cfg.output_dir.join("checkpoint.bin"))?;
    write_log(&cfg.output_dir.join("log.jsonl"), &log)?;

    let eval_set = validation.as_ref().unwrap_or(&train_set);
    let accuracies = if cfg.paired_baseline {
        let (baseline, base_log) = train_unregularized(&net, &train_set, validation.as_ref(), &cfg.training)?;
        save_checkpoint(&baseline, cfg.output_dir.join("baseline_checkpoint.bin"))?;
        write_log(&cfg.output_dir.join("baseline_log.jsonl"), &base_log)?;
        Some(Accuracies {
            regularized: evaluate(&trained, eval_set)?,
            baseline: evaluate(&baseline, eval_set)?,
        })
    } else {
        None
    };

    let (small, _) = compact(&trained)?;
    let r = report(&trained, &small, accuracies)?;
    out.push_str(&write_report(&cfg.output_dir, &r)?);
    let _ = write!(out, "\nwrote {}", cfg.output_dir.display());
    Ok(out)
}

fn random_input(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
        .expect("shape has positive extents")
}

/// Compacts a checkpoint and checks the result against the original on
/// random inputs.
pub fn cmd_prune(input: &Path, output: &Path) -> CliResult<String> {
    let net = load_checkpoint(input)?;
    let (small, _) = compact(&net)?;
    let mut out = String::new();
    for (a, b) in net.layout().blocks.iter().zip(&small.layout().blocks) {
        let _ = writeln!(out, "layer {} {:<16} {:>5} -> {:<5}", a.layer, a.role.name(), a.neurons, b.neurons);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut worst: f64 = 0.0;
    for _ in 0..PRUNE_CHECK_INPUTS {
        let x = random_input(net.input_shape(), &mut rng);
        let (a, b) = (net.predict(&x)?, small.predict(&x)?);
        for (u, v) in a.data().iter().zip(b.data()) {
            worst = worst.max((u - v).abs());
        }
    }
    let passed = worst <= PRUNE_CHECK_TOL;
    let _ = write!(
        out,
        "params {} -> {}\nequivalence {} (max diff {worst:.3e} over {PRUNE_CHECK_INPUTS} inputs, tol {PRUNE_CHECK_TOL:.0e})",
        net.count_params().total,
        small.count_params().total,
        if passed { "PASS" } else { "FAIL" }
    );
    if !passed {
        return Err(CliError::Failed(out));
    }
    save_checkpoint(&small, output)?;
    Ok(out)
}

/// Accuracies passed to `report` as JSON.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Metrics {
    pub regularized_accuracy: f64,
    pub baseline_accuracy: f64,
}

/// Writes `report.json` and `report.txt` into `out_dir` (default: the
/// directory of `after`).
pub fn cmd_report(before: &Path, after: &Path, metrics: Option<&Path>, out_dir: Option<&Path>) -> CliResult<String> {
    let a = load_checkpoint(before)?;
    let b = load_checkpoint(after)?;
    let accuracies = match metrics {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| usage(format!("cannot read metrics {}: {e}", p.display())))?;
            let m: Metrics =
                serde_json::from_str(&text).map_err(|e| usage(format!("invalid metrics {}: {e}", p.display())))?;
            Some(Accuracies { regularized: m.regularized_accuracy, baseline: m.baseline_accuracy })
        }
        None => None,
    };
    let r = report(&a, &b, accuracies)?;
    let dir = out_dir.map(Path::to_path_buf).unwrap_or_else(|| after.parent().unwrap_or(Path::new(".")).to_path_buf());
    write_report(&dir, &r)
}

/// Brute-force check of the closed-form proximal map, plus the α = 0 kill
/// boundary sub-suite.
pub fn cmd_prox_check(trials: usize, seed: u64) -> CliResult<String> {
    if trials == 0 {
        return Err(usage("--trials must be >= 1"));
    }
    let s = run_prox_check(trials, seed)?;
    let b = run_boundary_check(trials, seed)?;
    let passed = s.passed(PROX_CHECK_TOL, PROX_CHECK_OBJECTIVE_TOL) && b.misclassified == 0;
    let out = format!(
        "{} instances: max param deviation {:.3e} (tol {PROX_CHECK_TOL:.0e}), max objective deviation {:.3e}, {} zeroed\n\
         alpha=0 boundary: {} instances, {} zeroed, {} misclassified\n{}",
        s.trials,
        s.max_param_deviation,
        s.max_objective_excess,
        s.kills,
        b.trials,
        b.zeroed,
        b.misclassified,
        if passed { "PASS" } else { "FAIL" }
    );
    if passed {
        Ok(out)
    } else {
        Err(CliError::Failed(out))
    }
}
