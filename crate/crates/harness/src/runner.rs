//! Single-run pipeline: data, frozen block, head, training, artifacts.

use std::fs;
use std::path::{Path, PathBuf};

use legoqml_core::encoding::NormalizerSpec;
use legoqml_core::features::{fit_pca, pretrain_ttn, EmbeddingBlock, FcHead, FeatureBlock, PretrainConfig, PretrainReport, TtnBlock};
use legoqml_core::rng::{derive_seed, stream};
use legoqml_core::theory::{estimate_beta, estimate_l, observed_gap, rademacher_estimate, track_r, BoundReport, HeadClass, Objective, RADEMACHER_MAX_DIM, RADEMACHER_MAX_SAMPLES};
use legoqml_core::training::{evaluate, train, Head, MetricsRow, Model, TrainConfig};
use legoqml_core::vqc::{AnsatzSpec, EvalMode, Evaluator, ParamVector};
use legoqml_core::{Dataset, Error as CoreError};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::config::{BlockSpec, DatasetSpec, ExperimentConfig, HeadSpec};
use crate::error::{HarnessError, Result};
use crate::generators::{dots_to_dataset, gen_quantum_dot, gen_tfbs, tfbs_to_dataset};
use crate::io::{self, Provenance};

const TAG_DATA: u64 = 0xd0;
const TAG_SPLIT: u64 = 0xd1;
const TAG_SOURCE: u64 = 0xd2;
const TAG_BLOCK: u64 = 0xb0;
const TAG_HEAD: u64 = 0xe0;
const TAG_TRAIN: u64 = 0xf0;
const TAG_REPORT: u64 = 0xf1;

pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const BOUNDS_FILE: &str = "bounds.json";
pub const CONFIG_FILE: &str = "config.toml";

/// Train and test sets plus the seeds that produced them.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: Dataset,
    pub test: Dataset,
    pub data_seed: Option<u64>,
    pub split_seed: Option<u64>,
}

fn generate(spec: &DatasetSpec, default_seed: u64) -> Result<(Dataset, Option<u64>)> {
    Ok(match spec {
        DatasetSpec::QuantumDot { n, noise_level, seed } => {
            let s = seed.unwrap_or(default_seed);
            (dots_to_dataset(&gen_quantum_dot(*n, *noise_level, s)?)?, Some(s))
        }
        DatasetSpec::Tfbs { n, motif, mutations, seed } => {
            let s = seed.unwrap_or(default_seed);
            (tfbs_to_dataset(&gen_tfbs(*n, motif, usize::from(*mutations), s)?)?, Some(s))
        }
        DatasetSpec::Csv { path, .. } => (io::read_dataset_csv(path)?, None),
        DatasetSpec::Labels { path } => (io::read_labels_csv(path)?, None),
    })
}

/// Stratified split: each class contributes `round(fraction · count)` test
/// samples, at least one when the class has two or more.
pub fn stratified_split(data: &Dataset, test_fraction: f64, seed: u64) -> (Dataset, Dataset) {
    let mut test_idx = Vec::new();
    let mut train_idx = Vec::new();
    for c in 0..data.num_classes() {
        let mut idx: Vec<usize> = (0..data.len()).filter(|&i| data.labels[i] == c).collect();
        idx.shuffle(&mut stream(seed, &[c as u64]));
        let mut k = (test_fraction * idx.len() as f64).round() as usize;
        if idx.len() >= 2 {
            k = k.clamp(1, idx.len() - 1);
        }
        test_idx.extend_from_slice(&idx[..k]);
        train_idx.extend_from_slice(&idx[k..]);
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    (data.subset(&train_idx), data.subset(&test_idx))
}

pub fn prepare_data(cfg: &ExperimentConfig) -> Result<PreparedData> {
    let (data, data_seed) = generate(&cfg.dataset, derive_seed(cfg.seed, &[TAG_DATA]))?;
    if let DatasetSpec::Csv { test_path: Some(t), .. } = &cfg.dataset {
        let test = io::read_dataset_csv(t)?;
        return Ok(PreparedData { train: data, test, data_seed, split_seed: None });
    }
    let split_seed = cfg.split.seed.unwrap_or_else(|| derive_seed(cfg.seed, &[TAG_SPLIT]));
    let (train, test) = stratified_split(&data, cfg.split.test_fraction, split_seed);
    if train.is_empty() || test.is_empty() {
        return Err(HarnessError::Config(format!("split.test_fraction: leaves an empty split for {} samples", data.len())));
    }
    Ok(PreparedData { train, test, data_seed, split_seed: Some(split_seed) })
}

/// Width of the data a block will see, without loading anything large.
pub fn block_output_dim(block: &BlockSpec, data: &DatasetSpec) -> Result<usize> {
    if let Some(u) = block.output_dim() {
        return Ok(u);
    }
    match block {
        BlockSpec::Embedding { path } => {
            let e = EmbeddingBlock::read(fs::File::open(path).map_err(|e| HarnessError::io(path, e))?, "")?;
            Ok(e.output_dim())
        }
        _ => Ok(match data {
            DatasetSpec::QuantumDot { .. } => crate::generators::DOT_SIDE * crate::generators::DOT_SIDE,
            DatasetSpec::Tfbs { .. } => 4 * crate::generators::TFBS_LENGTH,
            DatasetSpec::Csv { path, .. } => io::read_dataset_csv(path)?.input_dim(),
            DatasetSpec::Labels { .. } => {
                return Err(HarnessError::Config("block: identity block cannot read a labels-only dataset".into()))
            }
        }),
    }
}

/// Builds and freezes the block. Fitting only ever sees the training split.
pub fn build_block(cfg: &ExperimentConfig, train: &Dataset) -> Result<(FeatureBlock, Option<PretrainReport>)> {
    let block_seed = derive_seed(cfg.seed, &[TAG_BLOCK]);
    Ok(match &cfg.block {
        BlockSpec::Pca { dim } => {
            if *dim > train.input_dim() {
                return Err(HarnessError::Config(format!(
                    "block.dim: {dim} exceeds the input width {}",
                    train.input_dim()
                )));
            }
            (FeatureBlock::Pca(fit_pca(&train.features, *dim)?), None)
        }
        BlockSpec::Ttn { in_modes, out_modes, ranks, checkpoint, pretrain } => {
            let init = TtnBlock::random(in_modes.clone(), out_modes.clone(), ranks.clone(), block_seed)
                .map_err(|e| HarnessError::Config(format!("block: {e}")))?;
            if init.input_dim() != train.input_dim() {
                return Err(HarnessError::Config(format!(
                    "block.in_modes: product {} does not match the input width {}",
                    init.input_dim(),
                    train.input_dim()
                )));
            }
            let (mut b, report) = if let Some(path) = checkpoint {
                let f = fs::File::open(path).map_err(|e| HarnessError::io(path, e))?;
                let b = TtnBlock::read_checkpoint(std::io::BufReader::new(f))?;
                if b.in_modes() != in_modes.as_slice() || b.out_modes() != out_modes.as_slice() || b.ranks() != ranks.as_slice() {
                    return Err(HarnessError::Config(format!(
                        "block.checkpoint: {} has shapes {:?}/{:?}/{:?}, config says {in_modes:?}/{out_modes:?}/{ranks:?}",
                        path.display(),
                        b.in_modes(),
                        b.out_modes(),
                        b.ranks()
                    )));
                }
                (b, None)
            } else if let Some(p) = pretrain {
                let (source, _) = generate(&p.source, derive_seed(cfg.seed, &[TAG_SOURCE]))?;
                let pc = PretrainConfig { epochs: p.epochs, lr: p.lr, batch_size: p.batch_size, seed: block_seed };
                let (b, r) = pretrain_ttn(&init, &source, &pc)?;
                (b, Some(r))
            } else {
                (init, None)
            };
            b.freeze();
            (FeatureBlock::Ttn(b), report)
        }
        BlockSpec::Embedding { path } => {
            let f = fs::File::open(path).map_err(|e| HarnessError::io(path, e))?;
            let tag = path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            (FeatureBlock::Embedding(EmbeddingBlock::read(std::io::BufReader::new(f), tag)?), None)
        }
        BlockSpec::Identity => (FeatureBlock::Identity { dim: train.input_dim() }, None),
    })
}

pub fn build_head(spec: &HeadSpec, u: usize, classes: usize, seed: u64) -> Result<Head> {
    let head_seed = derive_seed(seed, &[TAG_HEAD]);
    Ok(match spec {
        HeadSpec::Vqc { depth, entangler, measure_qubits, .. } => {
            let ansatz = AnsatzSpec::new(u, *depth, *entangler, measure_qubits.unwrap_or(classes))
                .map_err(|e| HarnessError::Config(format!("head: {e}")))?;
            let theta = ParamVector::random(&ansatz, head_seed);
            Head::Vqc { ansatz, theta }
        }
        HeadSpec::Fc => Head::Fc { fc: FcHead::random(classes, u, head_seed) },
    })
}

pub fn train_config(cfg: &ExperimentConfig) -> TrainConfig {
    let t = &cfg.train;
    TrainConfig {
        epochs: t.epochs,
        batch_size: t.batch_size,
        optimizer: t.optimizer,
        lr: t.lr,
        eval_mode: EvalMode { measurement: t.measurement, noise: cfg.noise.clone() },
        seed: derive_seed(cfg.seed, &[TAG_TRAIN]),
        num_classes: t.num_classes,
        record_wallclock: t.record_wallclock,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config_hash: String,
    pub seed: u64,
    pub block_checksum: String,
    pub num_classes: usize,
    pub eval_mode: EvalMode,
    pub model: Model,
}

impl Checkpoint {
    /// Fails with an invariant violation when the stored block no longer
    /// matches its recorded checksum.
    pub fn verify(&self) -> Result<()> {
        let actual = self.model.block.checksum();
        if actual != self.block_checksum {
            return Err(CoreError::InvariantViolation(format!(
                "checkpoint block checksum {} does not match recorded {}",
                actual, self.block_checksum
            ))
            .into());
        }
        self.model.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub seed: u64,
    pub run_name: String,
    pub data_seed: Option<u64>,
    pub split_seed: Option<u64>,
    pub train_size: usize,
    pub test_size: usize,
    pub block: String,
    pub block_checksum_before: String,
    pub block_checksum_after: String,
    pub head: String,
    pub param_count: usize,
    pub total_steps: usize,
    pub lr: f64,
    pub source_probe_accuracy: Option<f64>,
    pub final_metrics: MetricsRow,
    pub files: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundsFile {
    pub config_hash: String,
    pub seed: u64,
    #[serde(flatten)]
    pub report: BoundReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub manifest: Manifest,
    pub metrics: Vec<MetricsRow>,
}

impl RunSummary {
    pub fn final_metrics(&self) -> &MetricsRow {
        &self.manifest.final_metrics
    }
}

fn bound_report(
    cfg: &ExperimentConfig,
    model: &Model,
    train_set: &Dataset,
    metrics: &[MetricsRow],
    total_steps: usize,
    lr: f64,
    probe: Option<f64>,
) -> Result<BoundReport> {
    let phi = model.phi(train_set)?;
    let classes = cfg.train.num_classes;
    let n = cfg.report.probe_samples.min(phi.len());
    // Constants are properties of the loss landscape, so they are measured
    // with exact expectations regardless of the training mode.
    let ev = Evaluator::new(EvalMode::analytic());
    let objective = Objective::Loss { classes };
    let l = estimate_l(&model.head, &ev, &phi, &train_set.labels, objective, n)?;
    let beta = estimate_beta(&model.head, &ev, &phi, &train_set.labels, objective, n)?;
    let r = track_r(metrics);
    let tau = cfg.noise.as_ref().map_or(0.0, |m| m.tau_meas);
    let mut report = BoundReport::from_constants(l, beta.beta, r, tau, total_steps, lr)?;
    report.beta_converged = beta.converged;
    let losses: Vec<f64> = metrics.iter().map(|m| m.train_loss).collect();
    report.observed_gap = observed_gap(&losses);
    let last = metrics.last().expect("at least one metrics row");
    report.generalization_gap_proxy = Some(last.train_acc - last.test_acc);
    report.source_probe_accuracy_proxy = probe;
    if cfg.report.rademacher {
        let k = phi.len().min(RADEMACHER_MAX_SAMPLES);
        let u = model.block.output_dim();
        if u > RADEMACHER_MAX_DIM {
            return Err(HarnessError::Config(format!(
                "report.rademacher: needs U <= {RADEMACHER_MAX_DIM}, block emits {u}"
            )));
        }
        let class = match &model.head {
            Head::Vqc { ansatz, .. } => HeadClass::Vqc { ansatz: ansatz.clone() },
            Head::Fc { .. } => HeadClass::Fc { weight_cap: 1.0 },
        };
        let est = rademacher_estimate(&class, &phi[..k], 20, 30, derive_seed(cfg.seed, &[TAG_REPORT]))?;
        report.rademacher_hat = Some(est.value);
        report.rademacher_std_error = Some(est.std_error);
    }
    Ok(report)
}

/// Full pipeline into `out_dir`. Artifacts are written only after training
/// succeeds.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunSummary> {
    cfg.validate()?;
    let hash = cfg.hash();
    let prov = Provenance::new(hash.clone(), cfg.seed);
    let data = prepare_data(cfg)?;
    let classes = cfg.train.num_classes;
    for (name, d) in [("training", &data.train), ("test", &data.test)] {
        if let Some(&l) = d.labels.iter().find(|&&l| l >= classes) {
            return Err(HarnessError::Config(format!("train.num_classes: {name} label {l} needs more than {classes} classes")));
        }
    }
    let (block, pretrain) = build_block(cfg, &data.train)?;
    let checksum_before = block.checksum();
    let z_train = block.forward_dataset(&data.train)?;
    let normalizer = NormalizerSpec::fit(&z_train, cfg.train.squash)?;
    let u = block.output_dim();
    let head = build_head(&cfg.head, u, classes, cfg.seed)?;
    let model = Model { block, normalizer, head };
    let tcfg = train_config(cfg);
    let outcome = train(&model, &data.train, &data.test, &tcfg)?;
    let checksum_after = outcome.model.block.checksum();
    if checksum_after != checksum_before || outcome.block_checksum != checksum_before {
        return Err(CoreError::InvariantViolation(format!(
            "frozen block checksum changed from {checksum_before} to {checksum_after}"
        ))
        .into());
    }

    fs::create_dir_all(out_dir).map_err(|e| HarnessError::io(out_dir, e))?;
    let mut files = vec![CONFIG_FILE.to_string(), METRICS_FILE.to_string(), CHECKPOINT_FILE.to_string()];
    let toml_text = format!(
        "# config_hash={} seed={}\n{}",
        hash,
        cfg.seed,
        toml::to_string(cfg).map_err(|e| HarnessError::Config(format!("cannot serialize config: {e}")))?
    );
    let cfg_path = out_dir.join(CONFIG_FILE);
    fs::write(&cfg_path, toml_text).map_err(|e| HarnessError::io(&cfg_path, e))?;
    io::write_metrics_csv(&out_dir.join(METRICS_FILE), &outcome.metrics, &prov)?;
    let ckpt = Checkpoint {
        config_hash: hash.clone(),
        seed: cfg.seed,
        block_checksum: checksum_after.clone(),
        num_classes: classes,
        eval_mode: tcfg.eval_mode.clone(),
        model: outcome.model.clone(),
    };
    io::write_json(&out_dir.join(CHECKPOINT_FILE), &ckpt)?;
    let probe = pretrain.as_ref().map(|r| r.probe_train_accuracy);
    if cfg.report.bounds {
        let report = bound_report(cfg, &outcome.model, &data.train, &outcome.metrics, outcome.total_steps, outcome.lr, probe)?;
        io::write_json(&out_dir.join(BOUNDS_FILE), &BoundsFile { config_hash: hash.clone(), seed: cfg.seed, report })?;
        files.push(BOUNDS_FILE.to_string());
    }
    files.push(MANIFEST_FILE.to_string());
    let manifest = Manifest {
        config_hash: hash,
        seed: cfg.seed,
        run_name: cfg.run_name.clone(),
        data_seed: data.data_seed,
        split_seed: data.split_seed,
        train_size: data.train.len(),
        test_size: data.test.len(),
        block: outcome.model.block.name().to_string(),
        block_checksum_before: checksum_before,
        block_checksum_after: checksum_after,
        head: cfg.head.kind().to_string(),
        param_count: outcome.model.head.num_params(),
        total_steps: outcome.total_steps,
        lr: outcome.lr,
        source_probe_accuracy: probe,
        final_metrics: outcome.metrics.last().expect("epoch 0 row").clone(),
        files,
    };
    io::write_json(&out_dir.join(MANIFEST_FILE), &manifest)?;
    Ok(RunSummary { out_dir: out_dir.to_path_buf(), manifest, metrics: outcome.metrics })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub config_hash: String,
    pub seed: u64,
    pub samples: usize,
    pub loss: f64,
    pub accuracy: f64,
}

/// Re-evaluates a checkpoint. The block checksum is verified first.
pub fn evaluate_checkpoint(ckpt: &Checkpoint, data: &Dataset) -> Result<EvalReport> {
    ckpt.verify()?;
    let (loss, accuracy) = evaluate(&ckpt.model, data, &ckpt.eval_mode, ckpt.num_classes, derive_seed(ckpt.seed, &[TAG_REPORT]))?;
    Ok(EvalReport { config_hash: ckpt.config_hash.clone(), seed: ckpt.seed, samples: data.len(), loss, accuracy })
}
