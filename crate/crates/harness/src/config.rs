//! Versioned TOML experiment configuration.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use legoqml_core::encoding::Squash;
use legoqml_core::noise::NoiseModel;
use legoqml_core::training::{LearningRate, OptimizerKind};
use legoqml_core::vqc::{Entangler, Measurement};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HarnessError, Result};

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_MOTIF: &str = "TGACTCA";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub run_name: String,
    /// Master seed; every stream in the run derives from it.
    #[serde(default)]
    pub seed: u64,
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub split: SplitSpec,
    pub block: BlockSpec,
    pub head: HeadSpec,
    pub train: TrainSpec,
    #[serde(default)]
    pub noise: Option<NoiseModel>,
    #[serde(default)]
    pub report: ReportSpec,
    /// Excluded from the config hash so the same run can land anywhere.
    #[serde(default, skip_serializing)]
    pub output_dir: Option<PathBuf>,
    /// Named alternatives for block and head sweeps.
    #[serde(default)]
    pub sweep: SweepSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetSpec {
    QuantumDot {
        n: usize,
        #[serde(default)]
        noise_level: f64,
        /// Fixed generator seed; derived from the master seed when absent.
        #[serde(default)]
        seed: Option<u64>,
    },
    Tfbs {
        n: usize,
        #[serde(default = "default_motif")]
        motif: String,
        /// Allow one random point mutation inside planted motifs.
        #[serde(default)]
        mutations: bool,
        #[serde(default)]
        seed: Option<u64>,
    },
    /// Dataset CSV. With `test_path` the split section is ignored.
    Csv {
        path: PathBuf,
        #[serde(default)]
        test_path: Option<PathBuf>,
    },
    /// `id,label` file for an embedding block.
    Labels { path: PathBuf },
}

fn default_motif() -> String {
    DEFAULT_MOTIF.to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_test_fraction() -> f64 {
    0.2
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { test_fraction: default_test_fraction(), seed: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BlockSpec {
    /// Fit on the training split only.
    Pca { dim: usize },
    Ttn {
        in_modes: Vec<usize>,
        out_modes: Vec<usize>,
        ranks: Vec<usize>,
        #[serde(default)]
        checkpoint: Option<PathBuf>,
        #[serde(default)]
        pretrain: Option<PretrainSpec>,
    },
    Embedding { path: PathBuf },
    Identity,
}

impl BlockSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Pca { .. } => "pca",
            Self::Ttn { .. } => "ttn",
            Self::Embedding { .. } => "embedding",
            Self::Identity => "identity",
        }
    }

    /// Output width when it is known without touching data.
    pub fn output_dim(&self) -> Option<usize> {
        match self {
            Self::Pca { dim } => Some(*dim),
            Self::Ttn { out_modes, .. } => Some(out_modes.iter().product()),
            Self::Embedding { .. } | Self::Identity => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainSpec {
    /// Source task; must differ from the downstream dataset.
    pub source: DatasetSpec,
    #[serde(default = "default_pretrain_epochs")]
    pub epochs: usize,
    #[serde(default = "default_pretrain_lr")]
    pub lr: f64,
    #[serde(default = "default_pretrain_batch")]
    pub batch_size: usize,
}

fn default_pretrain_epochs() -> usize {
    100
}
fn default_pretrain_lr() -> f64 {
    0.01
}
fn default_pretrain_batch() -> usize {
    32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum HeadSpec {
    Vqc {
        /// Must match the block output width when given.
        #[serde(default)]
        qubits: Option<usize>,
        depth: usize,
        #[serde(default)]
        entangler: Entangler,
        /// Defaults to the number of classes.
        #[serde(default)]
        measure_qubits: Option<usize>,
    },
    Fc,
}

impl HeadSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Vqc { .. } => "vqc",
            Self::Fc => "fc",
        }
    }

    /// `3·U·D` for the VQC, `C·(U+1)` for the FC head.
    pub fn param_count(&self, u: usize, classes: usize) -> usize {
        match self {
            Self::Vqc { depth, .. } => 3 * u * depth,
            Self::Fc => classes * (u + 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSpec {
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub optimizer: OptimizerKind,
    #[serde(default)]
    pub lr: LearningRate,
    #[serde(default)]
    pub measurement: Measurement,
    #[serde(default = "default_classes")]
    pub num_classes: usize,
    #[serde(default)]
    pub squash: Squash,
    #[serde(default)]
    pub record_wallclock: bool,
}

fn default_classes() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportSpec {
    /// Write `bounds.json` with estimated constants and bounds.
    #[serde(default)]
    pub bounds: bool,
    /// Training samples used for the L and β estimates.
    #[serde(default = "default_probe_samples")]
    pub probe_samples: usize,
    #[serde(default)]
    pub rademacher: bool,
}

fn default_probe_samples() -> usize {
    16
}

impl Default for ReportSpec {
    fn default() -> Self {
        Self { bounds: false, probe_samples: default_probe_samples(), rademacher: false }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default)]
    pub blocks: BTreeMap<String, BlockSpec>,
    #[serde(default)]
    pub heads: BTreeMap<String, HeadSpec>,
}

fn cfg_err(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(msg.into())
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| cfg_err(e.message().to_string() + &span_hint(text, e.span())))
    }

    /// Loads, resolves relative paths against the config's directory and
    /// validates.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text).map_err(|e| match e {
            HarnessError::Config(m) => cfg_err(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                let joined = base.join(&*p);
                *p = std::path::absolute(&joined).unwrap_or(joined);
            }
        };
        let fix_data = |d: &mut DatasetSpec| match d {
            DatasetSpec::Csv { path, test_path } => {
                fix(path);
                if let Some(t) = test_path {
                    fix(t);
                }
            }
            DatasetSpec::Labels { path } => fix(path),
            _ => {}
        };
        let fix_block = |b: &mut BlockSpec| match b {
            BlockSpec::Ttn { checkpoint, pretrain, .. } => {
                if let Some(c) = checkpoint {
                    fix(c);
                }
                if let Some(p) = pretrain {
                    fix_data(&mut p.source);
                }
            }
            BlockSpec::Embedding { path } => fix(path),
            _ => {}
        };
        fix_data(&mut self.dataset);
        fix_block(&mut self.block);
        for b in self.sweep.blocks.values_mut() {
            fix_block(b);
        }
        if let Some(o) = &mut self.output_dir {
            fix(o);
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(cfg_err(format!(
                "schema_version: unsupported version {}, this build reads {SCHEMA_VERSION}",
                self.schema_version
            )));
        }
        if self.run_name.trim().is_empty() {
            return Err(cfg_err("run_name: must not be empty"));
        }
        validate_dataset("dataset", &self.dataset)?;
        if !(self.split.test_fraction > 0.0 && self.split.test_fraction < 1.0) {
            return Err(cfg_err(format!("split.test_fraction: {} not in (0, 1)", self.split.test_fraction)));
        }
        validate_block("block", &self.block, &self.dataset)?;
        for (name, b) in &self.sweep.blocks {
            validate_block(&format!("sweep.blocks.{name}"), b, &self.dataset)?;
        }
        validate_head("head", &self.head, &self.block, self.train.num_classes)?;
        for (name, h) in &self.sweep.heads {
            validate_head(&format!("sweep.heads.{name}"), h, &self.block, self.train.num_classes)?;
        }
        let t = &self.train;
        if t.epochs == 0 {
            return Err(cfg_err("train.epochs: must be at least 1"));
        }
        if t.batch_size == 0 {
            return Err(cfg_err("train.batch_size: must be at least 1"));
        }
        if t.num_classes < 2 {
            return Err(cfg_err(format!("train.num_classes: need at least 2, got {}", t.num_classes)));
        }
        if let Measurement::Shots { shots: 0 } = t.measurement {
            return Err(cfg_err("train.measurement.shots: must be at least 1"));
        }
        if let LearningRate::Fixed { value } = t.lr {
            if !(value > 0.0 && value.is_finite()) {
                return Err(cfg_err(format!("train.lr.value: must be positive, got {value}")));
            }
        }
        if let Some(n) = &self.noise {
            n.validate().map_err(|e| cfg_err(format!("noise: {e}")))?;
        }
        if self.report.bounds && self.report.probe_samples == 0 {
            return Err(cfg_err("report.probe_samples: must be at least 1"));
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON form; output location excluded.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&canonical))
    }
}

fn span_hint(text: &str, span: Option<std::ops::Range<usize>>) -> String {
    match span {
        Some(s) => {
            let line = text[..s.start.min(text.len())].matches('\n').count() + 1;
            format!(" (line {line})")
        }
        None => String::new(),
    }
}

fn require_file(field: &str, p: &Path) -> Result<()> {
    if p.is_file() {
        Ok(())
    } else {
        Err(cfg_err(format!("{field}: file {} does not exist", p.display())))
    }
}

fn validate_dataset(field: &str, d: &DatasetSpec) -> Result<()> {
    match d {
        DatasetSpec::QuantumDot { n, noise_level, .. } => {
            if *n < 2 {
                return Err(cfg_err(format!("{field}.n: need at least 2 samples, got {n}")));
            }
            if !(0.0..=1.0).contains(noise_level) {
                return Err(cfg_err(format!("{field}.noise_level: {noise_level} not in [0, 1]")));
            }
        }
        DatasetSpec::Tfbs { n, motif, .. } => {
            if *n < 2 {
                return Err(cfg_err(format!("{field}.n: need at least 2 samples, got {n}")));
            }
            if motif.is_empty() || motif.len() >= crate::generators::TFBS_LENGTH || !motif.bytes().all(|b| b"ACGT".contains(&b)) {
                return Err(cfg_err(format!("{field}.motif: {motif:?} must be 1..100 bases over A, C, G, T")));
            }
        }
        DatasetSpec::Csv { path, test_path } => {
            require_file(&format!("{field}.path"), path)?;
            if let Some(t) = test_path {
                require_file(&format!("{field}.test_path"), t)?;
            }
        }
        DatasetSpec::Labels { path } => require_file(&format!("{field}.path"), path)?,
    }
    Ok(())
}

fn validate_block(field: &str, b: &BlockSpec, data: &DatasetSpec) -> Result<()> {
    match b {
        BlockSpec::Pca { dim } => {
            if *dim == 0 {
                return Err(cfg_err(format!("{field}.dim: must be at least 1")));
            }
        }
        BlockSpec::Ttn { in_modes, out_modes, ranks, checkpoint, pretrain } => {
            let n = in_modes.len();
            if n == 0 || out_modes.len() != n || ranks.len() != n + 1 {
                return Err(cfg_err(format!(
                    "{field}: in_modes and out_modes need equal nonzero length N and ranks length N+1, got {}, {}, {}",
                    n,
                    out_modes.len(),
                    ranks.len()
                )));
            }
            if checkpoint.is_some() && pretrain.is_some() {
                return Err(cfg_err(format!("{field}: give either checkpoint or pretrain, not both")));
            }
            if let Some(c) = checkpoint {
                require_file(&format!("{field}.checkpoint"), c)?;
            }
            if let Some(p) = pretrain {
                validate_dataset(&format!("{field}.pretrain.source"), &p.source)?;
                if &p.source == data {
                    return Err(cfg_err(format!("{field}.pretrain.source: must differ from the downstream dataset")));
                }
                if p.epochs == 0 || p.batch_size == 0 || p.lr <= 0.0 || !p.lr.is_finite() {
                    return Err(cfg_err(format!("{field}.pretrain: epochs, batch_size and lr must be positive")));
                }
            }
        }
        BlockSpec::Embedding { path } => {
            require_file(&format!("{field}.path"), path)?;
            if !matches!(data, DatasetSpec::Labels { .. }) {
                return Err(cfg_err(format!("{field}: embedding blocks need a labels dataset")));
            }
        }
        BlockSpec::Identity => {}
    }
    Ok(())
}

fn validate_head(field: &str, h: &HeadSpec, block: &BlockSpec, classes: usize) -> Result<()> {
    if let HeadSpec::Vqc { qubits, depth, measure_qubits, .. } = h {
        if *depth == 0 {
            return Err(cfg_err(format!("{field}.depth: must be at least 1")));
        }
        if let (Some(q), Some(u)) = (qubits, block.output_dim()) {
            if *q != u {
                return Err(cfg_err(format!("{field}.qubits: {q} does not match block output width {u}")));
            }
        }
        if let Some(m) = measure_qubits {
            if *m < classes {
                return Err(cfg_err(format!("{field}.measure_qubits: {m} is fewer than the {classes} classes")));
            }
        }
    }
    Ok(())
}
