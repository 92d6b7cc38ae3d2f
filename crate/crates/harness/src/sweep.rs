//! Grid sweeps over one or more axes and a list of seeds.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{BlockSpec, DatasetSpec, ExperimentConfig, HeadSpec};
use crate::error::{HarnessError, Result};
use crate::io::{self, Provenance};
use crate::runner::{block_output_dim, run_experiment};

pub const SWEEP_FILE: &str = "sweep.csv";
pub const SWEEP_HEADER: [&str; 9] =
    ["axis", "axis_value", "seed", "final_test_acc", "final_test_loss", "config_hash", "param_count", "block", "head"];
/// Largest tolerated `|P_fc − P_vqc| / P_vqc` in a head swap.
pub const BUDGET_TOLERANCE: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Axis {
    /// PCA width and VQC register size together.
    Qubits,
    /// Single-qubit depolarizing probability.
    Noise,
    /// Generator noise level of the quantum-dot dataset.
    DataNoise,
    Block,
    Head,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Self::Qubits => "qubits",
            Self::Noise => "noise",
            Self::DataNoise => "data-noise",
            Self::Block => "block",
            Self::Head => "head",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AxisSpec {
    pub axis: Axis,
    pub values: Vec<String>,
}

impl std::str::FromStr for AxisSpec {
    type Err = HarnessError;

    /// `name=v1,v2,...`
    fn from_str(s: &str) -> Result<Self> {
        let (name, vals) = s.split_once('=').ok_or_else(|| HarnessError::Config(format!("axis {s:?}: expected name=v1,v2")))?;
        let axis = match name.trim() {
            "qubits" => Axis::Qubits,
            "noise" => Axis::Noise,
            "data-noise" => Axis::DataNoise,
            "block" => Axis::Block,
            "head" => Axis::Head,
            other => {
                return Err(HarnessError::Config(format!(
                    "axis {other:?}: expected one of qubits, noise, data-noise, block, head"
                )))
            }
        };
        let values: Vec<String> = vals.split(',').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect();
        if values.is_empty() {
            return Err(HarnessError::Config(format!("axis {name}: no values")));
        }
        Ok(Self { axis, values })
    }
}

#[derive(Debug, Clone)]
pub struct SweepOptions {
    pub axes: Vec<AxisSpec>,
    pub seeds: Vec<u64>,
    pub jobs: usize,
    pub allow_budget_mismatch: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: String,
    pub axis_value: String,
    pub seed: u64,
    pub final_test_acc: f64,
    pub final_test_loss: f64,
    pub config_hash: String,
    pub param_count: usize,
    pub block: String,
    pub head: String,
}

impl SweepRow {
    fn record(&self) -> Vec<String> {
        vec![
            self.axis.clone(),
            self.axis_value.clone(),
            self.seed.to_string(),
            self.final_test_acc.to_string(),
            self.final_test_loss.to_string(),
            self.config_hash.clone(),
            self.param_count.to_string(),
            self.block.clone(),
            self.head.clone(),
        ]
    }
}

#[derive(Debug, Clone)]
pub struct SweepCell {
    pub values: Vec<String>,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub dir: PathBuf,
}

fn parse_num<T: std::str::FromStr>(axis: Axis, v: &str) -> Result<T> {
    v.parse().map_err(|_| HarnessError::Config(format!("axis {}: value {v:?} is not a number", axis.name())))
}

/// Applies one axis value to a copy of the base config.
pub fn apply_axis(cfg: &mut ExperimentConfig, base: &ExperimentConfig, axis: Axis, value: &str) -> Result<()> {
    match axis {
        Axis::Qubits => {
            let u: usize = parse_num(axis, value)?;
            match &mut cfg.block {
                BlockSpec::Pca { dim } => *dim = u,
                other => {
                    return Err(HarnessError::Config(format!(
                        "axis qubits: needs a pca block, config has {}",
                        other.kind()
                    )))
                }
            }
            if let HeadSpec::Vqc { qubits, .. } = &mut cfg.head {
                if qubits.is_some() {
                    *qubits = Some(u);
                }
            }
        }
        Axis::Noise => {
            let p: f64 = parse_num(axis, value)?;
            cfg.noise.get_or_insert_with(Default::default).p_depol_1q = p;
        }
        Axis::DataNoise => {
            let level: f64 = parse_num(axis, value)?;
            match &mut cfg.dataset {
                DatasetSpec::QuantumDot { noise_level, .. } => *noise_level = level,
                _ => return Err(HarnessError::Config("axis data-noise: needs a quantum-dot dataset".into())),
            }
        }
        Axis::Block => {
            cfg.block = match base.sweep.blocks.get(value) {
                Some(b) => b.clone(),
                None if base.block.kind() == value => base.block.clone(),
                None => {
                    return Err(HarnessError::Config(format!(
                        "axis block: no [sweep.blocks.{value}] table and the base block is {}",
                        base.block.kind()
                    )))
                }
            };
        }
        Axis::Head => {
            cfg.head = match base.sweep.heads.get(value) {
                Some(h) => h.clone(),
                None if base.head.kind() == value => base.head.clone(),
                None if value == "fc" => HeadSpec::Fc,
                None => {
                    return Err(HarnessError::Config(format!(
                        "axis head: no [sweep.heads.{value}] table and the base head is {}",
                        base.head.kind()
                    )))
                }
            };
        }
    }
    Ok(())
}

fn sanitize(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' }).collect()
}

/// Expands the grid in axis-major, seed-minor order.
pub fn plan(base: &ExperimentConfig, opts: &SweepOptions, out: &Path) -> Result<Vec<SweepCell>> {
    if opts.seeds.is_empty() {
        return Err(HarnessError::Config("sweep: need at least one seed".into()));
    }
    let mut combos: Vec<Vec<String>> = vec![Vec::new()];
    for a in &opts.axes {
        combos = combos
            .into_iter()
            .flat_map(|c| {
                a.values.iter().map(move |v| {
                    let mut c = c.clone();
                    c.push(v.clone());
                    c
                })
            })
            .collect();
    }
    let mut cells = Vec::new();
    for values in combos {
        for &seed in &opts.seeds {
            let mut cfg = base.clone();
            cfg.sweep = Default::default();
            for (a, v) in opts.axes.iter().zip(&values) {
                apply_axis(&mut cfg, base, a.axis, v)?;
            }
            cfg.seed = seed;
            cfg.run_name = format!("{}-{}-s{seed}", base.run_name, values.join("-"));
            cfg.validate()?;
            let name = values.iter().map(|v| sanitize(v)).collect::<Vec<_>>().join("_");
            let dir = out.join("runs").join(if name.is_empty() { format!("seed{seed}") } else { format!("{name}_seed{seed}") });
            cells.push(SweepCell { values: values.clone(), seed, config: cfg, dir });
        }
    }
    Ok(cells)
}

/// Every FC cell is compared with the VQC cells that differ from it only
/// in the head.
pub fn budget_check(cells: &[SweepCell]) -> Result<()> {
    for fc in cells.iter().filter(|c| matches!(c.config.head, HeadSpec::Fc)) {
        for vqc in cells.iter().filter(|c| matches!(c.config.head, HeadSpec::Vqc { .. })) {
            let same_block = vqc.config.block == fc.config.block && vqc.config.dataset == fc.config.dataset && vqc.seed == fc.seed;
            if !same_block {
                continue;
            }
            let u = block_output_dim(&fc.config.block, &fc.config.dataset)?;
            let classes = fc.config.train.num_classes;
            let pf = fc.config.head.param_count(u, classes) as f64;
            let pv = vqc.config.head.param_count(u, classes) as f64;
            let rel = (pf - pv).abs() / pv;
            if rel > BUDGET_TOLERANCE {
                return Err(HarnessError::BudgetMismatch(format!(
                    "fc has {pf} parameters, vqc has {pv} (relative difference {rel:.3} > {BUDGET_TOLERANCE}) for block {}",
                    fc.config.block.kind()
                )));
            }
        }
    }
    Ok(())
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| HarnessError::Config(format!("--jobs: cannot start worker pool: {e}")))
}

/// Runs every cell and writes `sweep.csv` under `out`.
pub fn run_sweep(base: &ExperimentConfig, opts: &SweepOptions, out: &Path) -> Result<Vec<SweepRow>> {
    base.validate()?;
    let cells = plan(base, opts, out)?;
    if opts.axes.iter().any(|a| a.axis == Axis::Head) && !opts.allow_budget_mismatch {
        budget_check(&cells)?;
    }
    let axis_name = opts.axes.iter().map(|a| a.axis.name()).collect::<Vec<_>>().join("|");
    let results: Vec<Result<SweepRow>> = pool(opts.jobs)?.install(|| {
        cells
            .par_iter()
            .map(|cell| {
                let s = run_experiment(&cell.config, &cell.dir)?;
                let m = s.final_metrics();
                Ok(SweepRow {
                    axis: axis_name.clone(),
                    axis_value: cell.values.join("|"),
                    seed: cell.seed,
                    final_test_acc: m.test_acc,
                    final_test_loss: m.test_loss,
                    config_hash: s.manifest.config_hash.clone(),
                    param_count: s.manifest.param_count,
                    block: s.manifest.block.clone(),
                    head: s.manifest.head.clone(),
                })
            })
            .collect()
    });
    let rows = results.into_iter().collect::<Result<Vec<_>>>()?;
    let table: Vec<Vec<String>> = rows.iter().map(SweepRow::record).collect();
    io::write_table(&out.join(SWEEP_FILE), &SWEEP_HEADER, &table, &Provenance::new(base.hash(), base.seed))?;
    Ok(rows)
}

pub fn read_sweep_csv(path: &Path) -> Result<Vec<SweepRow>> {
    let f = std::fs::File::open(path).map_err(|e| HarnessError::io(path, e))?;
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(f);
    r.deserialize()
        .map(|rec| rec.map_err(|e| HarnessError::Parse { path: path.to_path_buf(), message: e.to_string() }))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> ExperimentConfig {
        ExperimentConfig::from_toml_str(
            r#"
schema_version = 1
run_name = "s"
[dataset]
kind = "quantum-dot"
n = 20
[block]
kind = "pca"
dim = 4
[head]
kind = "vqc"
depth = 3
[train]
epochs = 1
batch_size = 8
"#,
        )
        .unwrap()
    }

    #[test]
    fn axis_parsing() {
        let a: AxisSpec = "qubits=8, 6,4".parse().unwrap();
        assert_eq!(a.axis, Axis::Qubits);
        assert_eq!(a.values, ["8", "6", "4"]);
        assert!("depth=1".parse::<AxisSpec>().is_err());
        assert!("qubits".parse::<AxisSpec>().is_err());
    }

    #[test]
    fn grid_counts_and_dirs() {
        let opts = SweepOptions {
            axes: vec!["qubits=8,6,4".parse().unwrap()],
            seeds: vec![1, 2, 3],
            jobs: 1,
            allow_budget_mismatch: false,
        };
        let cells = plan(&base(), &opts, Path::new("out")).unwrap();
        assert_eq!(cells.len(), 9);
        assert_eq!(cells[4].config.block, BlockSpec::Pca { dim: 6 });
        assert_eq!(cells[4].seed, 2);
        assert!(cells[4].dir.ends_with("runs/6_seed2"));
    }

    #[test]
    fn budget_refuses_unmatched_heads() {
        // U = 4, D = 1: VQC 12 parameters, FC 2·5 = 10 → 0.167, accepted.
        let opts = SweepOptions { axes: vec!["head=vqc,fc".parse().unwrap()], seeds: vec![1], jobs: 1, allow_budget_mismatch: false };
        let mut b = base();
        b.head = HeadSpec::Vqc { qubits: None, depth: 1, entangler: Default::default(), measure_qubits: None };
        budget_check(&plan(&b, &opts, Path::new("o")).unwrap()).unwrap();
        // D = 3: VQC 36 against FC 10.
        let err = budget_check(&plan(&base(), &opts, Path::new("o")).unwrap()).unwrap_err();
        assert!(matches!(err, HarnessError::BudgetMismatch(_)), "{err}");
    }
}
