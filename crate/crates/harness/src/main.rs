use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use legoqml_core::features::{fit_pca, pretrain_ttn, FeatureBlock, PretrainConfig, TtnBlock};
use legoqml_harness::checks::{run_checks, CheckOptions, Suite};
use legoqml_harness::config::{DatasetSpec, ExperimentConfig, DEFAULT_MOTIF};
use legoqml_harness::error::{HarnessError, Result, EXIT_OK};
use legoqml_harness::generators::{dots_to_dataset, gen_quantum_dot, gen_tfbs, tfbs_to_dataset};
use legoqml_harness::io::{self, Provenance};
use legoqml_harness::runner::{self, evaluate_checkpoint, Checkpoint};
use legoqml_harness::sweep::{run_sweep, AxisSpec, SweepOptions, SWEEP_FILE};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Parser)]
#[command(name = "legoqml", version, about = "Frozen feature blocks with variational quantum heads")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file or directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (capped by LEGOQML_THREADS).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[arg(long, global = true)]
    allow_budget_mismatch: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum DataKind {
    QuantumDot,
    Tfbs,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset as CSV.
    GenData {
        #[arg(long, value_enum, default_value = "quantum-dot")]
        kind: DataKind,
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = 0.0)]
        noise_level: f64,
        #[arg(long, default_value = DEFAULT_MOTIF)]
        motif: String,
        /// Allow one point mutation in planted motifs.
        #[arg(long)]
        mutations: bool,
    },
    /// Fit a PCA block on a dataset CSV and store it as JSON.
    FitPca {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        dim: usize,
    },
    /// Pretrain a TTN block on a source dataset and write a binary checkpoint.
    PretrainTtn {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',')]
        in_modes: Vec<usize>,
        #[arg(long, value_delimiter = ',')]
        out_modes: Vec<usize>,
        #[arg(long, value_delimiter = ',')]
        ranks: Vec<usize>,
        #[arg(long, default_value_t = 100)]
        epochs: usize,
        #[arg(long, default_value_t = 0.01)]
        lr: f64,
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
    },
    /// Run the experiment described by --config.
    Train,
    /// Evaluate a checkpoint on a dataset CSV, a labels CSV or the test split of --config.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, conflicts_with = "labels")]
        data: Option<PathBuf>,
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Run a grid of experiments; repeat --axis for a cartesian product.
    Sweep {
        /// `qubits=8,6,4`, `noise=0,0.01`, `data-noise=0,0.3`, `block=pca,ttn`, `head=vqc,fc`.
        #[arg(long = "axis", required = true)]
        axes: Vec<AxisSpec>,
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
    },
    /// Run a property suite and print a pass/fail report.
    Check {
        #[arg(long, value_enum, default_value = "all")]
        suite: Suite,
    },
}

fn worker_count(jobs: Option<usize>) -> usize {
    let cap = std::env::var("LEGOQML_THREADS").ok().and_then(|v| v.parse::<usize>().ok()).filter(|&n| n > 0);
    let want = jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    cap.map_or(want, |c| want.min(c)).max(1)
}

fn need_config(cli: &Cli) -> Result<ExperimentConfig> {
    let path = cli.config.as_ref().ok_or_else(|| HarnessError::Config("--config: required for this command".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn need_out(cli: &Cli) -> Result<&Path> {
    cli.out.as_deref().ok_or_else(|| HarnessError::Config("--out: required for this command".into()))
}

fn digest_of<T: Serialize>(v: &T) -> String {
    hex::encode(Sha256::digest(serde_json::to_vec(v).expect("serializable")))
}

fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| HarnessError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

#[derive(Serialize)]
struct PcaFile {
    config_hash: String,
    seed: u64,
    block: FeatureBlock,
}

#[derive(Serialize)]
struct TtnManifest {
    config_hash: String,
    seed: u64,
    probe_train_accuracy: f64,
    final_loss: f64,
    block_checksum: String,
}

#[derive(Serialize)]
struct CheckFile<'a> {
    config_hash: String,
    seed: u64,
    #[serde(flatten)]
    report: &'a legoqml_harness::checks::CheckReport,
}

fn run(cli: &Cli) -> Result<()> {
    let threads = worker_count(cli.jobs);
    // A second build in the same process fails harmlessly; the first wins.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    match &cli.command {
        Command::GenData { kind, n, noise_level, motif, mutations } => {
            let seed = cli.seed.unwrap_or(0);
            let spec = match kind {
                DataKind::QuantumDot => DatasetSpec::QuantumDot { n: *n, noise_level: *noise_level, seed: Some(seed) },
                DataKind::Tfbs => DatasetSpec::Tfbs { n: *n, motif: motif.clone(), mutations: *mutations, seed: Some(seed) },
            };
            let data = match kind {
                DataKind::QuantumDot => dots_to_dataset(&gen_quantum_dot(*n, *noise_level, seed)?)?,
                DataKind::Tfbs => tfbs_to_dataset(&gen_tfbs(*n, motif, usize::from(*mutations), seed)?)?,
            };
            let out = need_out(cli)?;
            io::write_dataset_csv(out, &data, &Provenance::new(digest_of(&spec), seed))?;
            eprintln!("wrote {} samples to {}", data.len(), out.display());
        }
        Command::FitPca { data, dim } => {
            let d = io::read_dataset_csv(data)?;
            let block = FeatureBlock::Pca(fit_pca(&d.features, *dim)?);
            let hash = digest_of(&(file_digest(data)?, dim));
            let out = need_out(cli)?;
            io::write_json(out, &PcaFile { config_hash: hash, seed: cli.seed.unwrap_or(0), block })?;
            eprintln!("wrote PCA({dim}) block to {}", out.display());
        }
        Command::PretrainTtn { data, in_modes, out_modes, ranks, epochs, lr, batch_size } => {
            let seed = cli.seed.unwrap_or(0);
            let source = io::read_dataset_csv(data)?;
            let init = TtnBlock::random(in_modes.clone(), out_modes.clone(), ranks.clone(), seed)
                .map_err(|e| HarnessError::Config(format!("--in-modes/--out-modes/--ranks: {e}")))?;
            let cfg = PretrainConfig { epochs: *epochs, lr: *lr, batch_size: *batch_size, seed };
            let (block, report) = pretrain_ttn(&init, &source, &cfg)?;
            let out = need_out(cli)?;
            let mut bytes = Vec::new();
            block.write_checkpoint(&mut bytes)?;
            std::fs::write(out, &bytes).map_err(|e| HarnessError::io(out, e))?;
            // The binary format has no room for provenance; it lives next door.
            let hash = digest_of(&(file_digest(data)?, in_modes, out_modes, ranks, epochs, lr.to_bits(), batch_size));
            let side = PathBuf::from(format!("{}.json", out.display()));
            io::write_json(
                &side,
                &TtnManifest {
                    config_hash: hash,
                    seed,
                    probe_train_accuracy: report.probe_train_accuracy,
                    final_loss: report.final_loss,
                    block_checksum: FeatureBlock::Ttn(block).checksum(),
                },
            )?;
            eprintln!("probe accuracy {:.3}; wrote {}", report.probe_train_accuracy, out.display());
        }
        Command::Train => {
            let cfg = need_config(cli)?;
            let out = cli
                .out
                .clone()
                .or_else(|| cfg.output_dir.clone())
                .unwrap_or_else(|| PathBuf::from("runs").join(&cfg.run_name));
            let s = runner::run_experiment(&cfg, &out)?;
            let m = s.final_metrics();
            println!(
                "{}: train_acc {:.4} test_acc {:.4} test_loss {:.4} ({} params) -> {}",
                cfg.run_name,
                m.train_acc,
                m.test_acc,
                m.test_loss,
                s.manifest.param_count,
                out.display()
            );
        }
        Command::Eval { checkpoint, data, labels } => {
            let ckpt: Checkpoint = io::read_json(checkpoint)?;
            let set = match (data, labels) {
                (Some(d), _) => io::read_dataset_csv(d)?,
                (None, Some(l)) => io::read_labels_csv(l)?,
                (None, None) => runner::prepare_data(&need_config(cli)?)?.test,
            };
            let report = evaluate_checkpoint(&ckpt, &set)?;
            println!("loss {:.6} accuracy {:.4} on {} samples", report.loss, report.accuracy, report.samples);
            if let Some(out) = &cli.out {
                io::write_json(out, &report)?;
            }
        }
        Command::Sweep { axes, seeds } => {
            let cfg = need_config(cli)?;
            let out = need_out(cli)?;
            let opts = SweepOptions {
                axes: axes.clone(),
                seeds: if seeds.is_empty() { vec![cfg.seed] } else { seeds.clone() },
                jobs: threads,
                allow_budget_mismatch: cli.allow_budget_mismatch,
            };
            let rows = run_sweep(&cfg, &opts, out)?;
            for r in &rows {
                println!(
                    "{}={} seed {}: test_acc {:.4} test_loss {:.4} params {}",
                    r.axis, r.axis_value, r.seed, r.final_test_acc, r.final_test_loss, r.param_count
                );
            }
            println!("{} runs -> {}", rows.len(), out.join(SWEEP_FILE).display());
        }
        Command::Check { suite } => {
            let mut opts = CheckOptions::default();
            if let Some(s) = cli.seed {
                opts.seed = s;
            }
            let report = run_checks(*suite, &opts);
            for i in report.items.iter().filter(|i| i.status != legoqml_harness::checks::Status::Warn) {
                println!("{i}");
            }
            let warnings: Vec<_> = report.warnings().collect();
            if !warnings.is_empty() {
                println!("warnings:");
                for w in warnings {
                    println!("  {w}");
                }
            }
            if let Some(out) = &cli.out {
                let file = CheckFile { config_hash: digest_of(&(suite, opts.seed)), seed: opts.seed, report: &report };
                io::write_json(out, &file)?;
            }
            report.into_result()?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::from(EXIT_OK as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
