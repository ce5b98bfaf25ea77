use std::path::{Path, PathBuf};

use bca_core::adapter::{
    load_checkpoint, save_checkpoint, train_toy_adapter_from, CheckpointMeta,
};
use bca_core::circulant::DenseMatrix;
use bca_core::sim::loss_curve_csv;
use bca_core::Result;
use clap::Parser;
use rand::{Rng, SeedableRng};
use serde_json::json;

use crate::config;
use crate::resolve_out;

use super::simulate::OptimizerChoice;

#[derive(Parser)]
pub struct Args {
    /// TOML config file with a [train_toy] section.
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Shorthand setting both input and output dimension.
    #[arg(long)]
    pub n: Option<usize>,

    #[arg(long)]
    pub input_dim: Option<usize>,

    #[arg(long)]
    pub output_dim: Option<usize>,

    #[arg(long)]
    pub p: Option<usize>,

    #[arg(long)]
    pub frozen_layers: Option<usize>,

    #[arg(long)]
    pub dataset_size: Option<usize>,

    #[arg(long)]
    pub label_noise: Option<f64>,

    #[arg(long)]
    pub iterations: Option<usize>,

    #[arg(long)]
    pub batch_size: Option<usize>,

    #[arg(long, value_enum)]
    pub optimizer: Option<OptimizerChoice>,

    #[arg(long)]
    pub lr: Option<f64>,

    /// Divide the learning rate by the block size.
    #[arg(long)]
    pub heuristic: bool,

    #[arg(long)]
    pub seed: Option<u64>,

    /// Continue from a saved checkpoint (delta coefficients and step).
    #[arg(long)]
    pub resume: Option<PathBuf>,

    /// Also emit the merged dense weight and verify merge equivalence.
    #[arg(long)]
    pub merge: bool,

    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Also print the report JSON to stdout.
    #[arg(long)]
    pub json: bool,
}

pub fn run(args: Args) -> Result<()> {
    let file = match &args.config {
        Some(path) => config::load(path)?,
        None => config::FileConfig::default(),
    };
    let mut cfg = file.train_toy.unwrap_or_default();
    if let Some(seed) = file.seed {
        cfg.task.seed = seed;
    }
    if let Some(n) = args.n {
        cfg.task.input_dim = n;
        cfg.task.output_dim = n;
    }
    if let Some(d) = args.input_dim {
        cfg.task.input_dim = d;
    }
    if let Some(d) = args.output_dim {
        cfg.task.output_dim = d;
    }
    if let Some(p) = args.p {
        cfg.block_size = p;
    }
    if let Some(f) = args.frozen_layers {
        cfg.task.frozen_layers = f;
    }
    if let Some(s) = args.dataset_size {
        cfg.task.dataset_size = s;
    }
    if let Some(ln) = args.label_noise {
        cfg.task.label_noise = ln;
    }
    if let Some(it) = args.iterations {
        cfg.iterations = it;
    }
    if let Some(b) = args.batch_size {
        cfg.batch_size = b;
    }
    if let Some(kind) = args.optimizer {
        cfg.optimizer.kind = kind.into();
    }
    if let Some(lr) = args.lr {
        cfg.optimizer.base_lr = lr;
    }
    if args.heuristic {
        cfg.optimizer.heuristic_enabled = true;
    }
    if let Some(seed) = args.seed {
        cfg.task.seed = seed;
    }
    cfg.validate()?;

    let resume = match &args.resume {
        Some(path) => Some(load_checkpoint(path)?),
        None => None,
    };
    let outcome = train_toy_adapter_from(&cfg, resume.as_ref())?;
    let report = &outcome.report;
    println!(
        "trained {} steps: loss {:.4e} -> {:.4e} ({} trainable parameters){}",
        report.steps_run,
        report.initial_loss,
        report.final_loss,
        report.trainable_params,
        if report.diverged { ", diverged" } else { "" }
    );

    let out = resolve_out(args.out, file.out);
    super::write_artifact(&out, "loss.csv", loss_curve_csv(&report.records))?;
    let start_step = resume
        .as_ref()
        .and_then(|c| c.meta.as_ref())
        .map_or(0, |m| m.step);
    let meta = CheckpointMeta {
        schema_version: 1,
        seed: cfg.task.seed,
        optimizer: Some(cfg.optimizer.clone()),
        step: start_step + report.steps_run as u64,
    };
    let ckpt_path = out.join("adapter.ckpt");
    std::fs::create_dir_all(&out)?;
    save_checkpoint(&outcome.layer, &ckpt_path, &meta)?;

    let mut merge_deviation = None;
    if args.merge {
        let merged = outcome.layer.merge();
        write_dense_bin(&merged, &out.join("merged.bin"))?;
        let dev = max_merge_deviation(&outcome.layer, &merged)?;
        println!("merge verification: max relative deviation {dev:.3e} over 100 random inputs");
        merge_deviation = Some(dev);
    }

    let report_json = json!({
        "schema_version": 1,
        "command": "train-toy",
        "config": cfg,
        "initial_loss": report.initial_loss,
        "final_loss": report.final_loss,
        "steps_run": report.steps_run,
        "diverged": report.diverged,
        "trainable_params": report.trainable_params,
        "checkpoint": ckpt_path,
        "merge_max_rel_deviation": merge_deviation,
    });
    let pretty = serde_json::to_string_pretty(&report_json).expect("serializable");
    super::write_artifact(&out, "report.json", &pretty)?;
    if args.json {
        println!("{pretty}");
    } else {
        println!("artifacts in {}", out.display());
    }
    Ok(())
}

fn max_merge_deviation(
    layer: &bca_core::adapter::AdapterLayer,
    merged: &DenseMatrix,
) -> Result<f64> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0xB1CA);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let x: Vec<f64> = (0..layer.d_in())
            .map(|_| rng.random::<f64>() * 2.0 - 1.0)
            .collect();
        let fast = layer.forward(&x)?;
        let dense = merged.matvec(&x)?;
        for (a, b) in fast.iter().zip(&dense) {
            worst = worst.max((a - b).abs() / (1.0 + b.abs()));
        }
    }
    Ok(worst)
}

/// Dense matrix as a little-endian binary: magic, version, dims, row-major
/// f64 payload, CRC32.
fn write_dense_bin(m: &DenseMatrix, path: &Path) -> Result<()> {
    let mut bytes = Vec::with_capacity(4 + 4 + 16 + m.as_slice().len() * 8 + 4);
    bytes.extend_from_slice(b"BCAM");
    bytes.extend_from_slice(&1u32.to_le_bytes());
    bytes.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    bytes.extend_from_slice(&(m.cols() as u64).to_le_bytes());
    for v in m.as_slice() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32fast::hash(&bytes);
    bytes.extend_from_slice(&crc.to_le_bytes());
    std::fs::write(path, bytes)?;
    Ok(())
}
