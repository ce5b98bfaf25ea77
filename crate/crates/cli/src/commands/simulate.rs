use std::path::PathBuf;

use bca_core::optim::OptimizerKind;
use bca_core::sim::{run_simulation, sim_curve_csv, TargetKind};
use bca_core::Result;
use clap::Parser;
use serde_json::json;

use crate::config;
use crate::resolve_out;

#[derive(Parser)]
pub struct Args {
    /// TOML config file with a [simulate] section.
    #[arg(long)]
    pub config: Option<PathBuf>,

    #[arg(long)]
    pub n: Option<usize>,

    /// Comma-separated block sizes, each dividing n.
    #[arg(long, value_delimiter = ',')]
    pub block_sizes: Option<Vec<usize>>,

    /// Skip the dense reference configuration.
    #[arg(long)]
    pub no_dense: bool,

    #[arg(long)]
    pub batch_size: Option<usize>,

    #[arg(long)]
    pub iterations: Option<usize>,

    #[arg(long)]
    pub noise_std: Option<f64>,

    #[arg(long)]
    pub record_every: Option<usize>,

    #[arg(long)]
    pub seed: Option<u64>,

    /// Optimizer kind: sgd or adadelta.
    #[arg(long, value_enum)]
    pub optimizer: Option<OptimizerChoice>,

    #[arg(long)]
    pub lr: Option<f64>,

    /// Divide the learning rate by each model's block size.
    #[arg(long)]
    pub heuristic: bool,

    /// Use a representable target: a materialized random block-circulant
    /// matrix with this block size instead of a dense Gaussian matrix.
    #[arg(long)]
    pub realizable_target: Option<usize>,

    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Also print the summary JSON to stdout.
    #[arg(long)]
    pub json: bool,
}

#[derive(Clone, Copy, clap::ValueEnum)]
pub enum OptimizerChoice {
    Sgd,
    Adadelta,
}

impl From<OptimizerChoice> for OptimizerKind {
    fn from(c: OptimizerChoice) -> Self {
        match c {
            OptimizerChoice::Sgd => OptimizerKind::Sgd,
            OptimizerChoice::Adadelta => OptimizerKind::Adadelta,
        }
    }
}

pub fn run(args: Args) -> Result<()> {
    let file = match &args.config {
        Some(path) => config::load(path)?,
        None => config::FileConfig::default(),
    };
    let mut sim = file.simulate.unwrap_or_default();
    if let Some(seed) = file.seed {
        sim.seed = seed;
    }
    if let Some(n) = args.n {
        sim.n = n;
    }
    if let Some(bs) = args.block_sizes {
        sim.block_sizes = bs;
    }
    if args.no_dense {
        sim.include_dense = false;
    }
    if let Some(b) = args.batch_size {
        sim.batch_size = b;
    }
    if let Some(it) = args.iterations {
        sim.iterations = it;
    }
    if let Some(ns) = args.noise_std {
        sim.noise_std = ns;
    }
    if let Some(re) = args.record_every {
        sim.record_every = re;
    }
    if let Some(seed) = args.seed {
        sim.seed = seed;
    }
    if let Some(kind) = args.optimizer {
        sim.optimizer.kind = kind.into();
    }
    if let Some(lr) = args.lr {
        sim.optimizer.base_lr = lr;
    }
    if args.heuristic {
        sim.optimizer.heuristic_enabled = true;
    }
    if let Some(p) = args.realizable_target {
        sim.target = TargetKind::BlockCirculant { block_size: p };
    }
    sim.validate()?;

    let report = run_simulation(&sim)?;
    let out = resolve_out(args.out, file.out);
    for c in &report.configurations {
        super::write_artifact(&out, &format!("{}.csv", c.label), sim_curve_csv(&c.records))?;
    }
    let summary = json!({
        "schema_version": 1,
        "command": "simulate",
        "n": sim.n,
        "seed": sim.seed,
        "iterations": sim.iterations,
        "batch_size": sim.batch_size,
        "noise_std": sim.noise_std,
        "target": sim.target,
        "optimizer": sim.optimizer,
        "gradient_scaling_exponent": report.gradient_scaling_exponent,
        "configurations": report.configurations.iter().map(|c| json!({
            "label": c.label,
            "block_size": c.block_size,
            "initial_mse": c.initial_mse,
            "final_mse": c.final_mse,
            "early_grad_mean_abs": c.early_grad_mean_abs,
            "approx_floor_mse": c.approx_floor_mse,
            "diverged": c.diverged,
        })).collect::<Vec<_>>(),
    });
    let pretty = serde_json::to_string_pretty(&summary).expect("serializable");
    super::write_artifact(&out, "summary.json", &pretty)?;
    if args.json {
        println!("{pretty}");
    } else {
        for c in &report.configurations {
            println!(
                "{:>8}: final mse {:.4} (floor {:.4}), early mean |grad| {:.3e}{}",
                c.label,
                c.final_mse,
                c.approx_floor_mse,
                c.early_grad_mean_abs,
                if c.diverged { ", diverged" } else { "" }
            );
        }
        if let Some(e) = report.gradient_scaling_exponent {
            println!("gradient scaling exponent: {e:.3}");
        }
        println!("artifacts in {}", out.display());
    }
    Ok(())
}
