use std::path::PathBuf;

use bca_core::optim::OptimizerKind;
use bca_core::sim::{
    calibrate_dense_lr, generate_block_circulant_target, loss_curve_csv, run_divergence_demo,
    DivergenceDemoConfig,
};
use bca_core::Result;
use clap::Parser;
use serde_json::json;

use crate::config;
use crate::resolve_out;

#[derive(Parser)]
pub struct Args {
    /// TOML config file with a [demo_divergence] section.
    #[arg(long)]
    pub config: Option<PathBuf>,

    #[arg(long)]
    pub n: Option<usize>,

    /// Block size of the trained model (the target uses the same one).
    #[arg(long)]
    pub p: Option<usize>,

    /// Learning rate; omitted means calibrate the largest rate at which
    /// dense SGD still converges on the same data.
    #[arg(long)]
    pub lr: Option<f64>,

    /// Probe length for the calibration runs.
    #[arg(long, default_value_t = 100)]
    pub calibrate_iters: usize,

    #[arg(long)]
    pub iterations: Option<usize>,

    #[arg(long)]
    pub batch_size: Option<usize>,

    #[arg(long)]
    pub seed: Option<u64>,

    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Also print the verdict JSON to stdout.
    #[arg(long)]
    pub json: bool,
}

pub fn run(args: Args) -> Result<()> {
    let file = match &args.config {
        Some(path) => config::load(path)?,
        None => config::FileConfig::default(),
    };
    let section = file.demo_divergence.unwrap_or_default();
    let mut demo = DivergenceDemoConfig {
        optimizer_kind: OptimizerKind::Sgd,
        stop_below_mse: Some(1.2),
        ..DivergenceDemoConfig::default()
    };
    if let Some(seed) = file.seed {
        demo.seed = seed;
    }
    if let Some(n) = section.n {
        demo.n = n;
    }
    if let Some(p) = section.block_size {
        demo.block_size = p;
    }
    if let Some(it) = section.iterations {
        demo.iterations = it;
    }
    if let Some(b) = section.batch_size {
        demo.batch_size = b;
    }
    if let Some(seed) = section.seed {
        demo.seed = seed;
    }
    if let Some(re) = section.record_every {
        demo.record_every = re;
    }
    if let Some(n) = args.n {
        demo.n = n;
    }
    if let Some(p) = args.p {
        demo.block_size = p;
    }
    if let Some(it) = args.iterations {
        demo.iterations = it;
    }
    if let Some(b) = args.batch_size {
        demo.batch_size = b;
    }
    if let Some(seed) = args.seed {
        demo.seed = seed;
    }

    let lr = match args.lr.or(section.lr) {
        Some(lr) => lr,
        None => {
            let target = generate_block_circulant_target(demo.n, demo.block_size, demo.seed)?
                .materialize();
            let lr =
                calibrate_dense_lr(&target, demo.seed, demo.batch_size, args.calibrate_iters)?;
            println!("calibrated largest dense-converging lr: {lr}");
            lr
        }
    };
    demo.lr = lr;

    demo.heuristic = false;
    let without = run_divergence_demo(&demo)?;
    demo.heuristic = true;
    let with = run_divergence_demo(&demo)?;

    let effective = lr / demo.block_size as f64;
    println!(
        "heuristic factor: lr / p = {lr} / {} = {effective}",
        demo.block_size
    );
    println!(
        "without heuristic: final mse {:.4e} -> {}",
        without.final_mse,
        if without.diverged { "diverged" } else { "converged" }
    );
    println!(
        "with heuristic:    final mse {:.4e} -> {}",
        with.final_mse,
        if with.diverged { "diverged" } else { "converged" }
    );

    let out = resolve_out(args.out, file.out);
    super::write_artifact(&out, "heuristic_off.csv", loss_curve_csv(&without.records))?;
    super::write_artifact(&out, "heuristic_on.csv", loss_curve_csv(&with.records))?;
    let verdict = json!({
        "schema_version": 1,
        "command": "demo-divergence",
        "n": demo.n,
        "p": demo.block_size,
        "seed": demo.seed,
        "lr": lr,
        "effective_lr_with_heuristic": effective,
        "diverged_without": without.diverged,
        "converged_with": !with.diverged,
        "final_mse_without": without.final_mse,
        "final_mse_with": with.final_mse,
    });
    let pretty = serde_json::to_string_pretty(&verdict).expect("serializable");
    super::write_artifact(&out, "verdict.json", &pretty)?;
    if args.json {
        println!("{pretty}");
    } else {
        println!("artifacts in {}", out.display());
    }
    Ok(())
}
