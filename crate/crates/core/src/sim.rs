//! Single-layer linear regression simulation.
//!
//! A random target system `y = W x + noise` is fit by either a dense matrix
//! or a block-circulant matrix trained from zero initialization, recording
//! per-iteration loss and gradient statistics. All configurations in one run
//! consume the same pseudo-random batch stream, so gradient magnitudes are
//! directly comparable across block sizes. Divergence never raises: it is
//! recorded in the trajectory.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circulant::{project_block_circulant, BlockCirculantMatrix, DenseMatrix};
use crate::error::{Error, Result};
use crate::grad::{block_circ_coeff_grad_batch, dense_grad_batch_into};
use crate::optim::{Optimizer, OptimizerConfig, OptimizerKind};

/// A batch of column vectors.
pub type Batch = Vec<Vec<f64>>;

/// Dedicated stream ids of the seeded generator, so the target system and
/// the batch stream are independent but reproducible.
const TARGET_STREAM: u64 = 0;
const DATA_STREAM: u64 = 1;

/// How the target system is generated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TargetKind {
    /// Entries of `W` drawn i.i.d. standard normal.
    #[default]
    DenseGaussian,
    /// `W` materialized from a random block-circulant matrix, so a model
    /// with the same block size can represent it exactly (used for
    /// noiseless exact-recovery runs).
    BlockCirculant { block_size: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub n: usize,
    pub block_sizes: Vec<usize>,
    pub include_dense: bool,
    pub batch_size: usize,
    pub iterations: usize,
    pub optimizer: OptimizerConfig,
    pub noise_std: f64,
    pub seed: u64,
    pub record_every: usize,
    pub target: TargetKind,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            n: 1024,
            block_sizes: vec![128, 256, 512, 1024],
            include_dense: true,
            batch_size: 32,
            iterations: 10_000,
            optimizer: OptimizerConfig::adadelta(0.1),
            noise_std: 1.0,
            seed: 0,
            record_every: 10,
            target: TargetKind::DenseGaussian,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::config("n must be positive"));
        }
        if self.iterations == 0 {
            return Err(Error::config("iterations must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if self.record_every == 0 {
            return Err(Error::config("record_every must be positive"));
        }
        if self.block_sizes.is_empty() && !self.include_dense {
            return Err(Error::config("nothing to train: no block sizes and dense disabled"));
        }
        for &p in &self.block_sizes {
            if p == 0 || !self.n.is_multiple_of(p) {
                return Err(Error::config(format!(
                    "block size {p} must divide n={}",
                    self.n
                )));
            }
        }
        if let TargetKind::BlockCirculant { block_size } = self.target {
            if block_size == 0 || !self.n.is_multiple_of(block_size) {
                return Err(Error::config(format!(
                    "target block size {block_size} must divide n={}",
                    self.n
                )));
            }
        }
        if self.noise_std.is_nan() || self.noise_std < 0.0 {
            return Err(Error::config(format!(
                "noise_std must be non-negative, got {}",
                self.noise_std
            )));
        }
        self.optimizer.validate()
    }
}

/// Loss and gradient statistics at one recorded iteration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub iteration: usize,
    /// Batch mean squared error per element.
    pub mse: f64,
    /// Mean of `|gradient|` over all trainable coefficients at this step.
    pub grad_mean_abs: f64,
}

/// One configuration's training trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigTrajectory {
    pub label: String,
    /// `None` for the dense configuration.
    pub block_size: Option<usize>,
    pub records: Vec<TrainRecord>,
    pub initial_mse: f64,
    pub final_mse: f64,
    /// Mean of `grad_mean_abs` over the records of the first 100 iterations.
    pub early_grad_mean_abs: f64,
    pub diverged: bool,
    /// Best per-element MSE this parametrization can reach on this target:
    /// the Frobenius residual of the least-squares projection onto the
    /// model class, divided by `n`, plus the noise variance. A restricted
    /// model class converges toward this value, not toward the noise
    /// variance alone.
    pub approx_floor_mse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub configurations: Vec<ConfigTrajectory>,
    /// Least-squares slope of `ln(early gradient mean)` against `ln(p)`
    /// over the block-circulant configurations; reported because the
    /// observed growth of gradients with block size is the quantity of
    /// interest, whatever its exact exponent.
    pub gradient_scaling_exponent: Option<f64>,
}

/// Standard-normal target matrix, deterministic per seed.
pub fn generate_target_system(n: usize, seed: u64) -> DenseMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(TARGET_STREAM);
    DenseMatrix::from_fn(n, n, |_, _| rng.sample(StandardNormal))
}

/// Random block-circulant target with standard-normal coefficients.
pub fn generate_block_circulant_target(
    n: usize,
    block_size: usize,
    seed: u64,
) -> Result<BlockCirculantMatrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(TARGET_STREAM);
    let q = n / block_size;
    let coeffs: Vec<f64> = (0..q * q * block_size)
        .map(|_| rng.sample(StandardNormal))
        .collect();
    BlockCirculantMatrix::from_coeffs(n, n, block_size, coeffs)
}

/// The batch generator used by every training loop, split from the target
/// stream so runs can replay it independently.
pub fn batch_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(DATA_STREAM);
    rng
}

/// Draws a batch: inputs i.i.d. standard normal, targets `W x` plus
/// `N(0, noise_std^2)` noise per element.
pub fn sample_batch(
    w: &DenseMatrix,
    batch_size: usize,
    noise_std: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(Batch, Batch)> {
    let n = w.cols();
    let xs: Vec<Vec<f64>> = (0..batch_size)
        .map(|_| (0..n).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    let mut ys = w.matvec_batch(&xs)?;
    for y in ys.iter_mut() {
        for v in y.iter_mut() {
            let e: f64 = rng.sample(StandardNormal);
            *v += noise_std * e;
        }
    }
    Ok((xs, ys))
}

/// Mean over elements of the squared difference.
pub fn mse_loss(y_hat: &[f64], y: &[f64]) -> Result<f64> {
    if y_hat.len() != y.len() {
        return Err(Error::size(format!(
            "mse: lengths {} vs {}",
            y_hat.len(),
            y.len()
        )));
    }
    if y.is_empty() {
        return Err(Error::size("mse: empty vectors"));
    }
    let sum: f64 = y_hat
        .iter()
        .zip(y)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / y.len() as f64)
}

/// Mean over batch and elements of the squared difference.
pub fn mse_loss_batch(y_hat: &[Vec<f64>], y: &[Vec<f64>]) -> Result<f64> {
    if y_hat.len() != y.len() || y_hat.is_empty() {
        return Err(Error::size(format!(
            "mse batch: {} vs {} samples",
            y_hat.len(),
            y.len()
        )));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (a, b) in y_hat.iter().zip(y) {
        if a.len() != b.len() {
            return Err(Error::size("mse batch: ragged batch"));
        }
        sum += a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
        count += a.len();
    }
    Ok(sum / count as f64)
}

enum TrainableModel {
    Dense(DenseMatrix),
    Block(BlockCirculantMatrix),
}

impl TrainableModel {
    fn forward_batch(&self, xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        match self {
            TrainableModel::Dense(m) => m.matvec_batch(xs),
            TrainableModel::Block(m) => m.matvec_batch(xs),
        }
    }

    fn coeff_grads(&self, xs: &[Vec<f64>], gs: &[Vec<f64>], out: &mut Vec<f64>) -> Result<()> {
        match self {
            TrainableModel::Dense(m) => {
                out.resize(m.rows() * m.cols(), 0.0);
                dense_grad_batch_into(gs, xs, out)
            }
            TrainableModel::Block(m) => {
                *out = block_circ_coeff_grad_batch(m, xs, gs)?;
                Ok(())
            }
        }
    }

    fn params_mut(&mut self) -> &mut [f64] {
        match self {
            TrainableModel::Dense(m) => m.as_mut_slice(),
            TrainableModel::Block(m) => m.coeffs_mut(),
        }
    }
}

/// Per-configuration training state inside a lockstep run.
struct RunState {
    label: String,
    block_size: Option<usize>,
    model: TrainableModel,
    optimizer: Optimizer,
    grad_buf: Vec<f64>,
    records: Vec<TrainRecord>,
    initial_mse: f64,
    last_mse: f64,
    update_frozen: bool,
    saw_non_finite: bool,
    approx_floor_mse: f64,
}

impl RunState {
    fn new(
        label: String,
        block_size: Option<usize>,
        model: TrainableModel,
        base_optimizer: &OptimizerConfig,
        target: &DenseMatrix,
        noise_std: f64,
    ) -> Result<Self> {
        let mut opt_config = base_optimizer.clone();
        opt_config.block_size = block_size.unwrap_or(1);
        let approx_floor_mse = match block_size {
            None => noise_std * noise_std,
            Some(p) => {
                let proj = project_block_circulant(target, p)?;
                let residual: f64 = target
                    .sub(&proj.materialize())?
                    .as_slice()
                    .iter()
                    .map(|v| v * v)
                    .sum();
                residual / target.rows() as f64 + noise_std * noise_std
            }
        };
        Ok(Self {
            label,
            block_size,
            model,
            optimizer: Optimizer::new(opt_config)?,
            grad_buf: Vec::new(),
            records: Vec::new(),
            initial_mse: f64::NAN,
            last_mse: f64::NAN,
            update_frozen: false,
            saw_non_finite: false,
            approx_floor_mse,
        })
    }

    /// One training step on a shared batch: forward, record, update.
    fn step(
        &mut self,
        xs: &[Vec<f64>],
        ys: &[Vec<f64>],
        iteration: usize,
        record_every: usize,
        last_iteration: bool,
    ) -> Result<()> {
        let y_hat = self.model.forward_batch(xs)?;
        let mse = mse_loss_batch(&y_hat, ys)?;
        if iteration == 0 {
            self.initial_mse = mse;
        }
        self.last_mse = mse;
        if !mse.is_finite() {
            self.saw_non_finite = true;
        }

        let n = ys[0].len();
        let scale = 2.0 / (n as f64 * ys.len() as f64);
        let grad_hs: Vec<Vec<f64>> = y_hat
            .iter()
            .zip(ys)
            .map(|(yh, y)| yh.iter().zip(y).map(|(a, b)| scale * (a - b)).collect())
            .collect();
        let mut grad_buf = std::mem::take(&mut self.grad_buf);
        self.model.coeff_grads(xs, &grad_hs, &mut grad_buf)?;
        let grad_mean_abs =
            grad_buf.iter().map(|g| g.abs()).sum::<f64>() / grad_buf.len() as f64;

        if iteration.is_multiple_of(record_every) || last_iteration {
            self.records.push(TrainRecord {
                iteration,
                mse,
                grad_mean_abs,
            });
        }

        if !self.update_frozen {
            if grad_buf.iter().all(|g| g.is_finite()) {
                self.optimizer.step(self.model.params_mut(), &grad_buf)?;
            } else {
                // divergence is data, not an error: freeze and keep recording
                self.saw_non_finite = true;
                self.update_frozen = true;
            }
        }
        self.grad_buf = grad_buf;
        Ok(())
    }

    fn into_trajectory(self) -> ConfigTrajectory {
        let early: Vec<f64> = self
            .records
            .iter()
            .filter(|r| r.iteration < 100)
            .map(|r| r.grad_mean_abs)
            .collect();
        let early_grad_mean_abs = if early.is_empty() {
            self.records.first().map_or(f64::NAN, |r| r.grad_mean_abs)
        } else {
            early.iter().sum::<f64>() / early.len() as f64
        };
        let diverged =
            self.saw_non_finite || !self.last_mse.is_finite() || self.last_mse > self.initial_mse;
        ConfigTrajectory {
            label: self.label,
            block_size: self.block_size,
            records: self.records,
            initial_mse: self.initial_mse,
            final_mse: self.last_mse,
            early_grad_mean_abs,
            diverged,
            approx_floor_mse: self.approx_floor_mse,
        }
    }
}

fn block_label(p: usize) -> String {
    format!("p{p}")
}

fn materialized_target(config: &SimulationConfig) -> Result<DenseMatrix> {
    Ok(match config.target {
        TargetKind::DenseGaussian => generate_target_system(config.n, config.seed),
        TargetKind::BlockCirculant { block_size } => {
            generate_block_circulant_target(config.n, block_size, config.seed)?.materialize()
        }
    })
}

/// Trains one model per configuration (dense plus each block size) on
/// identical batch streams and reports every trajectory. Runs the
/// configurations in lockstep over a single shared stream, so fairness
/// holds by construction.
pub fn run_simulation(config: &SimulationConfig) -> Result<SimulationReport> {
    config.validate()?;
    let target = materialized_target(config)?;

    let mut states = Vec::new();
    if config.include_dense {
        states.push(RunState::new(
            "dense".to_string(),
            None,
            TrainableModel::Dense(DenseMatrix::zeros(config.n, config.n)),
            &config.optimizer,
            &target,
            config.noise_std,
        )?);
    }
    for &p in &config.block_sizes {
        states.push(RunState::new(
            block_label(p),
            Some(p),
            TrainableModel::Block(BlockCirculantMatrix::zeros(config.n, config.n, p)?),
            &config.optimizer,
            &target,
            config.noise_std,
        )?);
    }

    let mut rng = batch_rng(config.seed);
    for it in 0..config.iterations {
        let (xs, ys) = sample_batch(&target, config.batch_size, config.noise_std, &mut rng)?;
        let last = it + 1 == config.iterations;
        for state in states.iter_mut() {
            state.step(&xs, &ys, it, config.record_every, last)?;
        }
    }

    let configurations: Vec<ConfigTrajectory> =
        states.into_iter().map(RunState::into_trajectory).collect();
    let gradient_scaling_exponent = scaling_exponent(&configurations);
    Ok(SimulationReport {
        configurations,
        gradient_scaling_exponent,
    })
}

/// Slope of `ln(early_grad_mean_abs)` vs `ln(p)` across block configurations.
fn scaling_exponent(configurations: &[ConfigTrajectory]) -> Option<f64> {
    let points: Vec<(f64, f64)> = configurations
        .iter()
        .filter_map(|c| {
            c.block_size.and_then(|p| {
                (c.early_grad_mean_abs.is_finite() && c.early_grad_mean_abs > 0.0)
                    .then(|| ((p as f64).ln(), c.early_grad_mean_abs.ln()))
            })
        })
        .collect();
    if points.len() < 2 {
        return None;
    }
    let m = points.len() as f64;
    let sx: f64 = points.iter().map(|(x, _)| x).sum();
    let sy: f64 = points.iter().map(|(_, y)| y).sum();
    let sxx: f64 = points.iter().map(|(x, _)| x * x).sum();
    let sxy: f64 = points.iter().map(|(x, y)| x * y).sum();
    let denom = m * sxx - sx * sx;
    (denom.abs() > 1e-12).then(|| (m * sxy - sx * sy) / denom)
}

/// Parameters of a single divergence-demo run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DivergenceDemoConfig {
    pub n: usize,
    pub block_size: usize,
    pub lr: f64,
    pub optimizer_kind: OptimizerKind,
    pub heuristic: bool,
    pub iterations: usize,
    pub batch_size: usize,
    pub noise_std: f64,
    pub seed: u64,
    pub record_every: usize,
    /// Stop once the batch MSE explodes past this multiple of the initial
    /// MSE; the run is already conclusively divergent.
    pub stop_above_factor: Option<f64>,
    /// Stop once the batch MSE falls below this value; the run is already
    /// conclusively convergent.
    pub stop_below_mse: Option<f64>,
}

impl Default for DivergenceDemoConfig {
    fn default() -> Self {
        Self {
            n: 1024,
            block_size: 1024,
            lr: 1.0,
            optimizer_kind: OptimizerKind::Sgd,
            heuristic: false,
            iterations: 4000,
            batch_size: 32,
            noise_std: 1.0,
            seed: 0,
            record_every: 10,
            stop_above_factor: Some(1e4),
            stop_below_mse: None,
        }
    }
}

impl DivergenceDemoConfig {
    fn validate(&self) -> Result<()> {
        if self.n == 0 || self.block_size == 0 || !self.n.is_multiple_of(self.block_size) {
            return Err(Error::config(format!(
                "block size {} must divide n={}",
                self.block_size, self.n
            )));
        }
        if self.iterations == 0 || self.batch_size == 0 || self.record_every == 0 {
            return Err(Error::config(
                "iterations, batch_size and record_every must be positive",
            ));
        }
        if self.lr.is_nan() || self.lr <= 0.0 {
            return Err(Error::config(format!("lr must be positive, got {}", self.lr)));
        }
        Ok(())
    }
}

/// Runs the single-layer simulation with one block-circulant model at the
/// given rate, optionally dividing it by the block size. The divergence
/// flag of the returned trajectory is `final MSE > initial MSE` or any
/// non-finite value along the way.
///
/// The target system is itself a (materialized) block-circulant matrix of
/// the same block size, so the trained model can represent it exactly and
/// the two outcomes are unambiguous: a stable run reaches the noise floor,
/// an unstable one blows up. Approximation error plays no part.
pub fn run_divergence_demo(config: &DivergenceDemoConfig) -> Result<ConfigTrajectory> {
    config.validate()?;
    let target =
        generate_block_circulant_target(config.n, config.block_size, config.seed)?.materialize();

    let mut opt_config = OptimizerConfig {
        kind: config.optimizer_kind,
        base_lr: config.lr,
        ..OptimizerConfig::default()
    };
    if config.heuristic {
        opt_config = opt_config.with_heuristic(config.block_size);
    }

    let mut state = RunState::new(
        block_label(config.block_size),
        Some(config.block_size),
        TrainableModel::Block(BlockCirculantMatrix::zeros(
            config.n,
            config.n,
            config.block_size,
        )?),
        &opt_config,
        &target,
        config.noise_std,
    )?;

    let mut rng = batch_rng(config.seed);
    for it in 0..config.iterations {
        let (xs, ys) = sample_batch(&target, config.batch_size, config.noise_std, &mut rng)?;
        let last = it + 1 == config.iterations;
        state.step(&xs, &ys, it, config.record_every, last)?;
        if let Some(factor) = config.stop_above_factor {
            if !state.last_mse.is_finite() || state.last_mse > factor * state.initial_mse.max(1.0)
            {
                break;
            }
        }
        if let Some(floor) = config.stop_below_mse {
            if state.last_mse < floor {
                break;
            }
        }
    }
    Ok(state.into_trajectory())
}

/// Probes dense SGD training at each candidate rate and returns the largest
/// one that still converges (finite and below the initial MSE) after
/// `probe_iters` iterations. Candidates above the first diverging rate are
/// ignored. Probes run in parallel; each probe is deterministic.
pub fn calibrate_dense_lr(
    target: &DenseMatrix,
    seed: u64,
    batch_size: usize,
    probe_iters: usize,
) -> Result<f64> {
    let grid = [0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0];
    let results = probe_dense_grid(target, seed, batch_size, probe_iters, &grid)?;
    let mut best = None;
    for (lr, converged) in grid.iter().zip(&results) {
        if *converged {
            best = Some(*lr);
        } else {
            break;
        }
    }
    let best = best.ok_or_else(|| {
        Error::numeric("dense SGD diverged at every probed learning rate")
    })?;
    // one refinement wave toward the next grid point
    let refine = [1.25 * best, 1.5 * best, 1.75 * best];
    let results = probe_dense_grid(target, seed, batch_size, probe_iters, &refine)?;
    let mut chosen = best;
    for (lr, converged) in refine.iter().zip(&results) {
        if *converged {
            chosen = *lr;
        } else {
            break;
        }
    }
    Ok(chosen)
}

fn probe_dense_grid(
    target: &DenseMatrix,
    seed: u64,
    batch_size: usize,
    probe_iters: usize,
    rates: &[f64],
) -> Result<Vec<bool>> {
    rates
        .par_iter()
        .map(|&lr| {
            let mut state = RunState::new(
                "probe".to_string(),
                None,
                TrainableModel::Dense(DenseMatrix::zeros(target.rows(), target.cols())),
                &OptimizerConfig::sgd(lr),
                target,
                1.0,
            )?;
            let mut rng = batch_rng(seed);
            for it in 0..probe_iters {
                let (xs, ys) = sample_batch(target, batch_size, 1.0, &mut rng)?;
                state.step(&xs, &ys, it, usize::MAX, it + 1 == probe_iters)?;
                if !state.last_mse.is_finite() || state.last_mse > 1e4 * state.initial_mse {
                    return Ok(false);
                }
            }
            Ok(state.last_mse.is_finite() && state.last_mse < state.initial_mse)
        })
        .collect()
}

/// CSV rendering of a simulation trajectory, schema pinned in the header.
pub fn sim_curve_csv(records: &[TrainRecord]) -> String {
    let mut out = String::from("# bca-sim-curve v1\niteration,mse,grad_mean_abs\n");
    for r in records {
        out.push_str(&format!("{},{},{}\n", r.iteration, r.mse, r.grad_mean_abs));
    }
    out
}

/// CSV rendering of a loss curve (demos and toy training).
pub fn loss_curve_csv(records: &[TrainRecord]) -> String {
    let mut out = String::from("# bca-loss-curve v1\niteration,loss\n");
    for r in records {
        out.push_str(&format!("{},{}\n", r.iteration, r.mse));
    }
    out
}
