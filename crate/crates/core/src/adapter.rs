//! Mergeable block-circulant adapter: a frozen dense base weight plus a
//! trainable block-circulant delta.
//!
//! The forward pass is `W x + B x`; after training, `B` can be materialized
//! and added into `W`, so the fine-tuned model costs nothing extra at
//! inference. The base matrix has no mutable accessor: it is frozen by
//! construction, and gradients flow only to the delta coefficients (the
//! input gradient still includes both paths, so upstream layers see the
//! exact derivative).

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::circulant::{BlockCirculantMatrix, DenseMatrix};
use crate::error::{Error, Result};
use crate::grad::{block_circ_coeff_grad_batch, block_circ_matvec_backward, MatvecGradients};
use crate::optim::{Optimizer, OptimizerConfig};
use crate::sim::TrainRecord;

pub struct AdapterLayer {
    base: DenseMatrix,
    delta: BlockCirculantMatrix,
}

impl AdapterLayer {
    /// Wraps a frozen base weight with a zero-initialized delta, so the
    /// untrained adapter computes exactly what the base does.
    pub fn new(base: DenseMatrix, block_size: usize) -> Result<Self> {
        let delta = BlockCirculantMatrix::zeros(base.rows(), base.cols(), block_size)?;
        Ok(Self { base, delta })
    }

    pub fn with_delta(base: DenseMatrix, delta: BlockCirculantMatrix) -> Result<Self> {
        if base.rows() != delta.rows_out() || base.cols() != delta.cols_in() {
            return Err(Error::size(format!(
                "adapter: base is {}x{}, delta materializes to {}x{}",
                base.rows(),
                base.cols(),
                delta.rows_out(),
                delta.cols_in()
            )));
        }
        Ok(Self { base, delta })
    }

    pub fn base(&self) -> &DenseMatrix {
        &self.base
    }

    pub fn delta(&self) -> &BlockCirculantMatrix {
        &self.delta
    }

    pub fn delta_mut(&mut self) -> &mut BlockCirculantMatrix {
        &mut self.delta
    }

    pub fn d_out(&self) -> usize {
        self.base.rows()
    }

    pub fn d_in(&self) -> usize {
        self.base.cols()
    }

    /// Trainable parameter count, `d_out * d_in / p`.
    pub fn count_trainable(&self) -> usize {
        self.delta.param_count()
    }

    /// `W x + B x`.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = self.base.matvec(x)?;
        let delta_out = self.delta.matvec(x)?;
        for (o, d) in out.iter_mut().zip(&delta_out) {
            *o += d;
        }
        Ok(out)
    }

    pub fn forward_batch(&self, xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let mut out = self.base.matvec_batch(xs)?;
        let delta_out = self.delta.matvec_batch(xs)?;
        for (o, d) in out.iter_mut().zip(&delta_out) {
            for (ov, dv) in o.iter_mut().zip(d) {
                *ov += dv;
            }
        }
        Ok(out)
    }

    /// Backward pass: coefficient gradients for the delta only (the base is
    /// frozen), and the exact input gradient through both paths,
    /// `W^T g + B^T g`.
    pub fn backward(&self, x: &[f64], grad_out: &[f64]) -> Result<MatvecGradients> {
        let mut grads = block_circ_matvec_backward(&self.delta, x, grad_out)?;
        let base_path = self.base.matvec_transposed(grad_out)?;
        for (g, b) in grads.grad_input.iter_mut().zip(&base_path) {
            *g += b;
        }
        Ok(grads)
    }

    /// Folds the delta into the base: `W + materialize(B)`. The merged
    /// dense matrix reproduces `forward` for every input.
    pub fn merge(&self) -> DenseMatrix {
        self.base
            .add(&self.delta.materialize())
            .expect("delta shape is validated at construction")
    }
}

pub const CHECKPOINT_VERSION: u32 = 1;
const CHECKPOINT_MAGIC: [u8; 4] = *b"BCAD";

/// Metadata sidecar stored next to the binary payload.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub schema_version: u32,
    pub seed: u64,
    pub optimizer: Option<OptimizerConfig>,
    pub step: u64,
}

/// Loaded checkpoint contents: shape, raw coefficients, optional metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct AdapterCheckpoint {
    pub d_out: usize,
    pub d_in: usize,
    pub block_size: usize,
    pub coeffs: Vec<f64>,
    pub meta: Option<CheckpointMeta>,
}

fn meta_path(path: &Path) -> std::path::PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    path.with_file_name(name)
}

/// Writes the delta coefficients as a versioned little-endian binary with a
/// trailing CRC32, plus a JSON metadata sidecar at `<path>.meta.json`.
/// Coefficients round-trip bitwise.
pub fn save_checkpoint(layer: &AdapterLayer, path: impl AsRef<Path>, meta: &CheckpointMeta) -> Result<()> {
    let path = path.as_ref();
    let delta = layer.delta();
    let mut bytes = Vec::with_capacity(4 + 4 + 24 + delta.param_count() * 8 + 4);
    bytes.extend_from_slice(&CHECKPOINT_MAGIC);
    bytes.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(delta.rows_out() as u64).to_le_bytes());
    bytes.extend_from_slice(&(delta.cols_in() as u64).to_le_bytes());
    bytes.extend_from_slice(&(delta.block_size() as u64).to_le_bytes());
    for v in delta.coeffs() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32fast::hash(&bytes);
    bytes.extend_from_slice(&crc.to_le_bytes());
    fs::write(path, &bytes)?;
    fs::write(meta_path(path), serde_json::to_vec_pretty(meta)?)?;
    Ok(())
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Integrity(format!("json: {e}"))
    }
}

/// Reads and fully validates a checkpoint (magic, version, shape, length,
/// checksum) before returning it. Nothing is applied to any layer here, so
/// a corrupt file can never leave partial state behind.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<AdapterCheckpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    const HEADER: usize = 4 + 4 + 24;
    if bytes.len() < HEADER + 4 {
        return Err(Error::Integrity(format!(
            "checkpoint truncated: {} bytes is shorter than the fixed header",
            bytes.len()
        )));
    }
    if bytes[0..4] != CHECKPOINT_MAGIC {
        return Err(Error::Version("not an adapter checkpoint (bad magic)".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version(format!(
            "unknown checkpoint version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let d_out = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let d_in = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
    let block_size = u64::from_le_bytes(bytes[24..32].try_into().unwrap()) as usize;
    if block_size == 0 || !d_out.is_multiple_of(block_size) || !d_in.is_multiple_of(block_size) {
        return Err(Error::Integrity(format!(
            "corrupt checkpoint header: block size {block_size} does not divide {d_out}x{d_in}"
        )));
    }
    let count = d_out / block_size * (d_in / block_size) * block_size;
    let expected = HEADER + count * 8 + 4;
    if bytes.len() != expected {
        return Err(Error::Integrity(format!(
            "checkpoint truncated or padded: {} bytes, expected {expected}",
            bytes.len()
        )));
    }
    let crc_stored = u32::from_le_bytes(bytes[expected - 4..].try_into().unwrap());
    let crc_actual = crc32fast::hash(&bytes[..expected - 4]);
    if crc_stored != crc_actual {
        return Err(Error::Integrity(format!(
            "checkpoint checksum mismatch: stored {crc_stored:#010x}, computed {crc_actual:#010x}"
        )));
    }
    let coeffs: Vec<f64> = bytes[HEADER..expected - 4]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let meta = match fs::read(meta_path(path)) {
        Ok(raw) => Some(serde_json::from_slice(&raw)?),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
        Err(e) => return Err(e.into()),
    };
    Ok(AdapterCheckpoint {
        d_out,
        d_in,
        block_size,
        coeffs,
        meta,
    })
}

impl AdapterLayer {
    /// Replaces the delta coefficients with checkpoint contents after shape
    /// validation.
    pub fn apply_checkpoint(&mut self, ckpt: &AdapterCheckpoint) -> Result<()> {
        let delta = &mut self.delta;
        if ckpt.d_out != delta.rows_out()
            || ckpt.d_in != delta.cols_in()
            || ckpt.block_size != delta.block_size()
        {
            return Err(Error::Compatibility(format!(
                "checkpoint holds a {}x{} delta with block size {}, layer expects {}x{} with block size {}",
                ckpt.d_out,
                ckpt.d_in,
                ckpt.block_size,
                delta.rows_out(),
                delta.cols_in(),
                delta.block_size()
            )));
        }
        delta.coeffs_mut().copy_from_slice(&ckpt.coeffs);
        Ok(())
    }
}

/// Synthetic regression task: a frozen random base model whose target is a
/// known block-circulant perturbation of the base weight, so the task is
/// exactly solvable by the adapter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyTaskConfig {
    pub input_dim: usize,
    pub output_dim: usize,
    /// Extra frozen dense layers applied to the input before the adapter.
    pub frozen_layers: usize,
    pub dataset_size: usize,
    pub seed: u64,
    pub label_noise: f64,
}

impl Default for ToyTaskConfig {
    fn default() -> Self {
        Self {
            input_dim: 128,
            output_dim: 128,
            frozen_layers: 0,
            dataset_size: 1024,
            seed: 0,
            label_noise: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyTrainConfig {
    pub task: ToyTaskConfig,
    pub block_size: usize,
    pub optimizer: OptimizerConfig,
    pub iterations: usize,
    pub batch_size: usize,
    pub record_every: usize,
    /// Stop once the loss falls below this value.
    pub stop_below_loss: Option<f64>,
}

impl Default for ToyTrainConfig {
    fn default() -> Self {
        Self {
            task: ToyTaskConfig::default(),
            block_size: 32,
            optimizer: OptimizerConfig::adadelta(1.0),
            iterations: 5000,
            batch_size: 16,
            record_every: 10,
            stop_below_loss: None,
        }
    }
}

impl ToyTrainConfig {
    pub fn validate(&self) -> Result<()> {
        let t = &self.task;
        if t.input_dim == 0 || t.output_dim == 0 || t.dataset_size == 0 {
            return Err(Error::config("toy task dimensions must be positive"));
        }
        if self.block_size == 0
            || !t.input_dim.is_multiple_of(self.block_size)
            || !t.output_dim.is_multiple_of(self.block_size)
        {
            return Err(Error::config(format!(
                "block size {} must divide input dim {} and output dim {}",
                self.block_size, t.input_dim, t.output_dim
            )));
        }
        if self.batch_size == 0 || self.record_every == 0 {
            return Err(Error::config("batch_size and record_every must be positive"));
        }
        if t.label_noise.is_nan() || t.label_noise < 0.0 {
            return Err(Error::config("label_noise must be non-negative"));
        }
        self.optimizer.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyTrainReport {
    pub records: Vec<TrainRecord>,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub diverged: bool,
    pub trainable_params: usize,
    pub steps_run: usize,
}

pub struct ToyTrainOutcome {
    pub layer: AdapterLayer,
    pub report: ToyTrainReport,
}

struct ToyTask {
    base: DenseMatrix,
    /// Pre-activations feeding the adapter (frozen prefix already applied).
    inputs: Vec<Vec<f64>>,
    labels: Vec<Vec<f64>>,
}

/// Builds the frozen model and dataset deterministically from the task seed.
fn build_toy_task(config: &ToyTrainConfig) -> Result<ToyTask> {
    let t = &config.task;
    let mut rng = ChaCha8Rng::seed_from_u64(t.seed);
    let scale = 1.0 / (t.input_dim as f64).sqrt();
    let base = DenseMatrix::from_fn(t.output_dim, t.input_dim, |_, _| {
        let v: f64 = rng.sample(StandardNormal);
        v * scale
    });
    let q = t.output_dim / config.block_size * (t.input_dim / config.block_size);
    let delta_coeffs: Vec<f64> = (0..q * config.block_size)
        .map(|_| {
            let v: f64 = rng.sample(StandardNormal);
            v * scale
        })
        .collect();
    let true_delta = BlockCirculantMatrix::from_coeffs(
        t.output_dim,
        t.input_dim,
        config.block_size,
        delta_coeffs,
    )?;
    let prefix: Vec<DenseMatrix> = (0..t.frozen_layers)
        .map(|_| {
            DenseMatrix::from_fn(t.input_dim, t.input_dim, |_, _| {
                let v: f64 = rng.sample(StandardNormal);
                v * scale
            })
        })
        .collect();

    let target = AdapterLayer::with_delta(base.clone(), true_delta)?;
    let mut inputs = Vec::with_capacity(t.dataset_size);
    let mut labels = Vec::with_capacity(t.dataset_size);
    for _ in 0..t.dataset_size {
        let mut z: Vec<f64> = (0..t.input_dim).map(|_| rng.sample(StandardNormal)).collect();
        for layer in &prefix {
            z = layer.matvec(&z)?;
        }
        let mut y = target.forward(&z)?;
        if t.label_noise > 0.0 {
            for v in y.iter_mut() {
                let e: f64 = rng.sample(StandardNormal);
                *v += t.label_noise * e;
            }
        }
        inputs.push(z);
        labels.push(y);
    }
    Ok(ToyTask {
        base,
        inputs,
        labels,
    })
}

/// Trains only the delta coefficients against the synthetic task, reporting
/// the loss trajectory. Divergence is recorded, not raised.
pub fn train_toy_adapter(config: &ToyTrainConfig) -> Result<ToyTrainOutcome> {
    train_toy_adapter_from(config, None)
}

/// Same as [`train_toy_adapter`], optionally resuming from checkpoint
/// contents: the delta coefficients are restored bitwise and the batch
/// schedule continues from the recorded step. Optimizer accumulators are
/// not part of the checkpoint format and start fresh.
pub fn train_toy_adapter_from(
    config: &ToyTrainConfig,
    resume: Option<&AdapterCheckpoint>,
) -> Result<ToyTrainOutcome> {
    config.validate()?;
    let task = build_toy_task(config)?;
    let mut layer = AdapterLayer::new(task.base.clone(), config.block_size)?;
    let mut start_step = 0usize;
    if let Some(ckpt) = resume {
        layer.apply_checkpoint(ckpt)?;
        start_step = ckpt.meta.as_ref().map_or(0, |m| m.step as usize);
    }

    let mut opt_config = config.optimizer.clone();
    opt_config.block_size = config.block_size;
    let mut optimizer = Optimizer::new(opt_config)?;

    let n_out = config.task.output_dim;
    let b = config.batch_size;
    let data_len = task.inputs.len();
    let mut records = Vec::new();
    let mut initial_loss = f64::NAN;
    let mut last_loss = f64::NAN;
    let mut saw_non_finite = false;
    let mut frozen = false;
    let mut steps_run = 0usize;

    for it in 0..config.iterations {
        let step_index = start_step + it;
        let batch_idx: Vec<usize> = (0..b).map(|k| (step_index * b + k) % data_len).collect();
        let xs: Vec<Vec<f64>> = batch_idx.iter().map(|&i| task.inputs[i].clone()).collect();
        let ys: Vec<Vec<f64>> = batch_idx.iter().map(|&i| task.labels[i].clone()).collect();

        let y_hat = layer.forward_batch(&xs)?;
        let loss = crate::sim::mse_loss_batch(&y_hat, &ys)?;
        if it == 0 {
            initial_loss = loss;
        }
        last_loss = loss;
        if !loss.is_finite() {
            saw_non_finite = true;
        }

        let scale = 2.0 / (n_out as f64 * b as f64);
        let grad_hs: Vec<Vec<f64>> = y_hat
            .iter()
            .zip(&ys)
            .map(|(yh, y)| yh.iter().zip(y).map(|(a, t)| scale * (a - t)).collect())
            .collect();
        let grads = block_circ_coeff_grad_batch(layer.delta(), &xs, &grad_hs)?;
        let grad_mean_abs = grads.iter().map(|g| g.abs()).sum::<f64>() / grads.len() as f64;

        if it % config.record_every == 0 || it + 1 == config.iterations {
            records.push(TrainRecord {
                iteration: step_index,
                mse: loss,
                grad_mean_abs,
            });
        }

        if !frozen {
            if grads.iter().all(|g| g.is_finite()) {
                optimizer.step(layer.delta_mut().coeffs_mut(), &grads)?;
            } else {
                saw_non_finite = true;
                frozen = true;
            }
        }
        steps_run = it + 1;

        if !last_loss.is_finite() || last_loss > 1e4 * initial_loss.max(1.0) {
            break;
        }
        if let Some(floor) = config.stop_below_loss {
            if last_loss < floor {
                break;
            }
        }
    }

    let trainable_params = layer.count_trainable();
    // a zero-step run is a no-op, not a divergence
    let diverged = steps_run > 0
        && (saw_non_finite || !last_loss.is_finite() || last_loss > initial_loss);
    Ok(ToyTrainOutcome {
        layer,
        report: ToyTrainReport {
            records,
            initial_loss,
            final_loss: last_loss,
            diverged,
            trainable_params,
            steps_run,
        },
    })
}
