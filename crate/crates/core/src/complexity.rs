//! Closed-form trainable-parameter and FLOP accounting for block-circulant
//! adapters and the reported comparison methods.
//!
//! FLOP convention (forward pass, per token, training mode): a complex FFT
//! of size `n` costs `5 n log2(n)` real FLOPs, a complex multiply 6, a
//! complex add 2. For one block-circulant matrix the count is
//!
//! ```text
//! (q_out*q_in + q_in + q_out) FFTs        coefficient, input and inverse
//! + q_out*q_in * 6p                       pointwise spectral products
//! + q_out*(q_in - 1) * 2p                 spectral accumulation
//! ```
//!
//! Coefficient spectra are counted on every forward pass because training
//! changes the coefficients each step. Baseline formulas are reporting-only
//! conveniences; their conventions are documented on each function.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which weight matrices of a model get adapters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub d_out: usize,
    pub d_in: usize,
    pub matrices_per_layer: usize,
    pub num_layers: usize,
}

impl LayerSpec {
    pub fn new(d_out: usize, d_in: usize, matrices_per_layer: usize, num_layers: usize) -> Result<Self> {
        let spec = Self {
            d_out,
            d_in,
            matrices_per_layer,
            num_layers,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Query and value projections of LLaMA2-7B attention: d=4096, 2
    /// matrices per layer, 32 layers.
    pub fn llama2_7b_qv() -> Self {
        Self {
            d_out: 4096,
            d_in: 4096,
            matrices_per_layer: 2,
            num_layers: 32,
        }
    }

    /// Query and value projections of RoBERTa-base: d=768, 12 layers.
    pub fn roberta_base_qv() -> Self {
        Self {
            d_out: 768,
            d_in: 768,
            matrices_per_layer: 2,
            num_layers: 12,
        }
    }

    /// Query and value projections of RoBERTa-large: d=1024, 24 layers.
    pub fn roberta_large_qv() -> Self {
        Self {
            d_out: 1024,
            d_in: 1024,
            matrices_per_layer: 2,
            num_layers: 24,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_out == 0 || self.d_in == 0 || self.matrices_per_layer == 0 || self.num_layers == 0
        {
            return Err(Error::config("layer spec fields must all be positive"));
        }
        Ok(())
    }

    fn matrices(&self) -> u64 {
        (self.num_layers * self.matrices_per_layer) as u64
    }

    fn check_divisible(&self, p: usize) -> Result<()> {
        if p == 0 || !self.d_out.is_multiple_of(p) || !self.d_in.is_multiple_of(p) {
            return Err(Error::config(format!(
                "block size {p} must divide d_out={} and d_in={}",
                self.d_out, self.d_in
            )));
        }
        Ok(())
    }
}

/// Trainable parameters of the block-circulant adapter:
/// `num_layers * matrices_per_layer * d_out * d_in / p`.
pub fn bca_params(spec: &LayerSpec, p: usize) -> Result<u64> {
    spec.validate()?;
    spec.check_divisible(p)?;
    Ok(spec.matrices() * (spec.d_out * spec.d_in / p) as u64)
}

fn fft_flops(p: usize) -> f64 {
    5.0 * p as f64 * (p as f64).log2()
}

/// Forward FLOPs per token for the block-circulant adapter under the
/// documented convention.
pub fn bca_flops(spec: &LayerSpec, p: usize) -> Result<u64> {
    spec.validate()?;
    spec.check_divisible(p)?;
    let q_out = (spec.d_out / p) as f64;
    let q_in = (spec.d_in / p) as f64;
    let ffts = q_out * q_in + q_in + q_out;
    let per_matrix =
        ffts * fft_flops(p) + q_out * q_in * 6.0 * p as f64 + q_out * (q_in - 1.0) * 2.0 * p as f64;
    Ok((spec.matrices() as f64 * per_matrix).round() as u64)
}

/// Full fine-tuning of the targeted matrices.
pub fn dense_params(spec: &LayerSpec) -> Result<u64> {
    spec.validate()?;
    Ok(spec.matrices() * (spec.d_out * spec.d_in) as u64)
}

pub fn dense_flops(spec: &LayerSpec) -> Result<u64> {
    spec.validate()?;
    Ok(spec.matrices() * (2 * spec.d_out * spec.d_in) as u64)
}

/// Standard low-rank adapter count, `rank * (d_out + d_in)` per matrix.
pub fn lora_params(spec: &LayerSpec, rank: usize) -> Result<u64> {
    spec.validate()?;
    if rank == 0 {
        return Err(Error::config("rank must be at least 1"));
    }
    Ok(spec.matrices() * (rank * (spec.d_out + spec.d_in)) as u64)
}

/// Two dense low-rank products per matrix, 2 FLOPs per multiply-add.
pub fn lora_flops(spec: &LayerSpec, rank: usize) -> Result<u64> {
    spec.validate()?;
    if rank == 0 {
        return Err(Error::config("rank must be at least 1"));
    }
    Ok(spec.matrices() * (2 * rank * (spec.d_out + spec.d_in)) as u64)
}

/// Trainable vectors of the shared-random-matrix method: a scaling vector
/// per output dimension plus one per rank, per matrix. The shared frozen
/// matrices are not counted.
pub fn vera_params(spec: &LayerSpec, rank: usize) -> Result<u64> {
    spec.validate()?;
    if rank == 0 {
        return Err(Error::config("rank must be at least 1"));
    }
    Ok(spec.matrices() * (spec.d_out + rank) as u64)
}

/// Low-rank path plus the two elementwise scalings.
pub fn vera_flops(spec: &LayerSpec, rank: usize) -> Result<u64> {
    spec.validate()?;
    if rank == 0 {
        return Err(Error::config("rank must be at least 1"));
    }
    Ok(spec.matrices() * (2 * rank * (spec.d_out + spec.d_in) + rank + spec.d_out) as u64)
}

/// Sparse spectral coefficients trained per matrix.
pub fn fourierft_params(spec: &LayerSpec, n_freq: usize) -> Result<u64> {
    spec.validate()?;
    if n_freq == 0 {
        return Err(Error::config("n_freq must be at least 1"));
    }
    Ok(spec.matrices() * n_freq as u64)
}

/// Weight generation through a two-dimensional FFT over the full d_out x
/// d_in grid, two transforms per matrix: `2 * 5 * d^2 * log2(d^2)`.
/// Documented formula only; no tight agreement is claimed.
pub fn fourierft_flops(spec: &LayerSpec) -> Result<u64> {
    spec.validate()?;
    let grid = (spec.d_out * spec.d_in) as f64;
    Ok((spec.matrices() as f64 * 2.0 * 5.0 * grid * grid.log2()).round() as u64)
}

/// A method/configuration whose complexity can be reported.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Method {
    Bca { block_size: usize },
    Dense,
    Lora { rank: usize },
    Vera { rank: usize },
    FourierFt { n_freq: usize },
}

impl Method {
    fn label(&self) -> String {
        match self {
            Method::Bca { block_size } => format!("bca[p={block_size}]"),
            Method::Dense => "dense".to_string(),
            Method::Lora { rank } => format!("lora[r={rank}]"),
            Method::Vera { rank } => format!("vera[r={rank}]"),
            Method::FourierFt { n_freq } => format!("fourierft[n={n_freq}]"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexityEntry {
    pub method: String,
    pub trainable_params: u64,
    pub forward_flops: u64,
    pub params_human: String,
    pub flops_human: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub spec: LayerSpec,
    pub entries: Vec<ComplexityEntry>,
}

/// Builds the per-method table for one layer spec. Deterministic: the same
/// inputs produce the same report.
pub fn report(methods: &[Method], spec: &LayerSpec) -> Result<ComplexityReport> {
    spec.validate()?;
    let mut entries = Vec::with_capacity(methods.len());
    for method in methods {
        let (params, flops) = match *method {
            Method::Bca { block_size } => (bca_params(spec, block_size)?, bca_flops(spec, block_size)?),
            Method::Dense => (dense_params(spec)?, dense_flops(spec)?),
            Method::Lora { rank } => (lora_params(spec, rank)?, lora_flops(spec, rank)?),
            Method::Vera { rank } => (vera_params(spec, rank)?, vera_flops(spec, rank)?),
            Method::FourierFt { n_freq } => (fourierft_params(spec, n_freq)?, fourierft_flops(spec)?),
        };
        entries.push(ComplexityEntry {
            method: method.label(),
            trainable_params: params,
            forward_flops: flops,
            params_human: format_count(params),
            flops_human: format_count(flops),
        });
    }
    Ok(ComplexityReport {
        spec: *spec,
        entries,
    })
}

impl ComplexityReport {
    /// Aligned text table.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "layer spec: d_out={} d_in={} matrices/layer={} layers={}\n",
            self.spec.d_out, self.spec.d_in, self.spec.matrices_per_layer, self.spec.num_layers
        ));
        out.push_str(&format!(
            "{:<18} {:>16} {:>10} {:>16} {:>10}\n",
            "method", "params", "", "flops", ""
        ));
        for e in &self.entries {
            out.push_str(&format!(
                "{:<18} {:>16} {:>10} {:>16} {:>10}\n",
                e.method, e.trainable_params, e.params_human, e.forward_flops, e.flops_human
            ));
        }
        out
    }
}

/// Human-readable count with the K/M/G units used in the reports.
pub fn format_count(v: u64) -> String {
    let v = v as f64;
    if v >= 1e9 {
        format!("{:.2}G", v / 1e9)
    } else if v >= 1e6 {
        format!("{:.2}M", v / 1e6)
    } else if v >= 1e3 {
        format!("{:.2}K", v / 1e3)
    } else {
        format!("{v}")
    }
}
