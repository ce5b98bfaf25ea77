//! Config-file handling. One TOML file can hold a section per subcommand;
//! omitted fields take the library defaults and command-line flags override
//! whatever the file set.

use std::path::{Path, PathBuf};

use bca_core::adapter::ToyTrainConfig;
use bca_core::sim::SimulationConfig;
use bca_core::Error;
use serde::Deserialize;

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub simulate: Option<SimulationConfig>,
    pub demo_divergence: Option<DemoSection>,
    pub train_toy: Option<ToyTrainConfig>,
    pub complexity: Option<ComplexitySection>,
}

/// The divergence-demo section keeps every field optional so an absent `lr`
/// means "calibrate the largest dense-converging rate first".
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemoSection {
    pub n: Option<usize>,
    pub block_size: Option<usize>,
    pub lr: Option<f64>,
    pub iterations: Option<usize>,
    pub batch_size: Option<usize>,
    pub seed: Option<u64>,
    pub record_every: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComplexitySection {
    pub preset: Option<String>,
    pub d_out: Option<usize>,
    pub d_in: Option<usize>,
    pub layers: Option<usize>,
    pub matrices: Option<usize>,
    pub block_sizes: Vec<usize>,
    pub methods: Vec<String>,
    pub lora_rank: usize,
    pub vera_rank: usize,
    pub fourier_freqs: usize,
}

impl Default for ComplexitySection {
    fn default() -> Self {
        Self {
            preset: None,
            d_out: None,
            d_in: None,
            layers: None,
            matrices: None,
            block_sizes: vec![128, 256, 512, 1024],
            methods: vec!["bca".into()],
            lora_rank: 64,
            vera_rank: 256,
            fourier_freqs: 1000,
        }
    }
}

/// Parses the file, mapping syntax and unknown-field problems to config
/// errors that name the offender.
pub fn load(path: &Path) -> Result<FileConfig, Error> {
    let raw = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&raw).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}
