pub mod complexity;
pub mod demo;
pub mod simulate;
pub mod train_toy;

use std::fs;
use std::path::Path;

use bca_core::Result;

/// Creates the output directory and writes a file inside it.
pub fn write_artifact(dir: &Path, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), contents.as_ref())?;
    Ok(())
}
