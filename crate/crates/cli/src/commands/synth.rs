//! `synth-data`: generate the synthetic dataset.

use std::path::Path;

use anyhow::Result;

use crate::commands::write_effective_config;
use crate::config::PipelineConfig;
use crate::dataset::generate_dataset;

pub fn run(config: &PipelineConfig, out_dir: &Path) -> Result<()> {
    write_effective_config(config, out_dir)?;
    let manifest = generate_dataset(config, out_dir)?;
    let (train, val, test) = (
        manifest.split_ids(crate::dataset::Split::Train).len(),
        manifest.split_ids(crate::dataset::Split::Val).len(),
        manifest.split_ids(crate::dataset::Split::Test).len(),
    );
    eprintln!(
        "wrote {} scenes ({} train / {} val / {} test) to {}",
        manifest.scenes.len(),
        train,
        val,
        test,
        out_dir.display()
    );
    Ok(())
}
