//! `train-gan`: generator warmup followed by adversarial training on the
//! training split.

use std::path::Path;

use anyhow::{Context, Result};

use floodseg_core::nn::Module;
use floodseg_core::swir::{GanStepReport, GanTrainer};

use crate::checkpoint;
use crate::commands::{epoch_batches, load_split, write_effective_config};
use crate::config::PipelineConfig;
use crate::dataset::{swir_batch, visual_batch, Manifest, Split};
use crate::io_util::write_string_atomic;

pub const GAN_STATE_PREFIX: &str = "gan";

pub fn loss_csv(rows: &[GanStepReport]) -> String {
    let mut csv =
        String::from("step,lr_generator,lr_discriminator,pixel,adversarial,discriminator,feature,warmup\n");
    for r in rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.step,
            r.lr_generator,
            r.lr_discriminator,
            r.pixel,
            r.adversarial,
            r.discriminator,
            r.feature,
            r.warmup
        ));
    }
    csv
}

pub fn run(config: &PipelineConfig, data_dir: &Path, out_dir: &Path) -> Result<()> {
    write_effective_config(config, out_dir)?;
    let manifest = Manifest::load(&data_dir.join("manifest.json"))?;
    let scenes = load_split(data_dir, &manifest, Split::Train)?;

    let batches_per_epoch =
        epoch_batches(scenes.len(), config.gan.batch_size, 2, config.seed, 0).len() as u64;
    anyhow::ensure!(batches_per_epoch > 0, "training split too small for the batch size");
    let total_epochs = config.gan.warmup_epochs + config.gan.adversarial_epochs;
    let total_steps = total_epochs as u64 * batches_per_epoch;
    let warmup_steps = config.gan.warmup_epochs as u64 * batches_per_epoch;

    let mut trainer = GanTrainer::new(&config.gan_config(), total_steps, warmup_steps)?;
    let mut rows = Vec::new();
    for epoch in 0..total_epochs {
        for batch in epoch_batches(scenes.len(), config.gan.batch_size, 2, config.seed, epoch as u64)
        {
            let rasters: Vec<_> = batch.iter().map(|i| &scenes[*i].raster).collect();
            let visual = visual_batch(&rasters, &manifest, config.gan.use_nir)?;
            let swir = swir_batch(&rasters)?;
            let report = trainer
                .step(&visual, &swir)
                .with_context(|| format!("GAN training step in epoch {epoch}"))?;
            rows.push(report);
        }
    }

    let mut entries = Vec::new();
    trainer.export_state(GAN_STATE_PREFIX, &mut entries);
    checkpoint::save(&out_dir.join("gan.ckpt"), &entries)?;
    write_string_atomic(&out_dir.join("gan_loss.csv"), &loss_csv(&rows))?;
    eprintln!(
        "trained GAN for {} steps ({} warmup); checkpoint at {}",
        rows.len(),
        warmup_steps,
        out_dir.join("gan.ckpt").display()
    );
    Ok(())
}
