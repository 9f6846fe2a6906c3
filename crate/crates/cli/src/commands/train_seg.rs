//! `train-seg`: joint training of the segmentor with the (optionally frozen)
//! SWIR generator, supervised by run-time refined masks.

use std::path::Path;

use anyhow::{Context, Result};

use floodseg_core::indices::mndwi;
use floodseg_core::mask::Mask;
use floodseg_core::nn::Module;
use floodseg_core::refiner::refine_batch;
use floodseg_core::segmentation::{JointStepReport, JointTrainer};
use floodseg_core::swir::GanTrainer;

use crate::checkpoint;
use crate::commands::{epoch_batches, load_split, write_effective_config, LoadedScene};
use crate::config::PipelineConfig;
use crate::dataset::{swir_batch, visual_batch, Manifest, Split};
use crate::io_util::write_string_atomic;

pub const SEG_STATE_PREFIX: &str = "segmentor";

fn loss_csv(rows: &[(u64, JointStepReport)]) -> String {
    let mut csv = String::from(
        "step,lr_segmentor,seg_loss,fallback_tiles,gan_pixel,gan_adversarial,gan_discriminator,gan_feature\n",
    );
    for (step, r) in rows {
        let (p, a, d, f) = r
            .gan
            .map(|g| (g.pixel, g.adversarial, g.discriminator, g.feature))
            .unwrap_or((0.0, 0.0, 0.0, 0.0));
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            step, r.lr_segmentor, r.seg_loss, r.fallback_tiles, p, a, d, f
        ));
    }
    csv
}

pub fn run(
    config: &PipelineConfig,
    data_dir: &Path,
    gan_checkpoint: Option<&Path>,
    out_dir: &Path,
) -> Result<()> {
    write_effective_config(config, out_dir)?;
    let manifest = Manifest::load(&data_dir.join("manifest.json"))?;
    let scenes = load_split(data_dir, &manifest, Split::Train)?;

    let batch_size = config.gan.batch_size;
    let batches_per_epoch = epoch_batches(scenes.len(), batch_size, 2, config.seed, 0).len() as u64;
    anyhow::ensure!(batches_per_epoch > 0, "training split too small for the batch size");
    let total_steps = config.seg.joint_epochs as u64 * batches_per_epoch;

    let gan = if config.seg.rgb_only {
        None
    } else {
        let path = gan_checkpoint
            .ok_or_else(|| anyhow::anyhow!("--gan-checkpoint is required unless seg.rgb_only"))?;
        let dict = checkpoint::load(path)
            .with_context(|| format!("loading GAN checkpoint {}", path.display()))?;
        let trainer = GanTrainer::new(&config.gan_config(), total_steps, 0)?;
        trainer
            .import_state(super::train_gan::GAN_STATE_PREFIX, &dict)
            .context("restoring GAN state")?;
        Some(trainer)
    };

    let visual_channels = if config.gan.use_nir { 4 } else { 3 };
    let mut trainer = JointTrainer::new(
        &config.seg_config(),
        gan,
        config.refiner_config(),
        total_steps,
        visual_channels,
    );

    // optional cache: refine each scene once (individually) and reuse the
    // masks for every epoch instead of refining per batch
    let cached: Option<Vec<Mask>> = if config.seg.cache_refined {
        let indices: Vec<_> = scenes
            .iter()
            .map(|s| mndwi(&s.raster))
            .collect::<floodseg_core::Result<_>>()?;
        let refined = refine_batch(&indices, &config.refiner_config())?;
        Some(refined.into_iter().map(|(m, _)| m.mask).collect())
    } else {
        None
    };

    let mut rows = Vec::new();
    let mut step = 0u64;
    for epoch in 0..config.seg.joint_epochs {
        for batch in epoch_batches(scenes.len(), batch_size, 2, config.seed, 1000 + epoch as u64) {
            let members: Vec<&LoadedScene> = batch.iter().map(|i| &scenes[*i]).collect();
            let rasters: Vec<_> = members.iter().map(|s| &s.raster).collect();
            let visual = visual_batch(&rasters, &manifest, config.gan.use_nir)?;
            let swir = if config.seg.rgb_only { None } else { Some(swir_batch(&rasters)?) };
            let index_batch: Vec<_> = rasters
                .iter()
                .map(|r| mndwi(r))
                .collect::<floodseg_core::Result<_>>()?;
            let batch_cache: Option<Vec<Mask>> =
                cached.as_ref().map(|all| batch.iter().map(|i| all[*i].clone()).collect());
            let report = trainer
                .step(&visual, swir.as_ref(), &index_batch, batch_cache.as_deref())
                .with_context(|| format!("joint training step in epoch {epoch}"))?;
            rows.push((step, report));
            step += 1;
        }
    }

    let mut entries = Vec::new();
    trainer.segmentor.export_state(SEG_STATE_PREFIX, &mut entries);
    checkpoint::save(&out_dir.join("seg.ckpt"), &entries)?;
    if let Some(gan) = &trainer.gan {
        let mut gan_entries = Vec::new();
        gan.export_state(super::train_gan::GAN_STATE_PREFIX, &mut gan_entries);
        checkpoint::save(&out_dir.join("gan_finetuned.ckpt"), &gan_entries)?;
    }
    write_string_atomic(&out_dir.join("seg_loss.csv"), &loss_csv(&rows))?;
    eprintln!(
        "trained segmentor for {} joint steps; checkpoint at {}",
        rows.len(),
        out_dir.join("seg.ckpt").display()
    );
    Ok(())
}
