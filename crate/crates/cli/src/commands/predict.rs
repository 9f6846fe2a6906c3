//! `predict`: run the inference pipeline (visual -> synthesized SWIR ->
//! segmentation) over a dataset split and write masks, probability planes
//! and the synthesized SWIR for inspection.

use std::path::Path;

use anyhow::{Context, Result};

use floodseg_core::mask::MaskLabel;
use floodseg_core::nn::{Module, StateDict};
use floodseg_core::segmentation::{predict_tile, SegmentorNet};
use floodseg_core::swir::Generator;

use crate::checkpoint;
use crate::commands::{load_split, parallel_map, write_effective_config, LoadedScene};
use crate::config::PipelineConfig;
use crate::dataset::{visual_batch, Manifest, Split};
use crate::export::save_mask_png;
use crate::raster::RasterData;

fn build_generator(config: &PipelineConfig, dict: &StateDict) -> Result<Generator> {
    let gan_cfg = config.gan_config();
    let generator = Generator::new(
        gan_cfg.generator_in_channels(),
        gan_cfg.base_width,
        gan_cfg.dropout,
        gan_cfg.seed,
    );
    generator
        .import_state(&format!("{}.generator", super::train_gan::GAN_STATE_PREFIX), dict)
        .context("restoring generator state")?;
    Ok(generator)
}

fn build_segmentor(config: &PipelineConfig, dict: &StateDict) -> Result<SegmentorNet> {
    let visual_channels = if config.gan.use_nir { 4 } else { 3 };
    let in_channels = visual_channels + usize::from(!config.seg.rgb_only);
    let net = SegmentorNet::new(in_channels, config.seg.base_width, config.seed);
    net.import_state(super::train_seg::SEG_STATE_PREFIX, dict)
        .context("restoring segmentor state")?;
    Ok(net)
}

pub fn run(
    config: &PipelineConfig,
    data_dir: &Path,
    gan_checkpoint: Option<&Path>,
    seg_checkpoint: &Path,
    split: Split,
    out_dir: &Path,
) -> Result<()> {
    write_effective_config(config, out_dir)?;
    let manifest = Manifest::load(&data_dir.join("manifest.json"))?;
    let scenes = load_split(data_dir, &manifest, split)?;

    let gan_dict = match (config.seg.rgb_only, gan_checkpoint) {
        (true, _) => None,
        (false, Some(p)) => {
            Some(checkpoint::load(p).with_context(|| format!("loading {}", p.display()))?)
        }
        (false, None) => anyhow::bail!("--gan-checkpoint is required unless seg.rgb_only"),
    };
    let seg_dict = checkpoint::load(seg_checkpoint)
        .with_context(|| format!("loading {}", seg_checkpoint.display()))?;

    // each worker builds its own networks from the shared state dicts
    let results = parallel_map(scenes.len(), config.runtime.threads, |i| {
        let scene: &LoadedScene = &scenes[i];
        let generator = gan_dict.as_ref().map(|d| build_generator(config, d)).transpose()?;
        let segmentor = build_segmentor(config, &seg_dict)?;
        let visual = visual_batch(&[&scene.raster], &manifest, config.gan.use_nir)?;
        let prediction = predict_tile(generator.as_ref(), &segmentor, &visual)?;
        let s_tilde = generator
            .as_ref()
            .map(|g| g.forward(&visual, false))
            .transpose()?
            .map(|t| t.to_vec());
        Ok((prediction, s_tilde))
    })?;

    for (scene, (prediction, s_tilde)) in scenes.iter().zip(results) {
        let (w, h) = (prediction.width, prediction.height);
        let mask_plane: Vec<f64> = prediction
            .mask
            .labels
            .iter()
            .map(|l| if *l == MaskLabel::Water { 1.0 } else { 0.0 })
            .collect();
        RasterData::new(w, h, vec![("MASK".into(), mask_plane)])?
            .save(&out_dir.join(format!("masks/{}.rast", scene.id)))?;
        save_mask_png(&prediction.mask, &out_dir.join(format!("masks/{}.png", scene.id)))?;
        RasterData::new(w, h, vec![("PROB".into(), prediction.probabilities.clone())])?
            .save(&out_dir.join(format!("prob/{}.rast", scene.id)))?;
        if let Some(swir) = s_tilde {
            RasterData::new(w, h, vec![("SWIR_SYNTH".into(), swir)])?
                .save(&out_dir.join(format!("swir/{}.rast", scene.id)))?;
        }
    }
    eprintln!("predicted {} scenes into {}", scenes.len(), out_dir.display());
    Ok(())
}
