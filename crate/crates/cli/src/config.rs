//! Pipeline configuration: TOML file, defaults, validation and environment
//! overrides.
//!
//! Unknown keys are rejected on load. Every key can be overridden through
//! the environment as `FLOODSEG_<SECTION>__<KEY>` (double underscore nests,
//! e.g. `FLOODSEG_GAN__BATCH_SIZE=8`, `FLOODSEG_SEED=7`); values are parsed
//! as TOML scalars. Commands write the effective configuration next to
//! their outputs.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use floodseg_core::distmap::Thresholds;
use floodseg_core::refiner::RefinerConfig;
use floodseg_core::segmentation::SegConfig;
use floodseg_core::swir::{GanConfig, LossWeights};
use floodseg_core::synth::{BoundaryNoise, SceneSpec, SpectralModel, WaterBodies};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub scenes: usize,
    pub tile: usize,
    pub split: [f64; 3],
    pub blob_count: [usize; 2],
    pub blob_radius: [f64; 2],
    pub stream_count: [usize; 2],
    pub stream_half_width: f64,
    pub meander_sd: f64,
    pub boundary_noise: bool,
    pub boundary_band_px: f64,
    pub boundary_noise_sd: f64,
    pub cloud_shadows: bool,
    pub spectral: SpectralModel,
}

impl Default for DataSection {
    fn default() -> Self {
        let noise = BoundaryNoise::default();
        let water = WaterBodies::default();
        DataSection {
            scenes: 24,
            tile: 32,
            split: [0.90, 0.05, 0.05],
            blob_count: [water.blob_count.0, water.blob_count.1],
            blob_radius: [water.blob_radius.0, water.blob_radius.1],
            stream_count: [water.stream_count.0, water.stream_count.1],
            stream_half_width: water.stream_half_width,
            meander_sd: water.meander_sd,
            boundary_noise: true,
            boundary_band_px: noise.band_px,
            boundary_noise_sd: noise.sd,
            cloud_shadows: false,
            spectral: SpectralModel::default(),
        }
    }
}

impl DataSection {
    /// Scene spec for dataset index `i` under top-level seed `seed`.
    pub fn scene_spec(&self, seed: u64, index: u64) -> SceneSpec {
        SceneSpec {
            width: self.tile,
            height: self.tile,
            seed: floodseg_core::seeds::derive(seed, "synth/scene", index),
            water: WaterBodies {
                blob_count: (self.blob_count[0], self.blob_count[1]),
                blob_radius: (self.blob_radius[0], self.blob_radius[1]),
                stream_count: (self.stream_count[0], self.stream_count[1]),
                stream_half_width: self.stream_half_width,
                meander_sd: self.meander_sd,
            },
            spectral: self.spectral,
            boundary_noise: self.boundary_noise.then_some(BoundaryNoise {
                band_px: self.boundary_band_px,
                sd: self.boundary_noise_sd,
            }),
            cloud_shadows: self.cloud_shadows,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IndicesSection {
    pub mndwi_threshold: f64,
    pub swir_threshold: f64,
}

impl Default for IndicesSection {
    fn default() -> Self {
        IndicesSection { mndwi_threshold: 0.35, swir_threshold: 0.35 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingSection {
    pub phi_high: f64,
    pub phi_low: f64,
    pub max_per_class: usize,
}

impl Default for SamplingSection {
    fn default() -> Self {
        let t = Thresholds::default();
        SamplingSection {
            phi_high: t.phi_high,
            phi_low: t.phi_low,
            max_per_class: 65_536,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefinerSection {
    pub k_iterations: usize,
    pub learning_rate: f64,
    pub hidden: usize,
    pub adaptive_dmap: bool,
}

impl Default for RefinerSection {
    fn default() -> Self {
        let c = RefinerConfig::default();
        RefinerSection {
            k_iterations: c.k_iterations,
            learning_rate: c.learning_rate,
            hidden: c.hidden,
            adaptive_dmap: c.adaptive_dmap,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GanSection {
    pub base_width: usize,
    pub dropout: f64,
    pub lr_generator: f64,
    pub lr_discriminator: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub lambda_g: f64,
    pub lambda_d: f64,
    pub lambda_f: f64,
    pub min_lr_factor: f64,
    pub use_nir: bool,
    pub warmup_epochs: usize,
    pub adversarial_epochs: usize,
    pub batch_size: usize,
}

impl Default for GanSection {
    fn default() -> Self {
        let c = GanConfig::default();
        GanSection {
            base_width: c.base_width,
            dropout: c.dropout,
            lr_generator: c.lr_generator,
            lr_discriminator: c.lr_discriminator,
            beta1: c.beta1,
            beta2: c.beta2,
            lambda_g: c.weights.lambda_g,
            lambda_d: c.weights.lambda_d,
            lambda_f: c.weights.lambda_f,
            min_lr_factor: c.min_lr_factor,
            use_nir: c.use_nir,
            warmup_epochs: 2,
            adversarial_epochs: 6,
            batch_size: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegSection {
    pub base_width: usize,
    pub lr: f64,
    pub joint_epochs: usize,
    pub rgb_only: bool,
    pub freeze_generator: bool,
    pub cache_refined: bool,
}

impl Default for SegSection {
    fn default() -> Self {
        let c = SegConfig::default();
        SegSection {
            base_width: c.base_width,
            lr: c.lr,
            joint_epochs: 8,
            rgb_only: c.rgb_only,
            freeze_generator: c.freeze_generator,
            cache_refined: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RuntimeSection {
    pub threads: usize,
}

impl Default for RuntimeSection {
    fn default() -> Self {
        RuntimeSection { threads: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub data: DataSection,
    pub indices: IndicesSection,
    pub sampling: SamplingSection,
    pub refiner: RefinerSection,
    pub gan: GanSection,
    pub seg: SegSection,
    pub runtime: RuntimeSection,
}

/// Parse an environment value as a TOML scalar (bool, integer, float,
/// quoted string, array), falling back to a plain string.
fn parse_scalar(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut table) => table.remove("v").expect("key v exists"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

impl PipelineConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut config: PipelineConfig = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?
            }
            None => PipelineConfig::default(),
        };
        config.apply_env_overrides()?;
        config.validate()?;
        Ok(config)
    }

    /// Apply `FLOODSEG_*` environment overrides (see module docs).
    pub fn apply_env_overrides(&mut self) -> Result<()> {
        let mut value = toml::Value::try_from(&*self).context("serializing config")?;
        let mut vars: Vec<(String, String)> = std::env::vars()
            .filter(|(k, _)| k.starts_with("FLOODSEG_"))
            .collect();
        vars.sort();
        for (key, raw) in vars {
            let path: Vec<String> = key["FLOODSEG_".len()..]
                .split("__")
                .map(|s| s.to_lowercase())
                .collect();
            let mut slot = &mut value;
            for (i, part) in path.iter().enumerate() {
                let table = slot
                    .as_table_mut()
                    .ok_or_else(|| anyhow::anyhow!("override {key}: {part} is not a table"))?;
                if !table.contains_key(part) {
                    bail!("override {key}: unknown config key '{}'", path.join("."));
                }
                if i + 1 == path.len() {
                    table.insert(part.clone(), parse_scalar(&raw));
                    break;
                }
                slot = table.get_mut(part).unwrap();
            }
        }
        *self = value.try_into().context("applying environment overrides")?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let split_sum: f64 = self.data.split.iter().sum();
        if (split_sum - 1.0).abs() > 1e-9 || self.data.split.iter().any(|f| *f < 0.0) {
            bail!("data.split must be non-negative and sum to 1, got {:?}", self.data.split);
        }
        if self.data.scenes == 0 {
            bail!("data.scenes must be positive");
        }
        if self.data.tile == 0 || self.data.tile % 32 != 0 {
            bail!("data.tile must be a positive multiple of 32, got {}", self.data.tile);
        }
        if self.sampling.phi_high <= self.sampling.phi_low {
            bail!(
                "sampling.phi_high ({}) must exceed sampling.phi_low ({})",
                self.sampling.phi_high,
                self.sampling.phi_low
            );
        }
        if self.refiner.k_iterations == 0 {
            bail!("refiner.k_iterations must be >= 1");
        }
        if self.gan.batch_size < 2 {
            bail!("gan.batch_size must be >= 2 (patch discriminator batch norm)");
        }
        if self.gan.lambda_g < 0.0 || self.gan.lambda_d < 0.0 || self.gan.lambda_f < 0.0 {
            bail!("gan lambda weights must be non-negative");
        }
        if !(0.0..1.0).contains(&self.gan.dropout) {
            bail!("gan.dropout must be in [0, 1)");
        }
        if self.runtime.threads == 0 {
            bail!("runtime.threads must be >= 1");
        }
        Ok(())
    }

    pub fn effective_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn thresholds(&self) -> Thresholds {
        Thresholds {
            phi_high: self.sampling.phi_high,
            phi_low: self.sampling.phi_low,
        }
    }

    pub fn refiner_config(&self) -> RefinerConfig {
        RefinerConfig {
            k_iterations: self.refiner.k_iterations,
            learning_rate: self.refiner.learning_rate,
            thresholds: self.thresholds(),
            max_per_class: self.sampling.max_per_class,
            hidden: self.refiner.hidden,
            adaptive_dmap: self.refiner.adaptive_dmap,
            coarse_threshold: self.indices.mndwi_threshold,
            seed: self.seed,
        }
    }

    pub fn gan_config(&self) -> GanConfig {
        GanConfig {
            use_nir: self.gan.use_nir,
            base_width: self.gan.base_width,
            dropout: self.gan.dropout,
            lr_generator: self.gan.lr_generator,
            lr_discriminator: self.gan.lr_discriminator,
            beta1: self.gan.beta1,
            beta2: self.gan.beta2,
            min_lr_factor: self.gan.min_lr_factor,
            weights: LossWeights {
                lambda_g: self.gan.lambda_g,
                lambda_d: self.gan.lambda_d,
                lambda_f: self.gan.lambda_f,
            },
            seed: self.seed,
        }
    }

    pub fn seg_config(&self) -> SegConfig {
        SegConfig {
            base_width: self.seg.base_width,
            lr: self.seg.lr,
            beta1: self.gan.beta1,
            beta2: self.gan.beta2,
            min_lr_factor: self.gan.min_lr_factor,
            rgb_only: self.seg.rgb_only,
            freeze_generator: self.seg.freeze_generator,
            seed: self.seed,
        }
    }
}
