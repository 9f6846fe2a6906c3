//! Dataset manifest, scene ingestion and network-input normalization.
//!
//! `synth-data` writes scenes plus a JSON manifest carrying the split
//! assignment and per-band statistics of the training split. Ingestion keeps
//! raw reflectance values (indices are computed on raw bands); the z-score
//! normalization using the manifest statistics is applied only when tensors
//! are built for network input.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use floodseg_core::indices::{Band, Raster};
use floodseg_core::mask::{Mask, MaskLabel};
use floodseg_core::synth::{generate_scene, split_counts};
use floodseg_core::tensor::Tensor;

use crate::config::PipelineConfig;
use crate::io_util::write_string_atomic;
use crate::raster::{to_scene_raster, RasterData};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => bail!("unknown split '{other}' (expected train, val or test)"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneEntry {
    pub id: String,
    pub split: Split,
    pub raster: String,
    pub truth: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandStat {
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub seed: u64,
    pub tile: usize,
    pub scenes: Vec<SceneEntry>,
    /// Per-band statistics over the training split, keyed by band name.
    pub band_stats: BTreeMap<String, BandStat>,
}

impl Manifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        write_string_atomic(path, &json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading manifest {}", path.display()))?;
        let manifest: Manifest = serde_json::from_str(&text)
            .with_context(|| format!("parsing manifest {}", path.display()))?;
        if manifest.version != MANIFEST_VERSION {
            bail!("unsupported manifest version {}", manifest.version);
        }
        Ok(manifest)
    }

    pub fn split_ids(&self, split: Split) -> Vec<&SceneEntry> {
        self.scenes.iter().filter(|s| s.split == split).collect()
    }

    pub fn stat(&self, band: Band) -> Result<BandStat> {
        self.band_stats
            .get(band.name())
            .copied()
            .ok_or_else(|| anyhow::anyhow!("manifest has no statistics for band {band}"))
    }
}

/// Generate the dataset under `out_dir`: scene and truth rasters plus the
/// manifest. Split sizes follow the floor rule (val/test floored, train
/// takes the remainder), assigned in scene order: train first, then val,
/// then test.
pub fn generate_dataset(config: &PipelineConfig, out_dir: &Path) -> Result<Manifest> {
    let n = config.data.scenes;
    let (n_train, n_val, n_test) = split_counts(
        n,
        (config.data.split[0], config.data.split[1], config.data.split[2]),
    )?;
    std::fs::create_dir_all(out_dir.join("scenes"))?;
    std::fs::create_dir_all(out_dir.join("truth"))?;

    let mut scenes = Vec::with_capacity(n);
    let mut sums: BTreeMap<String, (f64, f64, usize)> = BTreeMap::new();
    for i in 0..n {
        let spec = config.data.scene_spec(config.seed, i as u64);
        let scene = generate_scene(&spec)?;
        let id = format!("scene_{i:04}");
        let split = if i < n_train {
            Split::Train
        } else if i < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };

        let raster_rel = format!("scenes/{id}.rast");
        let truth_rel = format!("truth/{id}.rast");
        let bands: Vec<(String, Vec<f64>)> = scene
            .raster
            .bands()
            .map(|(b, p)| (b.name().to_string(), p.to_vec()))
            .collect();
        RasterData::new(spec.width, spec.height, bands)?.save(&out_dir.join(&raster_rel))?;
        let truth_plane: Vec<f64> = scene
            .truth
            .labels
            .iter()
            .map(|l| if *l == MaskLabel::Water { 1.0 } else { 0.0 })
            .collect();
        RasterData::new(spec.width, spec.height, vec![("TRUTH".into(), truth_plane)])?
            .save(&out_dir.join(&truth_rel))?;

        if split == Split::Train {
            for (band, plane) in scene.raster.bands() {
                let slot = sums.entry(band.name().to_string()).or_insert((0.0, 0.0, 0));
                for v in plane {
                    slot.0 += v;
                    slot.1 += v * v;
                    slot.2 += 1;
                }
            }
        }
        scenes.push(SceneEntry { id, split, raster: raster_rel, truth: truth_rel });
    }
    if n_train == 0 {
        bail!("dataset has no training scenes ({n} scenes, split {:?})", config.data.split);
    }
    let _ = n_test;

    let band_stats = sums
        .into_iter()
        .map(|(name, (s, s2, count))| {
            let mean = s / count as f64;
            let var = (s2 / count as f64 - mean * mean).max(0.0);
            (name, BandStat { mean, sd: var.sqrt().max(1e-12) })
        })
        .collect();

    let manifest = Manifest {
        version: MANIFEST_VERSION,
        seed: config.seed,
        tile: config.data.tile,
        scenes,
        band_stats,
    };
    manifest.save(&out_dir.join("manifest.json"))?;
    Ok(manifest)
}

/// Load a scene raster with raw band values.
pub fn ingest(path: &Path) -> Result<Raster> {
    let data = RasterData::load(path)
        .with_context(|| format!("loading raster {}", path.display()))?;
    to_scene_raster(&data)
}

/// Load a truth raster (band TRUTH, 0 = non-water, 1 = water).
pub fn load_truth(path: &Path) -> Result<Mask> {
    let data = RasterData::load(path)
        .with_context(|| format!("loading truth raster {}", path.display()))?;
    let plane = data
        .band("TRUTH")
        .ok_or_else(|| anyhow::anyhow!("{} has no TRUTH band", path.display()))?;
    let labels = plane
        .iter()
        .map(|v| if *v >= 0.5 { MaskLabel::Water } else { MaskLabel::NonWater })
        .collect();
    Ok(Mask::new(data.width, data.height, labels))
}

/// Z-score a band plane with the manifest statistics.
pub fn normalized_plane(raster: &Raster, band: Band, manifest: &Manifest) -> Result<Vec<f64>> {
    let stat = manifest.stat(band)?;
    Ok(raster
        .band(band)?
        .iter()
        .map(|v| (v - stat.mean) / stat.sd)
        .collect())
}

/// Stack normalized visual bands (R, G, B and optionally NIR) of several
/// equally sized rasters into a `[N,C,H,W]` network input tensor.
pub fn visual_batch(rasters: &[&Raster], manifest: &Manifest, use_nir: bool) -> Result<Tensor> {
    let bands: &[Band] = if use_nir {
        &[Band::R, Band::G, Band::B, Band::Nir]
    } else {
        &[Band::R, Band::G, Band::B]
    };
    let (w, h) = (rasters[0].width, rasters[0].height);
    let mut data = Vec::with_capacity(rasters.len() * bands.len() * w * h);
    for raster in rasters {
        for band in bands {
            data.extend(normalized_plane(raster, *band, manifest)?);
        }
    }
    Ok(Tensor::from_vec(&[rasters.len(), bands.len(), h, w], data)?)
}

/// Stack raw SWIR2 planes into a `[N,1,H,W]` regression target.
pub fn swir_batch(rasters: &[&Raster]) -> Result<Tensor> {
    let (w, h) = (rasters[0].width, rasters[0].height);
    let mut data = Vec::with_capacity(rasters.len() * w * h);
    for raster in rasters {
        data.extend_from_slice(raster.band(Band::Swir2)?);
    }
    Ok(Tensor::from_vec(&[rasters.len(), 1, h, w], data)?)
}

/// Resolve a manifest-relative path.
pub fn resolve(data_dir: &Path, rel: &str) -> PathBuf {
    data_dir.join(rel)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> PipelineConfig {
        let mut config = PipelineConfig::default();
        config.seed = 5;
        config.data.scenes = 20;
        config.data.tile = 32;
        config
    }

    #[test]
    fn dataset_round_trips_and_splits_disjointly() {
        let dir = tempfile::tempdir().unwrap();
        let config = tiny_config();
        let manifest = generate_dataset(&config, dir.path()).unwrap();
        assert_eq!(manifest.scenes.len(), 20);
        assert_eq!(manifest.split_ids(Split::Train).len(), 18);
        assert_eq!(manifest.split_ids(Split::Val).len(), 1);
        assert_eq!(manifest.split_ids(Split::Test).len(), 1);

        // manifest parse(write) = id
        let loaded = Manifest::load(&dir.path().join("manifest.json")).unwrap();
        assert_eq!(serde_json::to_string(&loaded).unwrap(), serde_json::to_string(&manifest).unwrap());

        // no id appears in two splits
        let mut seen = std::collections::BTreeSet::new();
        for s in &manifest.scenes {
            assert!(seen.insert(&s.id), "{} assigned twice", s.id);
        }

        // raster files are bit-identical on re-read
        let first = &manifest.scenes[0];
        let raster = ingest(&dir.path().join(&first.raster)).unwrap();
        assert_eq!(raster.width, 32);
        assert!(raster.has_band(Band::Swir2));
        let truth = load_truth(&dir.path().join(&first.truth)).unwrap();
        assert_eq!(truth.labels.len(), 32 * 32);
    }

    #[test]
    fn normalization_standardizes_training_bands() {
        let dir = tempfile::tempdir().unwrap();
        let config = tiny_config();
        let manifest = generate_dataset(&config, dir.path()).unwrap();
        let mut all = Vec::new();
        for entry in manifest.split_ids(Split::Train) {
            let raster = ingest(&dir.path().join(&entry.raster)).unwrap();
            all.extend(normalized_plane(&raster, Band::G, &manifest).unwrap());
        }
        let mean = all.iter().sum::<f64>() / all.len() as f64;
        let var = all.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / all.len() as f64;
        assert!(mean.abs() < 1e-9, "mean {mean}");
        assert!((var - 1.0).abs() < 1e-9, "var {var}");
    }

    #[test]
    fn visual_batch_shape_and_nir_flag() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = tiny_config();
        config.data.scenes = 3;
        config.data.split = [1.0, 0.0, 0.0];
        let manifest = generate_dataset(&config, dir.path()).unwrap();
        let rasters: Vec<Raster> = manifest
            .scenes
            .iter()
            .map(|s| ingest(&dir.path().join(&s.raster)).unwrap())
            .collect();
        let refs: Vec<&Raster> = rasters.iter().collect();
        assert_eq!(visual_batch(&refs, &manifest, false).unwrap().shape(), &[3, 3, 32, 32]);
        assert_eq!(visual_batch(&refs, &manifest, true).unwrap().shape(), &[3, 4, 32, 32]);
        assert_eq!(swir_batch(&refs).unwrap().shape(), &[3, 1, 32, 32]);
    }
}
