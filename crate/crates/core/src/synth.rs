//! Deterministic synthetic multiband scenes with exact ground truth.
//!
//! Scenes stand in for real satellite tiles: water bodies are unions of
//! elliptical blobs plus meandering streams, and each band is drawn from a
//! per-class spectral model. Two stress knobs exist: zero-mean band noise
//! restricted to a strip around the true water boundary (which corrupts
//! threshold masks exactly where real indices fail), and dark cloud-shadow
//! patches that have low SWIR2 but are land in truth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::distmap::{distance_map, PointClass};
use crate::error::{CoreError, Result};
use crate::indices::{Band, Raster};
use crate::mask::{Mask, MaskLabel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandStats {
    pub mean: f64,
    pub sd: f64,
}

impl BandStats {
    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        let n = Normal::new(self.mean, self.sd).expect("valid normal");
        n.sample(rng).clamp(0.001, 1.5)
    }
}

/// Per-band statistics for one surface class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralClass {
    pub r: BandStats,
    pub g: BandStats,
    pub b: BandStats,
    pub nir: BandStats,
    pub swir2: BandStats,
}

impl SpectralClass {
    fn stats(&self, band: Band) -> BandStats {
        match band {
            Band::R => self.r,
            Band::G => self.g,
            Band::B => self.b,
            Band::Nir => self.nir,
            Band::Swir2 => self.swir2,
        }
    }
}

/// Spectral model for the three surface kinds a scene can contain.
///
/// Defaults put mean water MNDWI near 0.6 and mean land MNDWI near -0.25, so
/// the standard 0.5 / -0.2 confidence thresholds sample both classes on mixed
/// scenes. Water is rendered dark and greenish in RGB; shadow patches are
/// dark and hue-neutral with SWIR2 well above water.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralModel {
    pub land: SpectralClass,
    pub water: SpectralClass,
    pub shadow: SpectralClass,
}

impl Default for SpectralModel {
    fn default() -> Self {
        let s = |mean: f64, sd: f64| BandStats { mean, sd };
        SpectralModel {
            land: SpectralClass {
                r: s(0.22, 0.02),
                g: s(0.24, 0.02),
                b: s(0.18, 0.02),
                nir: s(0.38, 0.03),
                swir2: s(0.40, 0.02),
            },
            water: SpectralClass {
                r: s(0.08, 0.015),
                g: s(0.20, 0.015),
                b: s(0.16, 0.015),
                nir: s(0.04, 0.01),
                swir2: s(0.05, 0.015),
            },
            shadow: SpectralClass {
                r: s(0.07, 0.01),
                g: s(0.075, 0.01),
                b: s(0.065, 0.01),
                nir: s(0.11, 0.01),
                swir2: s(0.16, 0.01),
            },
        }
    }
}

/// Water body geometry parameters. Counts are inclusive ranges resolved per
/// scene from the seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaterBodies {
    pub blob_count: (usize, usize),
    pub blob_radius: (f64, f64),
    pub stream_count: (usize, usize),
    pub stream_half_width: f64,
    pub meander_sd: f64,
}

impl Default for WaterBodies {
    fn default() -> Self {
        WaterBodies {
            blob_count: (1, 3),
            blob_radius: (3.0, 9.0),
            stream_count: (0, 1),
            stream_half_width: 1.5,
            meander_sd: 0.35,
        }
    }
}

/// Zero-mean gaussian noise added to the G and SWIR2 bands of pixels within
/// `band_px` of the true water boundary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryNoise {
    pub band_px: f64,
    pub sd: f64,
}

impl Default for BoundaryNoise {
    fn default() -> Self {
        BoundaryNoise { band_px: 2.0, sd: 0.22 }
    }
}

/// Full description of one scene; a fixed spec generates a bit-identical
/// scene every time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub seed: u64,
    pub water: WaterBodies,
    pub spectral: SpectralModel,
    pub boundary_noise: Option<BoundaryNoise>,
    pub cloud_shadows: bool,
}

impl SceneSpec {
    pub fn new(width: usize, height: usize, seed: u64) -> Self {
        SceneSpec {
            width,
            height,
            seed,
            water: WaterBodies::default(),
            spectral: SpectralModel::default(),
            boundary_noise: None,
            cloud_shadows: false,
        }
    }
}

/// A generated raster with its exact truth mask.
#[derive(Debug, Clone)]
pub struct LabeledScene {
    pub raster: Raster,
    pub truth: Mask,
}

fn range_sample(rng: &mut ChaCha8Rng, (lo, hi): (usize, usize)) -> usize {
    if hi <= lo {
        lo
    } else {
        rng.gen_range(lo..=hi)
    }
}

fn paint_ellipse(water: &mut [bool], w: usize, h: usize, cx: f64, cy: f64, rx: f64, ry: f64, theta: f64) {
    let (sin, cos) = theta.sin_cos();
    for y in 0..h {
        for x in 0..w {
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            let u = (dx * cos + dy * sin) / rx;
            let v = (-dx * sin + dy * cos) / ry;
            if u * u + v * v <= 1.0 {
                water[y * w + x] = true;
            }
        }
    }
}

fn paint_disk(water: &mut [bool], w: usize, h: usize, cx: f64, cy: f64, r: f64) {
    let x0 = ((cx - r).floor().max(0.0)) as usize;
    let x1 = ((cx + r).ceil().min(w as f64 - 1.0)) as usize;
    let y0 = ((cy - r).floor().max(0.0)) as usize;
    let y1 = ((cy + r).ceil().min(h as f64 - 1.0)) as usize;
    for y in y0..=y1 {
        for x in x0..=x1 {
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            if dx * dx + dy * dy <= r * r {
                water[y * w + x] = true;
            }
        }
    }
}

/// Generate one scene. All randomness flows from `spec.seed`, so identical
/// specs yield bit-identical scenes.
pub fn generate_scene(spec: &SceneSpec) -> Result<LabeledScene> {
    if spec.width == 0 || spec.height == 0 {
        return Err(CoreError::InvalidConfig("scene dimensions must be positive".into()));
    }
    let (w, h) = (spec.width, spec.height);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    // water geometry
    let mut water = vec![false; w * h];
    let n_blobs = range_sample(&mut rng, spec.water.blob_count);
    for _ in 0..n_blobs {
        let cx = rng.gen_range(0.0..w as f64);
        let cy = rng.gen_range(0.0..h as f64);
        let r = rng.gen_range(spec.water.blob_radius.0..=spec.water.blob_radius.1);
        let rx = r * rng.gen_range(0.7..1.3);
        let ry = r * rng.gen_range(0.7..1.3);
        let theta = rng.gen_range(0.0..std::f64::consts::PI);
        paint_ellipse(&mut water, w, h, cx, cy, rx, ry, theta);
    }
    let n_streams = range_sample(&mut rng, spec.water.stream_count);
    for _ in 0..n_streams {
        // start on a random edge, walk inward with a drifting heading
        let (mut x, mut y, mut heading) = match rng.gen_range(0..4) {
            0 => (rng.gen_range(0.0..w as f64), 0.0, std::f64::consts::FRAC_PI_2),
            1 => (rng.gen_range(0.0..w as f64), h as f64 - 1.0, -std::f64::consts::FRAC_PI_2),
            2 => (0.0, rng.gen_range(0.0..h as f64), 0.0),
            _ => (w as f64 - 1.0, rng.gen_range(0.0..h as f64), std::f64::consts::PI),
        };
        let turn = Normal::new(0.0, spec.water.meander_sd).expect("valid normal");
        for _ in 0..(2 * (w + h)) {
            paint_disk(&mut water, w, h, x, y, spec.water.stream_half_width);
            heading += turn.sample(&mut rng);
            x += heading.cos();
            y += heading.sin();
            if x < -2.0 || y < -2.0 || x > w as f64 + 2.0 || y > h as f64 + 2.0 {
                break;
            }
        }
    }

    // cloud shadow patches on land (truth stays land)
    let mut shadow = vec![false; w * h];
    if spec.cloud_shadows {
        let n_patches = rng.gen_range(1..=2);
        for _ in 0..n_patches {
            let cx = rng.gen_range(0.0..w as f64);
            let cy = rng.gen_range(0.0..h as f64);
            let r = rng.gen_range(3.0..(0.25 * w.min(h) as f64).max(3.5));
            let rx = r * rng.gen_range(0.8..1.4);
            let ry = r * rng.gen_range(0.8..1.4);
            let theta = rng.gen_range(0.0..std::f64::consts::PI);
            paint_ellipse(&mut shadow, w, h, cx, cy, rx, ry, theta);
        }
    }

    // draw every band row-major so the stream of rng draws is deterministic
    let mut planes: Vec<(Band, Vec<f64>)> =
        Band::ALL.iter().map(|b| (*b, vec![0.0; w * h])).collect();
    for i in 0..w * h {
        let class = if water[i] {
            &spec.spectral.water
        } else if shadow[i] {
            &spec.spectral.shadow
        } else {
            &spec.spectral.land
        };
        for (band, plane) in planes.iter_mut() {
            plane[i] = class.stats(*band).sample(&mut rng);
        }
    }

    // zero-mean noise confined to a strip around the true boundary
    if let Some(noise) = &spec.boundary_noise {
        let water_pts: Vec<(u32, u32)> = (0..w * h)
            .filter(|i| water[*i])
            .map(|i| ((i % w) as u32, (i / w) as u32))
            .collect();
        let land_pts: Vec<(u32, u32)> = (0..w * h)
            .filter(|i| !water[*i])
            .map(|i| ((i % w) as u32, (i / w) as u32))
            .collect();
        if !water_pts.is_empty() && !land_pts.is_empty() {
            let d_water = distance_map(&water_pts, w, h, PointClass::Water)?;
            let d_land = distance_map(&land_pts, w, h, PointClass::NonWater)?;
            let gauss = Normal::new(0.0, noise.sd).expect("valid normal");
            for i in 0..w * h {
                // distance to the opposite class decides band membership
                let d_opposite = if water[i] { d_land.values[i] } else { d_water.values[i] };
                if d_opposite <= noise.band_px {
                    for (band, plane) in planes.iter_mut() {
                        if matches!(band, Band::G | Band::Swir2) {
                            plane[i] = (plane[i] + gauss.sample(&mut rng)).clamp(0.001, 1.5);
                        }
                    }
                }
            }
        }
    }

    let labels = water
        .iter()
        .map(|is_water| if *is_water { MaskLabel::Water } else { MaskLabel::NonWater })
        .collect();
    Ok(LabeledScene {
        raster: Raster::new(w, h, planes, None)?,
        truth: Mask::new(w, h, labels),
    })
}

/// Dataset split sizes: val and test get floor(n * fraction), train takes the
/// remainder, so every scene lands in exactly one split.
pub fn split_counts(n: usize, fractions: (f64, f64, f64)) -> Result<(usize, usize, usize)> {
    let (train, val, test) = fractions;
    if train < 0.0 || val < 0.0 || test < 0.0 || (train + val + test - 1.0).abs() > 1e-9 {
        return Err(CoreError::InvalidConfig(format!(
            "split fractions {fractions:?} must be non-negative and sum to 1"
        )));
    }
    let n_val = (n as f64 * val).floor() as usize;
    let n_test = (n as f64 * test).floor() as usize;
    let n_train = n - n_val - n_test;
    Ok((n_train, n_val, n_test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::indices::mndwi;

    #[test]
    fn zero_water_bodies_means_all_land() {
        let mut spec = SceneSpec::new(16, 16, 3);
        spec.water.blob_count = (0, 0);
        spec.water.stream_count = (0, 0);
        let scene = generate_scene(&spec).unwrap();
        assert!(scene.truth.labels.iter().all(|l| *l == MaskLabel::NonWater));
    }

    #[test]
    fn one_huge_body_covers_everything() {
        let mut spec = SceneSpec::new(16, 16, 3);
        spec.water.blob_count = (1, 1);
        spec.water.blob_radius = (100.0, 120.0);
        spec.water.stream_count = (0, 0);
        let scene = generate_scene(&spec).unwrap();
        assert!(scene.truth.labels.iter().all(|l| *l == MaskLabel::Water));
    }

    #[test]
    fn fixed_seed_is_bit_identical() {
        let mut spec = SceneSpec::new(24, 24, 99);
        spec.boundary_noise = Some(BoundaryNoise::default());
        spec.cloud_shadows = true;
        let a = generate_scene(&spec).unwrap();
        let b = generate_scene(&spec).unwrap();
        assert_eq!(a.truth.labels, b.truth.labels);
        for ((ba, pa), (bb, pb)) in a.raster.bands().zip(b.raster.bands()) {
            assert_eq!(ba, bb);
            assert_eq!(pa, pb);
        }
        let mut spec2 = spec.clone();
        spec2.seed = 100;
        let c = generate_scene(&spec2).unwrap();
        assert_ne!(
            a.raster.band(Band::G).unwrap(),
            c.raster.band(Band::G).unwrap()
        );
    }

    #[test]
    fn mndwi_separates_classes_by_construction() {
        let mut water_sum = 0.0;
        let mut water_n = 0usize;
        let mut land_sum = 0.0;
        let mut land_n = 0usize;
        for seed in 0..8 {
            let spec = SceneSpec::new(32, 32, seed);
            let scene = generate_scene(&spec).unwrap();
            let idx = mndwi(&scene.raster).unwrap();
            for (v, l) in idx.values.iter().zip(&scene.truth.labels) {
                match l {
                    MaskLabel::Water => {
                        water_sum += v;
                        water_n += 1;
                    }
                    _ => {
                        land_sum += v;
                        land_n += 1;
                    }
                }
            }
        }
        assert!(water_n > 0 && land_n > 0);
        let sep = water_sum / water_n as f64 - land_sum / land_n as f64;
        assert!(sep > 0.5, "MNDWI separation {sep}");
    }

    #[test]
    fn boundary_noise_only_touches_the_band() {
        let mut clean_spec = SceneSpec::new(32, 32, 5);
        clean_spec.water.blob_count = (2, 2);
        let noisy_spec = SceneSpec {
            boundary_noise: Some(BoundaryNoise { band_px: 2.0, sd: 0.3 }),
            ..clean_spec.clone()
        };
        let clean = generate_scene(&clean_spec).unwrap();
        let noisy = generate_scene(&noisy_spec).unwrap();
        assert_eq!(clean.truth.labels, noisy.truth.labels);

        let water: Vec<bool> = clean
            .truth
            .labels
            .iter()
            .map(|l| *l == MaskLabel::Water)
            .collect();
        let wpts: Vec<(u32, u32)> = (0..32 * 32)
            .filter(|i| water[*i])
            .map(|i| ((i % 32) as u32, (i / 32) as u32))
            .collect();
        let lpts: Vec<(u32, u32)> = (0..32 * 32)
            .filter(|i| !water[*i])
            .map(|i| ((i % 32) as u32, (i / 32) as u32))
            .collect();
        let dw = distance_map(&wpts, 32, 32, PointClass::Water).unwrap();
        let dl = distance_map(&lpts, 32, 32, PointClass::NonWater).unwrap();
        let g_clean = clean.raster.band(Band::G).unwrap();
        let g_noisy = noisy.raster.band(Band::G).unwrap();
        for i in 0..32 * 32 {
            let d_opposite = if water[i] { dl.values[i] } else { dw.values[i] };
            if d_opposite > 2.0 && g_clean[i] != g_noisy[i] {
                panic!("pixel {i} outside the boundary band was modified");
            }
        }
    }

    #[test]
    fn cloud_shadows_are_dark_land() {
        let mut spec = SceneSpec::new(32, 32, 11);
        spec.water.blob_count = (0, 0);
        spec.water.stream_count = (0, 0);
        spec.cloud_shadows = true;
        let scene = generate_scene(&spec).unwrap();
        assert!(scene.truth.labels.iter().all(|l| *l == MaskLabel::NonWater));
        let swir = scene.raster.band(Band::Swir2).unwrap();
        let min = swir.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(min < 0.25, "expected shadow SWIR2 well below land levels, min {min}");
    }

    #[test]
    fn split_rounding_rule() {
        assert_eq!(split_counts(20, (0.9, 0.05, 0.05)).unwrap(), (18, 1, 1));
        assert_eq!(split_counts(10, (0.9, 0.05, 0.05)).unwrap(), (10, 0, 0));
        assert_eq!(split_counts(100, (0.9, 0.05, 0.05)).unwrap(), (90, 5, 5));
        assert!(split_counts(10, (0.5, 0.2, 0.2)).is_err());
    }
}
