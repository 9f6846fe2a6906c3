use floodseg_core::distmap::{distance_map, sample_confident_points, PointClass};
use floodseg_core::indices::{mndwi, threshold_mask};
use floodseg_core::mask::MaskLabel;
use floodseg_core::refiner::{refine, RefinerConfig};
use floodseg_core::seeds;
use floodseg_core::synth::{BoundaryNoise, SceneSpec, WaterBodies};

fn main() {
    let n = 8usize;
    let size = 64usize;
    for radius in [(8.0, 16.0), (12.0, 22.0)] {
        for band_px in [2.0, 3.0, 5.0] {
            for sd in [0.3, 0.45] {
                let (mut sc, mut sa, mut sr, mut scored) = (0.0, 0.0, 0.0, 0usize);
                let mut blur_errs = 0usize; // refiner errors within 2px of boundary
                let mut far_errs = 0usize;
                for i in 0..n {
                    let mut spec = SceneSpec::new(size, size, 9000 + i as u64);
                    spec.water = WaterBodies {
                        blob_count: (1, 2),
                        blob_radius: radius,
                        stream_count: (0, 0),
                        stream_half_width: 1.5,
                        meander_sd: 0.35,
                    };
                    if band_px > 0.0 {
                        spec.boundary_noise = Some(BoundaryNoise { band_px, sd });
                    }
                    let scene = floodseg_core::synth::generate_scene(&spec).unwrap();
                    let index = mndwi(&scene.raster).unwrap();
                    let cfg = RefinerConfig { k_iterations: 150, seed: 9000 + i as u64, ..RefinerConfig::default() };
                    let points = match sample_confident_points(
                        &index, &cfg.thresholds, cfg.max_per_class,
                        seeds::derive(cfg.seed, "refiner/sample", 0),
                    ) { Ok(p) => p, Err(_) => continue };
                    let sampled: std::collections::HashSet<usize> = points
                        .water.iter().chain(&points.nonwater)
                        .map(|(x, y)| *y as usize * size + *x as usize)
                        .collect();
                    let coarse = threshold_mask(&index, 0.35, true);
                    let (adaptive, _) = refine(&index, &cfg).unwrap();
                    let raw_cfg = RefinerConfig { adaptive_dmap: false, ..cfg.clone() };
                    let (raw, _) = refine(&index, &raw_cfg).unwrap();

                    // distance to the true boundary for error bucketing
                    let water_px: Vec<(u32, u32)> = (0..size * size)
                        .filter(|j| scene.truth.labels[*j] == MaskLabel::Water)
                        .map(|j| ((j % size) as u32, (j / size) as u32)).collect();
                    let land_px: Vec<(u32, u32)> = (0..size * size)
                        .filter(|j| scene.truth.labels[*j] != MaskLabel::Water)
                        .map(|j| ((j % size) as u32, (j / size) as u32)).collect();
                    if water_px.is_empty() || land_px.is_empty() { continue; }
                    let dw = distance_map(&water_px, size, size, PointClass::Water).unwrap();
                    let dl = distance_map(&land_px, size, size, PointClass::NonWater).unwrap();

                    let acc = |mask: &floodseg_core::mask::Mask| {
                        let (mut ok, mut total) = (0usize, 0usize);
                        for idx in 0..size * size {
                            if sampled.contains(&idx) || mask.labels[idx] == MaskLabel::Ignore { continue; }
                            total += 1;
                            if mask.labels[idx] == scene.truth.labels[idx] { ok += 1; }
                        }
                        ok as f64 / total.max(1) as f64
                    };
                    for idx in 0..size * size {
                        if adaptive.mask.labels[idx] != scene.truth.labels[idx] {
                            let d = if scene.truth.labels[idx] == MaskLabel::Water { dl.values[idx] } else { dw.values[idx] };
                            if d <= 2.0 { blur_errs += 1 } else { far_errs += 1 }
                        }
                    }
                    sc += acc(&coarse); sa += acc(&adaptive.mask); sr += acc(&raw.mask);
                    scored += 1;
                }
                let m = scored as f64;
                println!(
                    "r={radius:?} band={band_px} sd={sd}: coarse {:.4} adaptive {:.4} raw {:.4} | d_adapt {:+.2} d_raw {:+.2} | refiner errs near/far {}/{}",
                    sc / m, sa / m, sr / m, (sa - sc) / m * 100.0, (sr - sc) / m * 100.0,
                    blur_errs / scored.max(1), far_errs / scored.max(1)
                );
            }
        }
    }
}
