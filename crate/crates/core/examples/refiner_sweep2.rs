use floodseg_core::distmap::sample_confident_points;
use floodseg_core::indices::{mndwi, threshold_mask};
use floodseg_core::mask::MaskLabel;
use floodseg_core::refiner::{refine, RefinerConfig};
use floodseg_core::seeds;
use floodseg_core::synth::{BoundaryNoise, SceneSpec, WaterBodies};

fn main() {
    let n = 10usize;
    let size = 64usize;
    // flood-like: thin streams plus small blobs, water is the sparse class
    for (label, water) in [
        ("streams", WaterBodies { blob_count: (0, 1), blob_radius: (2.5, 5.0), stream_count: (1, 2), stream_half_width: 1.5, meander_sd: 0.35 }),
        ("small-blobs", WaterBodies { blob_count: (2, 4), blob_radius: (2.5, 6.0), stream_count: (0, 1), stream_half_width: 1.5, meander_sd: 0.35 }),
    ] {
        for (band_px, sd) in [(2.0, 0.35), (3.0, 0.35), (3.0, 0.5)] {
            let (mut sc, mut sa, mut sr, mut scored) = (0.0, 0.0, 0.0, 0usize);
            let (mut wpts, mut npts) = (0usize, 0usize);
            for i in 0..n {
                let mut spec = SceneSpec::new(size, size, 7000 + i as u64);
                spec.water = water;
                spec.boundary_noise = Some(BoundaryNoise { band_px, sd });
                let scene = floodseg_core::synth::generate_scene(&spec).unwrap();
                let index = mndwi(&scene.raster).unwrap();
                let cfg = RefinerConfig { k_iterations: 150, seed: 7000 + i as u64, ..RefinerConfig::default() };
                let points = match sample_confident_points(&index, &cfg.thresholds, cfg.max_per_class,
                    seeds::derive(cfg.seed, "refiner/sample", 0)) { Ok(p) => p, Err(_) => continue };
                wpts += points.water.len();
                npts += points.nonwater.len();
                let sampled: std::collections::HashSet<usize> = points
                    .water.iter().chain(&points.nonwater)
                    .map(|(x, y)| *y as usize * size + *x as usize).collect();
                let coarse = threshold_mask(&index, 0.35, true);
                let (adaptive, _) = refine(&index, &cfg).unwrap();
                let raw_cfg = RefinerConfig { adaptive_dmap: false, ..cfg.clone() };
                let (raw, _) = refine(&index, &raw_cfg).unwrap();
                let acc = |mask: &floodseg_core::mask::Mask| {
                    let (mut ok, mut total) = (0usize, 0usize);
                    for idx in 0..size * size {
                        if sampled.contains(&idx) || mask.labels[idx] == MaskLabel::Ignore { continue; }
                        total += 1;
                        if mask.labels[idx] == scene.truth.labels[idx] { ok += 1; }
                    }
                    ok as f64 / total.max(1) as f64
                };
                sc += acc(&coarse); sa += acc(&adaptive.mask); sr += acc(&raw.mask);
                scored += 1;
            }
            let m = scored as f64;
            println!(
                "{label} band={band_px} sd={sd}: coarse {:.4} adaptive {:.4} raw {:.4} | d_adapt {:+.2} d_raw {:+.2} | avg pts w={} n={}",
                sc / m, sa / m, sr / m, (sa - sc) / m * 100.0, (sr - sc) / m * 100.0,
                wpts / scored.max(1), npts / scored.max(1)
            );
        }
    }
}
