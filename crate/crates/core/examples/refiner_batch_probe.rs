use floodseg_core::distmap::sample_confident_points;
use floodseg_core::indices::{mndwi, threshold_mask, IndexMap};
use floodseg_core::mask::MaskLabel;
use floodseg_core::refiner::{refine_batch, RefinerConfig};
use floodseg_core::seeds;
use floodseg_core::synth::{BoundaryNoise, LabeledScene, SceneSpec, WaterBodies};

fn main() {
    let size = 48usize;
    let n_batches = 4usize;
    let batch = 8usize;
    let (mut sc, mut sa, mut sr, mut scored) = (0.0, 0.0, 0.0, 0usize);
    for bi in 0..n_batches {
        // heterogeneous batch: thin streams, small blobs and big blobs mixed
        let scenes: Vec<LabeledScene> = (0..batch)
            .map(|k| {
                let i = (bi * batch + k) as u64;
                let mut spec = SceneSpec::new(size, size, 7000 + i);
                spec.water = match k % 3 {
                    0 => WaterBodies { blob_count: (0, 1), blob_radius: (2.5, 5.0), stream_count: (1, 2), stream_half_width: 1.5, meander_sd: 0.35 },
                    1 => WaterBodies { blob_count: (2, 4), blob_radius: (2.5, 6.0), stream_count: (0, 1), stream_half_width: 1.5, meander_sd: 0.35 },
                    _ => WaterBodies { blob_count: (1, 2), blob_radius: (8.0, 14.0), stream_count: (0, 0), stream_half_width: 1.5, meander_sd: 0.35 },
                };
                spec.boundary_noise = Some(BoundaryNoise { band_px: 2.5, sd: 0.35 });
                floodseg_core::synth::generate_scene(&spec).unwrap()
            })
            .collect();
        let indices: Vec<IndexMap> = scenes.iter().map(|s| mndwi(&s.raster).unwrap()).collect();
        let cfg = RefinerConfig { k_iterations: 150, seed: 7000 + bi as u64, ..RefinerConfig::default() };
        let adaptive = refine_batch(&indices, &cfg).unwrap();
        let raw_cfg = RefinerConfig { adaptive_dmap: false, ..cfg.clone() };
        let raw = refine_batch(&indices, &raw_cfg).unwrap();
        for k in 0..batch {
            let index = &indices[k];
            let points = match sample_confident_points(index, &cfg.thresholds, cfg.max_per_class,
                seeds::derive(cfg.seed, "refiner/sample", 0)) { Ok(p) => p, Err(_) => continue };
            let sampled: std::collections::HashSet<usize> = points
                .water.iter().chain(&points.nonwater)
                .map(|(x, y)| *y as usize * size + *x as usize).collect();
            let coarse = threshold_mask(index, 0.35, true);
            let acc = |mask: &floodseg_core::mask::Mask| {
                let (mut ok, mut total) = (0usize, 0usize);
                for idx in 0..size * size {
                    if sampled.contains(&idx) { continue; }
                    total += 1;
                    if mask.labels[idx] == scenes[k].truth.labels[idx] { ok += 1; }
                }
                ok as f64 / total.max(1) as f64
            };
            sc += acc(&coarse);
            sa += acc(&adaptive[k].0.mask);
            sr += acc(&raw[k].0.mask);
            scored += 1;
        }
    }
    let m = scored as f64;
    println!(
        "batch refine (batch={batch}): coarse {:.4} adaptive {:.4} raw {:.4} | d_adapt {:+.2} d_raw {:+.2}",
        sc / m, sa / m, sr / m, (sa - sc) / m * 100.0, (sr - sc) / m * 100.0
    );
}
