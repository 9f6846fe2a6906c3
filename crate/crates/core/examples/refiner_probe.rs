use std::time::Instant;

use floodseg_core::distmap::sample_confident_points;
use floodseg_core::indices::{mndwi, threshold_mask};
use floodseg_core::mask::MaskLabel;
use floodseg_core::refiner::{refine, RefinerConfig};
use floodseg_core::seeds;
use floodseg_core::synth::{BoundaryNoise, SceneSpec};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let size: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(48);
    let n: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(10);
    let sd: f64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(0.22);
    let k: usize = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(200);

    let mut sum_coarse = 0.0;
    let mut sum_adaptive = 0.0;
    let mut sum_raw = 0.0;
    let mut scored = 0usize;
    let t0 = Instant::now();
    for i in 0..n {
        let mut spec = SceneSpec::new(size, size, 9000 + i as u64);
        spec.boundary_noise = Some(BoundaryNoise { band_px: 2.0, sd });
        let scene = floodseg_core::synth::generate_scene(&spec).unwrap();
        let index = mndwi(&scene.raster).unwrap();
        let cfg = RefinerConfig { k_iterations: k, seed: 9000 + i as u64, ..RefinerConfig::default() };

        let points = match sample_confident_points(
            &index,
            &cfg.thresholds,
            cfg.max_per_class,
            seeds::derive(cfg.seed, "refiner/sample", 0),
        ) {
            Ok(p) => p,
            Err(_) => continue,
        };
        let sampled: std::collections::HashSet<usize> = points
            .water
            .iter()
            .chain(&points.nonwater)
            .map(|(x, y)| *y as usize * size + *x as usize)
            .collect();

        let coarse = threshold_mask(&index, 0.35, true);
        let (adaptive, _) = refine(&index, &cfg).unwrap();
        let raw_cfg = RefinerConfig { adaptive_dmap: false, ..cfg.clone() };
        let (raw, _) = refine(&index, &raw_cfg).unwrap();

        let acc = |mask: &floodseg_core::mask::Mask| {
            let mut ok = 0usize;
            let mut total = 0usize;
            for idx in 0..size * size {
                if sampled.contains(&idx) || mask.labels[idx] == MaskLabel::Ignore {
                    continue;
                }
                total += 1;
                if mask.labels[idx] == scene.truth.labels[idx] {
                    ok += 1;
                }
            }
            ok as f64 / total.max(1) as f64
        };
        sum_coarse += acc(&coarse);
        sum_adaptive += acc(&adaptive.mask);
        sum_raw += acc(&raw.mask);
        scored += 1;
    }
    let n = scored as f64;
    println!(
        "size={size} n={scored} sd={sd} k={k}: coarse {:.4} adaptive {:.4} raw {:.4} | d_adapt {:+.2}pts d_raw {:+.2}pts | {:.1}s total",
        sum_coarse / n,
        sum_adaptive / n,
        sum_raw / n,
        (sum_adaptive - sum_coarse) / n * 100.0,
        (sum_raw - sum_coarse) / n * 100.0,
        t0.elapsed().as_secs_f64()
    );
}
