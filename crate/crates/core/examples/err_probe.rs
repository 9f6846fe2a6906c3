use floodseg_core::distmap::{adaptive_distance_map, sample_confident_points};
use floodseg_core::indices::mndwi;
use floodseg_core::mask::MaskLabel;
use floodseg_core::refiner::{refine, RefinerConfig};
use floodseg_core::seeds;
use floodseg_core::synth::{SceneSpec, WaterBodies};

fn main() {
    let size = 64usize;
    let mut spec = SceneSpec::new(size, size, 9001);
    spec.water = WaterBodies { blob_count: (1, 2), blob_radius: (8.0, 16.0), stream_count: (0, 0), stream_half_width: 1.5, meander_sd: 0.35 };
    let scene = floodseg_core::synth::generate_scene(&spec).unwrap();
    let index = mndwi(&scene.raster).unwrap();
    let cfg = RefinerConfig { k_iterations: 150, seed: 9001, max_per_class: 1_000_000, ..RefinerConfig::default() };
    let points = sample_confident_points(&index, &cfg.thresholds, cfg.max_per_class,
        seeds::derive(cfg.seed, "refiner/sample", 0)).unwrap();
    println!("water pts {} nonwater pts {} dense={:?}", points.water.len(), points.nonwater.len(), points.dense_class());
    let da = adaptive_distance_map(&points, size, size).unwrap();
    let (refined, rep) = refine(&index, &cfg).unwrap();
    println!("loss {:.2} -> {:.2}", rep.initial_loss, rep.final_loss);

    let truth_water: Vec<bool> = scene.truth.labels.iter().map(|l| *l == MaskLabel::Water).collect();
    let mut err_water_to_land = 0;
    let mut err_land_to_water = 0;
    let mut hist: std::collections::BTreeMap<(i32, i32), (usize, usize)> = std::collections::BTreeMap::new();
    for i in 0..size * size {
        let pred_water = refined.mask.labels[i] == MaskLabel::Water;
        let key = ((index.values[i] * 5.0).floor() as i32, (da.values[i] * 5.0).floor() as i32);
        let slot = hist.entry(key).or_default();
        slot.1 += 1;
        if pred_water != truth_water[i] {
            slot.0 += 1;
            if truth_water[i] { err_water_to_land += 1 } else { err_land_to_water += 1 }
        }
    }
    println!("errors: water->land {err_water_to_land}, land->water {err_land_to_water}");
    println!("error cells (mndwi_bin, da_bin): errs/total");
    for ((m, d), (e, t)) in &hist {
        if *e > 10 {
            println!("  mndwi [{:.1},{:.1}) da [{:.1},{:.1}): {e}/{t}", *m as f64/5.0, (*m+1) as f64/5.0, *d as f64/5.0, (*d+1) as f64/5.0);
        }
    }
}
