use floodseg_core::indices::Band;
use floodseg_core::mask::MaskLabel;
use floodseg_core::swir::{GanConfig, GanTrainer};
use floodseg_core::synth::{generate_scene, SceneSpec};
use floodseg_core::tensor::Tensor;

fn main() {
    let scenes: Vec<_> = (0..16)
        .map(|i| generate_scene(&SceneSpec::new(32, 32, 100 + i)).unwrap())
        .collect();
    // z-score stats over the pool
    let mut stats = std::collections::BTreeMap::new();
    for b in [Band::R, Band::G, Band::B] {
        let vals: Vec<f64> = scenes.iter().flat_map(|s| s.raster.band(b).unwrap().to_vec()).collect();
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / vals.len() as f64;
        stats.insert(b.name(), (m, v.sqrt()));
    }
    let visual = |ids: &[usize]| {
        let mut data = Vec::new();
        for &i in ids {
            for b in [Band::R, Band::G, Band::B] {
                let (m, sd) = stats[b.name()];
                data.extend(scenes[i].raster.band(b).unwrap().iter().map(|v| (v - m) / sd));
            }
        }
        Tensor::from_vec(&[ids.len(), 3, 32, 32], data).unwrap()
    };
    let swir = |ids: &[usize]| {
        let mut data = Vec::new();
        for &i in ids {
            data.extend_from_slice(scenes[i].raster.band(Band::Swir2).unwrap());
        }
        Tensor::from_vec(&[ids.len(), 1, 32, 32], data).unwrap()
    };

    for (warmup, label) in [(200u64, "all-warmup"), (100, "100w+100adv"), (50, "50w+150adv")] {
        let cfg = GanConfig { base_width: 12, seed: 7, ..GanConfig::default() };
        let mut t = GanTrainer::new(&cfg, 200, warmup).unwrap();
        let mut initial = 0.0;
        let mut last = 0.0;
        for step in 0..200u64 {
            let ids: Vec<usize> = (0..4).map(|k| ((step as usize * 4 + k) % 16)).collect();
            let r = t.step(&visual(&ids), &swir(&ids)).unwrap();
            if step == 0 { initial = r.pixel; }
            last = r.pixel;
            if step % 50 == 49 { eprintln!("  [{label}] step {step} pixel {:.4}", r.pixel); }
        }
        // water direction on a fresh scene
        let eval = generate_scene(&SceneSpec::new(32, 32, 999)).unwrap();
        let mut data = Vec::new();
        for b in [Band::R, Band::G, Band::B] {
            let (m, sd) = stats[b.name()];
            data.extend(eval.raster.band(b).unwrap().iter().map(|v| (v - m) / sd));
        }
        let x = Tensor::from_vec(&[1, 3, 32, 32], data).unwrap();
        let pred = t.generator.forward(&x, false).unwrap();
        let p = pred.to_vec();
        let (mut ws, mut wn, mut ls, mut ln) = (0.0, 0usize, 0.0, 0usize);
        for (v, l) in p.iter().zip(&eval.truth.labels) {
            if *l == MaskLabel::Water { ws += v; wn += 1; } else { ls += v; ln += 1; }
        }
        println!(
            "{label}: pixel {initial:.4} -> {last:.4} (ratio {:.3}); water mean {:.4} land mean {:.4}",
            last / initial, ws / wn.max(1) as f64, ls / ln.max(1) as f64
        );
    }
}
