use floodseg_core::distmap::{adaptive_distance_map, sample_confident_points};
use floodseg_core::indices::mndwi;
use floodseg_core::mask::{Mask, MaskLabel};
use floodseg_core::nn::{init_rng, Module};
use floodseg_core::optim::Adam;
use floodseg_core::refiner::{build_refiner_input, partial_label_loss, RefinerNet};
use floodseg_core::seeds;
use floodseg_core::synth::{BoundaryNoise, SceneSpec};
use floodseg_core::tensor::Tensor;

fn main() {
    let size = 48usize;
    let mut spec = SceneSpec::new(size, size, 9003);
    spec.boundary_noise = Some(BoundaryNoise { band_px: 2.0, sd: 0.3 });
    let scene = floodseg_core::synth::generate_scene(&spec).unwrap();
    let index = mndwi(&scene.raster).unwrap();
    let th = floodseg_core::distmap::Thresholds::default();
    let points = sample_confident_points(&index, &th, 1024, seeds::derive(9003, "refiner/sample", 0)).unwrap();
    println!("points: {} water, {} nonwater", points.water.len(), points.nonwater.len());
    let da = adaptive_distance_map(&points, size, size).unwrap();
    let input = build_refiner_input(&index, &da).unwrap();

    let mut rng = init_rng(1);
    let net = RefinerNet::new(2, 16, &mut rng);
    let params = net.params();
    let mut adam = Adam::with_defaults();
    for step in 0..150 {
        let probs = net.forward(&input, true).unwrap().sigmoid();
        let loss = partial_label_loss(&probs, &points).unwrap();
        if step % 50 == 0 { println!("step {step} loss {:.3}", loss.item()); }
        loss.backward().unwrap();
        adam.step(&params, 1e-2);
        for p in &params { p.zero_grad(); }
    }
    let train_mode = net.forward(&input, true).unwrap().sigmoid().to_vec();
    let eval_mode = net.forward(&input, false).unwrap().sigmoid().to_vec();
    let max_dp = train_mode.iter().zip(&eval_mode).map(|(a, b)| (a - b).abs()).fold(0.0f64, f64::max);
    let flips = train_mode.iter().zip(&eval_mode).filter(|(a, b)| (**a >= 0.5) != (**b >= 0.5)).count();
    println!("train vs eval prediction: max |dp| {max_dp:.4}, label flips {flips}/{}", size * size);
    let acc = |probs: &[f64]| {
        let m = Mask::from_probabilities(size, size, probs);
        let mut ok = 0;
        for (a, b) in m.labels.iter().zip(&scene.truth.labels) {
            if a == b { ok += 1; }
        }
        ok as f64 / (size * size) as f64
    };
    println!("full-image accuracy: train-mode {:.4} eval-mode {:.4}", acc(&train_mode), acc(&eval_mode));
    let water_frac_train = train_mode.iter().filter(|p| **p >= 0.5).count() as f64 / (size*size) as f64;
    let water_frac_eval = eval_mode.iter().filter(|p| **p >= 0.5).count() as f64 / (size*size) as f64;
    let truth_frac = scene.truth.labels.iter().filter(|l| **l == MaskLabel::Water).count() as f64 / (size*size) as f64;
    println!("water fraction: truth {truth_frac:.3} train {water_frac_train:.3} eval {water_frac_eval:.3}");
}
