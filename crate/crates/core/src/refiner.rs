//! Run-time pseudo-label refinement.
//!
//! A lightweight network is trained on the fly against only the
//! high-confidence sampled points of a tile (or batch of tiles), conditioned
//! on the water index plus an adaptive distance map, and then predicts every
//! pixel to turn a noisy threshold mask into a refined pseudo-mask.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::distmap::{
    adaptive_distance_map, distance_map, sample_confident_points, PointClass, PointSet, Thresholds,
};
use crate::error::{CoreError, Result};
use crate::indices::{threshold_mask, IndexMap};
use crate::mask::Mask;
use crate::nn::{init_rng, BatchNorm2d, Conv2d, InstanceNorm2d, Module, StateDict, StateEntry, Upsample2x};
use crate::optim::{Adam, CosineSchedule, DEFAULT_BETA1, DEFAULT_BETA2};
use crate::seeds;
use crate::tensor::Tensor;

/// Refiner hyperparameters. Everything is deterministic under `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinerConfig {
    /// On-the-fly training iterations (k >= 1).
    pub k_iterations: usize,
    pub learning_rate: f64,
    pub thresholds: Thresholds,
    pub max_per_class: usize,
    /// Hidden channel width of the refiner network.
    pub hidden: usize,
    /// Condition on the adaptive distance map (2-channel input). When false,
    /// both raw distance maps are concatenated instead (3-channel input).
    pub adaptive_dmap: bool,
    /// Threshold for the coarse fallback mask used when a tile has no
    /// confident points for one class.
    pub coarse_threshold: f64,
    pub seed: u64,
}

impl Default for RefinerConfig {
    fn default() -> Self {
        RefinerConfig {
            k_iterations: 200,
            learning_rate: 1e-2,
            thresholds: Thresholds::default(),
            max_per_class: 65_536,
            hidden: 16,
            adaptive_dmap: true,
            coarse_threshold: 0.35,
            seed: 0,
        }
    }
}

impl RefinerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_iterations == 0 {
            return Err(CoreError::InvalidConfig("k_iterations must be >= 1".into()));
        }
        if self.hidden == 0 {
            return Err(CoreError::InvalidConfig("refiner hidden width must be >= 1".into()));
        }
        Thresholds::new(self.thresholds.phi_high, self.thresholds.phi_low).map(|_| ())
    }

    pub fn input_channels(&self) -> usize {
        if self.adaptive_dmap {
            2
        } else {
            3
        }
    }
}

/// One encoder block (stride-2 conv + conv, batch norm then instance norm,
/// leaky ReLU) and one decoder block (bilinear x2 upsample + two convs with
/// the same norm pattern), closed by a 1x1 logit head.
pub struct RefinerNet {
    enc_conv1: Conv2d,
    enc_bn: BatchNorm2d,
    enc_conv2: Conv2d,
    enc_in: InstanceNorm2d,
    dec_conv1: Conv2d,
    dec_bn: BatchNorm2d,
    dec_conv2: Conv2d,
    dec_in: InstanceNorm2d,
    head: Conv2d,
    sampler: Upsample2x,
}

impl RefinerNet {
    pub fn new(in_channels: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        RefinerNet {
            enc_conv1: Conv2d::new(in_channels, hidden, 3, 2, 1, true, false, rng),
            enc_bn: BatchNorm2d::new(hidden),
            enc_conv2: Conv2d::new(hidden, hidden, 3, 1, 1, true, false, rng),
            enc_in: InstanceNorm2d::new(hidden),
            dec_conv1: Conv2d::new(hidden, hidden, 3, 1, 1, true, false, rng),
            dec_bn: BatchNorm2d::new(hidden),
            dec_conv2: Conv2d::new(hidden, hidden, 3, 1, 1, true, false, rng),
            dec_in: InstanceNorm2d::new(hidden),
            head: Conv2d::new(hidden, 1, 1, 1, 0, true, false, rng),
            sampler: Upsample2x,
        }
    }

    /// Logit plane at the input resolution. Input height/width must be even
    /// (one stride-2 stage).
    pub fn forward(&self, x: &Tensor, training: bool) -> Result<Tensor> {
        let e = self.enc_conv1.forward(x, training)?;
        let e = self.enc_bn.forward(&e, training)?.leaky_relu(0.2);
        let e = self.enc_conv2.forward(&e, training)?;
        let e = self.enc_in.forward(&e)?.leaky_relu(0.2);
        let d = self.sampler.forward(&e)?;
        let d = self.dec_conv1.forward(&d, training)?;
        let d = self.dec_bn.forward(&d, training)?.leaky_relu(0.2);
        let d = self.dec_conv2.forward(&d, training)?;
        let d = self.dec_in.forward(&d)?.leaky_relu(0.2);
        self.head.forward(&d, training)
    }
}

impl Module for RefinerNet {
    fn collect_params(&self, out: &mut Vec<Tensor>) {
        self.enc_conv1.collect_params(out);
        self.enc_bn.collect_params(out);
        self.enc_conv2.collect_params(out);
        self.enc_in.collect_params(out);
        self.dec_conv1.collect_params(out);
        self.dec_bn.collect_params(out);
        self.dec_conv2.collect_params(out);
        self.dec_in.collect_params(out);
        self.head.collect_params(out);
    }

    fn export_state(&self, prefix: &str, out: &mut Vec<StateEntry>) {
        self.enc_conv1.export_state(&format!("{prefix}.enc_conv1"), out);
        self.enc_bn.export_state(&format!("{prefix}.enc_bn"), out);
        self.enc_conv2.export_state(&format!("{prefix}.enc_conv2"), out);
        self.enc_in.export_state(&format!("{prefix}.enc_in"), out);
        self.dec_conv1.export_state(&format!("{prefix}.dec_conv1"), out);
        self.dec_bn.export_state(&format!("{prefix}.dec_bn"), out);
        self.dec_conv2.export_state(&format!("{prefix}.dec_conv2"), out);
        self.dec_in.export_state(&format!("{prefix}.dec_in"), out);
        self.head.export_state(&format!("{prefix}.head"), out);
    }

    fn import_state(&self, prefix: &str, src: &StateDict) -> Result<()> {
        self.enc_conv1.import_state(&format!("{prefix}.enc_conv1"), src)?;
        self.enc_bn.import_state(&format!("{prefix}.enc_bn"), src)?;
        self.enc_conv2.import_state(&format!("{prefix}.enc_conv2"), src)?;
        self.enc_in.import_state(&format!("{prefix}.enc_in"), src)?;
        self.dec_conv1.import_state(&format!("{prefix}.dec_conv1"), src)?;
        self.dec_bn.import_state(&format!("{prefix}.dec_bn"), src)?;
        self.dec_conv2.import_state(&format!("{prefix}.dec_conv2"), src)?;
        self.dec_in.import_state(&format!("{prefix}.dec_in"), src)?;
        self.head.import_state(&format!("{prefix}.head"), src)
    }
}

/// Probability plane plus hard labels (thresholded at 0.5). `fallback` marks
/// tiles that could not be refined and carry the coarse threshold mask
/// instead (whose labels may include ignore pixels).
#[derive(Debug, Clone)]
pub struct RefinedMask {
    pub width: usize,
    pub height: usize,
    pub probabilities: Vec<f64>,
    pub mask: Mask,
    pub fallback: bool,
}

/// Loss trace of one refinement run.
#[derive(Debug, Clone, Default)]
pub struct RefineReport {
    pub initial_loss: f64,
    pub final_loss: f64,
    pub best_loss: f64,
    pub water_points: usize,
    pub nonwater_points: usize,
}

/// Stack the index plane and its conditioning channels into a `[1,2,H,W]`
/// tensor: channel 0 is the index, channel 1 the adaptive distance map.
pub fn build_refiner_input(index: &IndexMap, dmap: &crate::distmap::AdaptiveDistanceMap) -> Result<Tensor> {
    if index.width != dmap.width || index.height != dmap.height {
        return Err(CoreError::shape(
            "build_refiner_input",
            format!(
                "index {}x{} vs distance map {}x{}",
                index.width, index.height, dmap.width, dmap.height
            ),
        ));
    }
    let a = Tensor::from_vec(&[1, 1, index.height, index.width], index.values.clone())?;
    let b = Tensor::from_vec(&[1, 1, dmap.height, dmap.width], dmap.values.clone())?;
    Tensor::concat_channels(&[&a, &b])
}

/// Probability clamp inside the refiner/segmentation losses.
pub const PROB_EPS: f64 = 1e-7;

/// Binary cross-entropy summed over only the sampled points of a probability
/// plane `[N,1,H,W]`: water points contribute -log(p), non-water points
/// -log(1-p), and every other pixel contributes exactly nothing.
pub fn partial_label_loss(probabilities: &Tensor, points: &PointSet) -> Result<Tensor> {
    partial_label_loss_batch(probabilities, &[(0, points.clone())])
}

/// Batch version: `sets` pairs a batch element with its point set.
pub fn partial_label_loss_batch(
    probabilities: &Tensor,
    sets: &[(usize, PointSet)],
) -> Result<Tensor> {
    let dims = probabilities.shape();
    if dims.len() != 4 || dims[1] != 1 {
        return Err(CoreError::shape(
            "partial_label_loss",
            format!("expected [N,1,H,W] probabilities, got {dims:?}"),
        ));
    }
    let (h, w) = (dims[2], dims[3]);
    let mut water_idx = Vec::new();
    let mut nonwater_idx = Vec::new();
    for (batch, set) in sets {
        let base = batch * h * w;
        water_idx.extend(set.water.iter().map(|(x, y)| base + *y as usize * w + *x as usize));
        nonwater_idx
            .extend(set.nonwater.iter().map(|(x, y)| base + *y as usize * w + *x as usize));
    }
    if water_idx.is_empty() && nonwater_idx.is_empty() {
        return Err(CoreError::NoScoredPixels);
    }
    let clamped = probabilities.clamp(PROB_EPS, 1.0 - PROB_EPS);
    let mut loss = Tensor::scalar(0.0);
    if !water_idx.is_empty() {
        let p = clamped.gather(&water_idx)?;
        loss = loss.add(&p.ln().sum().neg())?;
    }
    if !nonwater_idx.is_empty() {
        let p = clamped.gather(&nonwater_idx)?;
        loss = loss.add(&p.neg().add_scalar(1.0).ln().sum().neg())?;
    }
    Ok(loss)
}

enum TileInput {
    /// Confident points were found; channels beyond the index plane hold the
    /// conditioning distance maps.
    Refinable { channels: Vec<Vec<f64>>, points: PointSet },
    /// One class was empty; carry the coarse mask through unchanged.
    Fallback(Mask),
}

fn prepare_tile(index: &IndexMap, config: &RefinerConfig) -> Result<TileInput> {
    let sampled = sample_confident_points(
        index,
        &config.thresholds,
        config.max_per_class,
        seeds::derive(config.seed, "refiner/sample", 0),
    );
    let points = match sampled {
        Ok(p) => p,
        Err(CoreError::EmptyClass(_)) => {
            return Ok(TileInput::Fallback(threshold_mask(
                index,
                config.coarse_threshold,
                true,
            )))
        }
        Err(e) => return Err(e),
    };
    let (w, h) = (index.width, index.height);
    let mut channels = vec![index.values.clone()];
    if config.adaptive_dmap {
        let da = adaptive_distance_map(&points, w, h)?;
        channels.push(da.values);
    } else {
        // the traditional conditioning: both raw distance maps
        let dw = distance_map(&points.water, w, h, PointClass::Water)?;
        let dnw = distance_map(&points.nonwater, w, h, PointClass::NonWater)?;
        channels.push(dw.values);
        channels.push(dnw.values);
    }
    Ok(TileInput::Refinable { channels, points })
}

/// Refine a single tile. See [`refine_batch`] for the mechanics; a batch of
/// one behaves identically.
pub fn refine(index: &IndexMap, config: &RefinerConfig) -> Result<(RefinedMask, RefineReport)> {
    let mut out = refine_batch(std::slice::from_ref(index), config)?;
    let (mask, report) = out.pop().expect("refine_batch returned one result");
    Ok((mask, report))
}

/// Refine a batch of equally sized tiles with one shared network.
///
/// Tiles with confident points in both classes are stacked into a single
/// input batch; a fresh seeded network is trained for `k_iterations` Adam
/// steps (cosine-annealed learning rate) on the union of their sampled
/// points, then predicts every pixel in eval mode. Tiles where a class came
/// up empty fall back to their coarse threshold mask, flagged via
/// `RefinedMask::fallback`.
pub fn refine_batch(
    indices: &[IndexMap],
    config: &RefinerConfig,
) -> Result<Vec<(RefinedMask, RefineReport)>> {
    config.validate()?;
    if indices.is_empty() {
        return Ok(Vec::new());
    }
    let (w, h) = (indices[0].width, indices[0].height);
    for idx in indices {
        if idx.width != w || idx.height != h {
            return Err(CoreError::shape(
                "refine_batch",
                format!("mixed tile sizes: {}x{} vs {w}x{h}", idx.width, idx.height),
            ));
        }
    }

    let prepared: Vec<TileInput> = indices
        .iter()
        .map(|idx| prepare_tile(idx, config))
        .collect::<Result<_>>()?;

    let refinable: Vec<usize> = prepared
        .iter()
        .enumerate()
        .filter_map(|(i, t)| matches!(t, TileInput::Refinable { .. }).then_some(i))
        .collect();

    let mut results: Vec<Option<(RefinedMask, RefineReport)>> = prepared
        .iter()
        .map(|t| match t {
            TileInput::Fallback(mask) => {
                let probabilities = mask
                    .labels
                    .iter()
                    .map(|l| match l {
                        crate::mask::MaskLabel::Water => 1.0,
                        crate::mask::MaskLabel::NonWater => 0.0,
                        crate::mask::MaskLabel::Ignore => 0.5,
                    })
                    .collect();
                Some((
                    RefinedMask {
                        width: w,
                        height: h,
                        probabilities,
                        mask: mask.clone(),
                        fallback: true,
                    },
                    RefineReport::default(),
                ))
            }
            TileInput::Refinable { .. } => None,
        })
        .collect();

    if refinable.is_empty() {
        return Ok(results.into_iter().map(|r| r.expect("fallback filled")).collect());
    }

    // stack refinable tiles into one [B,C,H,W] input
    let channel_count = config.input_channels();
    let batch = refinable.len();
    let mut data = Vec::with_capacity(batch * channel_count * h * w);
    let mut point_sets: Vec<(usize, PointSet)> = Vec::with_capacity(batch);
    for (slot, &tile) in refinable.iter().enumerate() {
        let TileInput::Refinable { channels, points } = &prepared[tile] else {
            unreachable!()
        };
        for c in channels {
            data.extend_from_slice(c);
        }
        point_sets.push((slot, points.clone()));
    }
    let input = Tensor::from_vec(&[batch, channel_count, h, w], data)?;

    let mut net_rng = init_rng(seeds::derive(config.seed, "refiner/init", 0));
    let net = RefinerNet::new(channel_count, config.hidden, &mut net_rng);
    let params = net.params();
    let mut adam = Adam::new(DEFAULT_BETA1, DEFAULT_BETA2);
    let schedule = CosineSchedule::new(
        config.learning_rate,
        config.learning_rate * 0.01,
        config.k_iterations as u64,
    );

    let mut initial_loss = 0.0;
    let mut final_loss = 0.0;
    let mut best_loss = f64::INFINITY;
    for step in 0..config.k_iterations {
        let logits = net.forward(&input, true)?;
        let loss = partial_label_loss_batch(&logits.sigmoid(), &point_sets)?;
        let value = loss.item();
        if !value.is_finite() {
            return Err(CoreError::NonFiniteLoss { term: "refiner", step: step as u64 });
        }
        if step == 0 {
            initial_loss = value;
        }
        best_loss = best_loss.min(value);
        final_loss = value;
        loss.backward()?;
        adam.step(&params, schedule.lr_at(step as u64));
        for p in &params {
            p.zero_grad();
        }
    }

    // predict every pixel in eval mode
    let probs = net.forward(&input, false)?.sigmoid();
    let probs_data = probs.data();
    for (slot, &tile) in refinable.iter().enumerate() {
        let plane = probs_data[slot * h * w..(slot + 1) * h * w].to_vec();
        let TileInput::Refinable { points, .. } = &prepared[tile] else {
            unreachable!()
        };
        let report = RefineReport {
            initial_loss,
            final_loss,
            best_loss,
            water_points: points.water.len(),
            nonwater_points: points.nonwater.len(),
        };
        results[tile] = Some((
            RefinedMask {
                width: w,
                height: h,
                probabilities: plane.clone(),
                mask: Mask::from_probabilities(w, h, &plane),
                fallback: false,
            },
            report,
        ));
    }
    Ok(results.into_iter().map(|r| r.expect("all tiles resolved")).collect())
}
