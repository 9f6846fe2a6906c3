//! Adversarial RGB to SWIR2 translation.
//!
//! A skip-connected encoder-decoder generator maps visual bands to a
//! single-channel SWIR plane; a spectrally normalized patch discriminator
//! with self-attention scores overlapping patches rather than whole images.
//! Training combines a pixel regression term, least-squares patch
//! adversarial terms and feature matching on the discriminator's penultimate
//! features.

use std::cell::RefCell;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::nn::{
    init_rng, BatchNorm2d, Conv2d, ConvTranspose2d, Dropout, Module, SelfAttention, StateDict,
    StateEntry,
};
use crate::optim::{Adam, CosineSchedule};
use crate::seeds;
use crate::tensor::Tensor;

/// Loss weights: generator, discriminator and feature-matching terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_g: f64,
    pub lambda_d: f64,
    pub lambda_f: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_g: 1.0,
            lambda_d: 1.0,
            lambda_f: 10.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_g < 0.0 || self.lambda_d < 0.0 || self.lambda_f < 0.0 {
            return Err(CoreError::InvalidConfig("loss weights must be non-negative".into()));
        }
        Ok(())
    }
}

/// GAN configuration; defaults follow the training setup used throughout
/// this project (Adam betas 0.4/0.99, generator 2e-4, discriminator 6e-4).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GanConfig {
    /// Feed NIR as a fourth generator input channel.
    pub use_nir: bool,
    pub base_width: usize,
    pub dropout: f64,
    pub lr_generator: f64,
    pub lr_discriminator: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub min_lr_factor: f64,
    pub weights: LossWeights,
    pub seed: u64,
}

impl Default for GanConfig {
    fn default() -> Self {
        GanConfig {
            use_nir: false,
            base_width: 12,
            dropout: 0.2,
            lr_generator: 2e-4,
            lr_discriminator: 6e-4,
            beta1: crate::optim::DEFAULT_BETA1,
            beta2: crate::optim::DEFAULT_BETA2,
            min_lr_factor: 0.01,
            weights: LossWeights::default(),
            seed: 0,
        }
    }
}

impl GanConfig {
    pub fn generator_in_channels(&self) -> usize {
        if self.use_nir {
            4
        } else {
            3
        }
    }
}

struct EncBlock {
    conv: Conv2d,
    bn: BatchNorm2d,
    dropout: Dropout,
    down: Conv2d,
}

impl EncBlock {
    fn new(in_ch: usize, out_ch: usize, dropout: f64, rng: &mut ChaCha8Rng) -> Self {
        EncBlock {
            conv: Conv2d::new(in_ch, out_ch, 3, 1, 1, true, true, rng),
            bn: BatchNorm2d::new(out_ch),
            dropout: Dropout::new(dropout),
            down: Conv2d::new(out_ch, out_ch, 3, 2, 1, true, true, rng),
        }
    }

    fn forward(&self, x: &Tensor, training: bool, rng: &mut ChaCha8Rng) -> Result<Tensor> {
        let y = self.conv.forward(x, training)?;
        let y = self.bn.forward(&y, training)?.leaky_relu(0.2);
        let y = self.dropout.forward(&y, training, rng)?;
        self.down.forward(&y, training)
    }
}

impl Module for EncBlock {
    fn collect_params(&self, out: &mut Vec<Tensor>) {
        self.conv.collect_params(out);
        self.bn.collect_params(out);
        self.down.collect_params(out);
    }
    fn export_state(&self, prefix: &str, out: &mut Vec<StateEntry>) {
        self.conv.export_state(&format!("{prefix}.conv"), out);
        self.bn.export_state(&format!("{prefix}.bn"), out);
        self.down.export_state(&format!("{prefix}.down"), out);
    }
    fn import_state(&self, prefix: &str, src: &StateDict) -> Result<()> {
        self.conv.import_state(&format!("{prefix}.conv"), src)?;
        self.bn.import_state(&format!("{prefix}.bn"), src)?;
        self.down.import_state(&format!("{prefix}.down"), src)
    }
}

struct DecBlock {
    up: ConvTranspose2d,
    conv: Conv2d,
    bn: BatchNorm2d,
    dropout: Dropout,
}

impl DecBlock {
    fn new(in_ch: usize, out_ch: usize, dropout: f64, rng: &mut ChaCha8Rng) -> Self {
        DecBlock {
            up: ConvTranspose2d::new(in_ch, out_ch, 4, 2, 1, true, true, rng),
            conv: Conv2d::new(out_ch, out_ch, 3, 1, 1, true, true, rng),
            bn: BatchNorm2d::new(out_ch),
            dropout: Dropout::new(dropout),
        }
    }

    fn forward(&self, x: &Tensor, training: bool, rng: &mut ChaCha8Rng) -> Result<Tensor> {
        let y = self.up.forward(x, training)?;
        let y = self.conv.forward(&y, training)?;
        let y = self.bn.forward(&y, training)?.leaky_relu(0.2);
        self.dropout.forward(&y, training, rng)
    }
}

impl Module for DecBlock {
    fn collect_params(&self, out: &mut Vec<Tensor>) {
        self.up.collect_params(out);
        self.conv.collect_params(out);
        self.bn.collect_params(out);
    }
    fn export_state(&self, prefix: &str, out: &mut Vec<StateEntry>) {
        self.up.export_state(&format!("{prefix}.up"), out);
        self.conv.export_state(&format!("{prefix}.conv"), out);
        self.bn.export_state(&format!("{prefix}.bn"), out);
    }
    fn import_state(&self, prefix: &str, src: &StateDict) -> Result<()> {
        self.up.import_state(&format!("{prefix}.up"), src)?;
        self.conv.import_state(&format!("{prefix}.conv"), src)?;
        self.bn.import_state(&format!("{prefix}.bn"), src)
    }
}

/// Skip-connected encoder-decoder generator: three stride-2 encoder blocks,
/// three decoder blocks whose inputs concatenate the previous decoder output
/// with the matching encoder output, and a linear 1x1 head. Input spatial
/// dims must be divisible by 8; output is one channel at input resolution on
/// the raw reflectance scale (clipping happens only at export).
pub struct Generator {
    enc1: EncBlock,
    enc2: EncBlock,
    enc3: EncBlock,
    dec1: DecBlock,
    dec2: DecBlock,
    dec3: DecBlock,
    head: Conv2d,
    dropout_rng: RefCell<ChaCha8Rng>,
    pub in_channels: usize,
}

impl Generator {
    pub fn new(in_channels: usize, base_width: usize, dropout: f64, seed: u64) -> Self {
        let mut rng = init_rng(seeds::derive(seed, "generator/init", 0));
        let w = base_width;
        Generator {
            enc1: EncBlock::new(in_channels, w, dropout, &mut rng),
            enc2: EncBlock::new(w, 2 * w, dropout, &mut rng),
            enc3: EncBlock::new(2 * w, 4 * w, dropout, &mut rng),
            dec1: DecBlock::new(4 * w, 2 * w, dropout, &mut rng),
            dec2: DecBlock::new(4 * w, w, dropout, &mut rng),
            dec3: DecBlock::new(2 * w, w, dropout, &mut rng),
            head: Conv2d::new(w, 1, 1, 1, 0, true, false, &mut rng),
            dropout_rng: RefCell::new(init_rng(seeds::derive(seed, "generator/dropout", 0))),
            in_channels,
        }
    }

    pub fn forward(&self, x: &Tensor, training: bool) -> Result<Tensor> {
        let dims = x.shape();
        if dims.len() != 4 || dims[1] != self.in_channels {
            return Err(CoreError::shape(
                "generator",
                format!("expected [N,{},H,W], got {dims:?}", self.in_channels),
            ));
        }
        if dims[2] % 8 != 0 || dims[3] % 8 != 0 {
            return Err(CoreError::shape(
                "generator",
                format!("spatial dims {}x{} must be divisible by 8", dims[2], dims[3]),
            ));
        }
        let rng = &mut *self.dropout_rng.borrow_mut();
        let e1 = self.enc1.forward(x, training, rng)?;
        let e2 = self.enc2.forward(&e1, training, rng)?;
        let e3 = self.enc3.forward(&e2, training, rng)?;
        let d1 = self.dec1.forward(&e3, training, rng)?;
        let d2 = self.dec2.forward(&Tensor::concat_channels(&[&d1, &e2])?, training, rng)?;
        let d3 = self.dec3.forward(&Tensor::concat_channels(&[&d2, &e1])?, training, rng)?;
        self.head.forward(&d3, training)
    }
}

impl Module for Generator {
    fn collect_params(&self, out: &mut Vec<Tensor>) {
        self.enc1.collect_params(out);
        self.enc2.collect_params(out);
        self.enc3.collect_params(out);
        self.dec1.collect_params(out);
        self.dec2.collect_params(out);
        self.dec3.collect_params(out);
        self.head.collect_params(out);
    }
    fn export_state(&self, prefix: &str, out: &mut Vec<StateEntry>) {
        self.enc1.export_state(&format!("{prefix}.enc1"), out);
        self.enc2.export_state(&format!("{prefix}.enc2"), out);
        self.enc3.export_state(&format!("{prefix}.enc3"), out);
        self.dec1.export_state(&format!("{prefix}.dec1"), out);
        self.dec2.export_state(&format!("{prefix}.dec2"), out);
        self.dec3.export_state(&format!("{prefix}.dec3"), out);
        self.head.export_state(&format!("{prefix}.head"), out);
    }
    fn import_state(&self, prefix: &str, src: &StateDict) -> Result<()> {
        self.enc1.import_state(&format!("{prefix}.enc1"), src)?;
        self.enc2.import_state(&format!("{prefix}.enc2"), src)?;
        self.enc3.import_state(&format!("{prefix}.enc3"), src)?;
        self.dec1.import_state(&format!("{prefix}.dec1"), src)?;
        self.dec2.import_state(&format!("{prefix}.dec2"), src)?;
        self.dec3.import_state(&format!("{prefix}.dec3"), src)?;
        self.head.import_state(&format!("{prefix}.head"), src)
    }
}

struct DiscBlock {
    conv: Conv2d,
    bn: BatchNorm2d,
}

impl DiscBlock {
    fn new(in_ch: usize, out_ch: usize, rng: &mut ChaCha8Rng) -> Self {
        DiscBlock {
            conv: Conv2d::new(in_ch, out_ch, 4, 2, 1, true, true, rng),
            bn: BatchNorm2d::new(out_ch),
        }
    }
    fn forward(&self, x: &Tensor, training: bool) -> Result<Tensor> {
        Ok(self.bn.forward(&self.conv.forward(x, training)?, training)?.relu())
    }
}

impl Module for DiscBlock {
    fn collect_params(&self, out: &mut Vec<Tensor>) {
        self.conv.collect_params(out);
        self.bn.collect_params(out);
    }
    fn export_state(&self, prefix: &str, out: &mut Vec<StateEntry>) {
        self.conv.export_state(&format!("{prefix}.conv"), out);
        self.bn.export_state(&format!("{prefix}.bn"), out);
    }
    fn import_state(&self, prefix: &str, src: &StateDict) -> Result<()> {
        self.conv.import_state(&format!("{prefix}.conv"), src)?;
        self.bn.import_state(&format!("{prefix}.bn"), src)
    }
}

/// Patch scores in (0,1) plus the penultimate feature tensor the
/// feature-matching loss consumes.
pub struct DiscOutput {
    pub scores: Tensor,
    pub features: Tensor,
}

/// Markovian patch discriminator: five spectrally normalized stride-2 conv
/// blocks (batch norm + ReLU) with self-attention after blocks 2 and 4,
/// then a 1x1 score head with a sigmoid.
///
/// Each block floors the spatial dims to half, so an input with H and W
/// divisible by 32 yields an (H/32) x (W/32) patch-score grid. Training on
/// 32x32 tiles reduces the last block to 1x1; batch norm then normalizes
/// across the batch alone, so adversarial training needs a batch of at
/// least 2 (a single 32x32 sample normalizes the features to exactly zero
/// and no gradient survives).
pub struct Discriminator {
    blocks: Vec<DiscBlock>,
    attn2: SelfAttention,
    attn4: SelfAttention,
    score_head: Conv2d,
}

impl Discriminator {
    pub fn new(base_width: usize, seed: u64) -> Self {
        let mut rng = init_rng(seeds::derive(seed, "discriminator/init", 0));
        let w = base_width;
        let widths = [w, 2 * w, 4 * w, 4 * w, 4 * w];
        let mut blocks = Vec::new();
        let mut in_ch = 1;
        for out_ch in widths {
            blocks.push(DiscBlock::new(in_ch, out_ch, &mut rng));
            in_ch = out_ch;
        }
        Discriminator {
            blocks,
            attn2: SelfAttention::new(widths[1], true, &mut rng),
            attn4: SelfAttention::new(widths[3], true, &mut rng),
            score_head: Conv2d::new(widths[4], 1, 1, 1, 0, true, true, &mut rng),
        }
    }

    pub fn forward(&self, swir: &Tensor, training: bool) -> Result<DiscOutput> {
        let dims = swir.shape();
        if dims.len() != 4 || dims[1] != 1 {
            return Err(CoreError::shape(
                "discriminator",
                format!("expected [N,1,H,W], got {dims:?}"),
            ));
        }
        let mut y = swir.clone();
        for (i, block) in self.blocks.iter().enumerate() {
            y = block.forward(&y, training)?;
            if i == 1 {
                y = self.attn2.forward(&y, training)?;
            } else if i == 3 {
                y = self.attn4.forward(&y, training)?;
            }
        }
        let scores = self.score_head.forward(&y, training)?.sigmoid();
        Ok(DiscOutput { scores, features: y })
    }
}

impl Module for Discriminator {
    fn collect_params(&self, out: &mut Vec<Tensor>) {
        for b in &self.blocks {
            b.collect_params(out);
        }
        self.attn2.collect_params(out);
        self.attn4.collect_params(out);
        self.score_head.collect_params(out);
    }
    fn export_state(&self, prefix: &str, out: &mut Vec<StateEntry>) {
        for (i, b) in self.blocks.iter().enumerate() {
            b.export_state(&format!("{prefix}.block{i}"), out);
        }
        self.attn2.export_state(&format!("{prefix}.attn2"), out);
        self.attn4.export_state(&format!("{prefix}.attn4"), out);
        self.score_head.export_state(&format!("{prefix}.score_head"), out);
    }
    fn import_state(&self, prefix: &str, src: &StateDict) -> Result<()> {
        for (i, b) in self.blocks.iter().enumerate() {
            b.import_state(&format!("{prefix}.block{i}"), src)?;
        }
        self.attn2.import_state(&format!("{prefix}.attn2"), src)?;
        self.attn4.import_state(&format!("{prefix}.attn4"), src)?;
        self.score_head.import_state(&format!("{prefix}.score_head"), src)
    }
}

/// Generator loss parts: mean squared pixel error plus mean squared distance
/// of fake patch scores from 1. Reported separately for logging.
pub struct GenLossParts {
    pub pixel: Tensor,
    pub adversarial: Tensor,
}

impl GenLossParts {
    pub fn total(&self) -> Result<Tensor> {
        self.pixel.add(&self.adversarial)
    }
}

/// Pixel term: mean((s - s_fake)^2); adversarial term: mean((1 - D(s_fake))^2).
pub fn generator_loss(
    real_swir: &Tensor,
    fake_swir: &Tensor,
    fake_scores: &Tensor,
) -> Result<GenLossParts> {
    let pixel = real_swir.sub(fake_swir)?.sqr().mean();
    let adversarial = fake_scores.neg().add_scalar(1.0).sqr().mean();
    Ok(GenLossParts { pixel, adversarial })
}

/// Least-squares patch discrimination: fake scores pushed to 0, real to 1.
pub fn discriminator_loss(fake_scores: &Tensor, real_scores: &Tensor) -> Result<Tensor> {
    let fake = fake_scores.sqr().mean();
    let real = real_scores.neg().add_scalar(1.0).sqr().mean();
    fake.add(&real)
}

/// Mean squared distance between real and fake penultimate discriminator
/// features. The real branch is detached, so this loss can only pull the
/// generator toward the real features and never the reverse.
pub fn feature_matching_loss(real_features: &Tensor, fake_features: &Tensor) -> Result<Tensor> {
    Ok(real_features.detach().sub(fake_features)?.sqr().mean())
}

/// Weighted sum of the three loss components (diagnostic form; training
/// applies the operational split of [`GanTrainer::step`]).
pub fn gan_total_loss(
    generator: &Tensor,
    discriminator: &Tensor,
    feature: &Tensor,
    weights: &LossWeights,
) -> Result<Tensor> {
    generator
        .mul_scalar(weights.lambda_g)
        .add(&discriminator.mul_scalar(weights.lambda_d))?
        .add(&feature.mul_scalar(weights.lambda_f))
}

/// Per-step loss report (also the CSV log row).
#[derive(Debug, Clone, Copy, Serialize)]
pub struct GanStepReport {
    pub step: u64,
    pub lr_generator: f64,
    pub lr_discriminator: f64,
    pub pixel: f64,
    pub adversarial: f64,
    pub discriminator: f64,
    pub feature: f64,
    pub warmup: bool,
}

/// Alternating GAN trainer with a generator-only warmup phase.
///
/// During warmup only the pixel term trains the generator and the
/// discriminator is untouched. Afterwards each step runs one discriminator
/// update (fake branch detached) followed by one generator update minimizing
/// lambda_g * (pixel + adversarial) + lambda_f * feature.
pub struct GanTrainer {
    pub generator: Generator,
    pub discriminator: Discriminator,
    g_params: Vec<Tensor>,
    d_params: Vec<Tensor>,
    opt_g: Adam,
    opt_d: Adam,
    sched_g: CosineSchedule,
    sched_d: CosineSchedule,
    weights: LossWeights,
    warmup_steps: u64,
    step: u64,
}

impl GanTrainer {
    /// `total_steps` sizes the cosine schedules; the first `warmup_steps`
    /// steps are generator-only.
    pub fn new(config: &GanConfig, total_steps: u64, warmup_steps: u64) -> Result<Self> {
        config.weights.validate()?;
        let generator = Generator::new(
            config.generator_in_channels(),
            config.base_width,
            config.dropout,
            config.seed,
        );
        let discriminator = Discriminator::new(config.base_width, config.seed);
        let g_params = generator.params();
        let d_params = discriminator.params();
        Ok(GanTrainer {
            g_params,
            d_params,
            generator,
            discriminator,
            opt_g: Adam::new(config.beta1, config.beta2),
            opt_d: Adam::new(config.beta1, config.beta2),
            sched_g: CosineSchedule::new(
                config.lr_generator,
                config.lr_generator * config.min_lr_factor,
                total_steps.max(1),
            ),
            sched_d: CosineSchedule::new(
                config.lr_discriminator,
                config.lr_discriminator * config.min_lr_factor,
                total_steps.max(1),
            ),
            weights: config.weights,
            warmup_steps,
            step: 0,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn in_warmup(&self) -> bool {
        self.step < self.warmup_steps
    }

    pub fn generator_lr(&self) -> f64 {
        self.sched_g.lr_at(self.step)
    }

    fn check_finite(&self, value: f64, term: &'static str) -> Result<f64> {
        if value.is_finite() {
            Ok(value)
        } else {
            Err(CoreError::NonFiniteLoss { term, step: self.step })
        }
    }

    /// One training step on a batch of normalized visual input and raw SWIR
    /// target.
    pub fn step(&mut self, visual: &Tensor, swir: &Tensor) -> Result<GanStepReport> {
        let lr_g = self.sched_g.lr_at(self.step);
        let lr_d = self.sched_d.lr_at(self.step);
        let warmup = self.in_warmup();

        let report = if warmup {
            let fake = self.generator.forward(visual, true)?;
            let pixel = swir.sub(&fake)?.sqr().mean();
            let value = self.check_finite(pixel.item(), "generator-pixel")?;
            pixel.backward()?;
            self.opt_g.step(&self.g_params, lr_g);
            self.zero_grads();
            GanStepReport {
                step: self.step,
                lr_generator: lr_g,
                lr_discriminator: lr_d,
                pixel: value,
                adversarial: 0.0,
                discriminator: 0.0,
                feature: 0.0,
                warmup: true,
            }
        } else {
            // discriminator step on detached fakes
            let fake_detached = self.generator.forward(visual, true)?.detach();
            let d_fake = self.discriminator.forward(&fake_detached, true)?;
            let d_real = self.discriminator.forward(swir, true)?;
            let d_loss = discriminator_loss(&d_fake.scores, &d_real.scores)?
                .mul_scalar(self.weights.lambda_d);
            let d_value = self.check_finite(d_loss.item(), "discriminator")?;
            d_loss.backward()?;
            self.opt_d.step(&self.d_params, lr_d);
            self.zero_grads();

            // generator step
            let fake = self.generator.forward(visual, true)?;
            let d_fake = self.discriminator.forward(&fake, true)?;
            let d_real = self.discriminator.forward(swir, true)?;
            let parts = generator_loss(swir, &fake, &d_fake.scores)?;
            let feature = feature_matching_loss(&d_real.features, &d_fake.features)?;
            let pixel_value = self.check_finite(parts.pixel.item(), "generator-pixel")?;
            let adv_value = self.check_finite(parts.adversarial.item(), "generator-adversarial")?;
            let feat_value = self.check_finite(feature.item(), "feature-matching")?;
            let g_loss = parts
                .total()?
                .mul_scalar(self.weights.lambda_g)
                .add(&feature.mul_scalar(self.weights.lambda_f))?;
            g_loss.backward()?;
            self.opt_g.step(&self.g_params, lr_g);
            self.zero_grads();

            GanStepReport {
                step: self.step,
                lr_generator: lr_g,
                lr_discriminator: lr_d,
                pixel: pixel_value,
                adversarial: adv_value,
                discriminator: d_value,
                feature: feat_value,
                warmup: false,
            }
        };
        self.step += 1;
        Ok(report)
    }

    /// Apply whatever gradients are currently accumulated on the generator
    /// parameters at the generator's scheduled learning rate (used by joint
    /// training, where the segmentation loss backpropagates into the
    /// generator).
    pub fn step_generator_from_accumulated(&mut self) {
        let lr = self.sched_g.lr_at(self.step);
        self.opt_g.step(&self.g_params, lr);
    }

    pub fn zero_grads(&self) {
        for p in self.g_params.iter().chain(&self.d_params) {
            p.zero_grad();
        }
    }

    pub fn generator_param_snapshot(&self) -> Vec<Vec<f64>> {
        self.g_params.iter().map(|p| p.to_vec()).collect()
    }

    pub fn discriminator_param_snapshot(&self) -> Vec<Vec<f64>> {
        self.d_params.iter().map(|p| p.to_vec()).collect()
    }
}

impl Module for GanTrainer {
    fn collect_params(&self, out: &mut Vec<Tensor>) {
        out.extend(self.g_params.iter().cloned());
        out.extend(self.d_params.iter().cloned());
    }
    fn export_state(&self, prefix: &str, out: &mut Vec<StateEntry>) {
        self.generator.export_state(&format!("{prefix}.generator"), out);
        self.discriminator.export_state(&format!("{prefix}.discriminator"), out);
    }
    fn import_state(&self, prefix: &str, src: &StateDict) -> Result<()> {
        self.generator.import_state(&format!("{prefix}.generator"), src)?;
        self.discriminator.import_state(&format!("{prefix}.discriminator"), src)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generator_shape_contract() {
        let gen = Generator::new(3, 4, 0.0, 1);
        let x = Tensor::from_vec(&[2, 3, 16, 16], vec![0.1; 2 * 3 * 256]).unwrap();
        let y = gen.forward(&x, false).unwrap();
        assert_eq!(y.shape(), &[2, 1, 16, 16]);
    }

    #[test]
    fn generator_rejects_indivisible_sizes() {
        let gen = Generator::new(3, 4, 0.0, 1);
        let x = Tensor::from_vec(&[1, 3, 12, 12], vec![0.1; 3 * 144]).unwrap();
        assert!(gen.forward(&x, false).is_err());
    }

    #[test]
    fn generator_eval_is_deterministic() {
        let gen = Generator::new(3, 4, 0.2, 5);
        let x = Tensor::from_vec(&[1, 3, 8, 8], (0..192).map(|i| i as f64 / 192.0).collect())
            .unwrap();
        let a = gen.forward(&x, false).unwrap();
        let b = gen.forward(&x, false).unwrap();
        assert_eq!(a.to_vec(), b.to_vec());
    }

    #[test]
    fn discriminator_patch_grid_follows_the_size_formula() {
        let disc = Discriminator::new(4, 2);
        for (size, expect) in [(32usize, 1usize), (64, 2), (96, 3)] {
            let x = Tensor::from_vec(&[1, 1, size, size], vec![0.2; size * size]).unwrap();
            let out = disc.forward(&x, false).unwrap();
            assert_eq!(out.scores.shape(), &[1, 1, expect, expect], "input {size}");
            assert!(out.scores.to_vec().iter().all(|s| *s > 0.0 && *s < 1.0));
        }
    }

    #[test]
    fn generator_loss_closed_forms() {
        let s = Tensor::from_vec(&[1, 1, 2, 2], vec![0.3; 4]).unwrap();
        let ones = Tensor::from_vec(&[1, 1, 1, 1], vec![1.0]).unwrap();
        let zeros = Tensor::from_vec(&[1, 1, 1, 1], vec![0.0]).unwrap();

        // s == fake, scores 1: loss 0
        let parts = generator_loss(&s, &s, &ones).unwrap();
        assert!((parts.total().unwrap().item()).abs() < 1e-12);

        // fake = s + 1, scores 1: pixel term 1
        let fake = s.add_scalar(1.0);
        let parts = generator_loss(&s, &fake, &ones).unwrap();
        assert!((parts.pixel.item() - 1.0).abs() < 1e-12);
        assert!((parts.total().unwrap().item() - 1.0).abs() < 1e-12);

        // perfect pixels, scores 0: adversarial term 1
        let parts = generator_loss(&s, &s, &zeros).unwrap();
        assert!((parts.total().unwrap().item() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn discriminator_loss_closed_forms() {
        let ones = Tensor::from_vec(&[4], vec![1.0; 4]).unwrap();
        let zeros = Tensor::from_vec(&[4], vec![0.0; 4]).unwrap();
        let half = Tensor::from_vec(&[4], vec![0.5; 4]).unwrap();
        assert!((discriminator_loss(&zeros, &ones).unwrap().item()).abs() < 1e-12);
        assert!((discriminator_loss(&ones, &zeros).unwrap().item() - 2.0).abs() < 1e-12);
        assert!((discriminator_loss(&half, &half).unwrap().item() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn feature_matching_closed_forms() {
        let a = Tensor::from_vec(&[8], vec![0.7; 8]).unwrap();
        assert!((feature_matching_loss(&a, &a).unwrap().item()).abs() < 1e-12);
        let b = a.add_scalar(0.3);
        assert!((feature_matching_loss(&a, &b).unwrap().item() - 0.09).abs() < 1e-12);
    }

    #[test]
    fn feature_matching_detaches_the_real_branch() {
        let real = Tensor::param(&[4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let fake = Tensor::param(&[4], vec![0.0; 4]).unwrap();
        feature_matching_loss(&real, &fake).unwrap().backward().unwrap();
        assert!(real.grad().is_none());
        assert!(fake.grad().is_some());
    }

    #[test]
    fn total_loss_is_a_weighted_sum() {
        let g = Tensor::scalar(0.2);
        let d = Tensor::scalar(0.3);
        let f = Tensor::scalar(0.5);
        let w = LossWeights { lambda_g: 1.0, lambda_d: 1.0, lambda_f: 1.0 };
        assert!((gan_total_loss(&g, &d, &f, &w).unwrap().item() - 1.0).abs() < 1e-12);
        let w2 = LossWeights { lambda_f: 2.0, ..w };
        let diff = gan_total_loss(&g, &d, &f, &w2).unwrap().item()
            - gan_total_loss(&g, &d, &f, &w).unwrap().item();
        assert!((diff - 0.5).abs() < 1e-12);
    }

    #[test]
    fn warmup_leaves_discriminator_untouched() {
        let cfg = GanConfig { base_width: 4, seed: 3, ..GanConfig::default() };
        let mut trainer = GanTrainer::new(&cfg, 10, 2).unwrap();
        let before = trainer.discriminator_param_snapshot();
        let x = Tensor::from_vec(&[2, 3, 32, 32], (0..6144).map(|i| ((i * 5) % 71) as f64 / 71.0).collect()).unwrap();
        let s = Tensor::from_vec(&[2, 1, 32, 32], (0..2048).map(|i| ((i * 11) % 43) as f64 / 43.0).collect()).unwrap();
        trainer.step(&x, &s).unwrap();
        trainer.step(&x, &s).unwrap();
        assert_eq!(trainer.discriminator_param_snapshot(), before);
        // first adversarial step updates both networks
        let g_before = trainer.generator_param_snapshot();
        trainer.step(&x, &s).unwrap();
        assert_ne!(trainer.discriminator_param_snapshot(), before);
        assert_ne!(trainer.generator_param_snapshot(), g_before);
    }

    #[test]
    fn seeded_training_is_bit_reproducible() {
        let run = || {
            let cfg = GanConfig { base_width: 4, seed: 11, ..GanConfig::default() };
            let mut trainer = GanTrainer::new(&cfg, 6, 1).unwrap();
            let x = Tensor::from_vec(&[2, 3, 32, 32], (0..6144).map(|i| (i % 97) as f64 / 97.0).collect()).unwrap();
            let s = Tensor::from_vec(&[2, 1, 32, 32], (0..2048).map(|i| (i % 53) as f64 / 53.0).collect()).unwrap();
            for _ in 0..4 {
                trainer.step(&x, &s).unwrap();
            }
            trainer.generator_param_snapshot()
        };
        assert_eq!(run(), run());
    }
}
