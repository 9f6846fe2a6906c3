//! Batch and instance normalization over NCHW tensors.

use std::cell::RefCell;

use super::{BackwardOp, Tensor};
use crate::error::{CoreError, Result};

/// Running mean/variance buffers owned by a batch-norm layer. Updated only in
/// training mode; eval mode normalizes with these instead of batch statistics.
#[derive(Debug)]
pub struct RunningStats {
    pub mean: RefCell<Vec<f64>>,
    pub var: RefCell<Vec<f64>>,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: RefCell::new(vec![0.0; channels]),
            var: RefCell::new(vec![1.0; channels]),
        }
    }
}

fn check_affine(op: &'static str, channels: usize, gamma: &Tensor, beta: &Tensor) -> Result<()> {
    if gamma.shape() != [channels] || beta.shape() != [channels] {
        return Err(CoreError::shape(
            op,
            format!(
                "gamma {:?} / beta {:?} do not match {channels} channels",
                gamma.shape(),
                beta.shape()
            ),
        ));
    }
    Ok(())
}

/// Shared backward for both norms. Groups are contiguous index lists sharing
/// one (mean, var); `affine_channel[g]` maps a group to its gamma/beta entry.
struct NormBackward {
    normalized: Vec<f64>,
    inv_std: Vec<f64>,
    groups: Vec<Vec<usize>>,
    affine_channel: Vec<usize>,
    channels: usize,
    /// false in eval mode: statistics are constants, not functions of x.
    stats_from_batch: bool,
}

impl BackwardOp for NormBackward {
    fn name(&self) -> &'static str {
        "norm"
    }
    fn backward(&self, grad_out: &[f64], parents: &[Tensor]) {
        let x = &parents[0];
        let gamma = &parents[1];
        let g_data = gamma.data();

        let mut d_x = vec![0.0; grad_out.len()];
        let mut d_gamma = vec![0.0; self.channels];
        let mut d_beta = vec![0.0; self.channels];

        for (gi, idxs) in self.groups.iter().enumerate() {
            let c = self.affine_channel[gi];
            let gam = g_data[c];
            let inv = self.inv_std[gi];
            let m = idxs.len() as f64;
            let mut sum_g = 0.0;
            let mut sum_gx = 0.0;
            for &i in idxs {
                let g = grad_out[i];
                sum_g += g;
                sum_gx += g * self.normalized[i];
                d_gamma[c] += g * self.normalized[i];
                d_beta[c] += g;
            }
            if self.stats_from_batch {
                for &i in idxs {
                    d_x[i] = gam * inv / m
                        * (m * grad_out[i] - sum_g - self.normalized[i] * sum_gx);
                }
            } else {
                for &i in idxs {
                    d_x[i] = gam * inv * grad_out[i];
                }
            }
        }
        drop(g_data);

        if x.requires_grad() {
            x.accumulate_grad(&d_x);
        }
        if gamma.requires_grad() {
            gamma.accumulate_grad(&d_gamma);
        }
        if parents[2].requires_grad() {
            parents[2].accumulate_grad(&d_beta);
        }
    }
}

fn group_indices_per_channel(bn: usize, ch: usize, hw: usize) -> Vec<Vec<usize>> {
    // one group per channel, gathering that channel across the whole batch
    (0..ch)
        .map(|c| {
            let mut v = Vec::with_capacity(bn * hw);
            for n in 0..bn {
                let base = (n * ch + c) * hw;
                v.extend(base..base + hw);
            }
            v
        })
        .collect()
}

fn normalize_groups(
    op: &'static str,
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    groups: Vec<Vec<usize>>,
    affine_channel: Vec<usize>,
    stats: Option<Vec<(f64, f64)>>, // fixed (mean, var) per group; None = from data
    eps: f64,
) -> Result<(Tensor, Vec<(f64, f64)>)> {
    check_affine(op, x.shape()[1], gamma, beta)?;
    let data = x.data();
    let g_data = gamma.data();
    let b_data = beta.data();

    let mut normalized = vec![0.0; data.len()];
    let mut out = vec![0.0; data.len()];
    let mut inv_std = Vec::with_capacity(groups.len());
    let mut used_stats = Vec::with_capacity(groups.len());
    let from_batch = stats.is_none();

    for (gi, idxs) in groups.iter().enumerate() {
        let (mean, var) = match &stats {
            Some(s) => s[gi],
            None => {
                let m = idxs.len() as f64;
                let mean = idxs.iter().map(|&i| data[i]).sum::<f64>() / m;
                let var = idxs.iter().map(|&i| (data[i] - mean).powi(2)).sum::<f64>() / m;
                (mean, var)
            }
        };
        used_stats.push((mean, var));
        let inv = 1.0 / (var + eps).sqrt();
        inv_std.push(inv);
        let c = affine_channel[gi];
        for &i in idxs {
            let xn = (data[i] - mean) * inv;
            normalized[i] = xn;
            out[i] = g_data[c] * xn + b_data[c];
        }
    }
    drop(data);
    drop(g_data);
    drop(b_data);

    let channels = x.shape()[1];
    let t = Tensor::from_op(
        x.shape().to_vec(),
        out,
        vec![x.clone(), gamma.clone(), beta.clone()],
        Box::new(NormBackward {
            normalized,
            inv_std,
            groups,
            affine_channel,
            channels,
            stats_from_batch: from_batch,
        }),
    );
    Ok((t, used_stats))
}

/// Batch normalization over `[N,C,H,W]`: per-channel statistics across the
/// whole batch in training mode, running statistics in eval mode.
///
/// Training mode updates `running` in place: new = (1 - momentum)*old +
/// momentum*batch, with the unbiased variance stored (matching the usual
/// convention) while the biased one normalizes.
pub fn batch_norm2d(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    running: &RunningStats,
    training: bool,
    momentum: f64,
    eps: f64,
) -> Result<Tensor> {
    if x.shape().len() != 4 {
        return Err(CoreError::shape(
            "batch_norm2d",
            format!("expected 4-D input, got {:?}", x.shape()),
        ));
    }
    let (bn, ch, h, w) = {
        let s = x.shape();
        (s[0], s[1], s[2], s[3])
    };
    let groups = group_indices_per_channel(bn, ch, h * w);
    let affine: Vec<usize> = (0..ch).collect();

    if training {
        let (t, stats) = normalize_groups("batch_norm2d", x, gamma, beta, groups, affine, None, eps)?;
        let m = (bn * h * w) as f64;
        let mut rm = running.mean.borrow_mut();
        let mut rv = running.var.borrow_mut();
        for (c, (mean, var)) in stats.iter().enumerate() {
            let unbiased = if m > 1.0 { var * m / (m - 1.0) } else { *var };
            rm[c] = (1.0 - momentum) * rm[c] + momentum * mean;
            rv[c] = (1.0 - momentum) * rv[c] + momentum * unbiased;
        }
        Ok(t)
    } else {
        let stats: Vec<(f64, f64)> = running
            .mean
            .borrow()
            .iter()
            .zip(running.var.borrow().iter())
            .map(|(m, v)| (*m, *v))
            .collect();
        let (t, _) =
            normalize_groups("batch_norm2d", x, gamma, beta, groups, affine, Some(stats), eps)?;
        Ok(t)
    }
}

/// Instance normalization over `[N,C,H,W]`: statistics per (sample, channel).
/// No running statistics; behaves identically in training and eval.
pub fn instance_norm2d(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
    if x.shape().len() != 4 {
        return Err(CoreError::shape(
            "instance_norm2d",
            format!("expected 4-D input, got {:?}", x.shape()),
        ));
    }
    let (bn, ch, h, w) = {
        let s = x.shape();
        (s[0], s[1], s[2], s[3])
    };
    let hw = h * w;
    let mut groups = Vec::with_capacity(bn * ch);
    let mut affine = Vec::with_capacity(bn * ch);
    for n in 0..bn {
        for c in 0..ch {
            let base = (n * ch + c) * hw;
            groups.push((base..base + hw).collect());
            affine.push(c);
        }
    }
    let (t, _) = normalize_groups("instance_norm2d", x, gamma, beta, groups, affine, None, eps)?;
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn affine(ch: usize, g: f64, b: f64) -> (Tensor, Tensor) {
        (
            Tensor::from_vec(&[ch], vec![g; ch]).unwrap(),
            Tensor::from_vec(&[ch], vec![b; ch]).unwrap(),
        )
    }

    #[test]
    fn constant_input_normalizes_to_zero() {
        // variance is zero; the eps guard keeps the output finite and exactly zero
        let x = Tensor::from_vec(&[1, 2, 2, 2], vec![3.0; 8]).unwrap();
        let (g, b) = affine(2, 1.0, 0.0);
        let stats = RunningStats::new(2);
        let y = batch_norm2d(&x, &g, &b, &stats, true, 0.1, 1e-5).unwrap();
        assert!(y.to_vec().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn zero_gamma_yields_beta() {
        let x = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (g, b) = affine(1, 0.0, 0.7);
        let stats = RunningStats::new(1);
        let y = batch_norm2d(&x, &g, &b, &stats, true, 0.1, 1e-5).unwrap();
        assert!(y.to_vec().iter().all(|v| (*v - 0.7).abs() < 1e-12));
        let yi = instance_norm2d(&x, &g, &b, 1e-5).unwrap();
        assert!(yi.to_vec().iter().all(|v| (*v - 0.7).abs() < 1e-12));
    }

    #[test]
    fn normalized_statistics_are_standard() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (bn, ch, h, w) = (2, 3, 8, 8);
        let data: Vec<f64> = (0..bn * ch * h * w).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let x = Tensor::from_vec(&[bn, ch, h, w], data).unwrap();
        let (g, b) = affine(ch, 1.0, 0.0);
        let stats = RunningStats::new(ch);
        let y = batch_norm2d(&x, &g, &b, &stats, true, 0.1, 1e-9).unwrap();
        let yd = y.data();
        for c in 0..ch {
            let mut vals = Vec::new();
            for n in 0..bn {
                let base = (n * ch + c) * h * w;
                vals.extend_from_slice(&yd[base..base + h * w]);
            }
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(m.abs() < 1e-5, "channel {c} mean {m}");
            assert!((v - 1.0).abs() < 1e-5, "channel {c} var {v}");
        }
    }

    #[test]
    fn running_stats_update_only_in_training() {
        let x = Tensor::from_vec(&[1, 1, 2, 2], vec![10.0, 12.0, 8.0, 10.0]).unwrap();
        let (g, b) = affine(1, 1.0, 0.0);
        let stats = RunningStats::new(1);
        batch_norm2d(&x, &g, &b, &stats, false, 0.1, 1e-5).unwrap();
        assert_eq!(stats.mean.borrow()[0], 0.0);
        batch_norm2d(&x, &g, &b, &stats, true, 0.1, 1e-5).unwrap();
        assert!((stats.mean.borrow()[0] - 1.0).abs() < 1e-12); // 0.9*0 + 0.1*10
    }

    #[test]
    fn eval_mode_uses_running_statistics() {
        let x = Tensor::from_vec(&[1, 1, 1, 2], vec![3.0, 5.0]).unwrap();
        let (g, b) = affine(1, 1.0, 0.0);
        let stats = RunningStats::new(1);
        *stats.mean.borrow_mut() = vec![4.0];
        *stats.var.borrow_mut() = vec![4.0];
        let y = batch_norm2d(&x, &g, &b, &stats, false, 0.1, 0.0).unwrap();
        assert!((y.data()[0] + 0.5).abs() < 1e-12);
        assert!((y.data()[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn affine_channel_mismatch_is_an_error() {
        let x = Tensor::from_vec(&[1, 2, 2, 2], vec![0.0; 8]).unwrap();
        let (g, b) = affine(3, 1.0, 0.0);
        let stats = RunningStats::new(2);
        assert!(batch_norm2d(&x, &g, &b, &stats, true, 0.1, 1e-5).is_err());
        assert!(instance_norm2d(&x, &g, &b, 1e-5).is_err());
    }

    #[test]
    fn instance_norm_normalizes_each_sample() {
        let x = Tensor::from_vec(&[2, 1, 1, 2], vec![0.0, 2.0, 100.0, 104.0]).unwrap();
        let (g, b) = affine(1, 1.0, 0.0);
        let y = instance_norm2d(&x, &g, &b, 1e-12).unwrap();
        let d = y.to_vec();
        assert!((d[0] + 1.0).abs() < 1e-5 && (d[1] - 1.0).abs() < 1e-5);
        assert!((d[2] + 1.0).abs() < 1e-5 && (d[3] - 1.0).abs() < 1e-5);
    }
}
