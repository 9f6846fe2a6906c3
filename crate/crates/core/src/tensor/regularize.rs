//! Dropout and spectral weight normalization.

use std::cell::RefCell;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{BackwardOp, Tensor};
use crate::error::{CoreError, Result};

struct MaskBackward {
    mask: Vec<f64>,
}
impl BackwardOp for MaskBackward {
    fn name(&self) -> &'static str {
        "dropout"
    }
    fn backward(&self, grad_out: &[f64], parents: &[Tensor]) {
        let d: Vec<f64> = grad_out.iter().zip(&self.mask).map(|(g, m)| g * m).collect();
        parents[0].accumulate_grad(&d);
    }
}

/// Inverted dropout: keeps each element with probability 1-p and rescales by
/// 1/(1-p). Identity in eval mode or at p = 0.
pub fn dropout(x: &Tensor, p: f64, training: bool, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    if !(0.0..1.0).contains(&p) {
        return Err(CoreError::InvalidConfig(format!(
            "dropout probability {p} outside [0, 1)"
        )));
    }
    if !training || p == 0.0 {
        return Ok(x.clone());
    }
    let keep = 1.0 - p;
    let mask: Vec<f64> = (0..x.numel())
        .map(|_| if rng.gen::<f64>() < p { 0.0 } else { 1.0 / keep })
        .collect();
    let out: Vec<f64> = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
    Ok(Tensor::from_op(
        x.shape().to_vec(),
        out,
        vec![x.clone()],
        Box::new(MaskBackward { mask }),
    ))
}

/// Power-iteration state for spectral normalization, persisted across calls
/// (and through checkpoints) by the owning layer. `u` and `v` approximate the
/// top singular vectors of the weight viewed as a [rows, cols] matrix.
#[derive(Debug)]
pub struct SpectralState {
    pub u: RefCell<Vec<f64>>,
    pub v: RefCell<Vec<f64>>,
}

fn l2_normalize(v: &mut [f64]) -> f64 {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 1e-12 {
        for x in v.iter_mut() {
            *x /= norm;
        }
    }
    norm
}

impl SpectralState {
    /// Seed `u` with a random unit vector and run one power iteration against
    /// the initial weight so that sigma = u^T W v is well defined from the
    /// first forward call.
    pub fn new(weight: &Tensor, rng: &mut ChaCha8Rng) -> Self {
        let rows = weight.shape()[0];
        let cols = weight.numel() / rows;
        let mut u: Vec<f64> = (0..rows).map(|_| rng.gen_range(-1.0..1.0)).collect();
        l2_normalize(&mut u);
        let state = SpectralState {
            u: RefCell::new(u),
            v: RefCell::new(vec![0.0; cols]),
        };
        state.power_iterate(&weight.data(), rows, cols);
        state
    }

    /// One step: v <- normalize(W^T u), u <- normalize(W v). Returns sigma =
    /// u^T W v (always >= 0 because u ends parallel to W v).
    fn power_iterate(&self, w: &[f64], rows: usize, cols: usize) -> f64 {
        let mut u = self.u.borrow_mut();
        let mut v = self.v.borrow_mut();
        for j in 0..cols {
            let mut acc = 0.0;
            for i in 0..rows {
                acc += w[i * cols + j] * u[i];
            }
            v[j] = acc;
        }
        l2_normalize(&mut v);
        let mut sigma = 0.0;
        for i in 0..rows {
            let mut acc = 0.0;
            for j in 0..cols {
                acc += w[i * cols + j] * v[j];
            }
            u[i] = acc;
        }
        sigma += l2_normalize(&mut u);
        sigma
    }

    fn sigma_frozen(&self, w: &[f64], rows: usize, cols: usize) -> f64 {
        let u = self.u.borrow();
        let v = self.v.borrow();
        let mut sigma = 0.0;
        for i in 0..rows {
            let mut acc = 0.0;
            for j in 0..cols {
                acc += w[i * cols + j] * v[j];
            }
            sigma += acc * u[i];
        }
        sigma
    }
}

struct SpectralBackward {
    u: Vec<f64>,
    v: Vec<f64>,
    sigma: f64,
    cols: usize,
}
impl BackwardOp for SpectralBackward {
    fn name(&self) -> &'static str {
        "spectral_normalize"
    }
    fn backward(&self, grad_out: &[f64], parents: &[Tensor]) {
        // out = W / sigma with sigma = u^T W v (u, v treated as constants):
        // dW = g/sigma - (sum g .* W/sigma) * (u v^T) / sigma
        let w = parents[0].data();
        let inner: f64 = grad_out
            .iter()
            .zip(w.iter())
            .map(|(g, wv)| g * wv / self.sigma)
            .sum();
        let mut d = vec![0.0; w.len()];
        for (idx, dv) in d.iter_mut().enumerate() {
            let (i, j) = (idx / self.cols, idx % self.cols);
            *dv = grad_out[idx] / self.sigma - inner * self.u[i] * self.v[j] / self.sigma;
        }
        drop(w);
        parents[0].accumulate_grad(&d);
    }
}

/// Divide a weight by its estimated top singular value so the returned
/// tensor's spectral norm is about 1.
///
/// The weight is viewed as a matrix [shape[0], rest]. In training mode one
/// power iteration refines the persisted (u, v) before sigma is computed; in
/// eval mode the stored vectors are reused untouched, which keeps the forward
/// pass a pure (and exactly differentiable) function of the weight.
///
/// A weight with sigma below 1e-12 (for example an all-zero matrix) is
/// returned unchanged.
pub fn spectral_normalize(weight: &Tensor, state: &SpectralState, training: bool) -> Result<Tensor> {
    if weight.shape().is_empty() {
        return Err(CoreError::shape("spectral_normalize", "scalar weight"));
    }
    let rows = weight.shape()[0];
    let cols = weight.numel() / rows;
    if state.u.borrow().len() != rows || state.v.borrow().len() != cols {
        return Err(CoreError::shape(
            "spectral_normalize",
            format!("state sized for {}x{}, weight is {rows}x{cols}", state.u.borrow().len(), state.v.borrow().len()),
        ));
    }
    let sigma = {
        let w = weight.data();
        if training {
            state.power_iterate(&w, rows, cols)
        } else {
            state.sigma_frozen(&w, rows, cols)
        }
    };
    if sigma.abs() < 1e-12 {
        // degenerate (zero) weight: pass through unchanged
        return Ok(weight.mul_scalar(1.0));
    }
    let out: Vec<f64> = weight.data().iter().map(|v| v / sigma).collect();
    Ok(Tensor::from_op(
        weight.shape().to_vec(),
        out,
        vec![weight.clone()],
        Box::new(SpectralBackward {
            u: state.u.borrow().clone(),
            v: state.v.borrow().clone(),
            sigma,
            cols,
        }),
    ))
}
