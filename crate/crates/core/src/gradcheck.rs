//! Central finite-difference gradient verification.
//!
//! The checker is deliberately independent of the backward engine: it only
//! re-evaluates the forward closure under small parameter perturbations, so
//! it can referee any backward rule. Closures must be pure functions of the
//! parameter data (eval-mode networks, or ops without hidden state drift).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct GradCheckFailure {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

impl std::fmt::Display for GradCheckFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}[{}]: analytic {} vs numeric {} (rel error {:.3e})",
            self.param, self.index, self.analytic, self.numeric, self.rel_error
        )
    }
}

#[derive(Debug, Default)]
pub struct GradCheckReport {
    pub entries_checked: usize,
    pub max_rel_error: f64,
}

/// Compare analytic gradients of `loss_fn` against central finite differences
/// for up to `max_entries_per_param` sampled entries of each parameter.
///
/// An entry passes when |analytic - numeric| < 1e-7 + tol * max(|analytic|,
/// |numeric|). The absolute floor absorbs the f64 roundoff that central
/// differences carry at step sizes around 1e-5; any genuinely wrong backward
/// rule produces errors orders of magnitude above it.
pub fn check_gradients(
    mut loss_fn: impl FnMut() -> Result<Tensor>,
    params: &[(String, Tensor)],
    max_entries_per_param: usize,
    step: f64,
    tol: f64,
    seed: u64,
) -> std::result::Result<GradCheckReport, Box<GradCheckFailure>> {
    for (_, p) in params {
        p.zero_grad();
    }
    let loss = loss_fn().expect("loss evaluation failed during gradient check");
    loss.backward().expect("backward failed during gradient check");
    let analytic: Vec<Vec<f64>> = params
        .iter()
        .map(|(_, p)| p.grad().unwrap_or_else(|| vec![0.0; p.numel()]))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport::default();

    for ((name, p), grads) in params.iter().zip(&analytic) {
        let n = p.numel();
        let mut indices: Vec<usize> = (0..n).collect();
        if n > max_entries_per_param {
            // partial Fisher-Yates: first max_entries entries become the sample
            for i in 0..max_entries_per_param {
                let j = rng.gen_range(i..n);
                indices.swap(i, j);
            }
            indices.truncate(max_entries_per_param);
        }
        for &idx in &indices {
            let original = p.data()[idx];
            p.update_data(|d| d[idx] = original + step);
            let plus = loss_fn().expect("loss evaluation failed").item();
            p.update_data(|d| d[idx] = original - step);
            let minus = loss_fn().expect("loss evaluation failed").item();
            p.update_data(|d| d[idx] = original);

            let numeric = (plus - minus) / (2.0 * step);
            let a = grads[idx];
            const ATOL: f64 = 1e-7;
            let denom = a.abs().max(numeric.abs()).max(ATOL);
            let rel = (a - numeric).abs() / denom;
            report.entries_checked += 1;
            report.max_rel_error = report.max_rel_error.max(rel);
            if (a - numeric).abs() >= ATOL + tol * a.abs().max(numeric.abs()) {
                return Err(Box::new(GradCheckFailure {
                    param: name.clone(),
                    index: idx,
                    analytic: a,
                    numeric,
                    rel_error: rel,
                }));
            }
        }
    }
    Ok(report)
}
