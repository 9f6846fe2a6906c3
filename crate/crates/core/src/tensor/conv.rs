//! 2-D cross-correlation and its transpose, NCHW layout.
//!
//! Kernels are organized as shift-and-accumulate: for each kernel tap the
//! valid output range is computed once and the inner loop runs over a row
//! without bounds checks, which lets the compiler vectorize stride-1 taps.

use super::{BackwardOp, Tensor};
use crate::error::{CoreError, Result};

/// Output spatial size of `conv2d`: floor((dim + 2*padding - kernel)/stride) + 1.
pub fn conv2d_output_size(dim: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = dim + 2 * padding;
    if padded < kernel || stride == 0 {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Output spatial size of `conv_transpose2d`: (dim - 1)*stride - 2*padding + kernel.
pub fn conv_transpose2d_output_size(
    dim: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Option<usize> {
    if dim == 0 || stride == 0 {
        return None;
    }
    let grown = (dim - 1) * stride + kernel;
    if grown <= 2 * padding {
        return None;
    }
    Some(grown - 2 * padding)
}

/// Valid output range [lo, hi) so that o*stride + tap - padding lands inside
/// [0, input_dim); `out_dim` caps the range.
#[inline]
fn tap_range(tap: usize, padding: usize, stride: usize, input_dim: usize, out_dim: usize) -> (usize, usize) {
    // o*stride + tap - padding >= 0  =>  o >= ceil((padding - tap)/stride)
    let lo = padding.saturating_sub(tap).div_ceil(stride);
    // o*stride + tap - padding <= input_dim - 1
    let hi = if input_dim + padding > tap {
        (((input_dim + padding - tap - 1) / stride) + 1).min(out_dim)
    } else {
        0
    };
    (lo.min(hi), hi)
}

struct ConvShape {
    bn: usize,
    ci: usize,
    h: usize,
    w: usize,
    co: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    padding: usize,
}

fn conv_shape(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: usize,
) -> Result<ConvShape> {
    if input.shape().len() != 4 || weight.shape().len() != 4 {
        return Err(CoreError::shape(
            "conv2d",
            format!(
                "expected 4-D input and weight, got {:?} and {:?}",
                input.shape(),
                weight.shape()
            ),
        ));
    }
    let (bn, ci, h, w) = {
        let s = input.shape();
        (s[0], s[1], s[2], s[3])
    };
    let (co, ciw, kh, kw) = {
        let s = weight.shape();
        (s[0], s[1], s[2], s[3])
    };
    if ci != ciw {
        return Err(CoreError::shape(
            "conv2d",
            format!("input has {ci} channels but weight expects {ciw}"),
        ));
    }
    if let Some(b) = bias {
        if b.shape() != [co] {
            return Err(CoreError::shape(
                "conv2d",
                format!("bias shape {:?} does not match {co} output channels", b.shape()),
            ));
        }
    }
    let oh = conv2d_output_size(h, kh, stride, padding).ok_or_else(|| {
        CoreError::shape(
            "conv2d",
            format!("padded height {} smaller than kernel {kh}", h + 2 * padding),
        )
    })?;
    let ow = conv2d_output_size(w, kw, stride, padding).ok_or_else(|| {
        CoreError::shape(
            "conv2d",
            format!("padded width {} smaller than kernel {kw}", w + 2 * padding),
        )
    })?;
    Ok(ConvShape { bn, ci, h, w, co, kh, kw, oh, ow, stride, padding })
}

struct Conv2dBackward {
    stride: usize,
    padding: usize,
}

impl BackwardOp for Conv2dBackward {
    fn name(&self) -> &'static str {
        "conv2d"
    }
    fn backward(&self, grad_out: &[f64], parents: &[Tensor]) {
        let input = &parents[0];
        let weight = &parents[1];
        let bias = parents.get(2);
        let s = conv_shape(input, weight, bias, self.stride, self.padding)
            .expect("backward shapes match forward");

        let need_input = input.requires_grad();
        let need_weight = weight.requires_grad();
        let need_bias = bias.is_some_and(|b| b.requires_grad());

        let in_data = input.data();
        let w_data = weight.data();
        let mut d_in = if need_input { vec![0.0; in_data.len()] } else { Vec::new() };
        let mut d_w = if need_weight { vec![0.0; w_data.len()] } else { Vec::new() };
        let mut d_b = if need_bias { vec![0.0; s.co] } else { Vec::new() };

        for n in 0..s.bn {
            for co in 0..s.co {
                let g_base = ((n * s.co) + co) * s.oh * s.ow;
                if need_bias {
                    d_b[co] += grad_out[g_base..g_base + s.oh * s.ow].iter().sum::<f64>();
                }
                if !(need_input || need_weight) {
                    continue;
                }
                for ci in 0..s.ci {
                    let i_base = ((n * s.ci) + ci) * s.h * s.w;
                    for ky in 0..s.kh {
                        let (oy_lo, oy_hi) = tap_range(ky, s.padding, s.stride, s.h, s.oh);
                        for kx in 0..s.kw {
                            let w_idx = (((co * s.ci) + ci) * s.kh + ky) * s.kw + kx;
                            let wv = w_data[w_idx];
                            let (ox_lo, ox_hi) = tap_range(kx, s.padding, s.stride, s.w, s.ow);
                            if ox_lo >= ox_hi {
                                continue;
                            }
                            let mut dw_acc = 0.0;
                            let col0 = kx as isize - s.padding as isize;
                            for oy in oy_lo..oy_hi {
                                let iy = oy * s.stride + ky - s.padding;
                                let g_row = &grad_out[g_base + oy * s.ow..];
                                // first touched input column; >= 0 within the tap range
                                let start =
                                    ((i_base + iy * s.w) as isize + (ox_lo * s.stride) as isize + col0) as usize;
                                let mut src = start;
                                if need_input {
                                    for ox in ox_lo..ox_hi {
                                        let g = g_row[ox];
                                        d_in[src] += wv * g;
                                        dw_acc += g * in_data[src];
                                        src += s.stride;
                                    }
                                } else {
                                    for ox in ox_lo..ox_hi {
                                        dw_acc += g_row[ox] * in_data[src];
                                        src += s.stride;
                                    }
                                }
                            }
                            if need_weight {
                                d_w[w_idx] += dw_acc;
                            }
                        }
                    }
                }
            }
        }
        drop(in_data);
        drop(w_data);
        if need_input {
            input.accumulate_grad(&d_in);
        }
        if need_weight {
            weight.accumulate_grad(&d_w);
        }
        if need_bias {
            parents[2].accumulate_grad(&d_b);
        }
    }
}

/// 2-D cross-correlation of `input [N,Ci,H,W]` with `weight [Co,Ci,Kh,Kw]`.
///
/// Output size per spatial dim is floor((dim + 2*padding - kernel)/stride) + 1.
pub fn conv2d(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let s = conv_shape(input, weight, bias, stride, padding)?;
    let in_data = input.data();
    let w_data = weight.data();
    let mut out = vec![0.0; s.bn * s.co * s.oh * s.ow];

    if let Some(b) = bias {
        let b_data = b.data();
        for n in 0..s.bn {
            for co in 0..s.co {
                let base = ((n * s.co) + co) * s.oh * s.ow;
                out[base..base + s.oh * s.ow].fill(b_data[co]);
            }
        }
    }

    for n in 0..s.bn {
        for co in 0..s.co {
            let o_base = ((n * s.co) + co) * s.oh * s.ow;
            for ci in 0..s.ci {
                let i_base = ((n * s.ci) + ci) * s.h * s.w;
                for ky in 0..s.kh {
                    let (oy_lo, oy_hi) = tap_range(ky, s.padding, s.stride, s.h, s.oh);
                    for kx in 0..s.kw {
                        let wv = w_data[(((co * s.ci) + ci) * s.kh + ky) * s.kw + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        let (ox_lo, ox_hi) = tap_range(kx, s.padding, s.stride, s.w, s.ow);
                        let col0 = kx as isize - s.padding as isize;
                        for oy in oy_lo..oy_hi {
                            let iy = oy * s.stride + ky - s.padding;
                            let start =
                                ((i_base + iy * s.w) as isize + (ox_lo * s.stride) as isize + col0) as usize;
                            let o_row = o_base + oy * s.ow;
                            if s.stride == 1 {
                                let src = &in_data[start..start + (ox_hi - ox_lo)];
                                let dst = &mut out[o_row + ox_lo..o_row + ox_hi];
                                for (d, v) in dst.iter_mut().zip(src) {
                                    *d += wv * v;
                                }
                            } else {
                                let dst = &mut out[o_row..o_row + s.ow];
                                let mut src = start;
                                for ox in ox_lo..ox_hi {
                                    dst[ox] += wv * in_data[src];
                                    src += s.stride;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    drop(in_data);
    drop(w_data);

    let mut parents = vec![input.clone(), weight.clone()];
    if let Some(b) = bias {
        parents.push(b.clone());
    }
    Ok(Tensor::from_op(
        vec![s.bn, s.co, s.oh, s.ow],
        out,
        parents,
        Box::new(Conv2dBackward { stride, padding }),
    ))
}

struct TransposeShape {
    bn: usize,
    ci: usize,
    h: usize,
    w: usize,
    co: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    padding: usize,
}

fn transpose_shape(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: usize,
) -> Result<TransposeShape> {
    if input.shape().len() != 4 || weight.shape().len() != 4 {
        return Err(CoreError::shape(
            "conv_transpose2d",
            format!(
                "expected 4-D input and weight, got {:?} and {:?}",
                input.shape(),
                weight.shape()
            ),
        ));
    }
    let (bn, ci, h, w) = {
        let s = input.shape();
        (s[0], s[1], s[2], s[3])
    };
    let (ciw, co, kh, kw) = {
        let s = weight.shape();
        (s[0], s[1], s[2], s[3])
    };
    if ci != ciw {
        return Err(CoreError::shape(
            "conv_transpose2d",
            format!("input has {ci} channels but weight expects {ciw}"),
        ));
    }
    if let Some(b) = bias {
        if b.shape() != [co] {
            return Err(CoreError::shape(
                "conv_transpose2d",
                format!("bias shape {:?} does not match {co} output channels", b.shape()),
            ));
        }
    }
    let oh = conv_transpose2d_output_size(h, kh, stride, padding).ok_or_else(|| {
        CoreError::shape("conv_transpose2d", format!("degenerate output height for h={h}"))
    })?;
    let ow = conv_transpose2d_output_size(w, kw, stride, padding).ok_or_else(|| {
        CoreError::shape("conv_transpose2d", format!("degenerate output width for w={w}"))
    })?;
    Ok(TransposeShape { bn, ci, h, w, co, kh, kw, oh, ow, stride, padding })
}

/// Valid input range [lo, hi) so that i*stride + tap - padding lands inside
/// [0, out_dim).
#[inline]
fn scatter_range(tap: usize, padding: usize, stride: usize, out_dim: usize, in_dim: usize) -> (usize, usize) {
    let lo = padding.saturating_sub(tap).div_ceil(stride);
    let hi = if out_dim + padding > tap {
        (((out_dim + padding - tap - 1) / stride) + 1).min(in_dim)
    } else {
        0
    };
    (lo.min(hi), hi)
}

struct ConvTranspose2dBackward {
    stride: usize,
    padding: usize,
}

impl BackwardOp for ConvTranspose2dBackward {
    fn name(&self) -> &'static str {
        "conv_transpose2d"
    }
    fn backward(&self, grad_out: &[f64], parents: &[Tensor]) {
        let input = &parents[0];
        let weight = &parents[1];
        let bias = parents.get(2);
        let s = transpose_shape(input, weight, bias, self.stride, self.padding)
            .expect("backward shapes match forward");

        let need_input = input.requires_grad();
        let need_weight = weight.requires_grad();
        let need_bias = bias.is_some_and(|b| b.requires_grad());

        let in_data = input.data();
        let w_data = weight.data();
        let mut d_in = if need_input { vec![0.0; in_data.len()] } else { Vec::new() };
        let mut d_w = if need_weight { vec![0.0; w_data.len()] } else { Vec::new() };

        for n in 0..s.bn {
            for ci in 0..s.ci {
                let i_base = ((n * s.ci) + ci) * s.h * s.w;
                for co in 0..s.co {
                    let g_base = ((n * s.co) + co) * s.oh * s.ow;
                    for ky in 0..s.kh {
                        let (iy_lo, iy_hi) = scatter_range(ky, s.padding, s.stride, s.oh, s.h);
                        for kx in 0..s.kw {
                            let w_idx = (((ci * s.co) + co) * s.kh + ky) * s.kw + kx;
                            let wv = w_data[w_idx];
                            let (ix_lo, ix_hi) = scatter_range(kx, s.padding, s.stride, s.ow, s.w);
                            if ix_lo >= ix_hi {
                                continue;
                            }
                            let mut dw_acc = 0.0;
                            let col0 = kx as isize - s.padding as isize;
                            for iy in iy_lo..iy_hi {
                                let oy = iy * s.stride + ky - s.padding;
                                let start =
                                    ((g_base + oy * s.ow) as isize + (ix_lo * s.stride) as isize + col0) as usize;
                                let i_row = i_base + iy * s.w;
                                let mut g_idx = start;
                                if need_input {
                                    for ix in ix_lo..ix_hi {
                                        let g = grad_out[g_idx];
                                        d_in[i_row + ix] += wv * g;
                                        dw_acc += g * in_data[i_row + ix];
                                        g_idx += s.stride;
                                    }
                                } else {
                                    for ix in ix_lo..ix_hi {
                                        dw_acc += grad_out[g_idx] * in_data[i_row + ix];
                                        g_idx += s.stride;
                                    }
                                }
                            }
                            if need_weight {
                                d_w[w_idx] += dw_acc;
                            }
                        }
                    }
                }
            }
        }
        drop(in_data);
        drop(w_data);
        if need_input {
            input.accumulate_grad(&d_in);
        }
        if need_weight {
            weight.accumulate_grad(&d_w);
        }
        if need_bias {
            let mut d_b = vec![0.0; s.co];
            for n in 0..s.bn {
                for co in 0..s.co {
                    let base = ((n * s.co) + co) * s.oh * s.ow;
                    d_b[co] += grad_out[base..base + s.oh * s.ow].iter().sum::<f64>();
                }
            }
            parents[2].accumulate_grad(&d_b);
        }
    }
}

/// Transposed convolution (gradient of `conv2d` with respect to its input)
/// of `input [N,Ci,H,W]` with `weight [Ci,Co,Kh,Kw]`.
///
/// Output size per spatial dim is (dim - 1)*stride - 2*padding + kernel.
pub fn conv_transpose2d(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let s = transpose_shape(input, weight, bias, stride, padding)?;
    let in_data = input.data();
    let w_data = weight.data();
    let mut out = vec![0.0; s.bn * s.co * s.oh * s.ow];
    if let Some(b) = bias {
        let b_data = b.data();
        for n in 0..s.bn {
            for co in 0..s.co {
                let base = ((n * s.co) + co) * s.oh * s.ow;
                out[base..base + s.oh * s.ow].fill(b_data[co]);
            }
        }
    }
    for n in 0..s.bn {
        for ci in 0..s.ci {
            let i_base = ((n * s.ci) + ci) * s.h * s.w;
            for co in 0..s.co {
                let o_base = ((n * s.co) + co) * s.oh * s.ow;
                for ky in 0..s.kh {
                    let (iy_lo, iy_hi) = scatter_range(ky, s.padding, s.stride, s.oh, s.h);
                    for kx in 0..s.kw {
                        let wv = w_data[(((ci * s.co) + co) * s.kh + ky) * s.kw + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        let (ix_lo, ix_hi) = scatter_range(kx, s.padding, s.stride, s.ow, s.w);
                        let col0 = kx as isize - s.padding as isize;
                        for iy in iy_lo..iy_hi {
                            let oy = iy * s.stride + ky - s.padding;
                            let start =
                                ((o_base + oy * s.ow) as isize + (ix_lo * s.stride) as isize + col0) as usize;
                            let i_row = i_base + iy * s.w;
                            let mut dst = start;
                            for ix in ix_lo..ix_hi {
                                out[dst] += wv * in_data[i_row + ix];
                                dst += s.stride;
                            }
                        }
                    }
                }
            }
        }
    }
    drop(in_data);
    drop(w_data);

    let mut parents = vec![input.clone(), weight.clone()];
    if let Some(b) = bias {
        parents.push(b.clone());
    }
    Ok(Tensor::from_op(
        vec![s.bn, s.co, s.oh, s.ow],
        out,
        parents,
        Box::new(ConvTranspose2dBackward { stride, padding }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Naive cross-correlation oracle, written independently of the op.
    fn conv2d_oracle(
        input: &[f64],
        (bn, ci, h, w): (usize, usize, usize, usize),
        weight: &[f64],
        (co, kh, kw): (usize, usize, usize),
        bias: &[f64],
        stride: usize,
        padding: usize,
    ) -> Vec<f64> {
        let oh = (h + 2 * padding - kh) / stride + 1;
        let ow = (w + 2 * padding - kw) / stride + 1;
        let mut out = vec![0.0; bn * co * oh * ow];
        for n in 0..bn {
            for o in 0..co {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = bias[o];
                        for i in 0..ci {
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let iy = oy as isize * stride as isize + ky as isize
                                        - padding as isize;
                                    let ix = ox as isize * stride as isize + kx as isize
                                        - padding as isize;
                                    if iy >= 0 && iy < h as isize && ix >= 0 && ix < w as isize {
                                        let iv = input
                                            [((n * ci + i) * h + iy as usize) * w + ix as usize];
                                        let wv = weight[((o * ci + i) * kh + ky) * kw + kx];
                                        acc += iv * wv;
                                    }
                                }
                            }
                        }
                        out[((n * co + o) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn all_ones_center_is_nine() {
        let x = Tensor::from_vec(&[1, 1, 3, 3], vec![1.0; 9]).unwrap();
        let w = Tensor::from_vec(&[1, 1, 3, 3], vec![1.0; 9]).unwrap();
        let y = conv2d(&x, &w, None, 1, 1).unwrap();
        assert_eq!(y.shape(), &[1, 1, 3, 3]);
        assert_eq!(y.data()[4], 9.0);
        assert_eq!(y.data()[0], 4.0); // corner sees a 2x2 window
    }

    #[test]
    fn identity_kernel_preserves_input() {
        let x = Tensor::from_vec(&[1, 1, 4, 4], (0..16).map(f64::from).collect()).unwrap();
        let mut k = vec![0.0; 9];
        k[4] = 1.0;
        let w = Tensor::from_vec(&[1, 1, 3, 3], k).unwrap();
        let y = conv2d(&x, &w, None, 1, 1).unwrap();
        assert_eq!(y.to_vec(), x.to_vec());
    }

    #[test]
    fn random_cases_match_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (h, w, kh, kw) in [(5, 5, 3, 3), (6, 7, 4, 4), (5, 8, 1, 1), (4, 4, 2, 3)] {
            let (bn, ci, co) = (2, 2, 3);
            let input: Vec<f64> = (0..bn * ci * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let weight: Vec<f64> =
                (0..co * ci * kh * kw).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let bias: Vec<f64> = (0..co).map(|_| rng.gen_range(-1.0..1.0)).collect();
            for (stride, padding) in [(1, 0), (1, 1), (2, 1), (2, 0), (3, 2)] {
                if h + 2 * padding < kh || w + 2 * padding < kw {
                    continue;
                }
                let x = Tensor::from_vec(&[bn, ci, h, w], input.clone()).unwrap();
                let wt = Tensor::from_vec(&[co, ci, kh, kw], weight.clone()).unwrap();
                let b = Tensor::from_vec(&[co], bias.clone()).unwrap();
                let y = conv2d(&x, &wt, Some(&b), stride, padding).unwrap();
                let expect = conv2d_oracle(
                    &input,
                    (bn, ci, h, w),
                    &weight,
                    (co, kh, kw),
                    &bias,
                    stride,
                    padding,
                );
                for (a, e) in y.data().iter().zip(&expect) {
                    assert!(
                        (a - e).abs() < 1e-6,
                        "h={h} w={w} k={kh}x{kw} stride={stride} padding={padding}"
                    );
                }
            }
        }
    }

    #[test]
    fn transpose_spreads_single_pixel() {
        let x = Tensor::from_vec(&[1, 1, 1, 1], vec![2.5]).unwrap();
        let w = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0; 4]).unwrap();
        let y = conv_transpose2d(&x, &w, None, 2, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.to_vec(), vec![2.5; 4]);
    }

    #[test]
    fn conv_and_transpose_are_adjoint() {
        // <conv2d(x), y> == <x, conv_transpose2d(y)> with the shared weight
        // buffer read as [Co,Ci,K,K] by conv and [Ci',Co',K,K] by transpose.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (stride, padding) in [(1, 1), (2, 1), (2, 0)] {
            let (ci, co, k, h, w) = (2, 3, 4, 6, 6);
            let x_data: Vec<f64> = (0..ci * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let w_data: Vec<f64> =
                (0..co * ci * k * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let x = Tensor::from_vec(&[1, ci, h, w], x_data.clone()).unwrap();
            let wt = Tensor::from_vec(&[co, ci, k, k], w_data.clone()).unwrap();
            let cx = conv2d(&x, &wt, None, stride, padding).unwrap();
            let y_data: Vec<f64> = (0..cx.numel()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let y = Tensor::from_vec(&cx.shape().to_vec(), y_data.clone()).unwrap();
            let lhs: f64 = cx.data().iter().zip(&y_data).map(|(a, b)| a * b).sum();

            let wt_t = Tensor::from_vec(&[co, ci, k, k], w_data).unwrap();
            let ty = conv_transpose2d(&y, &wt_t, None, stride, padding).unwrap();
            assert_eq!(ty.shape(), x.shape());
            let rhs: f64 = ty.data().iter().zip(&x_data).map(|(a, b)| a * b).sum();
            assert!(
                (lhs - rhs).abs() < 1e-6,
                "adjoint identity failed: {lhs} vs {rhs} (stride={stride}, padding={padding})"
            );
        }
    }

    #[test]
    fn transpose_matches_loop_oracle() {
        // oracle: scatter every input pixel through the kernel
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for (stride, padding) in [(2, 1), (2, 0), (1, 1), (3, 1)] {
            let (ci, co, k, h, w) = (2, 2, 4, 3, 5);
            let x_data: Vec<f64> = (0..ci * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let w_data: Vec<f64> =
                (0..ci * co * k * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let oh = (h - 1) * stride + k - 2 * padding;
            let ow = (w - 1) * stride + k - 2 * padding;
            let mut expect = vec![0.0; co * oh * ow];
            for i in 0..ci {
                for iy in 0..h {
                    for ix in 0..w {
                        let v = x_data[(i * h + iy) * w + ix];
                        for o in 0..co {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let oy = iy as isize * stride as isize + ky as isize
                                        - padding as isize;
                                    let ox = ix as isize * stride as isize + kx as isize
                                        - padding as isize;
                                    if oy >= 0 && oy < oh as isize && ox >= 0 && ox < ow as isize {
                                        expect[(o * oh + oy as usize) * ow + ox as usize] +=
                                            v * w_data[((i * co + o) * k + ky) * k + kx];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            let x = Tensor::from_vec(&[1, ci, h, w], x_data).unwrap();
            let wt = Tensor::from_vec(&[ci, co, k, k], w_data).unwrap();
            let y = conv_transpose2d(&x, &wt, None, stride, padding).unwrap();
            for (a, e) in y.data().iter().zip(&expect) {
                assert!((a - e).abs() < 1e-6, "stride={stride} padding={padding}");
            }
        }
    }

    #[test]
    fn channel_mismatch_is_descriptive() {
        let x = Tensor::from_vec(&[1, 2, 4, 4], vec![0.0; 32]).unwrap();
        let w = Tensor::from_vec(&[1, 3, 3, 3], vec![0.0; 27]).unwrap();
        let err = conv2d(&x, &w, None, 1, 1).unwrap_err();
        assert!(err.to_string().contains("channels"));
    }

    #[test]
    fn kernel_larger_than_padded_input_is_an_error() {
        let x = Tensor::from_vec(&[1, 1, 2, 2], vec![0.0; 4]).unwrap();
        let w = Tensor::from_vec(&[1, 1, 5, 5], vec![0.0; 25]).unwrap();
        assert!(conv2d(&x, &w, None, 1, 1).is_err());
    }
}
