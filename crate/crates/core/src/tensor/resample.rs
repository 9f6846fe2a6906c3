//! Bilinear upsampling.

use super::{BackwardOp, Tensor};
use crate::error::{CoreError, Result};

/// Sampling positions for one axis under the align-corners=false convention:
/// src = (dst + 0.5)/scale - 0.5, clamped into [0, len-1]. Returns
/// (lo, hi, weight_hi) per output coordinate.
fn axis_weights(len: usize, scale: usize) -> Vec<(usize, usize, f64)> {
    (0..len * scale)
        .map(|d| {
            let src = ((d as f64 + 0.5) / scale as f64 - 0.5).clamp(0.0, (len - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(len - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

struct UpsampleBackward {
    scale: usize,
}

impl BackwardOp for UpsampleBackward {
    fn name(&self) -> &'static str {
        "upsample_bilinear"
    }
    fn backward(&self, grad_out: &[f64], parents: &[Tensor]) {
        let x = &parents[0];
        let (n, c, h, w) = {
            let s = x.shape();
            (s[0], s[1], s[2], s[3])
        };
        let ys = axis_weights(h, self.scale);
        let xs = axis_weights(w, self.scale);
        let (oh, ow) = (h * self.scale, w * self.scale);
        let mut d = vec![0.0; x.numel()];
        for ni in 0..n {
            for ci in 0..c {
                let src_base = (ni * c + ci) * h * w;
                let dst_base = (ni * c + ci) * oh * ow;
                for (oy, &(y0, y1, wy)) in ys.iter().enumerate() {
                    for (ox, &(x0, x1, wx)) in xs.iter().enumerate() {
                        let g = grad_out[dst_base + oy * ow + ox];
                        d[src_base + y0 * w + x0] += g * (1.0 - wy) * (1.0 - wx);
                        d[src_base + y0 * w + x1] += g * (1.0 - wy) * wx;
                        d[src_base + y1 * w + x0] += g * wy * (1.0 - wx);
                        d[src_base + y1 * w + x1] += g * wy * wx;
                    }
                }
            }
        }
        x.accumulate_grad(&d);
    }
}

/// Bilinear upsample of `[N,C,H,W]` by an integer factor, align-corners=false:
/// output pixel centers map back via src = (dst + 0.5)/scale - 0.5 and are
/// clamped to the input extent, so corner values are preserved.
pub fn upsample_bilinear(x: &Tensor, scale: usize) -> Result<Tensor> {
    if x.shape().len() != 4 {
        return Err(CoreError::shape(
            "upsample_bilinear",
            format!("expected 4-D input, got {:?}", x.shape()),
        ));
    }
    if scale == 0 {
        return Err(CoreError::shape("upsample_bilinear", "scale must be >= 1"));
    }
    let (n, c, h, w) = {
        let s = x.shape();
        (s[0], s[1], s[2], s[3])
    };
    let ys = axis_weights(h, scale);
    let xs = axis_weights(w, scale);
    let (oh, ow) = (h * scale, w * scale);
    let data = x.data();
    let mut out = vec![0.0; n * c * oh * ow];
    for ni in 0..n {
        for ci in 0..c {
            let src_base = (ni * c + ci) * h * w;
            let dst_base = (ni * c + ci) * oh * ow;
            for (oy, &(y0, y1, wy)) in ys.iter().enumerate() {
                for (ox, &(x0, x1, wx)) in xs.iter().enumerate() {
                    let v00 = data[src_base + y0 * w + x0];
                    let v01 = data[src_base + y0 * w + x1];
                    let v10 = data[src_base + y1 * w + x0];
                    let v11 = data[src_base + y1 * w + x1];
                    out[dst_base + oy * ow + ox] = (1.0 - wy) * ((1.0 - wx) * v00 + wx * v01)
                        + wy * ((1.0 - wx) * v10 + wx * v11);
                }
            }
        }
    }
    drop(data);
    Ok(Tensor::from_op(
        vec![n, c, oh, ow],
        out,
        vec![x.clone()],
        Box::new(UpsampleBackward { scale }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ramp_matches_hand_computed_grid() {
        // 2x2 ramp [[0,1],[2,3]] doubled: sampling positions per axis are
        // [0, 0.25, 0.75, 1] after clamping, and the ramp is bilinear, so the
        // output is 2*y + x evaluated on that grid.
        let x = Tensor::from_vec(&[1, 1, 2, 2], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let y = upsample_bilinear(&x, 2).unwrap();
        let expect = [
            0.0, 0.25, 0.75, 1.0, //
            0.5, 0.75, 1.25, 1.5, //
            1.5, 1.75, 2.25, 2.5, //
            2.0, 2.25, 2.75, 3.0,
        ];
        for (a, e) in y.data().iter().zip(expect.iter()) {
            assert!((a - e).abs() < 1e-12, "{a} vs {e}");
        }
    }

    #[test]
    fn corners_are_preserved() {
        let x = Tensor::from_vec(&[1, 1, 2, 2], vec![7.0, -3.0, 4.0, 9.0]).unwrap();
        let y = upsample_bilinear(&x, 3).unwrap();
        let d = y.to_vec();
        assert_eq!(d[0], 7.0);
        assert_eq!(d[5], -3.0);
        assert_eq!(d[30], 4.0);
        assert_eq!(d[35], 9.0);
    }

    #[test]
    fn scale_one_is_identity() {
        let x = Tensor::from_vec(&[1, 1, 2, 3], (0..6).map(f64::from).collect()).unwrap();
        let y = upsample_bilinear(&x, 1).unwrap();
        assert_eq!(y.to_vec(), x.to_vec());
    }

    #[test]
    fn gradient_weights_sum_to_one_per_output_pixel() {
        let x = Tensor::param(&[1, 1, 2, 2], vec![0.0; 4]).unwrap();
        upsample_bilinear(&x, 2).unwrap().sum().backward().unwrap();
        let g = x.grad().unwrap();
        assert!((g.iter().sum::<f64>() - 16.0).abs() < 1e-12);
    }
}
