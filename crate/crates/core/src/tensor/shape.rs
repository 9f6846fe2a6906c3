//! Shape manipulation, batched matmul, softmax and pixel gathering.

use super::{BackwardOp, Tensor};
use crate::error::{CoreError, Result};

struct ReshapeBackward;
impl BackwardOp for ReshapeBackward {
    fn name(&self) -> &'static str {
        "reshape"
    }
    fn backward(&self, grad_out: &[f64], parents: &[Tensor]) {
        parents[0].accumulate_grad(grad_out);
    }
}

struct TransposeBackward {
    batch: usize,
    rows: usize,
    cols: usize,
}
impl BackwardOp for TransposeBackward {
    fn name(&self) -> &'static str {
        "transpose_last2"
    }
    fn backward(&self, grad_out: &[f64], parents: &[Tensor]) {
        // grad_out has shape [batch, cols, rows]; transpose it back
        let mut d = vec![0.0; grad_out.len()];
        for n in 0..self.batch {
            let base = n * self.rows * self.cols;
            for r in 0..self.rows {
                for c in 0..self.cols {
                    d[base + r * self.cols + c] = grad_out[base + c * self.rows + r];
                }
            }
        }
        parents[0].accumulate_grad(&d);
    }
}

struct BmmBackward {
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
}
impl BackwardOp for BmmBackward {
    fn name(&self) -> &'static str {
        "bmm"
    }
    fn backward(&self, grad_out: &[f64], parents: &[Tensor]) {
        let (m, k, n) = (self.m, self.k, self.n);
        {
            // dA = dC * B^T
            let b = parents[1].data();
            let mut da = vec![0.0; self.batch * m * k];
            for bi in 0..self.batch {
                let gc = &grad_out[bi * m * n..(bi + 1) * m * n];
                let bb = &b[bi * k * n..(bi + 1) * k * n];
                let daa = &mut da[bi * m * k..(bi + 1) * m * k];
                for i in 0..m {
                    for j in 0..n {
                        let g = gc[i * n + j];
                        for p in 0..k {
                            daa[i * k + p] += g * bb[p * n + j];
                        }
                    }
                }
            }
            parents[0].accumulate_grad(&da);
        }
        // dB = A^T * dC
        let a = parents[0].data();
        let mut db = vec![0.0; self.batch * k * n];
        for bi in 0..self.batch {
            let gc = &grad_out[bi * m * n..(bi + 1) * m * n];
            let aa = &a[bi * m * k..(bi + 1) * m * k];
            let dbb = &mut db[bi * k * n..(bi + 1) * k * n];
            for i in 0..m {
                for p in 0..k {
                    let av = aa[i * k + p];
                    for j in 0..n {
                        dbb[p * n + j] += av * gc[i * n + j];
                    }
                }
            }
        }
        drop(a);
        parents[1].accumulate_grad(&db);
    }
}

struct SoftmaxBackward {
    output: Vec<f64>,
    row_len: usize,
}
impl BackwardOp for SoftmaxBackward {
    fn name(&self) -> &'static str {
        "softmax_lastdim"
    }
    fn backward(&self, grad_out: &[f64], parents: &[Tensor]) {
        let mut d = vec![0.0; grad_out.len()];
        for row in grad_out.chunks(self.row_len).zip(self.output.chunks(self.row_len)).enumerate() {
            let (i, (g, y)) = row;
            let dot: f64 = g.iter().zip(y).map(|(a, b)| a * b).sum();
            let out = &mut d[i * self.row_len..(i + 1) * self.row_len];
            for j in 0..self.row_len {
                out[j] = y[j] * (g[j] - dot);
            }
        }
        parents[0].accumulate_grad(&d);
    }
}

struct ConcatBackward {
    /// per part: (channels) of each input, plus shared [n, h, w]
    parts: Vec<usize>,
    n: usize,
    h: usize,
    w: usize,
}
impl BackwardOp for ConcatBackward {
    fn name(&self) -> &'static str {
        "concat_channels"
    }
    fn backward(&self, grad_out: &[f64], parents: &[Tensor]) {
        let total_c: usize = self.parts.iter().sum();
        let hw = self.h * self.w;
        let mut offset = 0;
        for (pi, &c) in self.parts.iter().enumerate() {
            if parents[pi].requires_grad() {
                let mut d = vec![0.0; self.n * c * hw];
                for n in 0..self.n {
                    for ci in 0..c {
                        let src = ((n * total_c) + offset + ci) * hw;
                        let dst = ((n * c) + ci) * hw;
                        d[dst..dst + hw].copy_from_slice(&grad_out[src..src + hw]);
                    }
                }
                parents[pi].accumulate_grad(&d);
            }
            offset += c;
        }
    }
}

struct GatherBackward {
    indices: Vec<usize>,
    parent_numel: usize,
}
impl BackwardOp for GatherBackward {
    fn name(&self) -> &'static str {
        "gather"
    }
    fn backward(&self, grad_out: &[f64], parents: &[Tensor]) {
        let mut d = vec![0.0; self.parent_numel];
        for (g, &i) in grad_out.iter().zip(&self.indices) {
            d[i] += g;
        }
        parents[0].accumulate_grad(&d);
    }
}

impl Tensor {
    /// View with a new shape (same element count, same row-major order).
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if numel != self.numel() {
            return Err(CoreError::shape(
                "reshape",
                format!("{:?} -> {:?} changes element count", self.shape(), shape),
            ));
        }
        Ok(Tensor::from_op(
            shape.to_vec(),
            self.to_vec(),
            vec![self.clone()],
            Box::new(ReshapeBackward),
        ))
    }

    /// Swap the last two axes of a 3-D tensor `[B,R,C] -> [B,C,R]`.
    pub fn transpose_last2(&self) -> Result<Tensor> {
        if self.shape().len() != 3 {
            return Err(CoreError::shape(
                "transpose_last2",
                format!("expected 3-D, got {:?}", self.shape()),
            ));
        }
        let (b, r, c) = (self.shape()[0], self.shape()[1], self.shape()[2]);
        let data = self.data();
        let mut out = vec![0.0; data.len()];
        for n in 0..b {
            let base = n * r * c;
            for i in 0..r {
                for j in 0..c {
                    out[base + j * r + i] = data[base + i * c + j];
                }
            }
        }
        drop(data);
        Ok(Tensor::from_op(
            vec![b, c, r],
            out,
            vec![self.clone()],
            Box::new(TransposeBackward { batch: b, rows: r, cols: c }),
        ))
    }

    /// Batched matrix product `[B,M,K] x [B,K,N] -> [B,M,N]`.
    pub fn bmm(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape().len() != 3 || other.shape().len() != 3 {
            return Err(CoreError::shape(
                "bmm",
                format!("expected 3-D operands, got {:?} and {:?}", self.shape(), other.shape()),
            ));
        }
        let (b, m, k) = (self.shape()[0], self.shape()[1], self.shape()[2]);
        let (b2, k2, n) = (other.shape()[0], other.shape()[1], other.shape()[2]);
        if b != b2 || k != k2 {
            return Err(CoreError::shape(
                "bmm",
                format!("{:?} x {:?}", self.shape(), other.shape()),
            ));
        }
        let a = self.data();
        let bb = other.data();
        let mut out = vec![0.0; b * m * n];
        for bi in 0..b {
            let aa = &a[bi * m * k..(bi + 1) * m * k];
            let bv = &bb[bi * k * n..(bi + 1) * k * n];
            let ov = &mut out[bi * m * n..(bi + 1) * m * n];
            for i in 0..m {
                for p in 0..k {
                    let av = aa[i * k + p];
                    if av == 0.0 {
                        continue;
                    }
                    for j in 0..n {
                        ov[i * n + j] += av * bv[p * n + j];
                    }
                }
            }
        }
        drop(a);
        drop(bb);
        Ok(Tensor::from_op(
            vec![b, m, n],
            out,
            vec![self.clone(), other.clone()],
            Box::new(BmmBackward { batch: b, m, k, n }),
        ))
    }

    /// Numerically stable softmax over the last axis.
    pub fn softmax_lastdim(&self) -> Result<Tensor> {
        let dims = self.shape();
        if dims.is_empty() {
            return Err(CoreError::shape("softmax_lastdim", "scalar input"));
        }
        let row = dims[dims.len() - 1];
        let data = self.data();
        let mut out = vec![0.0; data.len()];
        for (chunk, dst) in data.chunks(row).zip(out.chunks_mut(row)) {
            let max = chunk.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (d, v) in dst.iter_mut().zip(chunk) {
                *d = (v - max).exp();
                sum += *d;
            }
            for d in dst.iter_mut() {
                *d /= sum;
            }
        }
        drop(data);
        Ok(Tensor::from_op(
            dims.to_vec(),
            out.clone(),
            vec![self.clone()],
            Box::new(SoftmaxBackward { output: out, row_len: row }),
        ))
    }

    /// Concatenate `[N,Ci,H,W]` tensors along the channel axis, preserving
    /// argument order.
    pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(CoreError::shape("concat_channels", "no inputs"));
        }
        let first = parts[0].shape();
        if first.len() != 4 {
            return Err(CoreError::shape(
                "concat_channels",
                format!("expected 4-D inputs, got {first:?}"),
            ));
        }
        let (n, h, w) = (first[0], first[2], first[3]);
        let mut channels = Vec::with_capacity(parts.len());
        for p in parts {
            let s = p.shape();
            if s.len() != 4 || s[0] != n || s[2] != h || s[3] != w {
                return Err(CoreError::shape(
                    "concat_channels",
                    format!("incompatible shapes {:?} vs {:?}", first, s),
                ));
            }
            channels.push(s[1]);
        }
        let total_c: usize = channels.iter().sum();
        let hw = h * w;
        let mut out = vec![0.0; n * total_c * hw];
        let mut offset = 0;
        for (p, &c) in parts.iter().zip(&channels) {
            let data = p.data();
            for ni in 0..n {
                for ci in 0..c {
                    let src = ((ni * c) + ci) * hw;
                    let dst = ((ni * total_c) + offset + ci) * hw;
                    out[dst..dst + hw].copy_from_slice(&data[src..src + hw]);
                }
            }
            offset += c;
        }
        Ok(Tensor::from_op(
            vec![n, total_c, h, w],
            out,
            parts.iter().map(|p| (*p).clone()).collect(),
            Box::new(ConcatBackward { parts: channels, n, h, w }),
        ))
    }

    /// Pick flat-indexed elements into a 1-D tensor. Gradients scatter-add,
    /// so repeated indices accumulate.
    pub fn gather(&self, indices: &[usize]) -> Result<Tensor> {
        let numel = self.numel();
        if let Some(&bad) = indices.iter().find(|&&i| i >= numel) {
            return Err(CoreError::shape(
                "gather",
                format!("index {bad} out of range for {numel} elements"),
            ));
        }
        let data = self.data();
        let out: Vec<f64> = indices.iter().map(|&i| data[i]).collect();
        drop(data);
        Ok(Tensor::from_op(
            vec![indices.len()],
            out,
            vec![self.clone()],
            Box::new(GatherBackward {
                indices: indices.to_vec(),
                parent_numel: numel,
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_preserves_order_and_slices() {
        let a = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::from_vec(&[1, 2, 2, 2], (10..18).map(f64::from).collect()).unwrap();
        let y = Tensor::concat_channels(&[&a, &b]).unwrap();
        assert_eq!(y.shape(), &[1, 3, 2, 2]);
        let d = y.to_vec();
        assert_eq!(&d[0..4], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(&d[4..12], &(10..18).map(f64::from).collect::<Vec<_>>()[..]);
    }

    #[test]
    fn concat_backward_splits_gradient() {
        let a = Tensor::param(&[1, 1, 1, 2], vec![0.0, 0.0]).unwrap();
        let b = Tensor::param(&[1, 1, 1, 2], vec![0.0, 0.0]).unwrap();
        let y = Tensor::concat_channels(&[&a, &b]).unwrap();
        let w = Tensor::from_vec(&[1, 2, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        y.mul(&w).unwrap().sum().backward().unwrap();
        assert_eq!(a.grad().unwrap(), vec![1.0, 2.0]);
        assert_eq!(b.grad().unwrap(), vec![3.0, 4.0]);
    }

    #[test]
    fn bmm_matches_hand_product() {
        let a = Tensor::from_vec(&[1, 2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = Tensor::from_vec(&[1, 3, 2], vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]).unwrap();
        let c = a.bmm(&b).unwrap();
        assert_eq!(c.to_vec(), vec![58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = Tensor::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, -5.0, 0.0, 5.0]).unwrap();
        let y = x.softmax_lastdim().unwrap();
        let d = y.to_vec();
        for row in d.chunks(3) {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gather_accumulates_repeated_indices() {
        let x = Tensor::param(&[4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = x.gather(&[2, 2, 0]).unwrap();
        assert_eq!(y.to_vec(), vec![3.0, 3.0, 1.0]);
        y.sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0, 0.0, 2.0, 0.0]);
    }

    #[test]
    fn gather_rejects_out_of_range() {
        let x = Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap();
        assert!(x.gather(&[5]).is_err());
    }

    #[test]
    fn transpose_round_trips() {
        let x = Tensor::from_vec(&[1, 2, 3], (0..6).map(f64::from).collect()).unwrap();
        let t = x.transpose_last2().unwrap();
        assert_eq!(t.shape(), &[1, 3, 2]);
        assert_eq!(t.to_vec(), vec![0.0, 3.0, 1.0, 4.0, 2.0, 5.0]);
        let back = t.transpose_last2().unwrap();
        assert_eq!(back.to_vec(), x.to_vec());
    }
}
