//! Pointwise ops and full reductions.

use super::{BackwardOp, Tensor};
use crate::error::{CoreError, Result};

/// Unary op whose local derivative was precomputed during the forward pass.
struct UnaryBackward {
    name: &'static str,
    dfdx: Vec<f64>,
}

impl BackwardOp for UnaryBackward {
    fn name(&self) -> &'static str {
        self.name
    }
    fn backward(&self, grad_out: &[f64], parents: &[Tensor]) {
        let delta: Vec<f64> = grad_out
            .iter()
            .zip(&self.dfdx)
            .map(|(g, d)| g * d)
            .collect();
        parents[0].accumulate_grad(&delta);
    }
}

fn unary(x: &Tensor, name: &'static str, out: Vec<f64>, dfdx: Vec<f64>) -> Tensor {
    Tensor::from_op(
        x.shape().to_vec(),
        out,
        vec![x.clone()],
        Box::new(UnaryBackward { name, dfdx }),
    )
}

struct AddBackward;
impl BackwardOp for AddBackward {
    fn name(&self) -> &'static str {
        "add"
    }
    fn backward(&self, grad_out: &[f64], parents: &[Tensor]) {
        parents[0].accumulate_grad(grad_out);
        parents[1].accumulate_grad(grad_out);
    }
}

struct SubBackward;
impl BackwardOp for SubBackward {
    fn name(&self) -> &'static str {
        "sub"
    }
    fn backward(&self, grad_out: &[f64], parents: &[Tensor]) {
        parents[0].accumulate_grad(grad_out);
        let neg: Vec<f64> = grad_out.iter().map(|g| -g).collect();
        parents[1].accumulate_grad(&neg);
    }
}

struct MulBackward;
impl BackwardOp for MulBackward {
    fn name(&self) -> &'static str {
        "mul"
    }
    fn backward(&self, grad_out: &[f64], parents: &[Tensor]) {
        {
            let b = parents[1].data();
            let da: Vec<f64> = grad_out.iter().zip(b.iter()).map(|(g, v)| g * v).collect();
            parents[0].accumulate_grad(&da);
        }
        let a = parents[0].data();
        let db: Vec<f64> = grad_out.iter().zip(a.iter()).map(|(g, v)| g * v).collect();
        parents[1].accumulate_grad(&db);
    }
}

struct SumBackward {
    numel: usize,
    scale: f64,
}
impl BackwardOp for SumBackward {
    fn name(&self) -> &'static str {
        "sum"
    }
    fn backward(&self, grad_out: &[f64], parents: &[Tensor]) {
        let delta = vec![grad_out[0] * self.scale; self.numel];
        parents[0].accumulate_grad(&delta);
    }
}

/// Scalar scale by a learnable single-element tensor (used by attention's
/// gamma gate). out = x * gamma[0].
struct ScaleByBackward;
impl BackwardOp for ScaleByBackward {
    fn name(&self) -> &'static str {
        "scale_by"
    }
    fn backward(&self, grad_out: &[f64], parents: &[Tensor]) {
        {
            let gamma = parents[1].data()[0];
            let dx: Vec<f64> = grad_out.iter().map(|g| g * gamma).collect();
            parents[0].accumulate_grad(&dx);
        }
        let x = parents[0].data();
        let dgamma: f64 = grad_out.iter().zip(x.iter()).map(|(g, v)| g * v).sum();
        parents[1].accumulate_grad(&[dgamma]);
    }
}

fn check_same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(CoreError::shape(
            op,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        check_same_shape("add", self, other)?;
        let out: Vec<f64> = self
            .data()
            .iter()
            .zip(other.data().iter())
            .map(|(a, b)| a + b)
            .collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone(), other.clone()],
            Box::new(AddBackward),
        ))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        check_same_shape("sub", self, other)?;
        let out: Vec<f64> = self
            .data()
            .iter()
            .zip(other.data().iter())
            .map(|(a, b)| a - b)
            .collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone(), other.clone()],
            Box::new(SubBackward),
        ))
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        check_same_shape("mul", self, other)?;
        let out: Vec<f64> = self
            .data()
            .iter()
            .zip(other.data().iter())
            .map(|(a, b)| a * b)
            .collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone(), other.clone()],
            Box::new(MulBackward),
        ))
    }

    pub fn neg(&self) -> Tensor {
        let out: Vec<f64> = self.data().iter().map(|v| -v).collect();
        let dfdx = vec![-1.0; self.numel()];
        unary(self, "neg", out, dfdx)
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        let out: Vec<f64> = self.data().iter().map(|v| v + c).collect();
        let dfdx = vec![1.0; self.numel()];
        unary(self, "add_scalar", out, dfdx)
    }

    pub fn mul_scalar(&self, c: f64) -> Tensor {
        let out: Vec<f64> = self.data().iter().map(|v| v * c).collect();
        let dfdx = vec![c; self.numel()];
        unary(self, "mul_scalar", out, dfdx)
    }

    pub fn sqr(&self) -> Tensor {
        let data = self.data();
        let out: Vec<f64> = data.iter().map(|v| v * v).collect();
        let dfdx: Vec<f64> = data.iter().map(|v| 2.0 * v).collect();
        drop(data);
        unary(self, "sqr", out, dfdx)
    }

    /// Natural log. Callers clamp into a safe domain first.
    pub fn ln(&self) -> Tensor {
        let data = self.data();
        let out: Vec<f64> = data.iter().map(|v| v.ln()).collect();
        let dfdx: Vec<f64> = data.iter().map(|v| 1.0 / v).collect();
        drop(data);
        unary(self, "ln", out, dfdx)
    }

    /// Clamp to [lo, hi]. Gradient passes through strictly inside the range
    /// and is zero at clipped entries.
    pub fn clamp(&self, lo: f64, hi: f64) -> Tensor {
        let data = self.data();
        let out: Vec<f64> = data.iter().map(|v| v.clamp(lo, hi)).collect();
        let dfdx: Vec<f64> = data
            .iter()
            .map(|v| if *v > lo && *v < hi { 1.0 } else { 0.0 })
            .collect();
        drop(data);
        unary(self, "clamp", out, dfdx)
    }

    pub fn sigmoid(&self) -> Tensor {
        let data = self.data();
        let out: Vec<f64> = data.iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect();
        let dfdx: Vec<f64> = out.iter().map(|y| y * (1.0 - y)).collect();
        drop(data);
        unary(self, "sigmoid", out, dfdx)
    }

    pub fn leaky_relu(&self, slope: f64) -> Tensor {
        let data = self.data();
        let out: Vec<f64> = data
            .iter()
            .map(|v| if *v >= 0.0 { *v } else { slope * v })
            .collect();
        let dfdx: Vec<f64> = data
            .iter()
            .map(|v| if *v >= 0.0 { 1.0 } else { slope })
            .collect();
        drop(data);
        unary(self, "leaky_relu", out, dfdx)
    }

    pub fn relu(&self) -> Tensor {
        self.leaky_relu(0.0)
    }

    pub fn sum(&self) -> Tensor {
        let total: f64 = self.data().iter().sum();
        Tensor::from_op(
            vec![1],
            vec![total],
            vec![self.clone()],
            Box::new(SumBackward {
                numel: self.numel(),
                scale: 1.0,
            }),
        )
    }

    pub fn mean(&self) -> Tensor {
        let n = self.numel() as f64;
        let total: f64 = self.data().iter().sum();
        Tensor::from_op(
            vec![1],
            vec![total / n],
            vec![self.clone()],
            Box::new(SumBackward {
                numel: self.numel(),
                scale: 1.0 / n,
            }),
        )
    }

    /// Multiply by a learnable scalar tensor (single element).
    pub fn scale_by(&self, gamma: &Tensor) -> Result<Tensor> {
        if gamma.numel() != 1 {
            return Err(CoreError::shape(
                "scale_by",
                format!("gamma must be a single element, got {:?}", gamma.shape()),
            ));
        }
        let g = gamma.data()[0];
        let out: Vec<f64> = self.data().iter().map(|v| v * g).collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone(), gamma.clone()],
            Box::new(ScaleByBackward),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_at_zero_is_half() {
        let x = Tensor::from_vec(&[1], vec![0.0]).unwrap();
        assert_eq!(x.sigmoid().item(), 0.5);
    }

    #[test]
    fn leaky_relu_examples() {
        let x = Tensor::from_vec(&[2], vec![1.0, -1.0]).unwrap();
        let y = x.leaky_relu(0.2);
        assert_eq!(y.to_vec(), vec![1.0, -0.2]);
    }

    #[test]
    fn leaky_relu_gradient_matches_finite_difference_at_minus_two() {
        let x = Tensor::param(&[1], vec![-2.0]).unwrap();
        let loss = x.leaky_relu(0.2).sum();
        loss.backward().unwrap();
        let analytic = x.grad().unwrap()[0];

        let h = 1e-6;
        let f = |v: f64| if v >= 0.0 { v } else { 0.2 * v };
        let numeric = (f(-2.0 + h) - f(-2.0 - h)) / (2.0 * h);
        assert!((analytic - 0.2).abs() < 1e-12);
        assert!((analytic - numeric).abs() < 1e-6);
    }

    #[test]
    fn clamp_blocks_gradient_outside_range() {
        let x = Tensor::param(&[3], vec![-1.0, 0.5, 2.0]).unwrap();
        let loss = x.clamp(0.0, 1.0).sum();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn mul_gradient_uses_other_operand() {
        let a = Tensor::param(&[2], vec![2.0, 3.0]).unwrap();
        let b = Tensor::param(&[2], vec![5.0, 7.0]).unwrap();
        a.mul(&b).unwrap().sum().backward().unwrap();
        assert_eq!(a.grad().unwrap(), vec![5.0, 7.0]);
        assert_eq!(b.grad().unwrap(), vec![2.0, 3.0]);
    }

    #[test]
    fn scale_by_gradients() {
        let x = Tensor::param(&[2], vec![3.0, 4.0]).unwrap();
        let gamma = Tensor::param(&[1], vec![0.0]).unwrap();
        let y = x.scale_by(&gamma).unwrap();
        assert_eq!(y.to_vec(), vec![0.0, 0.0]);
        y.sum().backward().unwrap();
        assert_eq!(gamma.grad().unwrap(), vec![7.0]);
        assert_eq!(x.grad().unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let a = Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        assert!(a.add(&b).is_err());
    }
}
