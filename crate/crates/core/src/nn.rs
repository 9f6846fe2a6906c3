//! Layer library on top of the tensor ops: convolutions with optional
//! spectral normalization, norms, dropout and self-attention, plus the
//! state-dict plumbing that checkpoints need.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};
use crate::tensor::{
    batch_norm2d, conv2d, conv_transpose2d, dropout, instance_norm2d, spectral_normalize,
    upsample_bilinear, RunningStats, SpectralState, Tensor,
};

/// Named flat view of a parameter or buffer, the unit of checkpointing.
#[derive(Debug, Clone, PartialEq)]
pub struct StateEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

pub type StateDict = BTreeMap<String, StateEntry>;

pub fn state_dict_from(entries: Vec<StateEntry>) -> StateDict {
    entries.into_iter().map(|e| (e.name.clone(), e)).collect()
}

/// Anything with learnable parameters and checkpointable state.
pub trait Module {
    fn collect_params(&self, out: &mut Vec<Tensor>);

    fn export_state(&self, prefix: &str, out: &mut Vec<StateEntry>);

    /// Load exported state back in place. Shapes must match exactly.
    fn import_state(&self, prefix: &str, src: &StateDict) -> Result<()>;

    fn params(&self) -> Vec<Tensor> {
        let mut v = Vec::new();
        self.collect_params(&mut v);
        v
    }
}

fn take_entry<'a>(src: &'a StateDict, name: &str, shape: &[usize]) -> Result<&'a StateEntry> {
    let entry = src.get(name).ok_or_else(|| CoreError::State {
        name: name.to_string(),
        detail: "missing from checkpoint".to_string(),
    })?;
    if entry.shape != shape {
        return Err(CoreError::State {
            name: name.to_string(),
            detail: format!("shape {:?} does not match expected {:?}", entry.shape, shape),
        });
    }
    Ok(entry)
}

fn import_tensor(t: &Tensor, name: &str, src: &StateDict) -> Result<()> {
    let entry = take_entry(src, name, t.shape())?;
    t.set_data(&entry.values)
}

fn export_tensor(t: &Tensor, name: &str, out: &mut Vec<StateEntry>) {
    out.push(StateEntry {
        name: name.to_string(),
        shape: t.shape().to_vec(),
        values: t.to_vec(),
    });
}

/// Kaiming-uniform init: U(-b, b) with b = sqrt(6 / fan_in).
pub fn kaiming_uniform(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    let numel: usize = shape.iter().product();
    let data: Vec<f64> = (0..numel).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::param(shape, data).expect("kaiming_uniform produced matching data")
}

/// 2-D convolution layer with optional spectral normalization of the weight.
pub struct Conv2d {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
    pub stride: usize,
    pub padding: usize,
    spectral: Option<SpectralState>,
}

impl Conv2d {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        with_bias: bool,
        spectral: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let weight = kaiming_uniform(&[out_channels, in_channels, kernel, kernel], fan_in, rng);
        let bias = with_bias.then(|| Tensor::param(&[out_channels], vec![0.0; out_channels]).unwrap());
        let spectral = spectral.then(|| SpectralState::new(&weight, rng));
        Conv2d { weight, bias, stride, padding, spectral }
    }

    pub fn forward(&self, x: &Tensor, training: bool) -> Result<Tensor> {
        let w = match &self.spectral {
            Some(state) => spectral_normalize(&self.weight, state, training)?,
            None => self.weight.clone(),
        };
        conv2d(x, &w, self.bias.as_ref(), self.stride, self.padding)
    }
}

impl Module for Conv2d {
    fn collect_params(&self, out: &mut Vec<Tensor>) {
        out.push(self.weight.clone());
        if let Some(b) = &self.bias {
            out.push(b.clone());
        }
    }

    fn export_state(&self, prefix: &str, out: &mut Vec<StateEntry>) {
        export_tensor(&self.weight, &format!("{prefix}.weight"), out);
        if let Some(b) = &self.bias {
            export_tensor(b, &format!("{prefix}.bias"), out);
        }
        if let Some(s) = &self.spectral {
            let u = s.u.borrow();
            let v = s.v.borrow();
            out.push(StateEntry {
                name: format!("{prefix}.sn_u"),
                shape: vec![u.len()],
                values: u.clone(),
            });
            out.push(StateEntry {
                name: format!("{prefix}.sn_v"),
                shape: vec![v.len()],
                values: v.clone(),
            });
        }
    }

    fn import_state(&self, prefix: &str, src: &StateDict) -> Result<()> {
        import_tensor(&self.weight, &format!("{prefix}.weight"), src)?;
        if let Some(b) = &self.bias {
            import_tensor(b, &format!("{prefix}.bias"), src)?;
        }
        if let Some(s) = &self.spectral {
            let rows = s.u.borrow().len();
            let cols = s.v.borrow().len();
            *s.u.borrow_mut() = take_entry(src, &format!("{prefix}.sn_u"), &[rows])?.values.clone();
            *s.v.borrow_mut() = take_entry(src, &format!("{prefix}.sn_v"), &[cols])?.values.clone();
        }
        Ok(())
    }
}

/// Transposed convolution layer (weight layout [Cin, Cout, K, K]) with
/// optional spectral normalization.
pub struct ConvTranspose2d {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
    pub stride: usize,
    pub padding: usize,
    spectral: Option<SpectralState>,
}

impl ConvTranspose2d {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        with_bias: bool,
        spectral: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let weight = kaiming_uniform(&[in_channels, out_channels, kernel, kernel], fan_in, rng);
        let bias = with_bias.then(|| Tensor::param(&[out_channels], vec![0.0; out_channels]).unwrap());
        let spectral = spectral.then(|| SpectralState::new(&weight, rng));
        ConvTranspose2d { weight, bias, stride, padding, spectral }
    }

    pub fn forward(&self, x: &Tensor, training: bool) -> Result<Tensor> {
        let w = match &self.spectral {
            Some(state) => spectral_normalize(&self.weight, state, training)?,
            None => self.weight.clone(),
        };
        conv_transpose2d(x, &w, self.bias.as_ref(), self.stride, self.padding)
    }
}

impl Module for ConvTranspose2d {
    fn collect_params(&self, out: &mut Vec<Tensor>) {
        out.push(self.weight.clone());
        if let Some(b) = &self.bias {
            out.push(b.clone());
        }
    }

    fn export_state(&self, prefix: &str, out: &mut Vec<StateEntry>) {
        export_tensor(&self.weight, &format!("{prefix}.weight"), out);
        if let Some(b) = &self.bias {
            export_tensor(b, &format!("{prefix}.bias"), out);
        }
        if let Some(s) = &self.spectral {
            let u = s.u.borrow();
            let v = s.v.borrow();
            out.push(StateEntry {
                name: format!("{prefix}.sn_u"),
                shape: vec![u.len()],
                values: u.clone(),
            });
            out.push(StateEntry {
                name: format!("{prefix}.sn_v"),
                shape: vec![v.len()],
                values: v.clone(),
            });
        }
    }

    fn import_state(&self, prefix: &str, src: &StateDict) -> Result<()> {
        import_tensor(&self.weight, &format!("{prefix}.weight"), src)?;
        if let Some(b) = &self.bias {
            import_tensor(b, &format!("{prefix}.bias"), src)?;
        }
        if let Some(s) = &self.spectral {
            let rows = s.u.borrow().len();
            let cols = s.v.borrow().len();
            *s.u.borrow_mut() = take_entry(src, &format!("{prefix}.sn_u"), &[rows])?.values.clone();
            *s.v.borrow_mut() = take_entry(src, &format!("{prefix}.sn_v"), &[cols])?.values.clone();
        }
        Ok(())
    }
}

pub struct BatchNorm2d {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running: RunningStats,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            gamma: Tensor::param(&[channels], vec![1.0; channels]).unwrap(),
            beta: Tensor::param(&[channels], vec![0.0; channels]).unwrap(),
            running: RunningStats::new(channels),
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    pub fn forward(&self, x: &Tensor, training: bool) -> Result<Tensor> {
        batch_norm2d(x, &self.gamma, &self.beta, &self.running, training, self.momentum, self.eps)
    }
}

impl Module for BatchNorm2d {
    fn collect_params(&self, out: &mut Vec<Tensor>) {
        out.push(self.gamma.clone());
        out.push(self.beta.clone());
    }

    fn export_state(&self, prefix: &str, out: &mut Vec<StateEntry>) {
        export_tensor(&self.gamma, &format!("{prefix}.gamma"), out);
        export_tensor(&self.beta, &format!("{prefix}.beta"), out);
        let mean = self.running.mean.borrow();
        let var = self.running.var.borrow();
        out.push(StateEntry {
            name: format!("{prefix}.running_mean"),
            shape: vec![mean.len()],
            values: mean.clone(),
        });
        out.push(StateEntry {
            name: format!("{prefix}.running_var"),
            shape: vec![var.len()],
            values: var.clone(),
        });
    }

    fn import_state(&self, prefix: &str, src: &StateDict) -> Result<()> {
        import_tensor(&self.gamma, &format!("{prefix}.gamma"), src)?;
        import_tensor(&self.beta, &format!("{prefix}.beta"), src)?;
        let c = self.running.mean.borrow().len();
        *self.running.mean.borrow_mut() =
            take_entry(src, &format!("{prefix}.running_mean"), &[c])?.values.clone();
        *self.running.var.borrow_mut() =
            take_entry(src, &format!("{prefix}.running_var"), &[c])?.values.clone();
        Ok(())
    }
}

pub struct InstanceNorm2d {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub eps: f64,
}

impl InstanceNorm2d {
    pub fn new(channels: usize) -> Self {
        InstanceNorm2d {
            gamma: Tensor::param(&[channels], vec![1.0; channels]).unwrap(),
            beta: Tensor::param(&[channels], vec![0.0; channels]).unwrap(),
            eps: 1e-5,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        instance_norm2d(x, &self.gamma, &self.beta, self.eps)
    }
}

impl Module for InstanceNorm2d {
    fn collect_params(&self, out: &mut Vec<Tensor>) {
        out.push(self.gamma.clone());
        out.push(self.beta.clone());
    }

    fn export_state(&self, prefix: &str, out: &mut Vec<StateEntry>) {
        export_tensor(&self.gamma, &format!("{prefix}.gamma"), out);
        export_tensor(&self.beta, &format!("{prefix}.beta"), out);
    }

    fn import_state(&self, prefix: &str, src: &StateDict) -> Result<()> {
        import_tensor(&self.gamma, &format!("{prefix}.gamma"), src)?;
        import_tensor(&self.beta, &format!("{prefix}.beta"), src)
    }
}

pub struct Dropout {
    pub p: f64,
}

impl Dropout {
    pub fn new(p: f64) -> Self {
        Dropout { p }
    }

    pub fn forward(&self, x: &Tensor, training: bool, rng: &mut ChaCha8Rng) -> Result<Tensor> {
        dropout(x, self.p, training, rng)
    }
}

/// Self-attention over spatial positions with a learnable scalar gate
/// initialized to zero, so a freshly built module is the identity map.
///
/// query/key channels are max(1, C/8); attention weights per query position
/// are a softmax over all positions.
pub struct SelfAttention {
    pub query: Conv2d,
    pub key: Conv2d,
    pub value: Conv2d,
    pub gamma: Tensor,
}

impl SelfAttention {
    pub fn new(channels: usize, spectral: bool, rng: &mut ChaCha8Rng) -> Self {
        let inner = (channels / 8).max(1);
        SelfAttention {
            query: Conv2d::new(channels, inner, 1, 1, 0, false, spectral, rng),
            key: Conv2d::new(channels, inner, 1, 1, 0, false, spectral, rng),
            value: Conv2d::new(channels, channels, 1, 1, 0, false, spectral, rng),
            gamma: Tensor::param(&[1], vec![0.0]).unwrap(),
        }
    }

    pub fn forward(&self, x: &Tensor, training: bool) -> Result<Tensor> {
        let (n, c, h, w) = {
            let s = x.shape();
            (s[0], s[1], s[2], s[3])
        };
        let hw = h * w;
        let inner = self.query.weight.shape()[0];
        let q = self.query.forward(x, training)?.reshape(&[n, inner, hw])?;
        let k = self.key.forward(x, training)?.reshape(&[n, inner, hw])?;
        let v = self.value.forward(x, training)?.reshape(&[n, c, hw])?;
        // energy[j][i] = q_j . k_i, softmax over i
        let energy = q.transpose_last2()?.bmm(&k)?;
        let attn = energy.softmax_lastdim()?;
        // out_j = sum_i attn[j][i] * v_i
        let ctx = attn.bmm(&v.transpose_last2()?)?.transpose_last2()?;
        let ctx = ctx.reshape(&[n, c, h, w])?;
        x.add(&ctx.scale_by(&self.gamma)?)
    }

    /// Attention weights for inspection/testing: shape [N, HW, HW], rows sum
    /// to one.
    pub fn attention_weights(&self, x: &Tensor, training: bool) -> Result<Tensor> {
        let (n, _, h, w) = {
            let s = x.shape();
            (s[0], s[1], s[2], s[3])
        };
        let hw = h * w;
        let inner = self.query.weight.shape()[0];
        let q = self.query.forward(x, training)?.reshape(&[n, inner, hw])?;
        let k = self.key.forward(x, training)?.reshape(&[n, inner, hw])?;
        q.transpose_last2()?.bmm(&k)?.softmax_lastdim()
    }
}

impl Module for SelfAttention {
    fn collect_params(&self, out: &mut Vec<Tensor>) {
        self.query.collect_params(out);
        self.key.collect_params(out);
        self.value.collect_params(out);
        out.push(self.gamma.clone());
    }

    fn export_state(&self, prefix: &str, out: &mut Vec<StateEntry>) {
        self.query.export_state(&format!("{prefix}.query"), out);
        self.key.export_state(&format!("{prefix}.key"), out);
        self.value.export_state(&format!("{prefix}.value"), out);
        export_tensor(&self.gamma, &format!("{prefix}.gamma"), out);
    }

    fn import_state(&self, prefix: &str, src: &StateDict) -> Result<()> {
        self.query.import_state(&format!("{prefix}.query"), src)?;
        self.key.import_state(&format!("{prefix}.key"), src)?;
        self.value.import_state(&format!("{prefix}.value"), src)?;
        import_tensor(&self.gamma, &format!("{prefix}.gamma"), src)
    }
}

/// Bilinear x2 upsampling as a layer (no parameters).
pub struct Upsample2x;

impl Upsample2x {
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        upsample_bilinear(x, 2)
    }
}

/// Seeded RNG helper for layer construction.
pub fn init_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
