//! Minimal trainable feedforward nets with exact reverse-mode gradients,
//! sinusoidal time/position embeddings, and a flat-vector Adam updater.

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rngutil::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    ReLU,
    SiLU,
    Sigmoid,
}

impl Activation {
    #[inline]
    fn apply(&self, x: f64) -> f64 {
        match self {
            Activation::ReLU => x.max(0.0),
            Activation::SiLU => x / (1.0 + (-x).exp()),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        }
    }

    /// derivative w.r.t. pre-activation, given the pre-activation value
    #[inline]
    fn derivative(&self, x: f64) -> f64 {
        match self {
            Activation::ReLU => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::SiLU => {
                let s = 1.0 / (1.0 + (-x).exp());
                s * (1.0 + x * (1.0 - s))
            }
            Activation::Sigmoid => {
                let s = 1.0 / (1.0 + (-x).exp());
                s * (1.0 - s)
            }
        }
    }

    fn to_byte(self) -> u8 {
        match self {
            Activation::ReLU => 0,
            Activation::SiLU => 1,
            Activation::Sigmoid => 2,
        }
    }

    fn from_byte(b: u8) -> Result<Self> {
        Ok(match b {
            0 => Activation::ReLU,
            1 => Activation::SiLU,
            2 => Activation::Sigmoid,
            other => return Err(Error::Format(format!("unknown activation byte {other}"))),
        })
    }
}

/// How a denoiser input vector decomposes into concatenated pieces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InputLayout {
    pub dim_x: usize,
    pub dim_g: usize,
    pub dim_temb: usize,
    pub dim_pemb: usize,
}

impl InputLayout {
    pub fn total(&self) -> usize {
        self.dim_x + self.dim_g + self.dim_temb + self.dim_pemb
    }
}

/// A feedforward net over a flat parameter vector. Hidden layers are
/// affine + activation, the final layer is affine.
#[derive(Debug, Clone)]
pub struct DenoiserNet {
    pub layer_sizes: Vec<usize>,
    pub params: Vec<f64>,
    pub activation: Activation,
    pub layout: InputLayout,
}

pub fn param_count(layer_sizes: &[usize]) -> usize {
    layer_sizes.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
}

/// He-style init: weights ~ N(0, 2/fan_in), biases zero.
pub fn init_net(layer_sizes: &[usize], activation: Activation, layout: InputLayout, rng: &mut SeededRng) -> Result<DenoiserNet> {
    if layer_sizes.len() < 2 {
        return Err(Error::invalid("need at least an input and an output layer"));
    }
    if layer_sizes[0] != layout.total() {
        return Err(Error::dim(format!(
            "input layer {} does not match layout total {}",
            layer_sizes[0],
            layout.total()
        )));
    }
    let mut params = Vec::with_capacity(param_count(layer_sizes));
    for w in layer_sizes.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let std = (2.0 / fan_in as f64).sqrt();
        for _ in 0..fan_in * fan_out {
            params.push(std * rng.sample::<f64, _>(StandardNormal));
        }
        params.extend(std::iter::repeat(0.0).take(fan_out));
    }
    Ok(DenoiserNet { layer_sizes: layer_sizes.to_vec(), params, activation, layout })
}

impl DenoiserNet {
    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_dim() {
            return Err(Error::dim(format!("forward expects {} inputs, got {}", self.input_dim(), input.len())));
        }
        let mut act = input.to_vec();
        let mut offset = 0;
        let layers = self.layer_sizes.len() - 1;
        for (l, w) in self.layer_sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let weights = &self.params[offset..offset + fan_in * fan_out];
            let biases = &self.params[offset + fan_in * fan_out..offset + (fan_in + 1) * fan_out];
            let mut next = vec![0.0; fan_out];
            for o in 0..fan_out {
                let row = &weights[o * fan_in..(o + 1) * fan_in];
                let mut z = biases[o];
                for (wi, ai) in row.iter().zip(&act) {
                    z += wi * ai;
                }
                next[o] = if l + 1 < layers { self.activation.apply(z) } else { z };
            }
            act = next;
            offset += (fan_in + 1) * fan_out;
        }
        Ok(act)
    }

    /// Exact reverse-mode gradients of <d_out, forward(input)> with respect to
    /// the parameters and the input.
    pub fn backward(&self, input: &[f64], d_out: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if input.len() != self.input_dim() {
            return Err(Error::dim("backward input length mismatch"));
        }
        if d_out.len() != self.output_dim() {
            return Err(Error::dim("backward d_out length mismatch"));
        }
        let layers = self.layer_sizes.len() - 1;
        // forward pass caching pre-activations and activations
        let mut acts: Vec<Vec<f64>> = vec![input.to_vec()];
        let mut pres: Vec<Vec<f64>> = Vec::with_capacity(layers);
        let mut offset = 0;
        for (l, w) in self.layer_sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let weights = &self.params[offset..offset + fan_in * fan_out];
            let biases = &self.params[offset + fan_in * fan_out..offset + (fan_in + 1) * fan_out];
            let prev = acts.last().unwrap();
            let mut pre = vec![0.0; fan_out];
            for o in 0..fan_out {
                let row = &weights[o * fan_in..(o + 1) * fan_in];
                let mut z = biases[o];
                for (wi, ai) in row.iter().zip(prev) {
                    z += wi * ai;
                }
                pre[o] = z;
            }
            let act = if l + 1 < layers {
                pre.iter().map(|&z| self.activation.apply(z)).collect()
            } else {
                pre.clone()
            };
            pres.push(pre);
            acts.push(act);
            offset += (fan_in + 1) * fan_out;
        }
        // backward pass
        let mut param_grads = vec![0.0; self.params.len()];
        let mut delta = d_out.to_vec();
        let mut offsets: Vec<usize> = Vec::with_capacity(layers);
        let mut off = 0;
        for w in self.layer_sizes.windows(2) {
            offsets.push(off);
            off += (w[0] + 1) * w[1];
        }
        for l in (0..layers).rev() {
            let (fan_in, fan_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            // hidden layers: fold the activation derivative into delta
            if l + 1 < layers {
                for (d, z) in delta.iter_mut().zip(&pres[l]) {
                    *d *= self.activation.derivative(*z);
                }
            }
            let base = offsets[l];
            let prev = &acts[l];
            let weights = &self.params[base..base + fan_in * fan_out];
            let mut d_prev = vec![0.0; fan_in];
            for o in 0..fan_out {
                let d = delta[o];
                let grow = &mut param_grads[base + o * fan_in..base + (o + 1) * fan_in];
                for (gi, ai) in grow.iter_mut().zip(prev) {
                    *gi += d * ai;
                }
                param_grads[base + fan_in * fan_out + o] += d;
                let wrow = &weights[o * fan_in..(o + 1) * fan_in];
                for (dp, wi) in d_prev.iter_mut().zip(wrow) {
                    *dp += d * wi;
                }
            }
            delta = d_prev;
        }
        Ok((param_grads, delta))
    }
}

/// Sinusoidal embedding: pairs (sin(t / 10000^(2i/dim)), cos(...)).
pub fn time_embed(t: usize, dim: usize) -> Result<Vec<f64>> {
    if dim % 2 != 0 {
        return Err(Error::invalid("embedding dim must be even"));
    }
    let mut out = Vec::with_capacity(dim);
    for i in 0..dim / 2 {
        let freq = 10000f64.powf(2.0 * i as f64 / dim as f64);
        let arg = t as f64 / freq;
        out.push(arg.sin());
        out.push(arg.cos());
    }
    Ok(out)
}

/// Positional embedding: same construction over the position index.
pub fn pos_embed(pos: usize, dim: usize) -> Result<Vec<f64>> {
    time_embed(pos, dim)
}

#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState { m: vec![0.0; n], v: vec![0.0; n], step: 0, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// One bias-corrected Adam step, in place.
pub fn adam_update(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::dim("adam_update length mismatch"));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for i in 0..params.len() {
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grads[i];
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grads[i] * grads[i];
        let mhat = state.m[i] / bc1;
        let vhat = state.v[i] / bc2;
        params[i] -= lr * mhat / (vhat.sqrt() + state.eps);
    }
    Ok(())
}

const CKPT_MAGIC: &[u8; 8] = b"DL2ONET1";

impl DenoiserNet {
    pub fn write_checkpoint<W: Write>(&self, out: &mut W) -> Result<()> {
        out.write_all(CKPT_MAGIC)?;
        out.write_all(&[self.activation.to_byte()])?;
        for d in [self.layout.dim_x, self.layout.dim_g, self.layout.dim_temb, self.layout.dim_pemb] {
            out.write_all(&(d as u32).to_le_bytes())?;
        }
        out.write_all(&(self.layer_sizes.len() as u32).to_le_bytes())?;
        for s in &self.layer_sizes {
            out.write_all(&(*s as u32).to_le_bytes())?;
        }
        for p in &self.params {
            out.write_all(&p.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(input: &mut R) -> Result<DenoiserNet> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != CKPT_MAGIC {
            return Err(Error::Format("bad checkpoint magic".into()));
        }
        let mut byte = [0u8; 1];
        input.read_exact(&mut byte)?;
        let activation = Activation::from_byte(byte[0])?;
        let read_u32 = |input: &mut R| -> Result<u32> {
            let mut b = [0u8; 4];
            input.read_exact(&mut b)?;
            Ok(u32::from_le_bytes(b))
        };
        let dim_x = read_u32(input)? as usize;
        let dim_g = read_u32(input)? as usize;
        let dim_temb = read_u32(input)? as usize;
        let dim_pemb = read_u32(input)? as usize;
        let n_layers = read_u32(input)? as usize;
        let mut layer_sizes = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            layer_sizes.push(read_u32(input)? as usize);
        }
        let n_params = param_count(&layer_sizes);
        let mut params = Vec::with_capacity(n_params);
        for _ in 0..n_params {
            let mut b = [0u8; 8];
            input.read_exact(&mut b)?;
            params.push(f64::from_le_bytes(b));
        }
        Ok(DenoiserNet {
            layer_sizes,
            params,
            activation,
            layout: InputLayout { dim_x, dim_g, dim_temb, dim_pemb },
        })
    }
}
