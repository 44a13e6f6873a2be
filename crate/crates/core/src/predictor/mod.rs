//! The noise predictor: a non-autoregressive stack of bidirectional dilated
//! convolutions with gated activations, conditioned on a spectral feature
//! matrix and a diffusion-step embedding.
//!
//! Layout per residual layer: the gate input is the sum of the dilated-conv
//! output, the projected conditioner, and the projected step embedding;
//! `tanh × sigmoid` gating feeds 1x1 residual and skip projections. Skip
//! sums are normalized by √n_layers; the output head is zero-initialized so
//! a fresh network predicts exactly zero noise.
//!
//! The conditioner encoder — the frame-rate input projection plus the two
//! transposed-conv upsampling stages (stride 16 each, covering the 256
//! hop) — is the parameter subset that is re-initialized when the feature
//! kind changes between pretraining and enhancement training.

pub mod ops;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::diffusion::TrainingPair;
use crate::schedule::NoiseSchedule;
use crate::signal::{Conditioner, HOP};

pub use ops::{Element, Tensor};
use ops::*;

const UP_KERNEL: usize = 32;
const UP_STRIDE: usize = 16;
const LEAKY_SLOPE: f64 = 0.4;

#[derive(Debug, Error, PartialEq)]
pub enum PredictorError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("conditioner has {got} frames but a {len}-sample input needs {expected}")]
    FrameMismatch { got: usize, expected: usize, len: usize },
    #[error("conditioner dim {got} does not match configured {expected}")]
    CondDimMismatch { got: usize, expected: usize },
    #[error("step position must be finite and non-negative, got {0}")]
    BadStepPosition(f64),
    #[error("empty input")]
    EmptyInput,
    #[error("input length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("step {t} has alpha_bar {alpha_bar}; noise component undefined")]
    DegenerateStep { t: usize, alpha_bar: f64 },
    #[error("empty batch")]
    EmptyBatch,
}

/// Architecture of the predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorConfig {
    pub n_layers: usize,
    pub n_blocks: usize,
    pub residual_channels: usize,
    pub kernel_size: usize,
    pub conditioner_dim: usize,
    pub cond_channels: usize,
    pub step_embed_dim: usize,
    pub step_hidden_dim: usize,
}

impl PredictorConfig {
    /// 30 layers in 3 dilation cycles, 63 residual channels.
    pub fn base(conditioner_dim: usize) -> Self {
        Self {
            n_layers: 30,
            n_blocks: 3,
            residual_channels: 63,
            kernel_size: 3,
            conditioner_dim,
            cond_channels: 64,
            step_embed_dim: 128,
            step_hidden_dim: 512,
        }
    }

    /// 30 layers in 3 dilation cycles, 128 residual channels.
    pub fn large(conditioner_dim: usize) -> Self {
        Self { residual_channels: 128, ..Self::base(conditioner_dim) }
    }

    /// Desk-scale profile: 10 layers in 2 cycles, 16 residual channels.
    pub fn tiny(conditioner_dim: usize) -> Self {
        Self {
            n_layers: 10,
            n_blocks: 2,
            residual_channels: 16,
            kernel_size: 3,
            conditioner_dim,
            cond_channels: 16,
            step_embed_dim: 64,
            step_hidden_dim: 256,
        }
    }

    pub fn validate(&self) -> Result<(), PredictorError> {
        if self.n_layers == 0 || self.n_blocks == 0 {
            return Err(PredictorError::InvalidConfig("layers and blocks must be positive".into()));
        }
        if !self.n_layers.is_multiple_of(self.n_blocks) {
            return Err(PredictorError::InvalidConfig(format!(
                "n_layers {} not divisible by n_blocks {}",
                self.n_layers, self.n_blocks
            )));
        }
        if self.kernel_size.is_multiple_of(2) {
            return Err(PredictorError::InvalidConfig("kernel size must be odd".into()));
        }
        if self.residual_channels == 0
            || self.conditioner_dim == 0
            || self.cond_channels == 0
            || self.step_embed_dim < 2
            || !self.step_embed_dim.is_multiple_of(2)
            || self.step_hidden_dim == 0
        {
            return Err(PredictorError::InvalidConfig("zero-sized dimension".into()));
        }
        Ok(())
    }

    /// Dilation of layer `l`: doubling within each block.
    pub fn dilation(&self, layer: usize) -> usize {
        1 << (layer % (self.n_layers / self.n_blocks))
    }

    pub fn dilations(&self) -> Vec<usize> {
        (0..self.n_layers).map(|l| self.dilation(l)).collect()
    }

    /// Half-width of the receptive field around an output sample: the
    /// waveform path adds `dilation·(k-1)/2` per side per layer.
    pub fn receptive_field_half(&self) -> usize {
        self.dilations().iter().map(|d| d * (self.kernel_size - 1) / 2).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualLayer<T> {
    pub dilated: Conv1d<T>,
    pub cond_proj: Conv1d<T>,
    pub step_proj: Linear<T>,
    pub res_proj: Conv1d<T>,
    pub skip_proj: Conv1d<T>,
}

/// All learnable tensors plus the architecture they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorParams<T> {
    pub config: PredictorConfig,
    pub input_proj: Conv1d<T>,
    pub step_fc1: Linear<T>,
    pub step_fc2: Linear<T>,
    pub cond_in: Conv1d<T>,
    pub upsample1: Conv1d<T>,
    pub upsample2: Conv1d<T>,
    pub layers: Vec<ResidualLayer<T>>,
    pub out_proj1: Conv1d<T>,
    pub out_proj2: Conv1d<T>,
}

/// Tensors whose shape or meaning depends on the conditioner input: the
/// frame-rate projection and the upsampling stages.
pub fn is_conditioner_encoder(name: &str) -> bool {
    name.starts_with("cond_in.") || name.starts_with("upsample1.") || name.starts_with("upsample2.")
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in s.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Deterministic per-tensor stream: seeding by name keeps tensors
/// independent of initialization order, so resetting one group never
/// perturbs another.
fn tensor_rng(seed: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ fnv1a(name)))
}

fn init_uniform<T: Element>(tensor: &mut Tensor<T>, fan_in: usize, rng: &mut ChaCha8Rng) {
    let bound = 1.0 / (fan_in as f64).sqrt();
    for v in tensor.data.iter_mut() {
        *v = T::from_f64(rng.gen_range(-bound..bound));
    }
}

impl<T: Element> PredictorParams<T> {
    /// Allocate all tensors (zeroed) for `config`.
    fn alloc(config: PredictorConfig) -> Self {
        let c = config.residual_channels;
        let k = config.kernel_size;
        let cond_ch = config.cond_channels;
        let layers = (0..config.n_layers)
            .map(|_| ResidualLayer {
                dilated: Conv1d::new(2 * c, c, k),
                cond_proj: Conv1d::new(2 * c, cond_ch, 1),
                step_proj: Linear::new(2 * c, config.step_hidden_dim),
                res_proj: Conv1d::new(c, c, 1),
                skip_proj: Conv1d::new(c, c, 1),
            })
            .collect();
        Self {
            input_proj: Conv1d::new(c, 1, 1),
            step_fc1: Linear::new(config.step_hidden_dim, config.step_embed_dim),
            step_fc2: Linear::new(config.step_hidden_dim, config.step_hidden_dim),
            cond_in: Conv1d::new(cond_ch, config.conditioner_dim, 1),
            upsample1: Conv1d::new(cond_ch, cond_ch, UP_KERNEL),
            upsample2: Conv1d::new(cond_ch, cond_ch, UP_KERNEL),
            layers,
            out_proj1: Conv1d::new(c, c, 1),
            out_proj2: Conv1d::new(1, c, 1),
            config,
        }
    }

    /// Fresh parameters: uniform ±1/√fan_in weights, zero biases, and a
    /// zero output head so the untrained network predicts zero noise.
    pub fn init(config: PredictorConfig, seed: u64) -> Result<Self, PredictorError> {
        config.validate()?;
        let mut params = Self::alloc(config);
        params.visit_mut(|name, tensor, fan_in| {
            if name == "out_proj2.weight" || name.ends_with(".bias") {
                tensor.fill_zero();
            } else {
                init_uniform(tensor, fan_in, &mut tensor_rng(seed, name));
            }
        });
        Ok(params)
    }

    /// Re-initialize the conditioner encoder for a new feature dimension,
    /// leaving every other tensor bit-identical.
    pub fn reset_conditioner_encoder(mut self, new_dim: usize, seed: u64) -> Self {
        self.config.conditioner_dim = new_dim;
        self.cond_in = Conv1d::new(self.config.cond_channels, new_dim, 1);
        self.upsample1 = Conv1d::new(self.config.cond_channels, self.config.cond_channels, UP_KERNEL);
        self.upsample2 = Conv1d::new(self.config.cond_channels, self.config.cond_channels, UP_KERNEL);
        self.visit_mut(|name, tensor, fan_in| {
            if is_conditioner_encoder(name) && name.ends_with(".weight") {
                init_uniform(tensor, fan_in, &mut tensor_rng(seed, name));
            }
        });
        self
    }

    /// Same-shaped parameters with every tensor zeroed (gradient container).
    pub fn zeros_like(&self) -> Self {
        Self::alloc(self.config.clone())
    }

    /// Zeroed parameters for an existing architecture.
    pub fn alloc_like(config: &PredictorConfig) -> Self {
        Self::alloc(config.clone())
    }

    /// Visit `(name, tensor, fan_in)` for every tensor, in a fixed order.
    pub fn visit_mut(&mut self, mut f: impl FnMut(&str, &mut Tensor<T>, usize)) {
        let k = self.config.kernel_size;
        let c = self.config.residual_channels;
        let cond_ch = self.config.cond_channels;
        let hidden = self.config.step_hidden_dim;
        let embed = self.config.step_embed_dim;
        let cond_dim = self.config.conditioner_dim;
        f("input_proj.weight", &mut self.input_proj.weight, 1);
        f("input_proj.bias", &mut self.input_proj.bias, 1);
        f("step_fc1.weight", &mut self.step_fc1.weight, embed);
        f("step_fc1.bias", &mut self.step_fc1.bias, embed);
        f("step_fc2.weight", &mut self.step_fc2.weight, hidden);
        f("step_fc2.bias", &mut self.step_fc2.bias, hidden);
        f("cond_in.weight", &mut self.cond_in.weight, cond_dim);
        f("cond_in.bias", &mut self.cond_in.bias, cond_dim);
        f("upsample1.weight", &mut self.upsample1.weight, cond_ch * UP_KERNEL);
        f("upsample1.bias", &mut self.upsample1.bias, cond_ch * UP_KERNEL);
        f("upsample2.weight", &mut self.upsample2.weight, cond_ch * UP_KERNEL);
        f("upsample2.bias", &mut self.upsample2.bias, cond_ch * UP_KERNEL);
        for (i, layer) in self.layers.iter_mut().enumerate() {
            f(&format!("layers.{i}.dilated.weight"), &mut layer.dilated.weight, c * k);
            f(&format!("layers.{i}.dilated.bias"), &mut layer.dilated.bias, c * k);
            f(&format!("layers.{i}.cond_proj.weight"), &mut layer.cond_proj.weight, cond_ch);
            f(&format!("layers.{i}.cond_proj.bias"), &mut layer.cond_proj.bias, cond_ch);
            f(&format!("layers.{i}.step_proj.weight"), &mut layer.step_proj.weight, hidden);
            f(&format!("layers.{i}.step_proj.bias"), &mut layer.step_proj.bias, hidden);
            f(&format!("layers.{i}.res_proj.weight"), &mut layer.res_proj.weight, c);
            f(&format!("layers.{i}.res_proj.bias"), &mut layer.res_proj.bias, c);
            f(&format!("layers.{i}.skip_proj.weight"), &mut layer.skip_proj.weight, c);
            f(&format!("layers.{i}.skip_proj.bias"), &mut layer.skip_proj.bias, c);
        }
        f("out_proj1.weight", &mut self.out_proj1.weight, c);
        f("out_proj1.bias", &mut self.out_proj1.bias, c);
        f("out_proj2.weight", &mut self.out_proj2.weight, c);
        f("out_proj2.bias", &mut self.out_proj2.bias, c);
    }

    /// Immutable tensor walk in the same order as [`Self::visit_mut`].
    pub fn tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out: Vec<(String, &Tensor<T>)> = vec![
            ("input_proj.weight".to_string(), &self.input_proj.weight),
            ("input_proj.bias".to_string(), &self.input_proj.bias),
            ("step_fc1.weight".to_string(), &self.step_fc1.weight),
            ("step_fc1.bias".to_string(), &self.step_fc1.bias),
            ("step_fc2.weight".to_string(), &self.step_fc2.weight),
            ("step_fc2.bias".to_string(), &self.step_fc2.bias),
            ("cond_in.weight".to_string(), &self.cond_in.weight),
            ("cond_in.bias".to_string(), &self.cond_in.bias),
            ("upsample1.weight".to_string(), &self.upsample1.weight),
            ("upsample1.bias".to_string(), &self.upsample1.bias),
            ("upsample2.weight".to_string(), &self.upsample2.weight),
            ("upsample2.bias".to_string(), &self.upsample2.bias),
        ];
        for (i, layer) in self.layers.iter().enumerate() {
            out.push((format!("layers.{i}.dilated.weight"), &layer.dilated.weight));
            out.push((format!("layers.{i}.dilated.bias"), &layer.dilated.bias));
            out.push((format!("layers.{i}.cond_proj.weight"), &layer.cond_proj.weight));
            out.push((format!("layers.{i}.cond_proj.bias"), &layer.cond_proj.bias));
            out.push((format!("layers.{i}.step_proj.weight"), &layer.step_proj.weight));
            out.push((format!("layers.{i}.step_proj.bias"), &layer.step_proj.bias));
            out.push((format!("layers.{i}.res_proj.weight"), &layer.res_proj.weight));
            out.push((format!("layers.{i}.res_proj.bias"), &layer.res_proj.bias));
            out.push((format!("layers.{i}.skip_proj.weight"), &layer.skip_proj.weight));
            out.push((format!("layers.{i}.skip_proj.bias"), &layer.skip_proj.bias));
        }
        out.push(("out_proj1.weight".to_string(), &self.out_proj1.weight));
        out.push(("out_proj1.bias".to_string(), &self.out_proj1.bias));
        out.push(("out_proj2.weight".to_string(), &self.out_proj2.weight));
        out.push(("out_proj2.bias".to_string(), &self.out_proj2.bias));
        out
    }

    fn check_cond(&self, len: usize, cond: &Conditioner) -> Result<(), PredictorError> {
        if cond.dim != self.config.conditioner_dim {
            return Err(PredictorError::CondDimMismatch {
                got: cond.dim,
                expected: self.config.conditioner_dim,
            });
        }
        let expected = len.div_ceil(HOP);
        if cond.n_frames != expected {
            return Err(PredictorError::FrameMismatch { got: cond.n_frames, expected, len });
        }
        Ok(())
    }

    /// Encode the conditioner to sample rate: frame projection, two
    /// upsampling stages, crop to `len`. Returns every intermediate needed
    /// by the backward pass.
    fn encode_cond(&self, cond: &Conditioner, len: usize) -> CondTrace<T> {
        let frames = cond.n_frames;
        let dim = cond.dim;
        let cond_ch = self.config.cond_channels;
        // Transpose frames x dim to dim x frames.
        let mut cond_t = vec![T::zero(); dim * frames];
        for fr in 0..frames {
            let row = cond.frame(fr);
            for (d, v) in row.iter().enumerate() {
                cond_t[d * frames + fr] = T::from_f64(*v);
            }
        }
        let slope = T::from_f64(LEAKY_SLOPE);
        let mut c0 = conv1d_forward(&self.cond_in, &cond_t, frames, 1);
        leaky_relu(&mut c0, slope);
        let mut u1 = conv_transpose1d_forward(&self.upsample1, &c0, frames, UP_STRIDE);
        leaky_relu(&mut u1, slope);
        let mut u2 = conv_transpose1d_forward(&self.upsample2, &u1, frames * UP_STRIDE, UP_STRIDE);
        leaky_relu(&mut u2, slope);
        let up_len = frames * UP_STRIDE * UP_STRIDE;
        let mut c = vec![T::zero(); cond_ch * len];
        for ch in 0..cond_ch {
            c[ch * len..(ch + 1) * len].copy_from_slice(&u2[ch * up_len..ch * up_len + len]);
        }
        CondTrace { cond_t, c0, u1, u2, c, frames }
    }

    fn step_features(&self, position: f64) -> StepTrace<T> {
        let emb = step_embedding::<T>(position, self.config.step_embed_dim);
        let mut fc1_out = linear_forward(&self.step_fc1, &emb);
        let fc1_pre = swish(&mut fc1_out);
        let mut h = linear_forward(&self.step_fc2, &fc1_out);
        let fc2_pre = swish(&mut h);
        StepTrace { emb, fc1_pre, fc1_out, fc2_pre, h }
    }

    /// Inference forward: no trace kept.
    pub fn predict_noise(
        &self,
        x_t: &[f64],
        position: f64,
        cond: &Conditioner,
    ) -> Result<Vec<f64>, PredictorError> {
        if x_t.is_empty() {
            return Err(PredictorError::EmptyInput);
        }
        if !position.is_finite() || position < 0.0 {
            return Err(PredictorError::BadStepPosition(position));
        }
        self.check_cond(x_t.len(), cond)?;
        let len = x_t.len();
        let c = self.config.residual_channels;
        let cond_trace = self.encode_cond(cond, len);
        let step = self.step_features(position);

        let x_in: Vec<T> = x_t.iter().map(|v| T::from_f64(*v)).collect();
        let mut x = conv1d_forward(&self.input_proj, &x_in, len, 1);
        relu(&mut x);

        let inv_sqrt2 = T::from_f64(std::f64::consts::FRAC_1_SQRT_2);
        let mut skip_sum = vec![T::zero(); c * len];
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = conv1d_forward(&layer.dilated, &x, len, self.config.dilation(l));
            let cz = conv1d_forward(&layer.cond_proj, &cond_trace.c, len, 1);
            for (zv, cv) in z.iter_mut().zip(&cz) {
                *zv = *zv + *cv;
            }
            let sv = linear_forward(&layer.step_proj, &step.h);
            for ch in 0..2 * c {
                let add = sv[ch];
                for v in z[ch * len..(ch + 1) * len].iter_mut() {
                    *v = *v + add;
                }
            }
            // gate: tanh(top) * sigmoid(bottom)
            let mut g = vec![T::zero(); c * len];
            for i in 0..c * len {
                g[i] = z[i].tanh() * sigmoid_scalar(z[c * len + i]);
            }
            let r = conv1d_forward(&layer.res_proj, &g, len, 1);
            let s = conv1d_forward(&layer.skip_proj, &g, len, 1);
            for i in 0..c * len {
                skip_sum[i] = skip_sum[i] + s[i];
                x[i] = (x[i] + r[i]) * inv_sqrt2;
            }
        }

        let inv_sqrt_n = T::from_f64(1.0 / (self.config.n_layers as f64).sqrt());
        for v in skip_sum.iter_mut() {
            *v = *v * inv_sqrt_n;
        }
        relu(&mut skip_sum);
        let mut y = conv1d_forward(&self.out_proj1, &skip_sum, len, 1);
        relu(&mut y);
        let out = conv1d_forward(&self.out_proj2, &y, len, 1);
        Ok(out.iter().map(|v| v.as_f64()).collect())
    }

    /// Training forward: returns the output and everything backward needs.
    fn forward_traced(
        &self,
        x_t: &[T],
        position: f64,
        cond: &Conditioner,
    ) -> Result<(Vec<T>, ForwardTrace<T>), PredictorError> {
        self.check_cond(x_t.len(), cond)?;
        let len = x_t.len();
        let c = self.config.residual_channels;
        let cond_trace = self.encode_cond(cond, len);
        let step = self.step_features(position);

        let mut x = conv1d_forward(&self.input_proj, x_t, len, 1);
        relu(&mut x);
        let x0p = x.clone();

        let inv_sqrt2 = T::from_f64(std::f64::consts::FRAC_1_SQRT_2);
        let mut skip_sum = vec![T::zero(); c * len];
        let mut layer_traces = Vec::with_capacity(self.config.n_layers);
        for (l, layer) in self.layers.iter().enumerate() {
            let x_in = x.clone();
            let mut z = conv1d_forward(&layer.dilated, &x, len, self.config.dilation(l));
            let cz = conv1d_forward(&layer.cond_proj, &cond_trace.c, len, 1);
            for (zv, cv) in z.iter_mut().zip(&cz) {
                *zv = *zv + *cv;
            }
            let sv = linear_forward(&layer.step_proj, &step.h);
            for ch in 0..2 * c {
                let add = sv[ch];
                for v in z[ch * len..(ch + 1) * len].iter_mut() {
                    *v = *v + add;
                }
            }
            let mut a = vec![T::zero(); c * len];
            let mut b = vec![T::zero(); c * len];
            let mut g = vec![T::zero(); c * len];
            for i in 0..c * len {
                a[i] = z[i].tanh();
                b[i] = sigmoid_scalar(z[c * len + i]);
                g[i] = a[i] * b[i];
            }
            let r = conv1d_forward(&layer.res_proj, &g, len, 1);
            let s = conv1d_forward(&layer.skip_proj, &g, len, 1);
            for i in 0..c * len {
                skip_sum[i] = skip_sum[i] + s[i];
                x[i] = (x[i] + r[i]) * inv_sqrt2;
            }
            layer_traces.push(LayerTrace { x_in, a, b, g });
        }

        let inv_sqrt_n = T::from_f64(1.0 / (self.config.n_layers as f64).sqrt());
        for v in skip_sum.iter_mut() {
            *v = *v * inv_sqrt_n;
        }
        relu(&mut skip_sum);
        let y1 = skip_sum;
        let mut y2 = conv1d_forward(&self.out_proj1, &y1, len, 1);
        relu(&mut y2);
        let out = conv1d_forward(&self.out_proj2, &y2, len, 1);
        Ok((out, ForwardTrace { len, cond: cond_trace, step, x0p, layers: layer_traces, y1, y2 }))
    }

    /// Backpropagate `d_out` through the traced forward, accumulating
    /// parameter gradients into `grads`.
    fn backward(
        &self,
        x_t: &[T],
        trace: &ForwardTrace<T>,
        d_out: &[T],
        grads: &mut PredictorParams<T>,
    ) {
        let len = trace.len;
        let c = self.config.residual_channels;
        let cond_ch = self.config.cond_channels;
        let slope = T::from_f64(LEAKY_SLOPE);

        // Output head.
        let mut d_y2 = conv1d_backward(&self.out_proj2, &mut grads.out_proj2, &trace.y2, d_out, len, 1);
        relu_backward(&trace.y2, &mut d_y2);
        let mut d_y1 = conv1d_backward(&self.out_proj1, &mut grads.out_proj1, &trace.y1, &d_y2, len, 1);
        relu_backward(&trace.y1, &mut d_y1);
        let inv_sqrt_n = T::from_f64(1.0 / (self.config.n_layers as f64).sqrt());
        for v in d_y1.iter_mut() {
            *v = *v * inv_sqrt_n;
        }
        let d_skip_sum = d_y1;

        let inv_sqrt2 = T::from_f64(std::f64::consts::FRAC_1_SQRT_2);
        let mut d_x = vec![T::zero(); c * len];
        let mut d_c = vec![T::zero(); cond_ch * len];
        let mut d_h = vec![T::zero(); self.config.step_hidden_dim];
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let lt = &trace.layers[l];
            // x_next = (x_in + res)/sqrt(2); skip contributes d_skip_sum directly.
            let mut d_g = vec![T::zero(); c * len];
            {
                let d_r: Vec<T> = d_x.iter().map(|v| *v * inv_sqrt2).collect();
                let from_res =
                    conv1d_backward(&layer.res_proj, &mut grads.layers[l].res_proj, &lt.g, &d_r, len, 1);
                let from_skip = conv1d_backward(
                    &layer.skip_proj,
                    &mut grads.layers[l].skip_proj,
                    &lt.g,
                    &d_skip_sum,
                    len,
                    1,
                );
                for i in 0..c * len {
                    d_g[i] = from_res[i] + from_skip[i];
                    d_x[i] = d_x[i] * inv_sqrt2;
                }
            }
            // Gate backward into the summed pre-activation.
            let mut d_z = vec![T::zero(); 2 * c * len];
            for i in 0..c * len {
                let (a, b) = (lt.a[i], lt.b[i]);
                d_z[i] = d_g[i] * b * (T::one() - a * a);
                d_z[c * len + i] = d_g[i] * a * b * (T::one() - b);
            }
            // Step projection: broadcast add means the vector gradient is
            // the per-channel row sum.
            let mut d_sv = vec![T::zero(); 2 * c];
            for ch in 0..2 * c {
                let mut acc = T::zero();
                for v in &d_z[ch * len..(ch + 1) * len] {
                    acc = acc + *v;
                }
                d_sv[ch] = acc;
            }
            let dh_l =
                linear_backward(&layer.step_proj, &mut grads.layers[l].step_proj, &trace.step.h, &d_sv);
            for (dst, s) in d_h.iter_mut().zip(&dh_l) {
                *dst = *dst + *s;
            }
            // Conditioner projection.
            let dc_l = conv1d_backward(
                &layer.cond_proj,
                &mut grads.layers[l].cond_proj,
                &trace.cond.c,
                &d_z,
                len,
                1,
            );
            for (dst, s) in d_c.iter_mut().zip(&dc_l) {
                *dst = *dst + *s;
            }
            // Dilated conv back to the layer input.
            let d_from_conv = conv1d_backward(
                &layer.dilated,
                &mut grads.layers[l].dilated,
                &lt.x_in,
                &d_z,
                len,
                self.config.dilation(l),
            );
            for i in 0..c * len {
                d_x[i] = d_x[i] + d_from_conv[i];
            }
        }

        // Input projection.
        relu_backward(&trace.x0p, &mut d_x);
        let _ = conv1d_backward(&self.input_proj, &mut grads.input_proj, x_t, &d_x, len, 1);

        // Conditioner encoder: re-inflate the crop, then walk back through
        // both upsampling stages and the frame projection.
        let frames = trace.cond.frames;
        let up_len = frames * UP_STRIDE * UP_STRIDE;
        let mut d_u2 = vec![T::zero(); cond_ch * up_len];
        for ch in 0..cond_ch {
            d_u2[ch * up_len..ch * up_len + len].copy_from_slice(&d_c[ch * len..(ch + 1) * len]);
        }
        leaky_relu_backward(&trace.cond.u2, &mut d_u2, slope);
        let mut d_u1 = conv_transpose1d_backward(
            &self.upsample2,
            &mut grads.upsample2,
            &trace.cond.u1,
            &d_u2,
            frames * UP_STRIDE,
            UP_STRIDE,
        );
        leaky_relu_backward(&trace.cond.u1, &mut d_u1, slope);
        let mut d_c0 = conv_transpose1d_backward(
            &self.upsample1,
            &mut grads.upsample1,
            &trace.cond.c0,
            &d_u1,
            frames,
            UP_STRIDE,
        );
        leaky_relu_backward(&trace.cond.c0, &mut d_c0, slope);
        let _ = conv1d_backward(&self.cond_in, &mut grads.cond_in, &trace.cond.cond_t, &d_c0, frames, 1);

        // Step embedding MLP.
        swish_backward(&trace.step.fc2_pre, &mut d_h);
        let mut d_fc1 = linear_backward(&self.step_fc2, &mut grads.step_fc2, &trace.step.fc1_out, &d_h);
        swish_backward(&trace.step.fc1_pre, &mut d_fc1);
        let _ = linear_backward(&self.step_fc1, &mut grads.step_fc1, &trace.step.emb, &d_fc1);
    }

    /// Mean over the batch of the squared noise-prediction error, plus
    /// reverse-mode gradients for every tensor.
    pub fn loss_and_grad(
        &self,
        items: &[LossItem<'_>],
    ) -> Result<(f64, PredictorParams<T>), PredictorError> {
        if items.is_empty() {
            return Err(PredictorError::EmptyBatch);
        }
        let mut grads = self.zeros_like();
        let mut total = 0.0f64;
        let inv_batch = 1.0 / items.len() as f64;
        for item in items {
            let pair = item.pair;
            if pair.x_t.len() != pair.epsilon.len() {
                return Err(PredictorError::LengthMismatch(pair.x_t.len(), pair.epsilon.len()));
            }
            let x_t: Vec<T> = pair.x_t.iter().map(|v| T::from_f64(*v)).collect();
            let (out, trace) = self.forward_traced(&x_t, pair.t as f64, item.cond)?;
            let mut d_out = vec![T::zero(); out.len()];
            let mut loss_i = 0.0f64;
            for i in 0..out.len() {
                let resid = out[i].as_f64() - pair.epsilon[i];
                loss_i += resid * resid;
                d_out[i] = T::from_f64(2.0 * resid * inv_batch);
            }
            total += loss_i * inv_batch;
            self.backward(&x_t, &trace, &d_out, &mut grads);
        }
        Ok((total, grads))
    }
}

/// One batch entry for [`PredictorParams::loss_and_grad`].
pub struct LossItem<'a> {
    pub pair: &'a TrainingPair,
    pub cond: &'a Conditioner,
}

struct CondTrace<T> {
    cond_t: Vec<T>,
    c0: Vec<T>,
    u1: Vec<T>,
    u2: Vec<T>,
    c: Vec<T>,
    frames: usize,
}

struct StepTrace<T> {
    emb: Vec<T>,
    fc1_pre: Vec<T>,
    fc1_out: Vec<T>,
    fc2_pre: Vec<T>,
    h: Vec<T>,
}

struct LayerTrace<T> {
    x_in: Vec<T>,
    a: Vec<T>,
    b: Vec<T>,
    g: Vec<T>,
}

struct ForwardTrace<T> {
    len: usize,
    cond: CondTrace<T>,
    step: StepTrace<T>,
    x0p: Vec<T>,
    layers: Vec<LayerTrace<T>>,
    y1: Vec<T>,
    y2: Vec<T>,
}

/// Sinusoidal position features over geometrically spaced frequencies,
/// defined for fractional positions.
fn step_embedding<T: Element>(position: f64, dim: usize) -> Vec<T> {
    let half = dim / 2;
    let mut out = Vec::with_capacity(dim);
    for i in 0..half {
        let freq = 10f64.powf(i as f64 * 4.0 / (half - 1) as f64);
        out.push(T::from_f64((position * freq).sin()));
    }
    for i in 0..half {
        let freq = 10f64.powf(i as f64 * 4.0 / (half - 1) as f64);
        out.push(T::from_f64((position * freq).cos()));
    }
    out
}

/// Step context handed to a noise predictor: the (possibly fractional)
/// embedding position plus the process constants in effect at the step, so
/// analytic predictors work under both full and fast schedules.
#[derive(Debug, Clone, Copy)]
pub struct StepQuery {
    pub position: f64,
    pub alpha_bar: f64,
    pub beta: f64,
}

/// Anything the reverse samplers can ask for a noise estimate.
pub trait NoisePredictor {
    fn predict(
        &self,
        x_t: &[f64],
        step: &StepQuery,
        cond: &Conditioner,
    ) -> Result<Vec<f64>, PredictorError>;
}

impl<T: Element> NoisePredictor for PredictorParams<T> {
    fn predict(
        &self,
        x_t: &[f64],
        step: &StepQuery,
        cond: &Conditioner,
    ) -> Result<Vec<f64>, PredictorError> {
        self.predict_noise(x_t, step.position, cond)
    }
}

/// Analytic predictor bound to a known clean signal: inverts the closed-form
/// corruption, returning `(x_t − √ᾱ·x0)/√(1-ᾱ)`.
#[derive(Debug, Clone)]
pub struct OraclePredictor {
    pub x0: Vec<f64>,
}

impl NoisePredictor for OraclePredictor {
    fn predict(
        &self,
        x_t: &[f64],
        step: &StepQuery,
        _cond: &Conditioner,
    ) -> Result<Vec<f64>, PredictorError> {
        if x_t.len() != self.x0.len() {
            return Err(PredictorError::LengthMismatch(x_t.len(), self.x0.len()));
        }
        invert_corruption(x_t, &self.x0, step.alpha_bar, step.position)
    }
}

fn invert_corruption(
    x_t: &[f64],
    x0: &[f64],
    alpha_bar: f64,
    position: f64,
) -> Result<Vec<f64>, PredictorError> {
    if alpha_bar >= 1.0 {
        return Err(PredictorError::DegenerateStep { t: position as usize, alpha_bar });
    }
    let signal = alpha_bar.sqrt();
    let denom = (1.0 - alpha_bar).sqrt();
    Ok(x_t.iter().zip(x0).map(|(xt, x)| (xt - signal * x) / denom).collect())
}

/// Exact noise recovery for a `q_sample` output at integer step `t >= 1`.
pub fn oracle_predict(
    x_t: &[f64],
    t: usize,
    x0: &[f64],
    schedule: &NoiseSchedule,
) -> Result<Vec<f64>, PredictorError> {
    if t == 0 {
        return Err(PredictorError::DegenerateStep { t, alpha_bar: 1.0 });
    }
    if x_t.len() != x0.len() {
        return Err(PredictorError::LengthMismatch(x_t.len(), x0.len()));
    }
    invert_corruption(x_t, x0, schedule.alpha_bar(t), t as f64)
}
