//! The per-bitplane network: `Conv -> D x ResidualBlock -> BN -> Conv -> head`.
//!
//! Each residual block is `Conv -> BN -> ReLU -> Conv -> BN` with an additive
//! skip from the block input. Every convolution is 3x3 with 64 filters except
//! the last, which maps back to the image channel count.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::activation::{relu, relu_backward, sigmoid, sigmoid_backward};
use super::batchnorm::{BatchNorm2d, BnCache, BnGrads, DEFAULT_EPSILON, DEFAULT_MOMENTUM};
use super::conv::{Conv2d, ConvGrads};
use super::tensor::{Real, Tensor};
use crate::error::{invalid, Result};

/// Filters in every hidden convolution.
pub const WIDTH: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    Sigmoid,
    /// No output activation (single-shot residual regression).
    Linear,
}

/// What the network output means.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    /// Probability that bit `plane_index` is set.
    Bitplane,
    /// The normalized image one bit deeper than the input.
    NextImage,
    /// The normalized residual `R / (2^N - 1)`.
    Residual,
}

/// Architecture and provenance recorded with every model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkMeta {
    pub depth: u32,
    pub channels: u32,
    pub width: u32,
    pub plane_index: u32,
    /// Effective bit depth of the images this network is fed.
    pub input_bits: u32,
    pub container_bits: u32,
    pub head: Head,
    pub target: TargetKind,
    pub bn_momentum: f32,
    pub bn_epsilon: f32,
}

impl NetworkMeta {
    pub fn bitplane(depth: u32, channels: u32, plane_index: u32, input_bits: u32, container_bits: u32) -> Self {
        Self {
            depth,
            channels,
            width: WIDTH as u32,
            plane_index,
            input_bits,
            container_bits,
            head: Head::Sigmoid,
            target: TargetKind::Bitplane,
            bn_momentum: DEFAULT_MOMENTUM as f32,
            bn_epsilon: DEFAULT_EPSILON as f32,
        }
    }

    /// Codes are divided by this before entering the network: `2^N - 1`.
    pub fn normalization(&self) -> f32 {
        ((1u32 << self.container_bits) - 1) as f32
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth < 1 {
            return Err(invalid("network needs at least one residual block"));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(invalid(format!("network channels must be 1 or 3, got {}", self.channels)));
        }
        if self.width as usize != WIDTH {
            return Err(invalid(format!("hidden width is fixed at {WIDTH}, got {}", self.width)));
        }
        if !(2..=16).contains(&self.container_bits) || self.plane_index >= self.container_bits {
            return Err(invalid(format!(
                "plane {} does not fit a {}-bit container",
                self.plane_index, self.container_bits
            )));
        }
        if self.input_bits < 1 || self.input_bits >= self.container_bits {
            return Err(invalid(format!(
                "input depth {} must lie in [1, {})",
                self.input_bits, self.container_bits
            )));
        }
        Ok(())
    }

    /// Trainable parameters: weights, biases and BN affine terms.
    pub fn trainable_parameter_count(&self) -> usize {
        let (c, w, d) = (self.channels as usize, self.width as usize, self.depth as usize);
        let conv = |i: usize, o: usize| o * i * 9 + o;
        conv(c, w) + d * (2 * conv(w, w) + 2 * (2 * w)) + 2 * w + conv(w, c)
    }

    /// Trainable parameters plus the BN running mean and variance.
    pub fn stored_parameter_count(&self) -> usize {
        let bn_layers = 2 * self.depth as usize + 1;
        self.trainable_parameter_count() + bn_layers * 2 * self.width as usize
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResidualBlock<T> {
    pub conv1: Conv2d<T>,
    pub bn1: BatchNorm2d<T>,
    pub conv2: Conv2d<T>,
    pub bn2: BatchNorm2d<T>,
}

pub struct BlockCache<T> {
    input: Tensor<T>,
    bn1: BnCache<T>,
    relu_out: Tensor<T>,
    bn2: BnCache<T>,
}

pub struct BlockGrads<T> {
    pub conv1: ConvGrads<T>,
    pub bn1: BnGrads<T>,
    pub conv2: ConvGrads<T>,
    pub bn2: BnGrads<T>,
}

impl<T: Real> ResidualBlock<T> {
    fn new<R: Rng + ?Sized>(width: usize, momentum: T, epsilon: T, rng: &mut R) -> Self {
        Self {
            conv1: Conv2d::he_normal(width, width, rng),
            bn1: BatchNorm2d::with_hyper(width, momentum, epsilon),
            conv2: Conv2d::he_normal(width, width, rng),
            bn2: BatchNorm2d::with_hyper(width, momentum, epsilon),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let h = self.bn1.forward_eval(&self.conv1.forward(x)?)?;
        let h = self.bn2.forward_eval(&self.conv2.forward(&relu(&h))?)?;
        x.add(&h)
    }

    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<(Tensor<T>, BlockCache<T>)> {
        let (h, bn1) = self.bn1.forward_train(&self.conv1.forward(x)?)?;
        let relu_out = relu(&h);
        let (h, bn2) = self.bn2.forward_train(&self.conv2.forward(&relu_out)?)?;
        let out = x.add(&h)?;
        Ok((out, BlockCache { input: x.clone(), bn1, relu_out, bn2 }))
    }

    pub fn backward(&self, cache: &BlockCache<T>, grad_out: &Tensor<T>) -> Result<(Tensor<T>, BlockGrads<T>)> {
        let (g, bn2) = self.bn2.backward(&cache.bn2, grad_out)?;
        let (g, conv2) = self.conv2.backward(&cache.relu_out, &g)?;
        // relu_out > 0 exactly where its input was > 0.
        let g = relu_backward(&cache.relu_out, &g)?;
        let (g, bn1) = self.bn1.backward(&cache.bn1, &g)?;
        let (g, conv1) = self.conv1.backward(&cache.input, &g)?;
        Ok((grad_out.add(&g)?, BlockGrads { conv1, bn1, conv2, bn2 }))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BitplaneNetwork<T> {
    meta: NetworkMeta,
    pub conv_in: Conv2d<T>,
    pub blocks: Vec<ResidualBlock<T>>,
    pub bn_out: BatchNorm2d<T>,
    pub conv_out: Conv2d<T>,
}

pub struct NetworkCache<T> {
    input: Tensor<T>,
    blocks: Vec<BlockCache<T>>,
    bn_out: BnCache<T>,
    conv_out_input: Tensor<T>,
    output: Tensor<T>,
}

/// Gradients in [`BitplaneNetwork::parameter_names`] order, plus the input gradient.
pub struct NetworkGrads<T> {
    pub params: Vec<Vec<T>>,
    pub input: Tensor<T>,
}

impl<T: Real> BitplaneNetwork<T> {
    /// He-normal convolutions, identity batch norms.
    pub fn new<R: Rng + ?Sized>(meta: NetworkMeta, rng: &mut R) -> Result<Self> {
        meta.validate()?;
        let (c, w) = (meta.channels as usize, meta.width as usize);
        let (mom, eps) = (T::lit(f64::from(meta.bn_momentum)), T::lit(f64::from(meta.bn_epsilon)));
        let conv_in = Conv2d::he_normal(c, w, rng);
        let blocks = (0..meta.depth).map(|_| ResidualBlock::new(w, mom, eps, rng)).collect();
        let conv_out = Conv2d::he_normal(w, c, rng);
        Ok(Self { meta, conv_in, blocks, bn_out: BatchNorm2d::with_hyper(w, mom, eps), conv_out })
    }

    pub fn meta(&self) -> &NetworkMeta {
        &self.meta
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.channels() != self.meta.channels as usize {
            return Err(invalid(format!(
                "network expects {} channels, got {}",
                self.meta.channels,
                x.channels()
            )));
        }
        Ok(())
    }

    fn apply_head(&self, x: &Tensor<T>) -> Tensor<T> {
        match self.meta.head {
            Head::Sigmoid => sigmoid(x),
            Head::Linear => x.clone(),
        }
    }

    /// Inference with batch norms in evaluation mode.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut h = self.conv_in.forward(x)?;
        for block in &self.blocks {
            h = block.forward(&h)?;
        }
        let h = self.conv_out.forward(&self.bn_out.forward_eval(&h)?)?;
        let out = self.apply_head(&h);
        if cfg!(debug_assertions) {
            out.check_finite("network output")?;
        }
        Ok(out)
    }

    /// Training-mode forward pass; batch norms use and update batch statistics.
    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<(Tensor<T>, NetworkCache<T>)> {
        self.check_input(x)?;
        let mut h = self.conv_in.forward(x)?;
        let mut caches = Vec::with_capacity(self.blocks.len());
        for block in &mut self.blocks {
            let (next, cache) = block.forward_train(&h)?;
            caches.push(cache);
            h = next;
        }
        let (conv_out_input, bn_out) = self.bn_out.forward_train(&h)?;
        let output = self.apply_head(&self.conv_out.forward(&conv_out_input)?);
        if cfg!(debug_assertions) {
            output.check_finite("network output")?;
        }
        let cache = NetworkCache { input: x.clone(), blocks: caches, bn_out, conv_out_input, output: output.clone() };
        Ok((output, cache))
    }

    pub fn backward(&self, cache: &NetworkCache<T>, grad_out: &Tensor<T>) -> Result<NetworkGrads<T>> {
        let g = match self.meta.head {
            Head::Sigmoid => sigmoid_backward(&cache.output, grad_out)?,
            Head::Linear => {
                grad_out.expect_shape(cache.output.shape())?;
                grad_out.clone()
            }
        };
        let (g, conv_out) = self.conv_out.backward(&cache.conv_out_input, &g)?;
        let (mut g, bn_out) = self.bn_out.backward(&cache.bn_out, &g)?;
        let mut block_grads = Vec::with_capacity(self.blocks.len());
        for (block, bc) in self.blocks.iter().zip(&cache.blocks).rev() {
            let (next, bg) = block.backward(bc, &g)?;
            block_grads.push(bg);
            g = next;
        }
        block_grads.reverse();
        let (input, conv_in) = self.conv_in.backward(&cache.input, &g)?;

        let mut params = vec![conv_in.weight, conv_in.bias];
        for bg in block_grads {
            params.extend([
                bg.conv1.weight,
                bg.conv1.bias,
                bg.bn1.gamma,
                bg.bn1.beta,
                bg.conv2.weight,
                bg.conv2.bias,
                bg.bn2.gamma,
                bg.bn2.beta,
            ]);
        }
        params.extend([bn_out.gamma, bn_out.beta, conv_out.weight, conv_out.bias]);
        Ok(NetworkGrads { params, input })
    }

    /// Names of the trainable tensors, in gradient order.
    pub fn parameter_names(&self) -> Vec<String> {
        let mut names = vec!["conv_in.weight".to_string(), "conv_in.bias".to_string()];
        for i in 0..self.blocks.len() {
            for suffix in [
                "conv1.weight",
                "conv1.bias",
                "bn1.gamma",
                "bn1.beta",
                "conv2.weight",
                "conv2.bias",
                "bn2.gamma",
                "bn2.beta",
            ] {
                names.push(format!("blocks.{i}.{suffix}"));
            }
        }
        names.extend(["bn_out.gamma", "bn_out.beta", "conv_out.weight", "conv_out.bias"].map(String::from));
        names
    }

    pub fn parameters(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = vec![&self.conv_in.weight, &self.conv_in.bias];
        for b in &self.blocks {
            out.extend([
                &b.conv1.weight[..],
                &b.conv1.bias,
                &b.bn1.gamma,
                &b.bn1.beta,
                &b.conv2.weight,
                &b.conv2.bias,
                &b.bn2.gamma,
                &b.bn2.beta,
            ]);
        }
        out.extend([&self.bn_out.gamma[..], &self.bn_out.beta, &self.conv_out.weight, &self.conv_out.bias]);
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = vec![&mut self.conv_in.weight, &mut self.conv_in.bias];
        for b in &mut self.blocks {
            out.extend([
                &mut b.conv1.weight[..],
                &mut b.conv1.bias,
                &mut b.bn1.gamma,
                &mut b.bn1.beta,
                &mut b.conv2.weight,
                &mut b.conv2.bias,
                &mut b.bn2.gamma,
                &mut b.bn2.beta,
            ]);
        }
        out.extend([
            &mut self.bn_out.gamma[..],
            &mut self.bn_out.beta,
            &mut self.conv_out.weight,
            &mut self.conv_out.bias,
        ]);
        out
    }

    pub fn parameter_sizes(&self) -> Vec<usize> {
        self.parameters().iter().map(|p| p.len()).collect()
    }

    pub fn trainable_parameter_count(&self) -> usize {
        self.parameters().iter().map(|p| p.len()).sum()
    }

    pub fn batch_norms(&self) -> Vec<&BatchNorm2d<T>> {
        let mut out = Vec::with_capacity(2 * self.blocks.len() + 1);
        for b in &self.blocks {
            out.extend([&b.bn1, &b.bn2]);
        }
        out.push(&self.bn_out);
        out
    }

    pub fn batch_norms_mut(&mut self) -> Vec<&mut BatchNorm2d<T>> {
        let mut out = Vec::with_capacity(2 * self.blocks.len() + 1);
        for b in &mut self.blocks {
            out.extend([&mut b.bn1, &mut b.bn2]);
        }
        out.push(&mut self.bn_out);
        out
    }

    /// Sets every weight and bias of the final convolution to zero, which
    /// makes the pre-head output identically zero.
    pub fn zero_output_layer(&mut self) {
        self.conv_out.weight.fill(T::zero());
        self.conv_out.bias.fill(T::zero());
    }

    /// Zeroes every trainable tensor except batch-norm scales.
    pub fn zero_weights(&mut self) {
        let names = self.parameter_names();
        for (name, p) in names.iter().zip(self.parameters_mut()) {
            if !name.ends_with(".gamma") {
                p.fill(T::zero());
            }
        }
    }

    pub fn cast<U: Real>(&self) -> BitplaneNetwork<U> {
        let conv = |c: &Conv2d<T>| Conv2d {
            in_channels: c.in_channels,
            out_channels: c.out_channels,
            weight: c.weight.iter().map(|&v| U::lit(v.to_f64())).collect(),
            bias: c.bias.iter().map(|&v| U::lit(v.to_f64())).collect(),
        };
        let v = |x: &[T]| x.iter().map(|&a| U::lit(a.to_f64())).collect::<Vec<U>>();
        let bn = |b: &BatchNorm2d<T>| BatchNorm2d {
            gamma: v(&b.gamma),
            beta: v(&b.beta),
            running_mean: v(&b.running_mean),
            running_var: v(&b.running_var),
            momentum: U::lit(b.momentum.to_f64()),
            epsilon: U::lit(b.epsilon.to_f64()),
            stats_initialized: b.stats_initialized,
        };
        BitplaneNetwork {
            meta: self.meta,
            conv_in: conv(&self.conv_in),
            blocks: self
                .blocks
                .iter()
                .map(|b| ResidualBlock { conv1: conv(&b.conv1), bn1: bn(&b.bn1), conv2: conv(&b.conv2), bn2: bn(&b.bn2) })
                .collect(),
            bn_out: bn(&self.bn_out),
            conv_out: conv(&self.conv_out),
        }
    }
}
