//! U-net: `depth` encoder levels (conv-relu-conv-relu, then 2x2 max pool), a
//! bottleneck block, a mirrored decoder (2x2 transposed conv, concatenation
//! with the encoder skip, conv-relu-conv-relu) and a linear 1x1 output conv.
//!
//! Parameters live in one flat list in a fixed declared order; that order is
//! shared by the optimizer state and the weight file.

use std::sync::atomic::{AtomicUsize, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layers::{
    conv2d, conv2d_backward, maxpool2, maxpool2_backward, relu, relu_backward, tconv2, tconv2_backward, ConvCache,
};
use crate::nn::tensor::{concat_channels, split_channels, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UNetConfig {
    pub in_channels: usize,
    pub depth: usize,
    pub base_channels: usize,
}

impl UNetConfig {
    /// Desk-scale default: depth 3, 16 base channels.
    pub fn desk(in_channels: usize) -> Self {
        Self { in_channels, depth: 3, base_channels: 16 }
    }

    /// Full-size 256x256 preset: depth 5, 32 base channels.
    pub fn full(in_channels: usize) -> Self {
        Self { in_channels, depth: 5, base_channels: 32 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.depth == 0 || self.base_channels == 0 {
            return Err(Error::InvalidArgument(format!("invalid u-net config {self:?}")));
        }
        Ok(())
    }

    fn width(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// Input sides must be divisible by 2^depth.
    pub fn check_input(&self, input: &Tensor) -> Result<()> {
        let (c, h, w) = input.dims3()?;
        let m = 1usize << self.depth;
        if c != self.in_channels {
            return Err(Error::ShapeMismatch(format!("u-net expects {} channels, got {c}", self.in_channels)));
        }
        if h % m != 0 || w % m != 0 || h == 0 || w == 0 {
            return Err(Error::ShapeMismatch(format!("input {h}x{w} not divisible by 2^{}", self.depth)));
        }
        Ok(())
    }

    /// Names and shapes of every parameter tensor, in declared order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let mut conv = |name: String, o: usize, c: usize, k: usize| {
            out.push((format!("{name}.weight"), vec![o, c, k, k]));
            out.push((format!("{name}.bias"), vec![o]));
        };
        let mut c_in = self.in_channels;
        for l in 0..self.depth {
            conv(format!("enc{l}.conv1"), self.width(l), c_in, 3);
            conv(format!("enc{l}.conv2"), self.width(l), self.width(l), 3);
            c_in = self.width(l);
        }
        let d = self.depth;
        conv("bottleneck.conv1".into(), self.width(d), self.width(d - 1), 3);
        conv("bottleneck.conv2".into(), self.width(d), self.width(d), 3);
        for l in (0..d).rev() {
            // transposed conv weights are stored in x out x 2 x 2
            out.push((format!("dec{l}.up.weight"), vec![self.width(l + 1), self.width(l), 2, 2]));
            out.push((format!("dec{l}.up.bias"), vec![self.width(l)]));
            let mut conv = |name: String, o: usize, c: usize| {
                out.push((format!("{name}.weight"), vec![o, c, 3, 3]));
                out.push((format!("{name}.bias"), vec![o]));
            };
            conv(format!("dec{l}.conv1"), self.width(l), 2 * self.width(l));
            conv(format!("dec{l}.conv2"), self.width(l), self.width(l));
        }
        out.push(("head.weight".into(), vec![1, self.width(0), 1, 1]));
        out.push(("head.bias".into(), vec![1]));
        out
    }

    fn enc(&self, level: usize) -> usize {
        4 * level
    }

    fn bottleneck(&self) -> usize {
        4 * self.depth
    }

    fn dec(&self, level: usize) -> usize {
        4 * self.depth + 4 + 6 * (self.depth - 1 - level)
    }

    fn head(&self) -> usize {
        10 * self.depth + 4
    }
}

/// Trainable u-net parameters plus the seed they were initialized from.
#[derive(Debug)]
pub struct UNetParams {
    pub config: UNetConfig,
    pub seed: u64,
    pub tensors: Vec<Tensor>,
    forward_calls: AtomicUsize,
}

impl Clone for UNetParams {
    fn clone(&self) -> Self {
        Self { config: self.config, seed: self.seed, tensors: self.tensors.clone(), forward_calls: AtomicUsize::new(0) }
    }
}

impl PartialEq for UNetParams {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.seed == other.seed && self.tensors == other.tensors
    }
}

/// Per-parameter gradients, same order and shapes as `UNetParams::tensors`.
pub type Gradients = Vec<Tensor>;

struct BlockCache {
    c1: ConvCache,
    a1: Tensor,
    c2: ConvCache,
    a2: Tensor,
}

struct DecCache {
    up_input: Tensor,
    block: BlockCache,
}

/// Intermediate values kept by [`UNetParams::forward_train`] for backprop.
pub struct Tape {
    enc: Vec<(BlockCache, Vec<usize>, Vec<usize>)>,
    bottleneck: BlockCache,
    dec: Vec<DecCache>,
    head: ConvCache,
}

impl UNetParams {
    /// He-normal weights (std = sqrt(2 / fan_in)), zero biases.
    pub fn init(config: UNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = config
            .layout()
            .into_iter()
            .map(|(name, shape)| {
                if name.ends_with(".bias") {
                    return Tensor::zeros(&shape);
                }
                let fan_in = if name.contains(".up.") { shape[0] } else { shape[1] * shape[2] * shape[3] };
                let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
                let n: usize = shape.iter().product();
                Tensor::from_vec(&shape, (0..n).map(|_| normal.sample(&mut rng)).collect()).unwrap()
            })
            .collect();
        Ok(Self { config, seed, tensors, forward_calls: AtomicUsize::new(0) })
    }

    pub fn from_tensors(config: UNetConfig, seed: u64, tensors: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        let layout = config.layout();
        if layout.len() != tensors.len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} parameter tensors, got {}",
                layout.len(),
                tensors.len()
            )));
        }
        for ((name, shape), t) in layout.iter().zip(&tensors) {
            if t.shape() != &shape[..] {
                return Err(Error::ShapeMismatch(format!("{name}: expected {shape:?}, got {:?}", t.shape())));
            }
        }
        Ok(Self { config, seed, tensors, forward_calls: AtomicUsize::new(0) })
    }

    pub fn zero_grads(&self) -> Gradients {
        self.tensors.iter().map(Tensor::zeros_like).collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Number of forward passes run on these parameters since construction.
    pub fn forward_calls(&self) -> usize {
        self.forward_calls.load(Ordering::Relaxed)
    }

    fn block(&self, at: usize, x: &Tensor) -> Result<BlockCache> {
        let (z1, c1) = conv2d(x, &self.tensors[at], &self.tensors[at + 1])?;
        let a1 = relu(&z1);
        let (z2, c2) = conv2d(&a1, &self.tensors[at + 2], &self.tensors[at + 3])?;
        let a2 = relu(&z2);
        Ok(BlockCache { c1, a1, c2, a2 })
    }

    fn block_backward(&self, at: usize, cache: &BlockCache, dout: &Tensor, grads: &mut Gradients) -> Result<Tensor> {
        let dz2 = relu_backward(&cache.a2, dout);
        let (da1, dw2, db2) = conv2d_backward(&cache.c2, &self.tensors[at + 2], &dz2)?;
        grads[at + 2].add_assign(&dw2);
        grads[at + 3].add_assign(&db2);
        let dz1 = relu_backward(&cache.a1, &da1);
        let (dx, dw1, db1) = conv2d_backward(&cache.c1, &self.tensors[at], &dz1)?;
        grads[at].add_assign(&dw1);
        grads[at + 1].add_assign(&db1);
        Ok(dx)
    }

    /// Inference: K x H x W input to a 1 x H x W output.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        self.forward_train(input).map(|(out, _)| out)
    }

    pub fn forward_train(&self, input: &Tensor) -> Result<(Tensor, Tape)> {
        let cfg = &self.config;
        cfg.check_input(input)?;
        self.forward_calls.fetch_add(1, Ordering::Relaxed);
        let mut enc = Vec::with_capacity(cfg.depth);
        let mut x = input.clone();
        for l in 0..cfg.depth {
            let block = self.block(cfg.enc(l), &x)?;
            let (pooled, argmax) = maxpool2(&block.a2)?;
            let shape = block.a2.shape().to_vec();
            x = pooled;
            enc.push((block, argmax, shape));
        }
        let bottleneck = self.block(cfg.bottleneck(), &x)?;
        x = bottleneck.a2.clone();
        let mut dec = Vec::with_capacity(cfg.depth);
        for l in (0..cfg.depth).rev() {
            let at = cfg.dec(l);
            let up = tconv2(&x, &self.tensors[at], &self.tensors[at + 1])?;
            let cat = concat_channels(&up, &enc[l].0.a2)?;
            let block = self.block(at + 2, &cat)?;
            let up_input = std::mem::replace(&mut x, block.a2.clone());
            dec.push(DecCache { up_input, block });
        }
        let h = cfg.head();
        let (out, head) = conv2d(&x, &self.tensors[h], &self.tensors[h + 1])?;
        Ok((out, Tape { enc, bottleneck, dec, head }))
    }

    /// Accumulates parameter gradients into `grads` and returns the input gradient.
    pub fn backward(&self, tape: &Tape, dout: &Tensor, grads: &mut Gradients) -> Result<Tensor> {
        let cfg = &self.config;
        let h = cfg.head();
        let (mut dx, dw, db) = conv2d_backward(&tape.head, &self.tensors[h], dout)?;
        grads[h].add_assign(&dw);
        grads[h + 1].add_assign(&db);

        let mut dskips: Vec<Option<Tensor>> = (0..cfg.depth).map(|_| None).collect();
        // decoder caches were pushed deepest level first; unwind from level 0
        for l in 0..cfg.depth {
            let at = cfg.dec(l);
            let cache = &tape.dec[cfg.depth - 1 - l];
            let dcat = self.block_backward(at + 2, &cache.block, &dx, grads)?;
            let up_channels = cfg.width(l);
            let (dup, dskip) = split_channels(&dcat, up_channels)?;
            dskips[l] = Some(dskip);
            let (din, dw, db) = tconv2_backward(&cache.up_input, &self.tensors[at], &dup)?;
            grads[at].add_assign(&dw);
            grads[at + 1].add_assign(&db);
            dx = din;
        }
        dx = self.block_backward(cfg.bottleneck(), &tape.bottleneck, &dx, grads)?;
        for l in (0..cfg.depth).rev() {
            let (block, argmax, shape) = &tape.enc[l];
            let mut da2 = maxpool2_backward(&dx, argmax, shape)?;
            da2.add_assign(dskips[l].as_ref().expect("every level has a skip"));
            dx = self.block_backward(cfg.enc(l), block, &da2, grads)?;
        }
        Ok(dx)
    }
}
