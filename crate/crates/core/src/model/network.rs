use std::fmt;

use sha2::{Digest, Sha256};

use super::layers::{BlockCache, Conv2d, ConvBlock, TransposedConv2d, Upsample, UpsampleCache};
use crate::error::{Error, Result};
use crate::ops::{self, RunningStats};
use crate::optim::Parameter;
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

/// How decoder features are merged with the encoder feature of the same level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SkipMode {
    /// Elementwise sum (MRes-UNET); channel counts must match.
    Addition,
    /// Channel concatenation (plain UNET); the decoder block sees twice the channels.
    Concatenation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BlockKind {
    /// Two 3x3 convs plus a 1x1 convolution on the identity path.
    Residual,
    /// Two 3x3 convs, no shortcut.
    Plain,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UpsampleMode {
    /// 2x2 transposed convolution, stride 2.
    Transposed,
    /// Nearest-neighbour 2x followed by a 1x1 convolution.
    NearestConv,
}

/// Architecture hyperparameters of one encoder-decoder network.
///
/// Level `l` (0-based) of the encoder has `base_channels * multiplier^l`
/// channels; the bottleneck sits one level below the deepest encoder level.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct NetworkConfig {
    pub in_channels: usize,
    pub num_classes: usize,
    pub depth: usize,
    pub base_channels: usize,
    pub channel_multiplier: usize,
    pub skip_mode: SkipMode,
    pub block: BlockKind,
    pub use_norm: bool,
    pub upsample: UpsampleMode,
}

impl NetworkConfig {
    /// Residual blocks with addition skips.
    pub fn mres(in_channels: usize) -> Self {
        NetworkConfig {
            in_channels,
            num_classes: 2,
            depth: 4,
            base_channels: 16,
            channel_multiplier: 2,
            skip_mode: SkipMode::Addition,
            block: BlockKind::Residual,
            use_norm: true,
            upsample: UpsampleMode::Transposed,
        }
    }

    /// Plain double-conv blocks with concatenation skips.
    pub fn unet(in_channels: usize) -> Self {
        NetworkConfig { skip_mode: SkipMode::Concatenation, block: BlockKind::Plain, ..Self::mres(in_channels) }
    }

    pub fn with_size(mut self, depth: usize, base_channels: usize) -> Self {
        self.depth = depth;
        self.base_channels = base_channels;
        self
    }

    /// Channel count of encoder level `level` (`level == depth` is the bottleneck).
    pub fn level_channels(&self, level: usize) -> usize {
        self.base_channels * self.channel_multiplier.pow(level as u32)
    }

    /// Spatial dims must be divisible by this.
    pub fn size_divisor(&self) -> usize {
        1 << self.depth
    }

    pub fn validate(&self) -> Result<()> {
        let checks = [
            (self.in_channels >= 1, "in_channels must be at least 1"),
            (self.num_classes >= 2, "num_classes must be at least 2"),
            (self.depth >= 1, "depth must be at least 1"),
            (self.base_channels >= 1, "base_channels must be at least 1"),
            (self.channel_multiplier >= 1, "channel_multiplier must be at least 1"),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(Error::Config(msg.to_string()));
            }
        }
        Ok(())
    }

    /// Canonical text form; the fingerprint is its SHA-256.
    pub fn canonical(&self) -> String {
        format!(
            "in={};classes={};depth={};base={};mult={};skip={:?};block={:?};norm={};upsample={:?}",
            self.in_channels,
            self.num_classes,
            self.depth,
            self.base_channels,
            self.channel_multiplier,
            self.skip_mode,
            self.block,
            self.use_norm,
            self.upsample
        )
    }

    pub fn fingerprint(&self) -> [u8; 32] {
        Sha256::digest(self.canonical().as_bytes()).into()
    }

    /// Number of trainable scalars, from layer shapes alone.
    ///
    /// With `c_l = base * mult^l`, a 3x3 conv `a -> b` has `9ab + b`
    /// parameters, a norm layer `2b`, the 1x1 shortcut `ab + b`. The decoder
    /// at level `l` upsamples `c_{l+1} -> c_l` (`4 c_{l+1} c_l + c_l` for the
    /// transposed conv, `c_{l+1} c_l + c_l` for nearest + 1x1) and its block
    /// reads `c_l` channels (addition) or `2 c_l` (concatenation). The head
    /// is a 1x1 conv `c_0 -> classes`.
    pub fn parameter_count(&self) -> usize {
        let conv = |a: usize, b: usize, k: usize| k * k * a * b + b;
        let block = |a: usize, b: usize| {
            let mut n = conv(a, b, 3) + conv(b, b, 3);
            if self.use_norm {
                n += 4 * b;
            }
            if self.block == BlockKind::Residual {
                n += conv(a, b, 1);
            }
            n
        };
        let mut total = 0;
        let mut cin = self.in_channels;
        for l in 0..self.depth {
            total += block(cin, self.level_channels(l));
            cin = self.level_channels(l);
        }
        total += block(cin, self.level_channels(self.depth));
        for l in (0..self.depth).rev() {
            let (hi, lo) = (self.level_channels(l + 1), self.level_channels(l));
            total += match self.upsample {
                UpsampleMode::Transposed => conv(hi, lo, 2),
                UpsampleMode::NearestConv => conv(hi, lo, 1),
            };
            let merged = match self.skip_mode {
                SkipMode::Addition => lo,
                SkipMode::Concatenation => 2 * lo,
            };
            total += block(merged, lo);
        }
        total + conv(self.level_channels(0), self.num_classes, 1)
    }
}

impl fmt::Display for NetworkConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical())
    }
}

/// Channels flowing through one decoder level, used for the build-time
/// skip compatibility check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct MergePlan {
    pub level: usize,
    pub upsampled: usize,
    pub skip: usize,
}

pub(crate) fn check_merges(mode: SkipMode, plan: &[MergePlan]) -> Result<()> {
    if mode == SkipMode::Addition {
        if let Some(m) = plan.iter().find(|m| m.upsampled != m.skip) {
            return Err(Error::Config(format!(
                "addition skip at level {} joins {} upsampled channels with {} encoder channels",
                m.level, m.upsampled, m.skip
            )));
        }
    }
    Ok(())
}

/// An encoder-decoder segmentation network and its weights.
///
/// Encoder: `depth` levels of (block, 2x2 max pool). Bottleneck block.
/// Decoder: `depth` levels of (2x upsample, merge with the encoder feature,
/// block). Head: 1x1 conv to `num_classes`, then a channel softmax.
#[derive(Debug, Clone)]
pub struct Network<T> {
    config: NetworkConfig,
    encoder: Vec<ConvBlock<T>>,
    bottleneck: ConvBlock<T>,
    /// Indexed by decoder step: step 0 is the deepest level.
    ups: Vec<Upsample<T>>,
    decoder: Vec<ConvBlock<T>>,
    head: Conv2d<T>,
}

/// Everything the backward pass needs from a training forward pass.
#[derive(Debug)]
pub struct ForwardCache<T> {
    input_shape: Vec<usize>,
    encoder: Vec<BlockCache<T>>,
    pools: Vec<(Vec<usize>, Vec<usize>)>,
    bottleneck: BlockCache<T>,
    ups: Vec<UpsampleCache<T>>,
    decoder: Vec<BlockCache<T>>,
    head_input: Tensor<T>,
    pub probs: Tensor<T>,
}

impl<T: Scalar> Network<T> {
    /// Builds the network described by `config` with freshly initialized
    /// weights drawn from `rng`.
    pub fn build(config: &NetworkConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let block = |name: &str, a: usize, b: usize, rng: &mut Rng| match config.block {
            BlockKind::Residual => ConvBlock::residual(name, a, b, config.use_norm, rng),
            BlockKind::Plain => ConvBlock::plain(name, a, b, config.use_norm, rng),
        };
        let mut encoder = Vec::with_capacity(config.depth);
        let mut cin = config.in_channels;
        for l in 0..config.depth {
            let c = config.level_channels(l);
            encoder.push(block(&format!("enc{l}"), cin, c, rng));
            cin = c;
        }
        let bottleneck = block("bottleneck", cin, config.level_channels(config.depth), rng);
        let mut ups = Vec::with_capacity(config.depth);
        let mut decoder = Vec::with_capacity(config.depth);
        let mut merges = Vec::with_capacity(config.depth);
        let mut current = config.level_channels(config.depth);
        for l in (0..config.depth).rev() {
            let skip = encoder[l].out_channels();
            let target = config.level_channels(l);
            let up = match config.upsample {
                UpsampleMode::Transposed => Upsample::Transposed(TransposedConv2d::new(&format!("up{l}"), current, target, rng)),
                UpsampleMode::NearestConv => Upsample::NearestConv(Conv2d::new(&format!("up{l}"), current, target, 1, rng)),
            };
            merges.push(MergePlan { level: l, upsampled: target, skip });
            let merged = match config.skip_mode {
                SkipMode::Addition => target,
                SkipMode::Concatenation => target + skip,
            };
            ups.push(up);
            decoder.push(block(&format!("dec{l}"), merged, target, rng));
            current = target;
        }
        check_merges(config.skip_mode, &merges)?;
        let head = Conv2d::new("head", current, config.num_classes, 1, rng);
        Ok(Network { config: config.clone(), encoder, bottleneck, ups, decoder, head })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn fingerprint(&self) -> [u8; 32] {
        self.config.fingerprint()
    }

    /// Trainable parameters in canonical order.
    pub fn parameters(&self) -> Vec<&Parameter<T>> {
        let mut out = Vec::new();
        for b in &self.encoder {
            out.extend(b.parameters());
        }
        out.extend(self.bottleneck.parameters());
        for (u, b) in self.ups.iter().zip(&self.decoder) {
            out.extend(u.parameters());
            out.extend(b.parameters());
        }
        out.extend([&self.head.weight, &self.head.bias]);
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter<T>> {
        let mut out = Vec::new();
        for b in &mut self.encoder {
            out.extend(b.parameters_mut());
        }
        out.extend(self.bottleneck.parameters_mut());
        for (u, b) in self.ups.iter_mut().zip(&mut self.decoder) {
            out.extend(u.parameters_mut());
            out.extend(b.parameters_mut());
        }
        out.extend([&mut self.head.weight, &mut self.head.bias]);
        out
    }

    fn blocks(&self) -> impl Iterator<Item = &ConvBlock<T>> {
        self.encoder.iter().chain(std::iter::once(&self.bottleneck)).chain(self.decoder.iter())
    }

    fn blocks_mut(&mut self) -> impl Iterator<Item = &mut ConvBlock<T>> {
        self.encoder.iter_mut().chain(std::iter::once(&mut self.bottleneck)).chain(self.decoder.iter_mut())
    }

    /// Normalization running statistics, as `(layer name, stats)` in canonical order.
    pub fn running_stats(&self) -> Vec<(&str, &RunningStats<T>)> {
        self.blocks().flat_map(|b| b.norms()).map(|n| (n.name.as_str(), &n.stats)).collect()
    }

    pub fn running_stats_mut(&mut self) -> Vec<(String, &mut RunningStats<T>)> {
        self.blocks_mut().flat_map(|b| b.norms_mut()).map(|n| (n.name.clone(), &mut n.stats)).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|p| p.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in self.parameters_mut() {
            p.zero_grad();
        }
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let (_, c, h, w) = x.dims4()?;
        if c != self.config.in_channels {
            return Err(Error::shape(format!(
                "network expects {} input channels, batch {:?} has {c}",
                self.config.in_channels,
                x.shape()
            )));
        }
        let div = self.config.size_divisor();
        if h % div != 0 || w % div != 0 {
            return Err(Error::shape(format!(
                "input {h}x{w} is not divisible by 2^depth = {div} (depth {})",
                self.config.depth
            )));
        }
        Ok(())
    }

    fn merge(&self, up: &Tensor<T>, skip: &Tensor<T>) -> Result<Tensor<T>> {
        match self.config.skip_mode {
            SkipMode::Addition => ops::add(up, skip),
            SkipMode::Concatenation => ops::concat_channels(up, skip),
        }
    }

    /// Eval-mode forward pass: per-pixel class probabilities, `N x classes x H x W`.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut skips = Vec::with_capacity(self.config.depth);
        let mut h = x.clone();
        for b in &self.encoder {
            let f = b.forward_eval(&h)?;
            h = ops::maxpool2x2(&f)?.output;
            skips.push(f);
        }
        h = self.bottleneck.forward_eval(&h)?;
        for (step, (u, b)) in self.ups.iter().zip(&self.decoder).enumerate() {
            let level = self.config.depth - 1 - step;
            let merged = self.merge(&u.forward(&h)?, &skips[level])?;
            h = b.forward_eval(&merged)?;
        }
        let logits = self.head.forward(&h)?;
        logits.check_finite("head")?;
        ops::softmax_channels(&logits)
    }

    /// Train-mode forward pass (batch statistics, running stats updated),
    /// keeping what [`Network::backward`] needs.
    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<ForwardCache<T>> {
        self.check_input(x)?;
        let depth = self.config.depth;
        let mut skips = Vec::with_capacity(depth);
        let mut enc_caches = Vec::with_capacity(depth);
        let mut pools = Vec::with_capacity(depth);
        let mut h = x.clone();
        for b in &mut self.encoder {
            let (f, c) = b.forward_train(&h)?;
            let pooled = ops::maxpool2x2(&f)?;
            pools.push((f.shape().to_vec(), pooled.argmax));
            h = pooled.output;
            skips.push(f);
            enc_caches.push(c);
        }
        let (mut h, bottleneck) = self.bottleneck.forward_train(&h)?;
        let mut up_caches = Vec::with_capacity(depth);
        let mut dec_caches = Vec::with_capacity(depth);
        for step in 0..depth {
            let level = depth - 1 - step;
            let (u, uc) = self.ups[step].forward_train(&h)?;
            let merged = self.merge(&u, &skips[level])?;
            let (out, dc) = self.decoder[step].forward_train(&merged)?;
            h = out;
            up_caches.push(uc);
            dec_caches.push(dc);
        }
        let logits = self.head.forward(&h)?;
        logits.check_finite("head")?;
        let probs = ops::softmax_channels(&logits)?;
        Ok(ForwardCache {
            input_shape: x.shape().to_vec(),
            encoder: enc_caches,
            pools,
            bottleneck,
            ups: up_caches,
            decoder: dec_caches,
            head_input: h,
            probs,
        })
    }

    /// Backpropagates `d_logits` (gradient with respect to the pre-softmax
    /// head output), accumulating into every parameter's gradient. Returns
    /// the gradient with respect to the network input.
    pub fn backward(&mut self, cache: &ForwardCache<T>, d_logits: &Tensor<T>) -> Result<Tensor<T>> {
        let depth = self.config.depth;
        let mut dh = self.head.backward(&cache.head_input, d_logits)?;
        let mut dskips: Vec<Option<Tensor<T>>> = vec![None; depth];
        for step in (0..depth).rev() {
            let level = depth - 1 - step;
            let dmerged = self.decoder[step].backward(&cache.decoder[step], &dh)?;
            let (dup, dskip) = match self.config.skip_mode {
                SkipMode::Addition => (dmerged.clone(), dmerged),
                SkipMode::Concatenation => {
                    ops::split_channels(&dmerged, self.config.level_channels(level))?
                }
            };
            dskips[level] = Some(dskip);
            dh = self.ups[step].backward(&cache.ups[step], &dup)?;
        }
        dh = self.bottleneck.backward(&cache.bottleneck, &dh)?;
        for level in (0..depth).rev() {
            let (shape, argmax) = &cache.pools[level];
            let mut df = ops::maxpool2x2_backward(shape, argmax, &dh)?;
            if let Some(ds) = &dskips[level] {
                df.add_assign(ds)?;
            }
            dh = self.encoder[level].backward(&cache.encoder[level], &df)?;
        }
        debug_assert_eq!(dh.shape(), &cache.input_shape[..]);
        Ok(dh)
    }

    /// Forward, categorical cross entropy against `one_hot`, backward.
    /// Gradients are accumulated; returns the loss.
    pub fn loss_and_grad(&mut self, x: &Tensor<T>, one_hot: &Tensor<T>) -> Result<f64> {
        let cache = self.forward_train(x)?;
        let loss = ops::categorical_cross_entropy(&cache.probs, one_hot)?;
        let d_logits = ops::softmax_cross_entropy_backward(&cache.probs, one_hot)?;
        self.backward(&cache, &d_logits)?;
        Ok(loss.as_f64())
    }

    /// Converts every weight and statistic to another precision.
    pub fn cast<U: Scalar>(&self) -> Network<U> {
        let mut out = Network::<U>::build(&self.config, &mut Rng::new(0)).expect("config already validated");
        for (dst, src) in out.parameters_mut().into_iter().zip(self.parameters()) {
            dst.value = src.value.cast();
        }
        for ((_, dst), (_, src)) in out.running_stats_mut().into_iter().zip(self.running_stats()) {
            dst.mean = src.mean.cast();
            dst.var = src.var.cast();
        }
        out
    }
}
