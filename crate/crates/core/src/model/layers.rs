//! Trainable layers: each owns its parameters and knows its own backward pass.

use crate::error::Result;
use crate::ops::{self, BatchNormCache, Mode, RunningStats};
use crate::optim::Parameter;
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

fn he_normal<T: Scalar>(shape: &[usize], fan_in: usize, rng: &mut Rng) -> Tensor<T> {
    let std = (2.0 / fan_in as f64).sqrt();
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| T::from_f64_lossy(std * rng.normal())).collect())
        .expect("shape matches data")
}

#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    pub weight: Parameter<T>,
    pub bias: Parameter<T>,
    pub stride: usize,
    pub padding: usize,
}

impl<T: Scalar> Conv2d<T> {
    /// He-normal weights, zero bias. Padding keeps spatial size for odd kernels.
    pub fn new(name: &str, cin: usize, cout: usize, kernel: usize, rng: &mut Rng) -> Self {
        Conv2d {
            weight: Parameter::new(
                format!("{name}.weight"),
                he_normal(&[cout, cin, kernel, kernel], cin * kernel * kernel, rng),
            ),
            bias: Parameter::new(format!("{name}.bias"), Tensor::zeros(&[cout])),
            stride: 1,
            padding: kernel / 2,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        ops::conv2d(x, &self.weight.value, Some(&self.bias.value), self.stride, self.padding)
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, x: &Tensor<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let g = ops::conv2d_backward(x, &self.weight.value, self.stride, self.padding, dy)?;
        self.weight.accumulate(&g.weight)?;
        self.bias.accumulate(&g.bias)?;
        Ok(g.input)
    }

    fn params(&self) -> [&Parameter<T>; 2] {
        [&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> [&mut Parameter<T>; 2] {
        [&mut self.weight, &mut self.bias]
    }
}

/// 2x2, stride-2 transposed convolution.
#[derive(Debug, Clone)]
pub struct TransposedConv2d<T> {
    pub weight: Parameter<T>,
    pub bias: Parameter<T>,
}

impl<T: Scalar> TransposedConv2d<T> {
    pub fn new(name: &str, cin: usize, cout: usize, rng: &mut Rng) -> Self {
        TransposedConv2d {
            weight: Parameter::new(format!("{name}.weight"), he_normal(&[cin, cout, 2, 2], cin, rng)),
            bias: Parameter::new(format!("{name}.bias"), Tensor::zeros(&[cout])),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        ops::transposed_conv2d(x, &self.weight.value, Some(&self.bias.value), 2)
    }

    pub fn backward(&mut self, x: &Tensor<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let g = ops::transposed_conv2d_backward(x, &self.weight.value, 2, dy)?;
        self.weight.accumulate(&g.weight)?;
        self.bias.accumulate(&g.bias)?;
        Ok(g.input)
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm2d<T> {
    pub gamma: Parameter<T>,
    pub beta: Parameter<T>,
    pub stats: RunningStats<T>,
    pub name: String,
}

impl<T: Scalar> BatchNorm2d<T> {
    pub fn new(name: &str, channels: usize) -> Self {
        BatchNorm2d {
            gamma: Parameter::new(format!("{name}.gamma"), Tensor::full(&[channels], T::one())),
            beta: Parameter::new(format!("{name}.beta"), Tensor::zeros(&[channels])),
            stats: RunningStats::new(channels),
            name: name.to_string(),
        }
    }

    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<(Tensor<T>, BatchNormCache<T>)> {
        ops::batchnorm2d(x, &self.gamma.value, &self.beta.value, &mut self.stats, Mode::Train)
    }

    pub fn forward_eval(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        // eval mode reads the running statistics without updating them
        let mut stats = self.stats.clone();
        Ok(ops::batchnorm2d(x, &self.gamma.value, &self.beta.value, &mut stats, Mode::Eval)?.0)
    }

    pub fn backward(&mut self, cache: &BatchNormCache<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let g = ops::batchnorm2d_backward(cache, &self.gamma.value, dy)?;
        self.gamma.accumulate(&g.gamma)?;
        self.beta.accumulate(&g.beta)?;
        Ok(g.input)
    }
}

/// Two 3x3 convolutions, each optionally followed by batch norm.
///
/// With a `shortcut` (residual block) the output is
/// `relu(norm(conv(relu(norm(conv(x))))) + conv1x1(x))`; without it (plain
/// UNET double-conv block) it is `relu(norm(conv(relu(norm(conv(x))))))`.
#[derive(Debug, Clone)]
pub struct ConvBlock<T> {
    pub name: String,
    pub conv1: Conv2d<T>,
    pub norm1: Option<BatchNorm2d<T>>,
    pub conv2: Conv2d<T>,
    pub norm2: Option<BatchNorm2d<T>>,
    pub shortcut: Option<Conv2d<T>>,
}

/// Intermediate values of one [`ConvBlock`] forward pass.
#[derive(Debug, Clone)]
pub struct BlockCache<T> {
    x: Tensor<T>,
    pre1: Tensor<T>,
    act1: Tensor<T>,
    bn1: Option<BatchNormCache<T>>,
    bn2: Option<BatchNormCache<T>>,
    pre_out: Tensor<T>,
}

impl<T: Scalar> ConvBlock<T> {
    pub fn residual(name: &str, cin: usize, cout: usize, use_norm: bool, rng: &mut Rng) -> Self {
        let mut block = Self::plain(name, cin, cout, use_norm, rng);
        block.shortcut = Some(Conv2d::new(&format!("{name}.shortcut"), cin, cout, 1, rng));
        block
    }

    pub fn plain(name: &str, cin: usize, cout: usize, use_norm: bool, rng: &mut Rng) -> Self {
        ConvBlock {
            name: name.to_string(),
            conv1: Conv2d::new(&format!("{name}.conv1"), cin, cout, 3, rng),
            norm1: use_norm.then(|| BatchNorm2d::new(&format!("{name}.norm1"), cout)),
            conv2: Conv2d::new(&format!("{name}.conv2"), cout, cout, 3, rng),
            norm2: use_norm.then(|| BatchNorm2d::new(&format!("{name}.norm2"), cout)),
            shortcut: None,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.conv1.weight.value.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.conv1.weight.value.shape()[0]
    }

    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<(Tensor<T>, BlockCache<T>)> {
        let h1 = self.conv1.forward(x)?;
        let (pre1, bn1) = match &mut self.norm1 {
            Some(n) => {
                let (y, c) = n.forward_train(&h1)?;
                (y, Some(c))
            }
            None => (h1, None),
        };
        let act1 = ops::relu(&pre1);
        let h2 = self.conv2.forward(&act1)?;
        let (mut pre_out, bn2) = match &mut self.norm2 {
            Some(n) => {
                let (y, c) = n.forward_train(&h2)?;
                (y, Some(c))
            }
            None => (h2, None),
        };
        if let Some(s) = &self.shortcut {
            pre_out = ops::add(&pre_out, &s.forward(x)?)?;
        }
        let out = ops::relu(&pre_out);
        out.check_finite(&self.name)?;
        Ok((out, BlockCache { x: x.clone(), pre1, act1, bn1, bn2, pre_out }))
    }

    pub fn forward_eval(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut h = self.conv1.forward(x)?;
        if let Some(n) = &self.norm1 {
            h = n.forward_eval(&h)?;
        }
        let h = self.conv2.forward(&ops::relu(&h))?;
        let mut pre_out = match &self.norm2 {
            Some(n) => n.forward_eval(&h)?,
            None => h,
        };
        if let Some(s) = &self.shortcut {
            pre_out = ops::add(&pre_out, &s.forward(x)?)?;
        }
        let out = ops::relu(&pre_out);
        out.check_finite(&self.name)?;
        Ok(out)
    }

    pub fn backward(&mut self, cache: &BlockCache<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let d_pre_out = ops::relu_backward(&cache.pre_out, dy)?;
        let mut dx = match &mut self.shortcut {
            Some(s) => Some(s.backward(&cache.x, &d_pre_out)?),
            None => None,
        };
        let dh2 = match (&mut self.norm2, &cache.bn2) {
            (Some(n), Some(c)) => n.backward(c, &d_pre_out)?,
            _ => d_pre_out,
        };
        let dact1 = self.conv2.backward(&cache.act1, &dh2)?;
        let dpre1 = ops::relu_backward(&cache.pre1, &dact1)?;
        let dh1 = match (&mut self.norm1, &cache.bn1) {
            (Some(n), Some(c)) => n.backward(c, &dpre1)?,
            _ => dpre1,
        };
        let dmain = self.conv1.backward(&cache.x, &dh1)?;
        Ok(match dx.take() {
            Some(mut d) => {
                d.add_assign(&dmain)?;
                d
            }
            None => dmain,
        })
    }

    pub fn parameters(&self) -> Vec<&Parameter<T>> {
        let mut out: Vec<&Parameter<T>> = self.conv1.params().into();
        if let Some(n) = &self.norm1 {
            out.extend([&n.gamma, &n.beta]);
        }
        out.extend(self.conv2.params());
        if let Some(n) = &self.norm2 {
            out.extend([&n.gamma, &n.beta]);
        }
        if let Some(s) = &self.shortcut {
            out.extend(s.params());
        }
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter<T>> {
        let mut out: Vec<&mut Parameter<T>> = self.conv1.params_mut().into();
        if let Some(n) = &mut self.norm1 {
            out.extend([&mut n.gamma, &mut n.beta]);
        }
        out.extend(self.conv2.params_mut());
        if let Some(n) = &mut self.norm2 {
            out.extend([&mut n.gamma, &mut n.beta]);
        }
        if let Some(s) = &mut self.shortcut {
            out.extend(s.params_mut());
        }
        out
    }

    pub fn norms(&self) -> impl Iterator<Item = &BatchNorm2d<T>> {
        self.norm1.iter().chain(self.norm2.iter())
    }

    pub fn norms_mut(&mut self) -> impl Iterator<Item = &mut BatchNorm2d<T>> {
        self.norm1.iter_mut().chain(self.norm2.iter_mut())
    }
}

/// Upsampling operator of the decoder.
#[derive(Debug, Clone)]
pub enum Upsample<T> {
    Transposed(TransposedConv2d<T>),
    /// Nearest-neighbour 2x followed by a 1x1 convolution.
    NearestConv(Conv2d<T>),
}

#[derive(Debug, Clone)]
pub enum UpsampleCache<T> {
    Transposed(Tensor<T>),
    NearestConv(Tensor<T>),
}

impl<T: Scalar> Upsample<T> {
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Upsample::Transposed(t) => t.forward(x),
            Upsample::NearestConv(c) => c.forward(&ops::upsample_nearest2x(x)?),
        }
    }

    pub fn forward_train(&self, x: &Tensor<T>) -> Result<(Tensor<T>, UpsampleCache<T>)> {
        match self {
            Upsample::Transposed(t) => Ok((t.forward(x)?, UpsampleCache::Transposed(x.clone()))),
            Upsample::NearestConv(c) => {
                let up = ops::upsample_nearest2x(x)?;
                Ok((c.forward(&up)?, UpsampleCache::NearestConv(up)))
            }
        }
    }

    pub fn backward(&mut self, cache: &UpsampleCache<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
        match (self, cache) {
            (Upsample::Transposed(t), UpsampleCache::Transposed(x)) => t.backward(x, dy),
            (Upsample::NearestConv(c), UpsampleCache::NearestConv(up)) => {
                ops::upsample_nearest2x_backward(&c.backward(up, dy)?)
            }
            _ => unreachable!("cache kind always matches the layer kind"),
        }
    }

    pub fn parameters(&self) -> [&Parameter<T>; 2] {
        match self {
            Upsample::Transposed(t) => [&t.weight, &t.bias],
            Upsample::NearestConv(c) => c.params(),
        }
    }

    pub fn parameters_mut(&mut self) -> [&mut Parameter<T>; 2] {
        match self {
            Upsample::Transposed(t) => [&mut t.weight, &mut t.bias],
            Upsample::NearestConv(c) => c.params_mut(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{compensated_dot, finite_diff_check, GradCheckConfig};

    #[test]
    fn residual_block_with_zero_main_path_is_relu() {
        let mut rng = Rng::new(0);
        let mut block = ConvBlock::<f64>::residual("b", 3, 3, true, &mut rng);
        block.conv1.weight.value.fill(0.0);
        block.conv2.weight.value.fill(0.0);
        let s = block.shortcut.as_mut().unwrap();
        s.weight.value.fill(0.0);
        for c in 0..3 {
            s.weight.value.data_mut()[c * 3 + c] = 1.0;
        }
        let x = Tensor::new(vec![2, 3, 4, 4], (0..96).map(|_| rng.normal()).collect()).unwrap();
        let (y, _) = block.forward_train(&x).unwrap();
        assert_eq!(y, ops::relu(&x));
        assert_eq!(block.forward_eval(&x).unwrap(), ops::relu(&x));
    }

    #[test]
    fn zero_input_zero_bias_gives_zero() {
        let mut rng = Rng::new(1);
        let block = ConvBlock::<f64>::residual("b", 2, 4, false, &mut rng);
        let y = block.forward_eval(&Tensor::zeros(&[1, 2, 8, 8])).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
        assert_eq!(y.shape(), &[1, 4, 8, 8]);
    }

    #[test]
    fn channel_mismatch_rejected() {
        let mut rng = Rng::new(1);
        let block = ConvBlock::<f64>::residual("b", 2, 4, true, &mut rng);
        assert!(block.forward_eval(&Tensor::zeros(&[1, 3, 8, 8])).is_err());
    }

    fn block_gradcheck(use_norm: bool, residual: bool) {
        let mut rng = Rng::new(7);
        let mut block = if residual {
            ConvBlock::<f64>::residual("b", 2, 3, use_norm, &mut rng)
        } else {
            ConvBlock::<f64>::plain("b", 2, 3, use_norm, &mut rng)
        };
        let x = Tensor::new(vec![2, 2, 6, 6], (0..144).map(|_| rng.normal()).collect()).unwrap();
        let r = Tensor::new(vec![2, 3, 6, 6], (0..216).map(|_| rng.normal()).collect()).unwrap();
        let (_, cache) = block.forward_train(&x).unwrap();
        let dx = block.backward(&cache, &r).unwrap();
        let mut inputs = vec![("x", x)];
        let mut analytic = vec![dx];
        for p in block.parameters() {
            inputs.push((p.name.as_str(), p.value.clone()));
            analytic.push(p.grad.clone());
        }
        let template = block.clone();
        let report = finite_diff_check(
            |xs| {
                let mut b = template.clone();
                for (p, v) in b.parameters_mut().into_iter().zip(&xs[1..]) {
                    p.value = v.clone();
                }
                compensated_dot(&b.forward_train(&xs[0])?.0, &r)
            },
            &inputs,
            &analytic,
            &GradCheckConfig::default(),
            None,
        )
        .unwrap();
        assert!(report.passed(), "{report:#?}");
    }

    #[test]
    fn residual_block_gradients_with_norm() {
        block_gradcheck(true, true);
    }

    #[test]
    fn residual_block_gradients_without_norm() {
        block_gradcheck(false, true);
    }

    #[test]
    fn plain_block_gradients() {
        block_gradcheck(true, false);
    }
}
