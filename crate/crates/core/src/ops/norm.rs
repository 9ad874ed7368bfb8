use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const BATCHNORM_EPS: f64 = 1e-5;
/// Weight of the current batch in the running-statistics update.
pub const BATCHNORM_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-channel running mean and variance used in eval mode.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Tensor<T>,
    pub var: Tensor<T>,
}

impl<T: Scalar> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        RunningStats { mean: Tensor::zeros(&[channels]), var: Tensor::full(&[channels], T::one()) }
    }
}

/// Values saved by the forward pass for [`batchnorm2d_backward`].
#[derive(Debug, Clone)]
pub struct BatchNormCache<T> {
    x_hat: Tensor<T>,
    inv_std: Vec<T>,
    mode: Mode,
}

#[derive(Debug, Clone)]
pub struct BatchNormGrads<T> {
    pub input: Tensor<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

/// Batch normalization over `N x H x W` for each channel.
///
/// Train mode normalizes with the batch statistics (biased variance) and
/// folds them into `stats` (unbiased variance); eval mode uses `stats`.
pub fn batchnorm2d<T: Scalar>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    stats: &mut RunningStats<T>,
    mode: Mode,
) -> Result<(Tensor<T>, BatchNormCache<T>)> {
    let (n, c, h, w) = input.dims4()?;
    for (name, t) in [("gamma", gamma), ("beta", beta), ("running mean", &stats.mean), ("running var", &stats.var)] {
        if t.len() != c {
            return Err(Error::shape(format!(
                "batchnorm2d: {name} {:?} does not match {c} channels of {:?}",
                t.shape(),
                input.shape()
            )));
        }
    }
    let m = n * h * w;
    if mode == Mode::Train && m < 2 {
        return Err(Error::invalid(format!(
            "batchnorm2d: train mode needs more than one value per channel, input {:?}",
            input.shape()
        )));
    }
    let hw = h * w;
    let eps = T::from_f64_lossy(BATCHNORM_EPS);
    let mut x_hat = Tensor::zeros(input.shape());
    let mut out = Tensor::zeros(input.shape());
    let mut inv_stds = Vec::with_capacity(c);
    let x = input.data();
    for ch in 0..c {
        let (mean, var) = match mode {
            Mode::Train => {
                let mut sum = T::zero();
                for s in 0..n {
                    sum += x[(s * c + ch) * hw..(s * c + ch + 1) * hw].iter().copied().sum();
                }
                let mean = sum / T::from_usize(m).unwrap();
                let mut sq = T::zero();
                for s in 0..n {
                    for &v in &x[(s * c + ch) * hw..(s * c + ch + 1) * hw] {
                        sq += (v - mean) * (v - mean);
                    }
                }
                let var = sq / T::from_usize(m).unwrap();
                let mom = T::from_f64_lossy(BATCHNORM_MOMENTUM);
                let unbiased = sq / T::from_usize(m - 1).unwrap();
                let rm = &mut stats.mean.data_mut()[ch];
                *rm = (T::one() - mom) * *rm + mom * mean;
                let rv = &mut stats.var.data_mut()[ch];
                *rv = (T::one() - mom) * *rv + mom * unbiased;
                (mean, var)
            }
            Mode::Eval => (stats.mean.data()[ch], stats.var.data()[ch]),
        };
        let inv_std = T::one() / (var + eps).sqrt();
        inv_stds.push(inv_std);
        let (g, b) = (gamma.data()[ch], beta.data()[ch]);
        for s in 0..n {
            let range = (s * c + ch) * hw..(s * c + ch + 1) * hw;
            for i in range {
                let xh = (x[i] - mean) * inv_std;
                x_hat.data_mut()[i] = xh;
                out.data_mut()[i] = g * xh + b;
            }
        }
    }
    Ok((out, BatchNormCache { x_hat, inv_std: inv_stds, mode }))
}

pub fn batchnorm2d_backward<T: Scalar>(
    cache: &BatchNormCache<T>,
    gamma: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<BatchNormGrads<T>> {
    if grad_out.shape() != cache.x_hat.shape() {
        return Err(Error::shape(format!(
            "batchnorm2d backward: upstream gradient {:?} does not match {:?}",
            grad_out.shape(),
            cache.x_hat.shape()
        )));
    }
    let (n, c, h, w) = grad_out.dims4()?;
    let hw = h * w;
    let m = T::from_usize(n * hw).unwrap();
    let dy = grad_out.data();
    let xh = cache.x_hat.data();
    let mut dx = Tensor::zeros(grad_out.shape());
    let mut dgamma = Tensor::zeros(&[c]);
    let mut dbeta = Tensor::zeros(&[c]);
    for ch in 0..c {
        let planes = || (0..n).flat_map(move |s| (s * c + ch) * hw..(s * c + ch + 1) * hw);
        let mut sum_dy = T::zero();
        let mut sum_dy_xh = T::zero();
        for i in planes() {
            sum_dy += dy[i];
            sum_dy_xh += dy[i] * xh[i];
        }
        dgamma.data_mut()[ch] = sum_dy_xh;
        dbeta.data_mut()[ch] = sum_dy;
        let g = gamma.data()[ch];
        let inv_std = cache.inv_std[ch];
        let d = dx.data_mut();
        match cache.mode {
            Mode::Train => {
                let k = g * inv_std / m;
                for i in planes() {
                    d[i] = k * (m * dy[i] - sum_dy - xh[i] * sum_dy_xh);
                }
            }
            Mode::Eval => {
                for i in planes() {
                    d[i] = g * inv_std * dy[i];
                }
            }
        }
    }
    Ok(BatchNormGrads { input: dx, gamma: dgamma, beta: dbeta })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = Rng::new(seed);
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| 3.0 + 2.0 * rng.normal()).collect()).unwrap()
    }

    fn channel_moments(t: &Tensor<f64>, ch: usize) -> (f64, f64) {
        let (n, _, _, _) = t.dims4().unwrap();
        let vals: Vec<f64> = (0..n).flat_map(|s| t.plane(s, ch).to_vec()).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        (mean, var)
    }

    #[test]
    fn train_mode_standardizes_each_channel() {
        let x = random(&[3, 4, 5, 5], 1);
        let mut stats = RunningStats::new(4);
        let (y, _) = batchnorm2d(&x, &Tensor::full(&[4], 1.0), &Tensor::zeros(&[4]), &mut stats, Mode::Train).unwrap();
        for ch in 0..4 {
            let (mean, var) = channel_moments(&y, ch);
            assert!(mean.abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn standardized_input_passes_through() {
        let x = random(&[2, 2, 4, 4], 2);
        let mut stats = RunningStats::new(2);
        let ones = Tensor::full(&[2], 1.0);
        let zeros = Tensor::zeros(&[2]);
        let (y, _) = batchnorm2d(&x, &ones, &zeros, &mut stats, Mode::Train).unwrap();
        let (z, _) = batchnorm2d(&y, &ones, &zeros, &mut stats, Mode::Train).unwrap();
        assert!(y.max_abs_diff(&z) < 1e-4);
    }

    #[test]
    fn single_value_per_channel_rejected_in_train_mode() {
        let x = Tensor::<f64>::zeros(&[1, 3, 1, 1]);
        let mut stats = RunningStats::new(3);
        let r = batchnorm2d(&x, &Tensor::full(&[3], 1.0), &Tensor::zeros(&[3]), &mut stats, Mode::Train);
        assert!(r.is_err());
        // eval mode is fine
        assert!(batchnorm2d(&x, &Tensor::full(&[3], 1.0), &Tensor::zeros(&[3]), &mut stats, Mode::Eval).is_ok());
    }

    #[test]
    fn eval_mode_uses_running_stats() {
        let x = Tensor::<f64>::from_f64(&[1, 1, 1, 2], &[3.0, 5.0]).unwrap();
        let mut stats = RunningStats { mean: Tensor::from_f64(&[1], &[1.0]).unwrap(), var: Tensor::from_f64(&[1], &[4.0]).unwrap() };
        let (y, _) = batchnorm2d(&x, &Tensor::full(&[1], 1.0), &Tensor::zeros(&[1]), &mut stats, Mode::Eval).unwrap();
        let s = (4.0 + BATCHNORM_EPS).sqrt();
        assert!((y.data()[0] - 2.0 / s).abs() < 1e-12);
        assert!((y.data()[1] - 4.0 / s).abs() < 1e-12);
    }

    #[test]
    fn running_stats_follow_momentum() {
        let x = Tensor::<f64>::from_f64(&[1, 1, 1, 2], &[1.0, 3.0]).unwrap();
        let mut stats = RunningStats::new(1);
        batchnorm2d(&x, &Tensor::full(&[1], 1.0), &Tensor::zeros(&[1]), &mut stats, Mode::Train).unwrap();
        assert!((stats.mean.data()[0] - 0.2).abs() < 1e-12);
        // unbiased batch variance is 2
        assert!((stats.var.data()[0] - (0.9 + 0.2)).abs() < 1e-12);
    }
}
