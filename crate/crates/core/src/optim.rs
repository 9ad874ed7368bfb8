//! Trainable parameters and the ADAM optimizer.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// A trainable tensor with its gradient accumulator and ADAM moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub m: Tensor<T>,
    pub v: Tensor<T>,
    pub step_count: u64,
}

impl<T: Scalar> Parameter<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        let shape = value.shape().to_vec();
        Parameter {
            name: name.into(),
            grad: Tensor::zeros(&shape),
            m: Tensor::zeros(&shape),
            v: Tensor::zeros(&shape),
            value,
            step_count: 0,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }

    pub fn accumulate(&mut self, grad: &Tensor<T>) -> Result<()> {
        self.grad.add_assign(grad).map_err(|e| Error::shape(format!("parameter {}: {e}", self.name)))
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { learning_rate: 0.0005, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// One bias-corrected ADAM update of every parameter, followed by zeroing
/// the gradients.
///
/// All gradients are validated before anything is modified: a non-finite
/// gradient fails the step, naming the parameter, and leaves every
/// parameter untouched.
pub fn adam_step<'a, T: Scalar>(
    params: impl IntoIterator<Item = &'a mut Parameter<T>>,
    cfg: &AdamConfig,
) -> Result<()> {
    let mut params: Vec<&mut Parameter<T>> = params.into_iter().collect();
    if let Some(bad) = params.iter().find(|p| !p.grad.is_finite()) {
        return Err(Error::NonFinite(format!("gradient of parameter {}", bad.name)));
    }
    let b1 = T::from_f64_lossy(cfg.beta1);
    let b2 = T::from_f64_lossy(cfg.beta2);
    let eps = T::from_f64_lossy(cfg.eps);
    let lr = T::from_f64_lossy(cfg.learning_rate);
    for p in params.iter_mut() {
        p.step_count += 1;
        let t = p.step_count as i32;
        let c1 = T::one() - T::from_f64_lossy(cfg.beta1.powi(t));
        let c2 = T::one() - T::from_f64_lossy(cfg.beta2.powi(t));
        let Parameter { value, grad, m, v, .. } = &mut **p;
        for (((x, &g), mi), vi) in value
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(m.data_mut().iter_mut())
            .zip(v.data_mut().iter_mut())
        {
            *mi = b1 * *mi + (T::one() - b1) * g;
            *vi = b2 * *vi + (T::one() - b2) * g * g;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *x -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        grad.fill(T::zero());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn param(vals: &[f64]) -> Parameter<f64> {
        Parameter::new("w", Tensor::from_f64(&[vals.len()], vals).unwrap())
    }

    #[test]
    fn zero_gradient_leaves_value_and_counts_step() {
        let mut p = param(&[1.0, -2.0]);
        adam_step([&mut p], &AdamConfig::default()).unwrap();
        assert_eq!(p.value.data(), &[1.0, -2.0]);
        assert_eq!(p.step_count, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = param(&[0.0]);
        p.grad.data_mut()[0] = 1.0;
        adam_step([&mut p], &AdamConfig::default()).unwrap();
        assert!((p.value.data()[0] + 0.0005).abs() < 1e-10);
        assert_eq!(p.grad.data(), &[0.0]);
    }

    #[test]
    fn identical_inputs_identical_trajectories() {
        let mut a = param(&[0.3, -0.1, 2.0]);
        let mut b = a.clone();
        for step in 0..50 {
            let g = [(step as f64).sin(), 0.5, -(step as f64) * 1e-3];
            a.grad.data_mut().copy_from_slice(&g);
            b.grad.data_mut().copy_from_slice(&g);
            adam_step([&mut a], &AdamConfig::default()).unwrap();
            adam_step([&mut b], &AdamConfig::default()).unwrap();
        }
        let bits = |p: &Parameter<f64>| p.value.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn nan_gradient_names_parameter_and_updates_nothing() {
        let mut good = param(&[1.0]);
        good.grad.data_mut()[0] = 1.0;
        let mut bad = Parameter::new("decoder.0.conv1.weight", Tensor::from_f64(&[1], &[1.0]).unwrap());
        bad.grad.data_mut()[0] = f64::NAN;
        let err = adam_step([&mut good, &mut bad], &AdamConfig::default()).unwrap_err();
        assert!(err.to_string().contains("decoder.0.conv1.weight"));
        assert_eq!(good.value.data(), &[1.0]);
        assert_eq!(good.step_count, 0);
    }

    proptest! {
        #[test]
        fn zero_gradient_is_value_noop_from_fresh_moments(
            lr in 0.0f64..1.0, b1 in 0.0f64..0.999, b2 in 0.0f64..0.9999, eps in 1e-12f64..1e-2,
            vals in proptest::collection::vec(-10.0f64..10.0, 1..8),
        ) {
            let mut p = param(&vals);
            adam_step([&mut p], &AdamConfig { learning_rate: lr, beta1: b1, beta2: b2, eps }).unwrap();
            prop_assert_eq!(p.value.data(), &vals[..]);
        }
    }
}
