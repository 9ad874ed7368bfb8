//! Whole-network gradient check.

use crate::error::{Error, Result};
use crate::gradcheck::{finite_diff_check, GradCheckConfig, GradCheckReport};
use crate::model::{Network, NetworkConfig};
use crate::ops;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Largest `|logit difference|` allowed at the check point.
const MAX_LOGIT_SPREAD: f64 = 4.0;

#[derive(Debug, Clone)]
pub struct NetworkCheck {
    pub report: GradCheckReport,
    /// Smallest class probability at the check point.
    pub min_probability: f64,
}

/// Checks input and parameter gradients of a freshly built network on a
/// random `1 x in_channels x size x size` input with random binary labels,
/// through the train-mode forward pass and the cross-entropy loss.
///
/// Unnormalized residual shortcuts can leave He-initialized networks with
/// logits large enough that softmax rounds to exactly 0 or 1, where the
/// probability clamp flattens the loss. The head weights are therefore
/// scaled down until the logit spread is at most 4 before probing.
pub fn check_network_gradients(config: &NetworkConfig, size: usize, cfg: &GradCheckConfig) -> Result<NetworkCheck> {
    if config.num_classes != 2 {
        return Err(Error::Config("network gradient check expects two classes".into()));
    }
    let mut rng = Rng::new(cfg.seed);
    let mut net = Network::<f64>::build(config, &mut rng)?;
    let n = config.in_channels * size * size;
    let x = Tensor::new(vec![1, config.in_channels, size, size], (0..n).map(|_| rng.normal()).collect())?;
    let labels: Vec<u8> = (0..size * size).map(|_| rng.index(2) as u8).collect();
    let y: Tensor<f64> = ops::one_hot(&labels, 1, 2, size, size)?;

    let head = net.parameters().len() - 2;
    let probs = net.clone().forward_train(&x)?.probs;
    let spread = probs.data().iter().map(|p| (p / (1.0 - p)).ln().abs()).fold(0.0, f64::max);
    let shrink = (MAX_LOGIT_SPREAD / spread).min(1.0);
    let scaled = net.parameters()[head].value.map(|w| w * shrink);
    net.parameters_mut()[head].value = scaled;

    net.zero_grad();
    let cache = net.forward_train(&x)?;
    let min_probability = cache.probs.data().iter().cloned().fold(1.0, f64::min);
    let d_logits = ops::softmax_cross_entropy_backward(&cache.probs, &y)?;
    let dx = net.backward(&cache, &d_logits)?;

    let mut named: Vec<(&str, Tensor<f64>)> = vec![("input", x)];
    let mut analytic = vec![dx];
    let params = net.parameters();
    for p in &params {
        named.push((p.name.as_str(), p.value.clone()));
        analytic.push(p.grad.clone());
    }
    let report = finite_diff_check(
        |xs| {
            let mut n = net.clone();
            for (p, v) in n.parameters_mut().into_iter().zip(&xs[1..]) {
                p.value = v.clone();
            }
            let probs = n.forward_train(&xs[0])?.probs;
            ops::categorical_cross_entropy(&probs, &y)
        },
        &named,
        &analytic,
        cfg,
        None,
    )?;
    Ok(NetworkCheck { report, min_probability })
}
