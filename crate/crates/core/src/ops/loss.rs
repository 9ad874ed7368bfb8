use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Lower bound applied to probabilities before taking the log.
pub const PROB_CLAMP: f64 = 1e-12;

/// Softmax over the channel axis of an `N x C x H x W` tensor, per pixel,
/// stabilized by subtracting the per-pixel maximum.
pub fn softmax_channels<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = logits.dims4()?;
    let hw = h * w;
    let mut out = Tensor::zeros(logits.shape());
    let x = logits.data();
    let y = out.data_mut();
    for s in 0..n {
        let base = s * c * hw;
        for p in 0..hw {
            let mut max = T::neg_infinity();
            for ch in 0..c {
                max = max.max(x[base + ch * hw + p]);
            }
            let mut sum = T::zero();
            for ch in 0..c {
                let e = (x[base + ch * hw + p] - max).exp();
                y[base + ch * hw + p] = e;
                sum += e;
            }
            for ch in 0..c {
                y[base + ch * hw + p] /= sum;
            }
        }
    }
    Ok(out)
}

/// Vector-Jacobian product of softmax: `dx = p * (dy - sum_c p * dy)`.
pub fn softmax_channels_backward<T: Scalar>(prob: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if prob.shape() != grad_out.shape() {
        return Err(Error::shape(format!(
            "softmax backward: {:?} vs {:?}",
            prob.shape(),
            grad_out.shape()
        )));
    }
    let (n, c, h, w) = prob.dims4()?;
    let hw = h * w;
    let mut dx = Tensor::zeros(prob.shape());
    let (p, dy) = (prob.data(), grad_out.data());
    let d = dx.data_mut();
    for s in 0..n {
        let base = s * c * hw;
        for q in 0..hw {
            let dot: T = (0..c).map(|ch| p[base + ch * hw + q] * dy[base + ch * hw + q]).sum();
            for ch in 0..c {
                let i = base + ch * hw + q;
                d[i] = p[i] * (dy[i] - dot);
            }
        }
    }
    Ok(dx)
}

fn check_one_hot<T: Scalar>(prob: &Tensor<T>, target: &Tensor<T>) -> Result<()> {
    if prob.shape() != target.shape() {
        return Err(Error::shape(format!(
            "cross entropy: prediction {:?} and target {:?} differ",
            prob.shape(),
            target.shape()
        )));
    }
    let (n, c, h, w) = target.dims4()?;
    let hw = h * w;
    let t = target.data();
    for s in 0..n {
        for q in 0..hw {
            let mut ones = 0;
            for ch in 0..c {
                let v = t[(s * c + ch) * hw + q];
                if v == T::one() {
                    ones += 1;
                } else if v != T::zero() {
                    return Err(Error::invalid(format!(
                        "cross entropy target is not one-hot: value {v} at sample {s}, pixel {q}"
                    )));
                }
            }
            if ones != 1 {
                return Err(Error::invalid(format!(
                    "cross entropy target is not one-hot: {ones} active classes at sample {s}, pixel {q}"
                )));
            }
        }
    }
    Ok(())
}

/// Mean over pixels of `-log(max(p_target, 1e-12))`.
pub fn categorical_cross_entropy<T: Scalar>(prob: &Tensor<T>, one_hot: &Tensor<T>) -> Result<T> {
    check_one_hot(prob, one_hot)?;
    let (n, _, h, w) = prob.dims4()?;
    let clamp = T::from_f64_lossy(PROB_CLAMP);
    let total: T = prob
        .data()
        .iter()
        .zip(one_hot.data())
        .filter(|(_, &t)| t == T::one())
        .map(|(&p, _)| -(p.max(clamp)).ln())
        .sum();
    Ok(total / T::from_usize(n * h * w).unwrap())
}

/// Gradient of [`categorical_cross_entropy`] with respect to the probabilities.
pub fn categorical_cross_entropy_backward<T: Scalar>(prob: &Tensor<T>, one_hot: &Tensor<T>) -> Result<Tensor<T>> {
    check_one_hot(prob, one_hot)?;
    let (n, _, h, w) = prob.dims4()?;
    let m = T::from_usize(n * h * w).unwrap();
    let clamp = T::from_f64_lossy(PROB_CLAMP);
    let data = prob
        .data()
        .iter()
        .zip(one_hot.data())
        .map(|(&p, &t)| if t == T::one() && p > clamp { -T::one() / (p * m) } else { T::zero() })
        .collect();
    Tensor::new(prob.shape().to_vec(), data)
}

/// Gradient of cross entropy composed with softmax, with respect to the
/// logits: `(p - y) / pixels`. Ignores the clamp, which is inactive
/// whenever `p_target > 1e-12`.
pub fn softmax_cross_entropy_backward<T: Scalar>(prob: &Tensor<T>, one_hot: &Tensor<T>) -> Result<Tensor<T>> {
    check_one_hot(prob, one_hot)?;
    let (n, _, h, w) = prob.dims4()?;
    let m = T::from_usize(n * h * w).unwrap();
    let data = prob.data().iter().zip(one_hot.data()).map(|(&p, &t)| (p - t) / m).collect();
    Tensor::new(prob.shape().to_vec(), data)
}

/// One-hot encode per-pixel class indices laid out `N x H x W`.
pub fn one_hot<T: Scalar>(labels: &[u8], n: usize, classes: usize, h: usize, w: usize) -> Result<Tensor<T>> {
    if labels.len() != n * h * w {
        return Err(Error::shape(format!(
            "one_hot: {} labels for an {n} x {h} x {w} batch",
            labels.len()
        )));
    }
    let hw = h * w;
    let mut t = Tensor::zeros(&[n, classes, h, w]);
    let d = t.data_mut();
    for s in 0..n {
        for q in 0..hw {
            let cls = labels[s * hw + q] as usize;
            if cls >= classes {
                return Err(Error::invalid(format!("one_hot: label {cls} outside {classes} classes")));
            }
            d[(s * classes + cls) * hw + q] = T::one();
        }
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn symmetric_logits_give_half() {
        let p = softmax_channels(&Tensor::<f64>::zeros(&[1, 2, 1, 1])).unwrap();
        assert_eq!(p.data(), &[0.5, 0.5]);
    }

    #[test]
    fn probabilities_sum_to_one_even_for_large_logits() {
        let mut rng = Rng::new(4);
        let vals: Vec<f64> = (0..3 * 4 * 9).map(|_| 500.0 * rng.normal()).collect();
        let p = softmax_channels(&Tensor::<f64>::from_f64(&[3, 4, 3, 3], &vals).unwrap()).unwrap();
        for s in 0..3 {
            for q in 0..9 {
                let sum: f64 = (0..4).map(|c| p.plane(s, c)[q]).sum();
                assert!((sum - 1.0).abs() < 1e-6);
            }
        }
        assert!(p.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn perfect_prediction_has_zero_loss() {
        let t = one_hot::<f64>(&[0, 1, 1, 0], 1, 2, 2, 2).unwrap();
        assert!(categorical_cross_entropy(&t, &t).unwrap() <= 1e-9);
    }

    #[test]
    fn uniform_prediction_costs_ln2() {
        let t = one_hot::<f64>(&[0, 1, 1, 0], 1, 2, 2, 2).unwrap();
        let p = Tensor::full(&[1, 2, 2, 2], 0.5);
        let loss = categorical_cross_entropy(&p, &t).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn non_one_hot_target_rejected() {
        let p = Tensor::<f64>::full(&[1, 2, 1, 1], 0.5);
        let both = Tensor::full(&[1, 2, 1, 1], 1.0);
        let half = Tensor::full(&[1, 2, 1, 1], 0.5);
        assert!(categorical_cross_entropy(&p, &both).is_err());
        assert!(categorical_cross_entropy(&p, &half).is_err());
    }

    #[test]
    fn fused_gradient_matches_chain_rule() {
        let mut rng = Rng::new(13);
        let vals: Vec<f64> = (0..2 * 3 * 4).map(|_| rng.normal()).collect();
        let p = softmax_channels(&Tensor::<f64>::from_f64(&[2, 3, 2, 2], &vals).unwrap()).unwrap();
        let labels: Vec<u8> = (0..8).map(|i| (i % 3) as u8).collect();
        let t = one_hot(&labels, 2, 3, 2, 2).unwrap();
        let chained = softmax_channels_backward(&p, &categorical_cross_entropy_backward(&p, &t).unwrap()).unwrap();
        let fused = softmax_cross_entropy_backward(&p, &t).unwrap();
        assert!(chained.max_abs_diff(&fused) < 1e-14);
    }
}
