use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Result of [`maxpool2x2`]: pooled values plus, for every output element,
/// the flat index of the input element it was taken from.
#[derive(Debug, Clone)]
pub struct MaxPoolOutput<T> {
    pub output: Tensor<T>,
    pub argmax: Vec<usize>,
}

/// 2x2 max pooling with stride 2.
///
/// Ties go to the lowest flat index inside the block, so the backward pass
/// routes the whole upstream gradient to a single, deterministic position.
pub fn maxpool2x2<T: Scalar>(input: &Tensor<T>) -> Result<MaxPoolOutput<T>> {
    let (n, c, h, w) = input.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(format!(
            "maxpool2x2 needs even spatial dims, got {:?}",
            input.shape()
        )));
    }
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Tensor::zeros(&[n, c, ho, wo]);
    let mut argmax = Vec::with_capacity(n * c * ho * wo);
    let src = input.data();
    let dst = out.data_mut();
    let mut o = 0;
    for plane in 0..n * c {
        let base = plane * h * w;
        for i in 0..ho {
            for j in 0..wo {
                let top = base + 2 * i * w + 2 * j;
                let mut best = top;
                for idx in [top + 1, top + w, top + w + 1] {
                    if src[idx] > src[best] {
                        best = idx;
                    }
                }
                dst[o] = src[best];
                argmax.push(best);
                o += 1;
            }
        }
    }
    Ok(MaxPoolOutput { output: out, argmax })
}

pub fn maxpool2x2_backward<T: Scalar>(
    input_shape: &[usize],
    argmax: &[usize],
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    if grad_out.len() != argmax.len() {
        return Err(Error::shape(format!(
            "maxpool backward: upstream gradient {:?} does not match {} pooled positions",
            grad_out.shape(),
            argmax.len()
        )));
    }
    let mut dx = Tensor::zeros(input_shape);
    let d = dx.data_mut();
    for (&idx, &g) in argmax.iter().zip(grad_out.data()) {
        d[idx] += g;
    }
    Ok(dx)
}

/// Nearest-neighbour 2x upsampling (each value copied into a 2x2 block).
pub fn upsample_nearest2x<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = input.dims4()?;
    let mut out = Tensor::zeros(&[n, c, 2 * h, 2 * w]);
    let src = input.data();
    let dst = out.data_mut();
    for plane in 0..n * c {
        for i in 0..2 * h {
            for j in 0..2 * w {
                dst[plane * 4 * h * w + i * 2 * w + j] = src[plane * h * w + (i / 2) * w + j / 2];
            }
        }
    }
    Ok(out)
}

pub fn upsample_nearest2x_backward<T: Scalar>(grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h2, w2) = grad_out.dims4()?;
    if h2 % 2 != 0 || w2 % 2 != 0 {
        return Err(Error::shape(format!(
            "upsample backward: gradient {:?} has odd spatial dims",
            grad_out.shape()
        )));
    }
    let (h, w) = (h2 / 2, w2 / 2);
    let mut dx = Tensor::zeros(&[n, c, h, w]);
    let src = grad_out.data();
    let dst = dx.data_mut();
    for plane in 0..n * c {
        for i in 0..h2 {
            for j in 0..w2 {
                dst[plane * h * w + (i / 2) * w + j / 2] += src[plane * h2 * w2 + i * w2 + j];
            }
        }
    }
    Ok(dx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn max_of_block() {
        let x = Tensor::<f64>::from_f64(&[1, 1, 2, 2], &[1., 2., 3., 4.]).unwrap();
        let p = maxpool2x2(&x).unwrap();
        assert_eq!(p.output.data(), &[4.0]);
        assert_eq!(p.argmax, vec![3]);
    }

    #[test]
    fn constant_input_stays_constant() {
        let x = Tensor::<f64>::full(&[2, 3, 4, 6], 1.25);
        let p = maxpool2x2(&x).unwrap();
        assert_eq!(p.output.shape(), &[2, 3, 2, 3]);
        assert!(p.output.data().iter().all(|&v| v == 1.25));
    }

    #[test]
    fn odd_dims_rejected() {
        assert!(maxpool2x2(&Tensor::<f64>::zeros(&[1, 1, 3, 4])).is_err());
        assert!(maxpool2x2(&Tensor::<f64>::zeros(&[1, 1, 4, 5])).is_err());
    }

    #[test]
    fn ties_route_to_lowest_flat_index() {
        // Enumerate every tie pattern of a 2x2 block over {0, 1} values.
        for bits in 0u32..16 {
            let vals: Vec<f64> = (0..4).map(|b| ((bits >> b) & 1) as f64).collect();
            let x = Tensor::<f64>::from_f64(&[1, 1, 2, 2], &vals).unwrap();
            let p = maxpool2x2(&x).unwrap();
            let max = vals.iter().cloned().fold(f64::MIN, f64::max);
            let first = vals.iter().position(|&v| v == max).unwrap();
            let dy = Tensor::<f64>::from_f64(&[1, 1, 1, 1], &[1.0]).unwrap();
            let dx = maxpool2x2_backward(x.shape(), &p.argmax, &dy).unwrap();
            let expected: Vec<f64> = (0..4).map(|i| if i == first { 1.0 } else { 0.0 }).collect();
            assert_eq!(dx.data(), &expected[..], "pattern {vals:?}");
        }
    }

    #[test]
    fn nearest_upsample_and_adjoint() {
        let x = Tensor::<f64>::from_f64(&[1, 1, 1, 2], &[1., 2.]).unwrap();
        let y = upsample_nearest2x(&x).unwrap();
        assert_eq!(y.data(), &[1., 1., 2., 2., 1., 1., 2., 2.]);
        let g = upsample_nearest2x_backward(&Tensor::full(&[1, 1, 2, 4], 1.0)).unwrap();
        assert_eq!(g.data(), &[4., 4.]);
    }
}
