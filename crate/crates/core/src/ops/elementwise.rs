use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Subgradient at 0 is taken as 0.
pub fn relu_backward<T: Scalar>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape(input, grad_out, "relu backward")?;
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::new(input.shape().to_vec(), data)
}

fn same_shape<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, op: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!("{op}: shapes {:?} and {:?} differ", a.shape(), b.shape())));
    }
    Ok(())
}

/// Elementwise sum of two tensors of identical shape. No broadcasting.
pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape(a, b, "add")?;
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
    Tensor::new(a.shape().to_vec(), data)
}

/// Stack along the channel axis, channels of `a` first.
pub fn concat_channels<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (na, ca, ha, wa) = a.dims4()?;
    let (nb, cb, hb, wb) = b.dims4()?;
    if (na, ha, wa) != (nb, hb, wb) {
        return Err(Error::shape(format!(
            "concat_channels: {:?} and {:?} differ outside the channel axis",
            a.shape(),
            b.shape()
        )));
    }
    let hw = ha * wa;
    let mut data = Vec::with_capacity(a.len() + b.len());
    for s in 0..na {
        data.extend_from_slice(&a.data()[s * ca * hw..(s + 1) * ca * hw]);
        data.extend_from_slice(&b.data()[s * cb * hw..(s + 1) * cb * hw]);
    }
    Tensor::new(vec![na, ca + cb, ha, wa], data)
}

/// Inverse of [`concat_channels`]: first `first` channels, then the rest.
pub fn split_channels<T: Scalar>(x: &Tensor<T>, first: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    let (n, c, h, w) = x.dims4()?;
    if first == 0 || first >= c {
        return Err(Error::shape(format!("split_channels: cannot split {:?} at channel {first}", x.shape())));
    }
    let hw = h * w;
    let mut a = Vec::with_capacity(n * first * hw);
    let mut b = Vec::with_capacity(n * (c - first) * hw);
    for s in 0..n {
        let sample = &x.data()[s * c * hw..(s + 1) * c * hw];
        a.extend_from_slice(&sample[..first * hw]);
        b.extend_from_slice(&sample[first * hw..]);
    }
    Ok((Tensor::new(vec![n, first, h, w], a)?, Tensor::new(vec![n, c - first, h, w], b)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn relu_values() {
        let x = Tensor::<f64>::from_f64(&[3], &[-3.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        let g = relu_backward(&x, &Tensor::full(&[3], 1.0)).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn add_zero_is_identity_and_mismatch_rejected() {
        let x = Tensor::<f64>::from_f64(&[1, 1, 2, 2], &[1., -2., 3., 4.]).unwrap();
        assert_eq!(add(&x, &Tensor::zeros(&[1, 1, 2, 2])).unwrap(), x);
        assert!(add(&x, &Tensor::zeros(&[1, 2, 2, 1])).is_err());
    }

    #[test]
    fn concat_orders_first_argument_first() {
        let a = Tensor::<f64>::from_f64(&[1, 1, 2, 2], &[1., 2., 3., 4.]).unwrap();
        let b = Tensor::<f64>::from_f64(&[1, 1, 2, 2], &[5., 6., 7., 8.]).unwrap();
        let c = concat_channels(&a, &b).unwrap();
        assert_eq!(c.shape(), &[1, 2, 2, 2]);
        assert_eq!(c.data(), &[1., 2., 3., 4., 5., 6., 7., 8.]);
        let (x, y) = split_channels(&c, 1).unwrap();
        assert_eq!((x, y), (a, b));
        assert!(concat_channels(&Tensor::<f64>::zeros(&[1, 1, 2, 2]), &Tensor::zeros(&[1, 1, 2, 3])).is_err());
    }

    proptest! {
        #[test]
        fn add_commutes(vals in proptest::collection::vec(-1e3f64..1e3, 24), other in proptest::collection::vec(-1e3f64..1e3, 24)) {
            let a = Tensor::<f64>::from_f64(&[2, 3, 2, 2], &vals).unwrap();
            let b = Tensor::from_f64(&[2, 3, 2, 2], &other).unwrap();
            prop_assert_eq!(add(&a, &b).unwrap(), add(&b, &a).unwrap());
        }
    }
}
