//! 2D convolution and transposed convolution via im2col + GEMM.
//!
//! Convolutions use the cross-correlation convention: the kernel is not
//! flipped, `y[co, i, j] = b[co] + sum x[ci, i*s + u - p, j*s + v - p] * w[co, ci, u, v]`.
//! Weights saved by this crate can be loaded by any framework with the same
//! convention (PyTorch, Keras).

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Gradients of a convolution with respect to each of its inputs.
#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn conv_output_dim(size: usize, k: usize, stride: usize, pad: usize) -> usize {
    (size + 2 * pad - k) / stride + 1
}

/// Unfold one `C x H x W` image into a `(C*k*k) x (ho*wo)` matrix.
#[allow(clippy::too_many_arguments)]
fn im2col<T: Scalar>(
    x: &[T],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
    cols: &mut [T],
) {
    let p = ho * wo;
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..ho {
                    let out = &mut dst[oy * wo..(oy + 1) * wo];
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        out.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, o) in out.iter_mut().enumerate() {
                        let ix = (ox * stride + kj) as isize - pad as isize;
                        *o = if ix < 0 || ix >= w as isize { T::zero() } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: fold columns back, accumulating overlaps into `x`.
#[allow(clippy::too_many_arguments)]
fn col2im<T: Scalar>(
    cols: &[T],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
    x: &mut [T],
) {
    let p = ho * wo;
    for ci in 0..c {
        let plane = &mut x[ci * h * w..(ci + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..ho {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..wo {
                        let ix = (ox * stride + kj) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

struct ConvGeom {
    n: usize,
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    k: usize,
    ho: usize,
    wo: usize,
}

fn conv_geometry<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<ConvGeom> {
    let (n, cin, h, w) = input.dims4()?;
    let (cout, wcin, kh, kw) = weight.dims4()?;
    if wcin != cin {
        return Err(Error::shape(format!(
            "conv2d: input {:?} has {cin} channels but weight {:?} expects {wcin}",
            input.shape(),
            weight.shape()
        )));
    }
    if kh != kw {
        return Err(Error::shape(format!("conv2d: kernel must be square, weight {:?}", weight.shape())));
    }
    if stride == 0 {
        return Err(Error::invalid("conv2d: stride must be at least 1"));
    }
    if h + 2 * padding < kh || w + 2 * padding < kw {
        return Err(Error::shape(format!(
            "conv2d: padded input {:?} (padding {padding}) smaller than kernel {:?}",
            input.shape(),
            weight.shape()
        )));
    }
    Ok(ConvGeom {
        n,
        cin,
        cout,
        h,
        w,
        k: kh,
        ho: conv_output_dim(h, kh, stride, padding),
        wo: conv_output_dim(w, kw, stride, padding),
    })
}

fn check_bias<T: Scalar>(bias: Option<&Tensor<T>>, channels: usize, op: &str) -> Result<()> {
    match bias {
        Some(b) if b.len() != channels => Err(Error::shape(format!(
            "{op}: bias {:?} does not match {channels} output channels",
            b.shape()
        ))),
        _ => Ok(()),
    }
}

/// Zero-padded 2D cross-correlation.
///
/// `input` is `N x Cin x H x W`, `weight` is `Cout x Cin x k x k`, `bias`
/// has `Cout` entries. Output is `N x Cout x H' x W'` with
/// `H' = (H + 2*padding - k) / stride + 1`.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let g = conv_geometry(input, weight, stride, padding)?;
    check_bias(bias, g.cout, "conv2d")?;
    let kk = g.cin * g.k * g.k;
    let p = g.ho * g.wo;
    let direct = g.k == 1 && stride == 1 && padding == 0;
    let mut cols = if direct { Vec::new() } else { vec![T::zero(); kk * p] };
    let mut out = Tensor::zeros(&[g.n, g.cout, g.ho, g.wo]);
    let in_len = g.cin * g.h * g.w;
    for s in 0..g.n {
        let x = &input.data()[s * in_len..(s + 1) * in_len];
        let y = &mut out.data_mut()[s * g.cout * p..(s + 1) * g.cout * p];
        if let Some(b) = bias {
            for (co, row) in y.chunks_mut(p).enumerate() {
                row.fill(b.data()[co]);
            }
        }
        let src: &[T] = if direct {
            x
        } else {
            im2col(x, g.cin, g.h, g.w, g.k, stride, padding, g.ho, g.wo, &mut cols);
            &cols
        };
        T::gemm(g.cout, kk, p, T::one(), weight.data(), kk, 1, src, p, 1, T::one(), y, p, 1);
    }
    Ok(out)
}

/// Analytic gradients of [`conv2d`] given the upstream gradient `grad_out`.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    padding: usize,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let g = conv_geometry(input, weight, stride, padding)?;
    if grad_out.shape() != [g.n, g.cout, g.ho, g.wo] {
        return Err(Error::shape(format!(
            "conv2d backward: upstream gradient {:?} does not match output [{}, {}, {}, {}]",
            grad_out.shape(),
            g.n,
            g.cout,
            g.ho,
            g.wo
        )));
    }
    let kk = g.cin * g.k * g.k;
    let p = g.ho * g.wo;
    let direct = g.k == 1 && stride == 1 && padding == 0;
    let mut cols = if direct { Vec::new() } else { vec![T::zero(); kk * p] };
    let mut dcols = vec![T::zero(); kk * p];
    let mut dx = Tensor::zeros(input.shape());
    let mut dw = Tensor::zeros(weight.shape());
    let mut db = Tensor::zeros(&[g.cout]);
    let in_len = g.cin * g.h * g.w;
    for s in 0..g.n {
        let x = &input.data()[s * in_len..(s + 1) * in_len];
        let dy = &grad_out.data()[s * g.cout * p..(s + 1) * g.cout * p];
        for (co, row) in dy.chunks(p).enumerate() {
            db.data_mut()[co] += row.iter().copied().sum();
        }
        let src: &[T] = if direct {
            x
        } else {
            im2col(x, g.cin, g.h, g.w, g.k, stride, padding, g.ho, g.wo, &mut cols);
            &cols
        };
        // dW += dY * cols^T
        T::gemm(g.cout, p, kk, T::one(), dy, p, 1, src, 1, p, T::one(), dw.data_mut(), kk, 1);
        let dxs = &mut dx.data_mut()[s * in_len..(s + 1) * in_len];
        if direct {
            T::gemm(kk, g.cout, p, T::one(), weight.data(), 1, kk, dy, p, 1, T::zero(), dxs, p, 1);
        } else {
            // dcols = W^T * dY
            T::gemm(kk, g.cout, p, T::one(), weight.data(), 1, kk, dy, p, 1, T::zero(), &mut dcols, p, 1);
            col2im(&dcols, g.cin, g.h, g.w, g.k, stride, padding, g.ho, g.wo, dxs);
        }
    }
    Ok(ConvGrads { input: dx, weight: dw, bias: db })
}

struct TransposedGeom {
    n: usize,
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    k: usize,
    ho: usize,
    wo: usize,
}

fn transposed_geometry<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
) -> Result<TransposedGeom> {
    let (n, cin, h, w) = input.dims4()?;
    let (wcin, cout, kh, kw) = weight.dims4()?;
    if wcin != cin {
        return Err(Error::shape(format!(
            "transposed_conv2d: input {:?} has {cin} channels but weight {:?} expects {wcin}",
            input.shape(),
            weight.shape()
        )));
    }
    if kh != kw {
        return Err(Error::shape(format!(
            "transposed_conv2d: kernel must be square, weight {:?}",
            weight.shape()
        )));
    }
    if stride == 0 {
        return Err(Error::invalid("transposed_conv2d: stride must be at least 1"));
    }
    Ok(TransposedGeom {
        n,
        cin,
        cout,
        h,
        w,
        k: kh,
        ho: (h - 1) * stride + kh,
        wo: (w - 1) * stride + kw,
    })
}

/// Transposed convolution without padding, the adjoint of [`conv2d`] with
/// the same weight tensor and stride.
///
/// `input` is `N x Cin x H x W`, `weight` is `Cin x Cout x k x k`. With the
/// default `k = 2, stride = 2` the output is `N x Cout x 2H x 2W`.
pub fn transposed_conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
) -> Result<Tensor<T>> {
    let g = transposed_geometry(input, weight, stride)?;
    check_bias(bias, g.cout, "transposed_conv2d")?;
    let kk = g.cout * g.k * g.k;
    let p = g.h * g.w;
    let mut cols = vec![T::zero(); kk * p];
    let out_len = g.cout * g.ho * g.wo;
    let mut out = Tensor::zeros(&[g.n, g.cout, g.ho, g.wo]);
    for s in 0..g.n {
        let x = &input.data()[s * g.cin * p..(s + 1) * g.cin * p];
        // cols = Wmat^T * X, Wmat is Cin x (Cout*k*k)
        T::gemm(kk, g.cin, p, T::one(), weight.data(), 1, kk, x, p, 1, T::zero(), &mut cols, p, 1);
        let y = &mut out.data_mut()[s * out_len..(s + 1) * out_len];
        col2im(&cols, g.cout, g.ho, g.wo, g.k, stride, 0, g.h, g.w, y);
        if let Some(b) = bias {
            for (co, plane) in y.chunks_mut(g.ho * g.wo).enumerate() {
                let bv = b.data()[co];
                plane.iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    Ok(out)
}

pub fn transposed_conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let g = transposed_geometry(input, weight, stride)?;
    if grad_out.shape() != [g.n, g.cout, g.ho, g.wo] {
        return Err(Error::shape(format!(
            "transposed_conv2d backward: upstream gradient {:?} does not match output [{}, {}, {}, {}]",
            grad_out.shape(),
            g.n,
            g.cout,
            g.ho,
            g.wo
        )));
    }
    let kk = g.cout * g.k * g.k;
    let p = g.h * g.w;
    let out_len = g.cout * g.ho * g.wo;
    let mut cols = vec![T::zero(); kk * p];
    let mut dx = Tensor::zeros(input.shape());
    let mut dw = Tensor::zeros(weight.shape());
    let mut db = Tensor::zeros(&[g.cout]);
    for s in 0..g.n {
        let x = &input.data()[s * g.cin * p..(s + 1) * g.cin * p];
        let dy = &grad_out.data()[s * out_len..(s + 1) * out_len];
        for (co, plane) in dy.chunks(g.ho * g.wo).enumerate() {
            db.data_mut()[co] += plane.iter().copied().sum();
        }
        im2col(dy, g.cout, g.ho, g.wo, g.k, stride, 0, g.h, g.w, &mut cols);
        let dxs = &mut dx.data_mut()[s * g.cin * p..(s + 1) * g.cin * p];
        T::gemm(g.cin, kk, p, T::one(), weight.data(), kk, 1, &cols, p, 1, T::zero(), dxs, p, 1);
        T::gemm(g.cin, p, kk, T::one(), x, p, 1, &cols, 1, p, T::one(), dw.data_mut(), kk, 1);
    }
    Ok(ConvGrads { input: dx, weight: dw, bias: db })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.normal()).collect()).unwrap()
    }

    /// Direct nested-loop convolution, independent of im2col/GEMM.
    fn conv_naive(x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64], stride: usize, pad: usize) -> Tensor<f64> {
        let (n, cin, h, wd) = x.dims4().unwrap();
        let (cout, _, k, _) = w.dims4().unwrap();
        let ho = conv_output_dim(h, k, stride, pad);
        let wo = conv_output_dim(wd, k, stride, pad);
        let mut out = Tensor::zeros(&[n, cout, ho, wo]);
        for s in 0..n {
            for co in 0..cout {
                for i in 0..ho {
                    for j in 0..wo {
                        let mut acc = b[co];
                        for ci in 0..cin {
                            for u in 0..k {
                                for v in 0..k {
                                    let y = (i * stride + u) as isize - pad as isize;
                                    let xx = (j * stride + v) as isize - pad as isize;
                                    if y >= 0 && xx >= 0 && (y as usize) < h && (xx as usize) < wd {
                                        acc += x.data()[((s * cin + ci) * h + y as usize) * wd + xx as usize]
                                            * w.data()[((co * cin + ci) * k + u) * k + v];
                                    }
                                }
                            }
                        }
                        out.data_mut()[((s * cout + co) * ho + i) * wo + j] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn identity_kernel_returns_input() {
        let x = Tensor::<f64>::from_f64(&[1, 1, 3, 3], &[1., 2., 3., 4., 5., 6., 7., 8., 9.]).unwrap();
        let w = Tensor::from_f64(&[1, 1, 1, 1], &[1.0]).unwrap();
        let b = Tensor::from_f64(&[1], &[0.0]).unwrap();
        assert_eq!(conv2d(&x, &w, Some(&b), 1, 0).unwrap(), x);
    }

    #[test]
    fn zero_input_gives_bias() {
        let mut rng = Rng::new(5);
        let x = Tensor::<f64>::zeros(&[2, 3, 5, 5]);
        let w = random(&[4, 3, 3, 3], &mut rng);
        let b = Tensor::from_f64(&[4], &[0.5, -1.0, 2.0, 0.0]).unwrap();
        let y = conv2d(&x, &w, Some(&b), 1, 1).unwrap();
        for s in 0..2 {
            for c in 0..4 {
                assert!(y.plane(s, c).iter().all(|&v| v == b.data()[c]));
            }
        }
    }

    #[test]
    fn diagonal_kernel_on_2x2() {
        let x = Tensor::<f64>::from_f64(&[1, 1, 2, 2], &[1., 2., 3., 4.]).unwrap();
        let w = Tensor::from_f64(&[1, 1, 2, 2], &[1., 0., 0., 1.]).unwrap();
        let y = conv2d(&x, &w, None, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[5.0]);
    }

    #[test]
    fn channel_mismatch_names_both_shapes() {
        let x = Tensor::<f64>::zeros(&[1, 2, 4, 4]);
        let w = Tensor::<f64>::zeros(&[1, 3, 3, 3]);
        let msg = conv2d(&x, &w, None, 1, 1).unwrap_err().to_string();
        assert!(msg.contains("[1, 2, 4, 4]") && msg.contains("[1, 3, 3, 3]"), "{msg}");
    }

    #[test]
    fn matches_naive_loops() {
        let mut rng = Rng::new(11);
        for &(stride, pad, k) in &[(1, 1, 3), (2, 0, 2), (1, 0, 1), (2, 1, 3)] {
            let x = random(&[2, 3, 7, 6], &mut rng);
            let w = random(&[4, 3, k, k], &mut rng);
            let b: Vec<f64> = (0..4).map(|_| rng.normal()).collect();
            let bt = Tensor::from_f64(&[4], &b).unwrap();
            let fast = conv2d(&x, &w, Some(&bt), stride, pad).unwrap();
            let slow = conv_naive(&x, &w, &b, stride, pad);
            assert!(fast.max_abs_diff(&slow) < 1e-12);
        }
    }

    #[test]
    fn output_dims_follow_floor_rule() {
        let x = Tensor::<f64>::zeros(&[1, 1, 7, 8]);
        let w = Tensor::<f64>::zeros(&[1, 1, 3, 3]);
        let y = conv2d(&x, &w, None, 2, 1).unwrap();
        assert_eq!(y.shape(), &[1, 1, 4, 4]);
    }

    #[test]
    fn identity_kernel_backward_passes_gradient_through() {
        let x = Tensor::<f64>::from_f64(&[1, 1, 3, 3], &[1., 2., 3., 4., 5., 6., 7., 8., 9.]).unwrap();
        let w = Tensor::from_f64(&[1, 1, 1, 1], &[1.0]).unwrap();
        let dy = Tensor::from_f64(&[1, 1, 3, 3], &[0.1, -0.2, 0.3, 0.4, 0.5, -0.6, 0.7, 0.8, 0.9]).unwrap();
        let g = conv2d_backward(&x, &w, 1, 0, &dy).unwrap();
        assert_eq!(g.input, dy);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = Rng::new(2);
        let x = random(&[1, 2, 5, 5], &mut rng);
        let w = random(&[3, 2, 3, 3], &mut rng);
        let dy = Tensor::zeros(&[1, 3, 5, 5]);
        let g = conv2d_backward(&x, &w, 1, 1, &dy).unwrap();
        assert!(g.input.data().iter().chain(g.weight.data()).chain(g.bias.data()).all(|&v| v == 0.0));
    }

    #[test]
    fn transposed_scatters_single_element() {
        let x = Tensor::<f64>::from_f64(&[1, 1, 1, 1], &[3.5]).unwrap();
        let w = Tensor::full(&[1, 1, 2, 2], 1.0);
        let y = transposed_conv2d(&x, &w, None, 2).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert!(y.data().iter().all(|&v| v == 3.5));
    }

    #[test]
    fn transposed_doubles_dims_and_zero_maps_to_zero() {
        let mut rng = Rng::new(8);
        let w = random(&[3, 5, 2, 2], &mut rng);
        let y = transposed_conv2d(&Tensor::<f64>::zeros(&[2, 3, 4, 6]), &w, None, 2).unwrap();
        assert_eq!(y.shape(), &[2, 5, 8, 12]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn transposed_is_adjoint_of_strided_conv() {
        let mut rng = Rng::new(21);
        for &(k, s, h) in &[(2, 2, 4), (3, 2, 7), (3, 1, 5)] {
            // conv maps Cout_t=3 channels at size h to Cin_t=4 channels
            let w = random(&[4, 3, k, k], &mut rng);
            let x = random(&[2, 3, h, h], &mut rng);
            let cx = conv2d(&x, &w, None, s, 0).unwrap();
            let y = random(cx.shape(), &mut rng);
            let ty = transposed_conv2d(&y, &w, None, s).unwrap();
            assert_eq!(ty.shape(), x.shape());
            let lhs = cx.dot(&y).unwrap();
            let rhs = x.dot(&ty).unwrap();
            assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
        }
    }
}
