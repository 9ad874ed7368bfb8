//! Central finite-difference validation of analytic gradients.
//!
//! For a scalar function `f` of several tensors, each probed coordinate is
//! perturbed by `±h` and the numeric derivative `(f(x+h) - f(x-h)) / 2h` is
//! compared with the analytic one using
//! `|a - n| / max(|a|, |n|, ABS_FLOOR)`. The floor keeps exact zeros (e.g.
//! inactive ReLU units, or conv biases feeding batch norm) from turning
//! finite-difference round-off into huge relative errors.
//!
//! Deep ReLU networks are only piecewise smooth. With `kink_threshold` set,
//! a probe whose one-sided differences `(f(x+h) - f(x)) / h` and
//! `(f(x) - f(x-h)) / h` disagree by more than that relative amount is
//! treated as straddling a kink and counted as excluded instead of scored.
//!
//! Only double precision is accepted.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Precision, Scalar, Tensor};

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;
pub const DEFAULT_PROBES: usize = 10;
pub const ABS_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    pub step: f64,
    pub tolerance: f64,
    /// Random coordinates probed per tensor (all coordinates if the tensor is smaller).
    pub probes_per_tensor: usize,
    pub seed: u64,
    /// Relative disagreement of the one-sided differences beyond which a
    /// probe is excluded as non-differentiable; `None` scores every probe.
    pub kink_threshold: Option<f64>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: DEFAULT_STEP,
            tolerance: DEFAULT_TOLERANCE,
            probes_per_tensor: DEFAULT_PROBES,
            seed: 0,
            kink_threshold: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TensorReport {
    pub name: String,
    pub max_rel_error: f64,
    pub probed: usize,
    /// Probes dropped by the exclusion predicate or as kinks.
    pub excluded: usize,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorReport>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() < self.tolerance
    }

    pub fn probed(&self) -> usize {
        self.tensors.iter().map(|t| t.probed).sum()
    }

    pub fn excluded(&self) -> usize {
        self.tensors.iter().map(|t| t.excluded).sum()
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(ABS_FLOOR)
}

/// Picks up to `count` distinct flat indices in `[0, len)`.
pub fn probe_indices(len: usize, count: usize, rng: &mut Rng) -> Vec<usize> {
    let mut all: Vec<usize> = (0..len).collect();
    if count >= len {
        return all;
    }
    for i in 0..count {
        let j = i + rng.index(len - i);
        all.swap(i, j);
    }
    all.truncate(count);
    all
}

/// Compares `analytic[i]` with central differences of `f` around `inputs`.
///
/// `exclude(tensor_index, flat_index, value)` may veto a probe, e.g. near a
/// ReLU kink where the function is not differentiable.
pub fn finite_diff_check<T, F>(
    mut f: F,
    inputs: &[(&str, Tensor<T>)],
    analytic: &[Tensor<T>],
    cfg: &GradCheckConfig,
    exclude: Option<&dyn Fn(usize, usize, f64) -> bool>,
) -> Result<GradCheckReport>
where
    T: Scalar,
    F: FnMut(&[Tensor<T>]) -> Result<f64>,
{
    if T::PRECISION != Precision::Double {
        return Err(Error::Precision(format!(
            "gradient checks require double precision, got {}",
            T::PRECISION
        )));
    }
    if inputs.len() != analytic.len() {
        return Err(Error::invalid(format!(
            "{} inputs but {} analytic gradients",
            inputs.len(),
            analytic.len()
        )));
    }
    let mut rng = Rng::new(cfg.seed);
    let mut work: Vec<Tensor<T>> = inputs.iter().map(|(_, t)| t.clone()).collect();
    let center = match cfg.kink_threshold {
        Some(_) => f(&work)?,
        None => 0.0,
    };
    let mut reports = Vec::with_capacity(inputs.len());
    for (ti, ((name, x), grad)) in inputs.iter().zip(analytic).enumerate() {
        if x.shape() != grad.shape() {
            return Err(Error::shape(format!(
                "analytic gradient {:?} does not match input {name} {:?}",
                grad.shape(),
                x.shape()
            )));
        }
        let mut report = TensorReport { name: name.to_string(), max_rel_error: 0.0, probed: 0, excluded: 0 };
        for idx in probe_indices(x.len(), cfg.probes_per_tensor, &mut rng) {
            let orig = x.data()[idx];
            if exclude.is_some_and(|ex| ex(ti, idx, orig.as_f64())) {
                report.excluded += 1;
                continue;
            }
            let h = T::from_f64_lossy(cfg.step);
            let (hi, lo) = (orig + h, orig - h);
            work[ti].data_mut()[idx] = hi;
            let up = f(&work)?;
            work[ti].data_mut()[idx] = lo;
            let down = f(&work)?;
            work[ti].data_mut()[idx] = orig;
            if let Some(limit) = cfg.kink_threshold {
                let fwd = (up - center) / (hi - orig).as_f64();
                let bwd = (center - down) / (orig - lo).as_f64();
                if relative_error(fwd, bwd) > limit {
                    report.excluded += 1;
                    continue;
                }
            }
            // divide by the step actually taken after rounding
            let numeric = (up - down) / (hi - lo).as_f64();
            let err = relative_error(grad.data()[idx].as_f64(), numeric);
            report.max_rel_error = report.max_rel_error.max(err);
            report.probed += 1;
        }
        reports.push(report);
    }
    Ok(GradCheckReport { tensors: reports, tolerance: cfg.tolerance })
}

/// Checks a tensor-valued operation through the scalar `<op(inputs), r>` for
/// a fixed random `r` with entries `±U(0.5, 1.5)`. `backward(inputs, r)` must return the gradient of that
/// scalar with respect to each input.
pub fn check_op<T, Op, Back>(
    op: Op,
    backward: Back,
    inputs: &[(&str, Tensor<T>)],
    cfg: &GradCheckConfig,
    exclude: Option<&dyn Fn(usize, usize, f64) -> bool>,
) -> Result<GradCheckReport>
where
    T: Scalar,
    Op: Fn(&[Tensor<T>]) -> Result<Tensor<T>>,
    Back: Fn(&[Tensor<T>], &Tensor<T>) -> Result<Vec<Tensor<T>>>,
{
    let plain: Vec<Tensor<T>> = inputs.iter().map(|(_, t)| t.clone()).collect();
    let out = op(&plain)?;
    let mut rng = Rng::new(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    // magnitudes bounded away from zero keep linear-op gradients O(1)
    let r = Tensor::new(
        out.shape().to_vec(),
        (0..out.len())
            .map(|_| {
                let mag = rng.uniform_range(0.5, 1.5);
                T::from_f64_lossy(if rng.bernoulli(0.5) { mag } else { -mag })
            })
            .collect(),
    )?;
    let analytic = backward(&plain, &r)?;
    finite_diff_check(|xs| compensated_dot(&op(xs)?, &r), inputs, &analytic, cfg, exclude)
}

/// Inner product with Neumaier summation, so round-off in the probe scalar
/// stays near one ulp regardless of tensor size.
pub fn compensated_dot<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!("inner product of {:?} and {:?}", a.shape(), b.shape())));
    }
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let term = x.as_f64() * y.as_f64();
        let t = sum + term;
        comp += if sum.abs() >= term.abs() { (sum - t) + term } else { (term - t) + sum };
        sum = t;
    }
    Ok(sum + comp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops;

    fn random(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.normal()).collect()).unwrap()
    }

    #[test]
    fn single_precision_rejected() {
        let x = Tensor::<f32>::zeros(&[2]);
        let r = finite_diff_check(|_| Ok(0.0), &[("x", x.clone())], &[x], &GradCheckConfig::default(), None);
        assert!(matches!(r, Err(Error::Precision(_))));
    }

    #[test]
    fn linear_add_is_exact() {
        let mut rng = Rng::new(1);
        let a = random(&[1, 2, 3, 3], &mut rng);
        let b = random(&[1, 2, 3, 3], &mut rng);
        let report = check_op(
            |xs| ops::add(&xs[0], &xs[1]),
            |_, r| Ok(vec![r.clone(), r.clone()]),
            &[("a", a), ("b", b)],
            &GradCheckConfig::default(),
            None,
        )
        .unwrap();
        assert!(report.max_rel_error() < 1e-10, "{report:?}");
    }

    #[test]
    fn relu_away_from_kink() {
        let mut rng = Rng::new(2);
        let x = random(&[1, 3, 4, 4], &mut rng);
        let near_kink = |_: usize, _: usize, v: f64| v.abs() <= 1e-3;
        let report = check_op(
            |xs| Ok(ops::relu(&xs[0])),
            |xs, r| Ok(vec![ops::relu_backward(&xs[0], r)?]),
            &[("x", x)],
            &GradCheckConfig { probes_per_tensor: 48, ..Default::default() },
            Some(&near_kink),
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn wrong_gradient_is_detected() {
        let x = Tensor::<f64>::from_f64(&[3], &[1.0, 2.0, 3.0]).unwrap();
        let wrong = Tensor::from_f64(&[3], &[2.0, 4.0, 7.0]).unwrap();
        let report = finite_diff_check(
            |xs| Ok(xs[0].data().iter().map(|v| v * v).sum()),
            &[("x", x)],
            &[wrong],
            &GradCheckConfig::default(),
            None,
        )
        .unwrap();
        assert!(!report.passed());
    }

    #[test]
    fn kinks_are_excluded_not_scored() {
        // |x| at 0 has one-sided slopes -1 and +1; the central difference is 0
        let x = Tensor::<f64>::from_f64(&[2], &[0.0, 2.0]).unwrap();
        let analytic = Tensor::from_f64(&[2], &[1.0, 1.0]).unwrap();
        let f = |xs: &[Tensor<f64>]| Ok(xs[0].data().iter().map(|v| v.abs()).sum());
        let plain = finite_diff_check(f, &[("x", x.clone())], std::slice::from_ref(&analytic), &GradCheckConfig::default(), None).unwrap();
        assert!(!plain.passed());
        let cfg = GradCheckConfig { kink_threshold: Some(1e-2), ..Default::default() };
        let r = finite_diff_check(f, &[("x", x)], &[analytic], &cfg, None).unwrap();
        assert!(r.passed());
        assert_eq!((r.probed(), r.excluded()), (1, 1));
    }

    #[test]
    fn probe_indices_distinct() {
        let mut rng = Rng::new(3);
        let mut p = probe_indices(100, 10, &mut rng);
        p.sort();
        p.dedup();
        assert_eq!(p.len(), 10);
        assert_eq!(probe_indices(4, 10, &mut rng), vec![0, 1, 2, 3]);
    }
}
