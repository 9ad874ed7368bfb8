//! Finite-difference check of a small MRes-UNET and of one convolution.

use cascade_seg::gradcheck::{check_op, GradCheckConfig};
use cascade_seg::model::{check_network_gradients, NetworkConfig};
use cascade_seg::rng::Rng;
use cascade_seg::{ops, Tensor};

fn main() -> cascade_seg::Result<()> {
    let mut rng = Rng::new(3);
    let mut random = |shape: &[usize]| {
        let n = shape.iter().product();
        Tensor::<f64>::new(shape.to_vec(), (0..n).map(|_| rng.normal()).collect())
    };
    let (x, w) = (random(&[1, 2, 5, 5])?, random(&[3, 2, 3, 3])?);
    let conv = check_op(
        |xs| ops::conv2d(&xs[0], &xs[1], None, 1, 1),
        |xs, dy| {
            let g = ops::conv2d_backward(&xs[0], &xs[1], 1, 1, dy)?;
            Ok(vec![g.input, g.weight])
        },
        &[("x", x), ("w", w)],
        &GradCheckConfig::default(),
        None,
    )?;
    println!("conv2d: max relative error {:.2e}", conv.max_rel_error());

    let cfg = GradCheckConfig { step: 1e-6, tolerance: 1e-3, probes_per_tensor: 4, seed: 11, kink_threshold: Some(1e-2) };
    let net = check_network_gradients(&NetworkConfig::mres(1).with_size(2, 4), 16, &cfg)?;
    for t in net.report.tensors.iter().take(6) {
        println!("{:<28} {:.2e}", t.name, t.max_rel_error);
    }
    println!(
        "network: {} tensors, {} probes, {} excluded as kinks, max relative error {:.2e} ({})",
        net.report.tensors.len(),
        net.report.probed(),
        net.report.excluded(),
        net.report.max_rel_error(),
        if net.report.passed() { "pass" } else { "FAIL" }
    );
    Ok(())
}
