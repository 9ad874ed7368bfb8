//! Finite-difference checks of every differentiable operation and of whole
//! networks, in double precision.

use cascade_seg::gradcheck::{check_op, finite_diff_check, GradCheckConfig, GradCheckReport};
use cascade_seg::model::{check_network_gradients, Network, NetworkConfig, UpsampleMode};
use cascade_seg::ops::{self, Mode, RunningStats};
use cascade_seg::rng::Rng;
use cascade_seg::Tensor;

const OP_TOL: f64 = 1e-4;
const NET_TOL: f64 = 1e-3;
/// One-sided differences of a smooth loss agree to `O(h f'' / f')`, far
/// below this; straddling a ReLU or max-pool switch breaks it by `O(1)`.
const KINK: f64 = 1e-2;
/// Whole networks have thousands of ReLU and max-pool switch points, and
/// batch norm couples every parameter to all of them; a smaller step makes
/// straddling one rare while round-off on the O(1) loss stays near 1e-10.
const NET_STEP: f64 = 1e-6;

fn random(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.normal()).collect()).unwrap()
}

fn cfg(probes: usize) -> GradCheckConfig {
    GradCheckConfig { probes_per_tensor: probes, tolerance: OP_TOL, ..Default::default() }
}

fn assert_passed(what: &str, r: &GradCheckReport) {
    assert!(r.passed(), "{what}: max relative error {:.3e}\n{r:#?}", r.max_rel_error());
}

#[test]
fn conv2d_same_padding() {
    let mut rng = Rng::new(1);
    for (k, stride, pad) in [(3, 1, 1), (1, 1, 0), (3, 2, 1)] {
        let x = random(&[2, 3, 6, 6], &mut rng);
        let w = random(&[4, 3, k, k], &mut rng);
        let b = random(&[4], &mut rng);
        let r = check_op(
            |xs| ops::conv2d(&xs[0], &xs[1], Some(&xs[2]), stride, pad),
            |xs, dy| {
                let g = ops::conv2d_backward(&xs[0], &xs[1], stride, pad, dy)?;
                Ok(vec![g.input, g.weight, g.bias])
            },
            &[("x", x), ("w", w), ("b", b)],
            &cfg(30),
            None,
        )
        .unwrap();
        assert_passed(&format!("conv2d k={k} stride={stride}"), &r);
    }
}

#[test]
fn transposed_conv2d() {
    let mut rng = Rng::new(2);
    let x = random(&[2, 3, 4, 4], &mut rng);
    let w = random(&[3, 2, 2, 2], &mut rng);
    let b = random(&[2], &mut rng);
    let r = check_op(
        |xs| ops::transposed_conv2d(&xs[0], &xs[1], Some(&xs[2]), 2),
        |xs, dy| {
            let g = ops::transposed_conv2d_backward(&xs[0], &xs[1], 2, dy)?;
            Ok(vec![g.input, g.weight, g.bias])
        },
        &[("x", x), ("w", w), ("b", b)],
        &cfg(30),
        None,
    )
    .unwrap();
    assert_passed("transposed_conv2d", &r);
}

#[test]
fn batchnorm_train_and_eval() {
    let mut rng = Rng::new(3);
    let x = random(&[3, 2, 4, 4], &mut rng);
    let gamma = random(&[2], &mut rng);
    let beta = random(&[2], &mut rng);
    let mut running = RunningStats::new(2);
    running.mean = random(&[2], &mut rng);
    running.var = Tensor::from_f64(&[2], &[0.7, 1.9]).unwrap();
    for mode in [Mode::Train, Mode::Eval] {
        let stats = running.clone();
        let r = check_op(
            |xs| Ok(ops::batchnorm2d(&xs[0], &xs[1], &xs[2], &mut stats.clone(), mode)?.0),
            |xs, dy| {
                let (_, cache) = ops::batchnorm2d(&xs[0], &xs[1], &xs[2], &mut stats.clone(), mode)?;
                let g = ops::batchnorm2d_backward(&cache, &xs[1], dy)?;
                Ok(vec![g.input, g.gamma, g.beta])
            },
            &[("x", x.clone()), ("gamma", gamma.clone()), ("beta", beta.clone())],
            &cfg(30),
            None,
        )
        .unwrap();
        assert_passed(&format!("batchnorm {mode:?}"), &r);
    }
}

#[test]
fn relu_away_from_the_kink() {
    let mut rng = Rng::new(4);
    let x = random(&[2, 2, 5, 5], &mut rng);
    let near = |_: usize, _: usize, v: f64| v.abs() < 1e-3;
    let r = check_op(
        |xs| Ok(ops::relu(&xs[0])),
        |xs, dy| Ok(vec![ops::relu_backward(&xs[0], dy)?]),
        &[("x", x)],
        &cfg(100),
        Some(&near),
    )
    .unwrap();
    assert_passed("relu", &r);
}

#[test]
fn maxpool_without_ties() {
    let mut rng = Rng::new(5);
    // continuous random values: ties have probability zero and no gap is
    // below the step with this seed
    let x = random(&[2, 2, 6, 6], &mut rng);
    let r = check_op(
        |xs| Ok(ops::maxpool2x2(&xs[0])?.output),
        |xs, dy| {
            let p = ops::maxpool2x2(&xs[0])?;
            Ok(vec![ops::maxpool2x2_backward(xs[0].shape(), &p.argmax, dy)?])
        },
        &[("x", x)],
        &cfg(144),
        None,
    )
    .unwrap();
    assert_passed("maxpool2x2", &r);
}

#[test]
fn upsample_add_and_channel_concat() {
    let mut rng = Rng::new(6);
    let r = check_op(
        |xs| ops::upsample_nearest2x(&xs[0]),
        |_, dy| Ok(vec![ops::upsample_nearest2x_backward(dy)?]),
        &[("x", random(&[1, 2, 3, 3], &mut rng))],
        &cfg(18),
        None,
    )
    .unwrap();
    assert_passed("upsample_nearest2x", &r);

    let r = check_op(
        |xs| ops::add(&xs[0], &xs[1]),
        |_, dy| Ok(vec![dy.clone(), dy.clone()]),
        &[("a", random(&[1, 2, 3, 3], &mut rng)), ("b", random(&[1, 2, 3, 3], &mut rng))],
        &cfg(18),
        None,
    )
    .unwrap();
    assert_passed("add", &r);

    let r = check_op(
        |xs| ops::concat_channels(&xs[0], &xs[1]),
        |_, dy| {
            let (a, b) = ops::split_channels(dy, 1)?;
            Ok(vec![a, b])
        },
        &[("a", random(&[2, 1, 3, 3], &mut rng)), ("b", random(&[2, 2, 3, 3], &mut rng))],
        &cfg(36),
        None,
    )
    .unwrap();
    assert_passed("concat_channels", &r);
}

#[test]
fn softmax_and_cross_entropy() {
    let mut rng = Rng::new(7);
    let logits = random(&[2, 3, 4, 4], &mut rng);
    let r = check_op(
        |xs| ops::softmax_channels(&xs[0]),
        |xs, dy| Ok(vec![ops::softmax_channels_backward(&ops::softmax_channels(&xs[0])?, dy)?]),
        &[("logits", logits.clone())],
        &cfg(96),
        None,
    )
    .unwrap();
    assert_passed("softmax", &r);

    let labels: Vec<u8> = (0..2 * 16).map(|_| rng.index(3) as u8).collect();
    let y: Tensor<f64> = ops::one_hot(&labels, 2, 3, 4, 4).unwrap();
    let p = ops::softmax_channels(&logits).unwrap();

    // cross entropy with respect to the probabilities
    let analytic = ops::categorical_cross_entropy_backward(&p, &y).unwrap();
    let r = finite_diff_check(
        |xs| ops::categorical_cross_entropy(&xs[0], &y),
        &[("p", p.clone())],
        &[analytic],
        &cfg(96),
        None,
    )
    .unwrap();
    assert_passed("cross entropy", &r);

    // fused softmax + cross entropy with respect to the logits
    let analytic = ops::softmax_cross_entropy_backward(&p, &y).unwrap();
    let r = finite_diff_check(
        |xs| ops::categorical_cross_entropy(&ops::softmax_channels(&xs[0])?, &y),
        &[("logits", logits)],
        &[analytic],
        &cfg(96),
        None,
    )
    .unwrap();
    assert_passed("softmax cross entropy", &r);
}

/// Loss gradient of a whole network (train-mode normalization) with
/// respect to every parameter tensor and the input.
fn check_network(config: NetworkConfig, seed: u64) -> GradCheckReport {
    let cfg = GradCheckConfig { probes_per_tensor: 6, tolerance: NET_TOL, seed, kink_threshold: Some(KINK), step: NET_STEP };
    let c = check_network_gradients(&config, 16, &cfg).unwrap();
    assert!(c.min_probability > 1e-6, "saturated probabilities ({:e}) at the check point", c.min_probability);
    let r = c.report;
    // kinks are rare; a broken backward pass would not hide behind them
    assert!(r.excluded() * 10 <= r.probed() + r.excluded(), "{r:#?}");
    r
}

#[test]
fn mres_unet_end_to_end() {
    let r = check_network(NetworkConfig::mres(1).with_size(2, 4), 11);
    assert_passed("MRes-UNET", &r);
    assert!(r.tensors.len() > 20);
}

#[test]
fn mres_unet_two_channels_without_norm() {
    let r = check_network(NetworkConfig { use_norm: false, ..NetworkConfig::mres(2).with_size(2, 4) }, 12);
    assert_passed("MRes-UNET without normalization", &r);
}

#[test]
fn mres_unet_nearest_upsampling() {
    let r = check_network(NetworkConfig { upsample: UpsampleMode::NearestConv, ..NetworkConfig::mres(1).with_size(2, 4) }, 13);
    assert_passed("MRes-UNET nearest upsampling", &r);
}

#[test]
fn plain_unet_baseline() {
    let r = check_network(NetworkConfig::unet(1).with_size(2, 4), 14);
    assert_passed("UNET", &r);
}

#[test]
fn parameter_count_formula_matches_built_networks() {
    let mut rng = Rng::new(99);
    for _ in 0..10 {
        let mut c = if rng.bernoulli(0.5) { NetworkConfig::mres(1 + rng.index(3)) } else { NetworkConfig::unet(1 + rng.index(3)) };
        c = c.with_size(1 + rng.index(4), 1 + rng.index(6));
        c.channel_multiplier = 1 + rng.index(2);
        c.use_norm = rng.bernoulli(0.5);
        c.upsample = if rng.bernoulli(0.5) { UpsampleMode::Transposed } else { UpsampleMode::NearestConv };
        let net = Network::<f32>::build(&c, &mut rng).unwrap();
        let counted: usize = net.parameters().iter().map(|p| p.value.len()).sum();
        assert_eq!(counted, c.parameter_count(), "{c}");
    }
}

#[test]
fn networks_across_seeds() {
    let configs = [
        NetworkConfig::mres(1).with_size(2, 4),
        NetworkConfig::mres(2).with_size(2, 4),
        NetworkConfig { use_norm: false, ..NetworkConfig::mres(1).with_size(2, 4) },
        NetworkConfig::unet(1).with_size(2, 4),
    ];
    for seed in 10..30 {
        for c in &configs {
            assert_passed(&format!("{c} seed {seed}"), &check_network(c.clone(), seed));
        }
    }
}

