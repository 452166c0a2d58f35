mod common;

use deblur_core::model::{
    build_discriminator, build_generator, discriminator_forward, discriminator_param_count, generator_forward,
    generator_param_count, DiscriminatorConfig, GeneratorConfig, ModelParams, Padding, INIT_STD,
};
use deblur_core::tensor::{backward, Tensor};
use rand::Rng;

fn image_batch(n: usize, h: usize, w: usize, seed: u64) -> Tensor<f64> {
    let mut r = common::rng(seed);
    Tensor::from_fn(&[n, 3, h, w], |_| r.random_range(0.3..0.7))
}

/// Replaces the zero-initialized output layer so gradients reach every layer.
fn with_live_output(p: &ModelParams<f64>, seed: u64) -> ModelParams<f64> {
    let mut r = common::rng(seed);
    p.map(|t| t.clone())
        .with_tensors(
            p.iter()
                .map(|(name, t)| {
                    if name.starts_with("rear2") {
                        Tensor::from_fn(t.shape(), |_| r.random_range(-0.01..0.01))
                    } else {
                        t.clone()
                    }
                })
                .collect(),
        )
        .unwrap()
}

#[test]
fn generator_build_is_deterministic_and_bounded() {
    let cfg = GeneratorConfig::desk();
    let a = build_generator::<f64>(&cfg, 5).unwrap();
    let b = build_generator::<f64>(&cfg, 5).unwrap();
    let c = build_generator::<f64>(&cfg, 6).unwrap();
    assert!(a.iter().zip(b.iter()).all(|(x, y)| x.0 == y.0 && x.1.data() == y.1.data()));
    assert!(a.iter().zip(c.iter()).any(|(x, y)| x.1.data() != y.1.data()));
    for (name, t) in a.iter() {
        if name.ends_with(".conv") || name.ends_with(".transpose") || name.contains(".conv") {
            assert!(t.data().iter().all(|v| v.abs() <= 5.0 * INIT_STD), "{name}");
        }
        if name.ends_with(".scale") {
            assert!(t.data().iter().all(|&v| v == 1.0));
        }
        if name.ends_with(".shift") || name.starts_with("rear2") {
            assert!(t.data().iter().all(|&v| v == 0.0));
        }
    }
}

#[test]
fn generator_parameter_count_by_layer() {
    // head 7x7 3->32 + norm, down 7x7 32->32 + norm, block 0 opens with
    // 32->16, eleven more 16->16 5x5 convs, each with a norm, up stage
    // shuffle conv 3x3 16->128 and transpose 4x4 16->32 + norm, rear 3x3
    // 32->32 + norm, output 3x3 32->3 + bias
    let head = 3 * 32 * 49 + 64;
    let down = 32 * 32 * 49 + 64;
    let blocks = 32 * 16 * 25 + 11 * 16 * 16 * 25 + 12 * 32;
    let up = 16 * 128 * 9 + 16 * 32 * 16 + 64;
    let rear = 32 * 32 * 9 + 64 + 32 * 3 * 9 + 3;
    let expected = head + down + blocks + up + rear;
    assert_eq!(expected, 175_427);
    let cfg = GeneratorConfig::desk();
    assert_eq!(build_generator::<f64>(&cfg, 0).unwrap().count(), expected);
    assert_eq!(generator_param_count(&cfg), expected);

    for cfg in [
        GeneratorConfig { scale_factor: 4, ..GeneratorConfig::desk() },
        GeneratorConfig { scale_factor: 1, res_blocks: 1, ..GeneratorConfig::desk() },
        GeneratorConfig { head_channels: 8, res_channels: 8, res_kernel: 3, head_kernel: 5, ..GeneratorConfig::desk() },
    ] {
        assert_eq!(build_generator::<f64>(&cfg, 0).unwrap().count(), generator_param_count(&cfg));
    }
}

#[test]
fn discriminator_parameter_count_by_layer() {
    let cfg = DiscriminatorConfig::default();
    let expected = (3 * 64 * 9 + 64)
        + (64 * 128 * 16 + 256)
        + (128 * 128 * 9 + 256)
        + (128 * 256 * 16 + 512)
        + (256 * 256 * 9 + 512)
        + (256 * 512 * 16 + 1024)
        + 3 * (512 * 512 * 9 + 1024)
        + (512 * 9 + 1);
    assert_eq!(discriminator_param_count(&cfg), expected);
    assert_eq!(build_discriminator::<f64>(&cfg, 1).unwrap().count(), expected);
    let desk = DiscriminatorConfig::desk();
    assert_eq!(build_discriminator::<f64>(&desk, 1).unwrap().count(), discriminator_param_count(&desk));
}

#[test]
fn discriminator_build_is_deterministic_and_bounded() {
    let cfg = DiscriminatorConfig::desk();
    let a = build_discriminator::<f64>(&cfg, 9).unwrap();
    let b = build_discriminator::<f64>(&cfg, 9).unwrap();
    assert!(a.iter().zip(b.iter()).all(|(x, y)| x.1.data() == y.1.data()));
    assert!(a.iter().filter(|(n, _)| n.ends_with(".conv")).all(|(_, t)| t.data().iter().all(|v| v.abs() <= 5.0 * INIT_STD)));
    assert_eq!(a.iter().filter(|(n, _)| n.ends_with(".conv")).count(), 10);
}

#[test]
fn zero_generator_is_identity() {
    let cfg = GeneratorConfig::desk();
    let p = build_generator::<f64>(&cfg, 3).unwrap().map(|t| Tensor::zeros(t.shape()));
    let x = image_batch(2, 16, 16, 1);
    let y = generator_forward(&cfg, &p, &x, true, 7).unwrap();
    assert_eq!(y.data(), x.data());
    // the freshly built generator is also the identity
    let p = build_generator::<f64>(&cfg, 3).unwrap();
    assert_eq!(generator_forward(&cfg, &p, &x, false, 0).unwrap().data(), x.data());
}

#[test]
fn generator_shapes_and_range() {
    let cfg = GeneratorConfig::desk();
    let p = with_live_output(&build_generator::<f64>(&cfg, 3).unwrap(), 1);
    for side in [64, 96] {
        let x = image_batch(1, side, side, side as u64);
        let y = generator_forward(&cfg, &p, &x, false, 0).unwrap();
        assert_eq!(y.shape(), x.shape());
        assert!(y.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
    assert!(generator_forward(&cfg, &p, &image_batch(1, 15, 16, 0), false, 0).is_err());
    let cfg4 = GeneratorConfig { scale_factor: 4, ..GeneratorConfig::desk() };
    let p4 = build_generator::<f64>(&cfg4, 0).unwrap();
    assert!(generator_forward(&cfg4, &p4, &image_batch(1, 18, 18, 0), false, 0).is_err());
    assert_eq!(generator_forward(&cfg4, &p4, &image_batch(1, 16, 16, 0), false, 0).unwrap().shape(), &[1, 3, 16, 16]);
}

#[test]
fn inference_is_deterministic_and_training_uses_dropout() {
    let cfg = GeneratorConfig::desk();
    let p = with_live_output(&build_generator::<f64>(&cfg, 4).unwrap(), 2);
    let x = image_batch(2, 16, 16, 3);
    let a = generator_forward(&cfg, &p, &x, false, 1).unwrap();
    let b = generator_forward(&cfg, &p, &x, false, 2).unwrap();
    assert_eq!(a.data(), b.data());
    let t1 = generator_forward(&cfg, &p, &x, true, 1).unwrap();
    let t1b = generator_forward(&cfg, &p, &x, true, 1).unwrap();
    let t2 = generator_forward(&cfg, &p, &x, true, 2).unwrap();
    assert_eq!(t1.data(), t1b.data());
    assert_ne!(t1.data(), t2.data());
    assert_ne!(t1.data(), a.data());
}

#[test]
fn critic_score_map_is_a_patch_grid() {
    let cfg = DiscriminatorConfig::default();
    let p = build_discriminator::<f64>(&cfg, 0).unwrap();
    let s = discriminator_forward(&cfg, &p, &image_batch(1, 64, 64, 0)).unwrap();
    assert_eq!(s.shape(), &[1, 1, 8, 8]);
    assert!(s.is_finite());
    let pooled = DiscriminatorConfig { patch_output: false, ..DiscriminatorConfig::desk() };
    let p = build_discriminator::<f64>(&pooled, 0).unwrap();
    assert_eq!(discriminator_forward(&pooled, &p, &image_batch(2, 32, 32, 0)).unwrap().shape(), &[2, 1, 1, 1]);
}

#[test]
fn critic_is_shift_equivariant() {
    let cfg = DiscriminatorConfig { padding: Padding::Circular, ..DiscriminatorConfig::desk() };
    let p = build_discriminator::<f64>(&cfg, 11).unwrap();
    let (h, w) = (32, 32);
    let x = image_batch(1, h, w, 5);
    let unit = 1 << cfg.downsamples;
    // roll right and down by one stride unit
    let rolled = Tensor::from_fn(&[1, 3, h, w], |k| {
        let (c, y, xx) = (k / (h * w), (k / w) % h, k % w);
        x.data()[(c * h + (y + h - unit) % h) * w + (xx + w - unit) % w]
    });
    let a = discriminator_forward(&cfg, &p, &x).unwrap();
    let b = discriminator_forward(&cfg, &p, &rolled).unwrap();
    let (sh, sw) = (a.shape()[2], a.shape()[3]);
    assert_eq!((sh, sw), (4, 4));
    for y in 0..sh {
        for xx in 0..sw {
            let moved = b.data()[((y + 1) % sh) * sw + (xx + 1) % sw];
            assert!((moved - a.data()[y * sw + xx]).abs() < 1e-6);
        }
    }
}

/// Central differences of `f` against reverse mode for a few entries of
/// every parameter tensor. Probes whose stencil straddles a leaky-ReLU kink
/// (the estimates at `eps` and `eps / 4` disagree) are not differentiable
/// there and are skipped; at most a tenth of the probes may be skipped.
fn check_params(params: &ModelParams<f64>, f: impl Fn(&ModelParams<f64>) -> Tensor<f64>, probes: usize) -> f64 {
    let leaves = params.trainable();
    let grads = backward(&f(&leaves)).unwrap();
    let mut r = common::rng(99);
    let eps = 1e-5;
    let (mut worst, mut total, mut skipped) = (0.0f64, 0, 0);
    for (idx, (name, t)) in params.iter().enumerate() {
        let analytic = grads.get_or_zeros(leaves.tensors()[idx]);
        for _ in 0..probes {
            let k = r.random_range(0..t.numel());
            let probe = |d: f64| {
                let mut v = t.to_vec();
                v[k] += d;
                let mut ts: Vec<Tensor<f64>> = params.tensors().into_iter().cloned().collect();
                ts[idx] = Tensor::new(t.shape(), v).unwrap();
                f(&params.with_tensors(ts).unwrap()).item().unwrap()
            };
            let numeric = (probe(eps) - probe(-eps)) / (2.0 * eps);
            let fine = (probe(eps / 4.0) - probe(-eps / 4.0)) / (eps / 2.0);
            total += 1;
            if (numeric - fine).abs() > 1e-6 * numeric.abs().max(1.0) {
                skipped += 1;
                continue;
            }
            let err = (analytic.data()[k] - numeric).abs() / numeric.abs().max(1.0);
            assert!(err < 1e-3, "{name}[{k}]: analytic {} numeric {numeric}", analytic.data()[k]);
            worst = worst.max(err);
        }
    }
    assert!(skipped * 10 <= total, "{skipped} of {total} probes hit kinks");
    worst
}

#[test]
fn generator_gradients_match_finite_differences() {
    let cfg = GeneratorConfig { head_channels: 8, res_channels: 4, res_blocks: 2, ..GeneratorConfig::desk() };
    let p = with_live_output(&build_generator::<f64>(&cfg, 21).unwrap(), 3);
    let x = image_batch(2, 8, 8, 6);
    let worst = check_params(&p, |q| generator_forward(&cfg, q, &x, true, 5).unwrap().mean(), 3);
    assert!(worst < 1e-3);
}

#[test]
fn critic_gradients_match_finite_differences() {
    let cfg = DiscriminatorConfig { layers: 6, base_channels: 4, max_channels: 8, downsamples: 2, ..Default::default() };
    let p = build_discriminator::<f64>(&cfg, 8).unwrap();
    let x = image_batch(2, 16, 16, 6);
    let worst = check_params(&p, |q| discriminator_forward(&cfg, q, &x).unwrap().mean(), 3);
    assert!(worst < 1e-3);
}
