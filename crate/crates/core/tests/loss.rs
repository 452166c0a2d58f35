mod common;

use common::*;
use deblur_core::loss::{
    bce_gan_loss, critic_loss, generator_loss, gradient_penalty, perceptual_loss, FeatureExtractor, LossConfig,
};
use deblur_core::tensor::gradcheck::gradcheck;
use deblur_core::tensor::Tensor;
use deblur_core::Result;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
    Tensor::new(shape, v.to_vec()).unwrap()
}

fn linear_critic(w: Tensor<f64>) -> impl Fn(&Tensor<f64>) -> Result<Tensor<f64>> {
    move |x: &Tensor<f64>| x.matmul(&w)
}

#[test]
fn bce_examples() {
    let half = t(&[4], &[0.5; 4]);
    assert!((bce_gan_loss(&half, &half).unwrap().item().unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
    let sure = bce_gan_loss(&t(&[2], &[1.0 - 1e-12; 2]), &t(&[2], &[1e-12; 2])).unwrap().item().unwrap();
    assert!(sure.abs() < 1e-11);
    assert!(bce_gan_loss(&t(&[1], &[1.0]), &half).is_err());
    assert!(bce_gan_loss(&half, &t(&[1], &[0.0])).is_err());

    let mut r = rng(1);
    let real: Vec<f64> = (0..7).map(|_| r.random_range(0.01..0.99)).collect();
    let fake: Vec<f64> = (0..5).map(|_| r.random_range(0.01..0.99)).collect();
    let direct = -0.5 * real.iter().map(|p| p.ln()).sum::<f64>() / 7.0 - 0.5 * fake.iter().map(|p| (1.0 - p).ln()).sum::<f64>() / 5.0;
    let got = bce_gan_loss(&t(&[7], &real), &t(&[5], &fake)).unwrap().item().unwrap();
    assert!((got - direct).abs() < 1e-12);
}

#[test]
fn penalty_of_linear_critics() {
    let mut r = rng(2);
    let real = randn(&[5, 2], &mut r);
    let fake = randn(&[5, 2], &mut r);
    let unit = linear_critic(t(&[2, 1], &[0.6, 0.8]));
    assert!(gradient_penalty(&unit, &real, &fake, 10.0, 3).unwrap().item().unwrap().abs() < 1e-10);
    let steep = linear_critic(t(&[2, 1], &[3.0, 4.0]));
    assert!((gradient_penalty(&steep, &real, &fake, 10.0, 3).unwrap().item().unwrap() - 160.0).abs() < 1e-8);
    assert!(gradient_penalty(&steep, &real, &randn(&[4, 2], &mut r), 10.0, 3).is_err());
}

#[test]
fn constant_critic_loss_is_lambda() {
    let mut r = rng(3);
    let real = randn(&[3, 3, 4, 4], &mut r);
    let fake = randn(&[3, 3, 4, 4], &mut r);
    let constant = |x: &Tensor<f64>| -> Result<Tensor<f64>> { Ok(Tensor::full(&[x.shape()[0], 1, 2, 2], 0.7)) };
    let loss = critic_loss(&constant, &real, &fake, 10.0, 4).unwrap();
    assert_eq!(loss.wasserstein.item().unwrap(), 0.0);
    assert!((loss.total.item().unwrap() - 10.0).abs() < 1e-10);
}

#[test]
fn identical_batches_have_zero_wasserstein_term() {
    let mut r = rng(4);
    let w = randn(&[2, 3, 3, 3], &mut r);
    let critic = |x: &Tensor<f64>| x.conv2d(&w, 1, 1).map(|y| y.leaky_relu(0.1));
    let x = randn(&[2, 3, 5, 5], &mut r);
    assert_eq!(critic_loss(&critic, &x, &x, 10.0, 1).unwrap().wasserstein.item().unwrap(), 0.0);
}

#[test]
fn critic_loss_matches_direct_formula() {
    // D(x) = Σ_k (a_k x_k)² + b_k x_k per sample, ∇D = 2a²x + b
    let mut r = rng(5);
    let (n, d) = (4, 6);
    let a = randn(&[d], &mut r);
    let b = randn(&[d], &mut r);
    let real = randn(&[n, d], &mut r);
    let fake = randn(&[n, d], &mut r);
    let (a2, b2) = (a.clone(), b.clone());
    let critic = move |x: &Tensor<f64>| -> Result<Tensor<f64>> {
        let rows = x.shape()[0];
        let sq = x.mul(&a2.reshape(&[1, d])?.broadcast_to(&[rows, d])?)?.square();
        let lin = x.mul(&b2.reshape(&[1, d])?.broadcast_to(&[rows, d])?)?;
        sq.add(&lin)?.sum_to(&[rows, 1])
    };
    let seed = 17;
    let got = critic_loss(&critic, &real, &fake, 10.0, seed).unwrap();

    let score = |x: &[f64]| (0..d).map(|k| (a.data()[k] * x[k]).powi(2) + b.data()[k] * x[k]).sum::<f64>();
    let row = |m: &Tensor<f64>, i: usize| m.data()[i * d..(i + 1) * d].to_vec();
    let mut eps_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = 0.0;
    let mut gp = 0.0;
    for i in 0..n {
        let (xr, xf) = (row(&real, i), row(&fake, i));
        w += (score(&xf) - score(&xr)) / n as f64;
        let e: f64 = eps_rng.random();
        let norm = (0..d)
            .map(|k| {
                let xh = e * xr[k] + (1.0 - e) * xf[k];
                (2.0 * a.data()[k].powi(2) * xh + b.data()[k]).powi(2)
            })
            .sum::<f64>()
            .sqrt();
        gp += 10.0 * (norm - 1.0).powi(2) / n as f64;
    }
    assert!((got.wasserstein.item().unwrap() - w).abs() < 1e-10);
    assert!((got.penalty.item().unwrap() - gp).abs() < 1e-10);
    assert!((got.total.item().unwrap() - (w + gp)).abs() < 1e-10);
}

#[test]
fn raising_real_scores_lowers_critic_loss() {
    let mut r = rng(6);
    let real = randn(&[3, 2], &mut r);
    let fake = real.add_scalar(5.0);
    let shifted = |bump: f64| {
        move |x: &Tensor<f64>| -> Result<Tensor<f64>> {
            // bump the score of inputs near the real batch only
            let base = x.matmul(&t(&[2, 1], &[0.6, 0.8]))?;
            let near: Vec<f64> = x.data().chunks(2).map(|p| if p[0] < 2.5 { bump } else { 0.0 }).collect();
            base.add(&Tensor::new(&[x.shape()[0], 1], near)?)
        }
    };
    let low = critic_loss(&shifted(0.0), &real, &fake, 10.0, 1).unwrap().wasserstein.item().unwrap();
    let high = critic_loss(&shifted(1.0), &real, &fake, 10.0, 1).unwrap().wasserstein.item().unwrap();
    assert!(high < low);
}

#[test]
fn penalty_parameter_gradient_matches_finite_differences() {
    let mut r = rng(7);
    let real = randn(&[2, 2, 6, 6], &mut r);
    let fake = randn(&[2, 2, 6, 6], &mut r);
    let w1 = randn(&[3, 2, 3, 3], &mut r);
    let w2 = randn(&[1, 3, 4, 4], &mut r);
    let report = gradcheck(
        |p| {
            let critic = |x: &Tensor<f64>| Ok(x.conv2d(&p[0], 1, 1)?.leaky_relu(0.1).conv2d(&p[1], 2, 1)?);
            gradient_penalty(&critic, &real, &fake, 10.0, 9)
        },
        &[w1, w2],
        1e-5,
    )
    .unwrap();
    assert!(report.worst() < 1e-3, "{:?}", report.max_rel_err);
}

#[test]
fn losses_match_finite_differences() {
    let mut r = rng(8);
    let ext = FeatureExtractor::<f64>::new(3);
    let sharp = randn(&[2, 3, 8, 8], &mut r).scale(0.5).add_scalar(0.5);
    let generated = randn(&[2, 3, 8, 8], &mut r).scale(0.5).add_scalar(0.5);
    let w1 = randn(&[2, 3, 3, 3], &mut r);
    let w2 = randn(&[1, 2, 3, 3], &mut r);

    let report = gradcheck(|a| bce_gan_loss(&a[0], &a[1]), &[t(&[3], &[0.2, 0.5, 0.9]), t(&[2], &[0.3, 0.6])], 1e-5).unwrap();
    assert!(report.worst() < 1e-4, "bce {:?}", report.max_rel_err);

    for tap in [(1, 1), (2, 2), (3, 2)] {
        let report = gradcheck(|a| perceptual_loss(&ext, &sharp, &a[0], tap), &[generated.clone()], 1e-5).unwrap();
        assert!(report.worst() < 1e-4, "perceptual {tap:?} {:?}", report.max_rel_err);
    }

    let cfg = LossConfig { perceptual_layer: (1, 2), ..Default::default() };
    let report = gradcheck(
        |a| {
            let critic = |x: &Tensor<f64>| Ok(x.conv2d(&a[1], 1, 1)?.leaky_relu(0.1).conv2d(&a[2], 2, 1)?);
            Ok(generator_loss(&critic, &ext, &sharp, &a[0], &cfg)?.total)
        },
        &[generated.clone(), w1.clone(), w2.clone()],
        1e-5,
    )
    .unwrap();
    assert!(report.worst() < 1e-4, "generator {:?}", report.max_rel_err);

    let report = gradcheck(
        |a| {
            let critic = |x: &Tensor<f64>| Ok(x.conv2d(&a[0], 1, 1)?.leaky_relu(0.1).conv2d(&a[1], 2, 1)?);
            Ok(critic_loss(&critic, &sharp, &generated, 10.0, 2)?.wasserstein)
        },
        &[w1, w2],
        1e-5,
    )
    .unwrap();
    assert!(report.worst() < 1e-4, "critic {:?}", report.max_rel_err);
}

#[test]
fn perceptual_examples() {
    let mut r = rng(9);
    let ext = FeatureExtractor::<f64>::new(1);
    let a = randn(&[2, 3, 16, 16], &mut r);
    let b = randn(&[2, 3, 16, 16], &mut r);
    assert_eq!(perceptual_loss(&ext, &a, &a, (2, 2)).unwrap().item().unwrap(), 0.0);
    let ab = perceptual_loss(&ext, &a, &b, (2, 2)).unwrap().item().unwrap();
    let ba = perceptual_loss(&ext, &b, &a, (2, 2)).unwrap().item().unwrap();
    assert!(ab > 0.0);
    assert_eq!(ab, ba);
    assert!(perceptual_loss(&ext, &a, &b, (4, 1)).is_err());
    assert!(perceptual_loss(&ext, &a, &b, (1, 0)).is_err());

    // direct subtraction of the tapped feature maps
    for tap in [(1, 1), (2, 2), (3, 1)] {
        let fa = ext.features(&a, tap).unwrap();
        let fb = ext.features(&b, tap).unwrap();
        let [n, c, h, w] = fa.dims4().unwrap();
        assert_eq!(h, 16 >> (tap.0 - 1));
        assert_eq!(c, [64, 32, 64][tap.0 - 1]);
        let mut total = 0.0;
        for s in 0..n {
            let len = c * h * w;
            let sum: f64 = (0..len).map(|k| (fa.data()[s * len + k] - fb.data()[s * len + k]).powi(2)).sum();
            total += sum / (h * w) as f64;
        }
        let got = perceptual_loss(&ext, &a, &b, tap).unwrap().item().unwrap();
        assert!((got - total / n as f64).abs() < 1e-12 * total.max(1.0));
    }
}

#[test]
fn extractor_is_seeded_and_frozen() {
    let x = randn(&[1, 3, 8, 8], &mut rng(10));
    let a = FeatureExtractor::<f64>::new(5).features(&x, (3, 2)).unwrap();
    let b = FeatureExtractor::<f64>::new(5).features(&x, (3, 2)).unwrap();
    let c = FeatureExtractor::<f64>::new(6).features(&x, (3, 2)).unwrap();
    assert_eq!(a.data(), b.data());
    assert_ne!(a.data(), c.data());
    assert!(!a.requires_grad());
}

#[test]
fn generator_loss_examples() {
    let mut r = rng(11);
    let ext = FeatureExtractor::<f64>::new(2);
    let sharp = randn(&[2, 3, 8, 8], &mut r);
    let generated = randn(&[2, 3, 8, 8], &mut r);
    let cfg = LossConfig::default();
    let zero = |x: &Tensor<f64>| -> Result<Tensor<f64>> { Ok(Tensor::zeros(&[x.shape()[0], 1, 1, 1])) };
    assert_eq!(generator_loss(&zero, &ext, &sharp, &sharp, &cfg).unwrap().total.item().unwrap(), 0.0);

    let critic_with = |c: f64| move |x: &Tensor<f64>| -> Result<Tensor<f64>> { Ok(Tensor::full(&[x.shape()[0], 1, 2, 2], c)) };
    let low = generator_loss(&critic_with(0.1), &ext, &sharp, &generated, &cfg).unwrap().total.item().unwrap();
    let high = generator_loss(&critic_with(0.9), &ext, &sharp, &generated, &cfg).unwrap().total.item().unwrap();
    assert!(high < low);

    let w = randn(&[1, 3, 3, 3], &mut r);
    let critic = |x: &Tensor<f64>| x.conv2d(&w, 1, 1);
    let got = generator_loss(&critic, &ext, &sharp, &generated, &cfg).unwrap();
    let scores = generated.conv2d(&w, 1, 1).unwrap();
    let adversarial = -scores.data().iter().sum::<f64>() / scores.numel() as f64;
    let perceptual = perceptual_loss(&ext, &sharp, &generated, cfg.perceptual_layer).unwrap().item().unwrap();
    let direct = adversarial + 100.0 * perceptual;
    assert!((got.adversarial.item().unwrap() - adversarial).abs() < 1e-12);
    assert!((got.total.item().unwrap() - direct).abs() < 1e-10);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn penalty_is_non_negative(seed in any::<u64>()) {
        let mut r = rng(seed);
        let w = randn(&[2, 3, 3, 3], &mut r);
        let critic = |x: &Tensor<f64>| x.conv2d(&w, 1, 1).map(|y| y.leaky_relu(0.1));
        let real = randn(&[2, 3, 5, 5], &mut r);
        let fake = randn(&[2, 3, 5, 5], &mut r);
        let gp = gradient_penalty(&critic, &real, &fake, 10.0, seed).unwrap().item().unwrap();
        prop_assert!(gp >= 0.0 && gp.is_finite());
    }

    #[test]
    fn perceptual_is_non_negative_and_symmetric(seed in any::<u64>()) {
        let mut r = rng(seed);
        let ext = FeatureExtractor::<f64>::new(seed);
        let a = randn(&[1, 3, 8, 8], &mut r);
        let b = randn(&[1, 3, 8, 8], &mut r);
        let ab = perceptual_loss(&ext, &a, &b, (2, 1)).unwrap().item().unwrap();
        let ba = perceptual_loss(&ext, &b, &a, (2, 1)).unwrap().item().unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(ab, ba);
    }
}
