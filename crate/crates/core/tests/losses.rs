mod common;

use proptest::prelude::*;
use srgan_core::losses::{
    adversarial_gen_loss, adversarial_gen_loss_logits, discriminator_loss,
    discriminator_loss_logits, feature_content_loss, mse_content_loss, perceptual_loss,
    total_variation_loss, AdvInput, ContentLoss, LossSpec,
};
use srgan_core::models::{
    build_feature_extractor, FeatureExtractor, FeatureExtractorConfig, FeatureSource,
};
use srgan_core::Tensor;
use std::f64::consts::LN_2;

fn extractor() -> FeatureExtractor<f64> {
    let cfg = FeatureExtractorConfig {
        block_convs: vec![2, 2, 4, 4, 4],
        width_per_block: vec![4, 4, 4, 4, 4],
        tap: (2, 2),
    };
    build_feature_extractor(&cfg, &FeatureSource::Seeded(3)).unwrap()
}

fn image(seed: u64, n: usize, side: usize) -> Tensor<f64> {
    Tensor::rand_uniform(&[n, 3, side, side], -1.0, 1.0, &mut common::rng(seed))
}

#[test]
fn adversarial_loss_at_half_is_ln2() {
    let half = Tensor::from_vec(&[1, 1], vec![0.5]).unwrap();
    assert!((adversarial_gen_loss(&half, false).unwrap().value - LN_2).abs() < 1e-9);
    let zero = Tensor::from_vec(&[1, 1], vec![0.0]).unwrap();
    assert!((adversarial_gen_loss_logits(&zero, false).unwrap().value - LN_2).abs() < 1e-9);
    let d = discriminator_loss(&half, &half).unwrap();
    assert!((d.value - 2.0 * LN_2).abs() < 1e-9);
    let d = discriminator_loss_logits(&zero, &zero).unwrap();
    assert!((d.value - 2.0 * LN_2).abs() < 1e-9);
}

#[test]
fn adversarial_loss_sums_over_the_batch() {
    let p = Tensor::from_vec(&[4, 1], vec![0.5; 4]).unwrap();
    assert!((adversarial_gen_loss(&p, false).unwrap().value - 4.0 * LN_2).abs() < 1e-9);
    assert!((adversarial_gen_loss(&p, true).unwrap().value - LN_2).abs() < 1e-9);
}

#[test]
fn probability_and_logit_forms_agree() {
    let z = Tensor::<f64>::from_vec(&[5, 1], vec![-3.0, -0.5, 0.0, 1.2, 4.0]).unwrap();
    let p = z.map(|v: f64| 1.0 / (1.0 + (-v).exp()));
    let a = adversarial_gen_loss(&p, false).unwrap().value;
    let b = adversarial_gen_loss_logits(&z, false).unwrap().value;
    assert!((a - b).abs() < 1e-9);
    let dp = discriminator_loss(&p, &p).unwrap().value;
    let dz = discriminator_loss_logits(&z, &z).unwrap().value;
    assert!((dp - dz).abs() < 1e-9);
}

#[test]
fn total_variation_of_a_constant_image_is_the_epsilon_floor() {
    let c = Tensor::<f64>::full(&[2, 3, 5, 5], 0.3);
    let tv = total_variation_loss(&c).unwrap();
    // Each of the 3·5·5 positions contributes ε per sample.
    assert!((tv.value - 75.0 * 1e-8).abs() < 1e-18);
    assert!(tv.grad.data().iter().all(|&g| g == 0.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn perceptual_total_is_the_weighted_sum(
        seed in any::<u64>(),
        logits in prop::collection::vec(-6.0f64..6.0, 2),
        tv_weight in prop_oneof![Just(0.0), Just(2e-8), 0.0f64..1.0],
        feature in any::<bool>(),
    ) {
        let sr = image(seed, 2, 8);
        let hr = image(seed ^ 1, 2, 8);
        let z = Tensor::from_vec(&[2, 1], logits).unwrap();
        let fx = extractor();
        let spec = LossSpec {
            content: if feature { ContentLoss::Feature(2, 2) } else { ContentLoss::Mse },
            tv_weight,
            ..LossSpec::default()
        };
        let report = perceptual_loss(&sr, &hr, Some(AdvInput::Logits(&z)), &spec, feature.then_some(&fx)).unwrap();
        let content = if feature {
            feature_content_loss(&sr, &hr, &fx, spec.feature_rescale).unwrap().value
        } else {
            mse_content_loss(&sr, &hr).unwrap().value
        };
        let adv = adversarial_gen_loss_logits(&z, false).unwrap().value;
        let tv = if tv_weight > 0.0 { total_variation_loss(&sr).unwrap().value } else { 0.0 };
        prop_assert_eq!(report.total, content + 1e-3 * adv + tv_weight * tv);
        prop_assert_eq!(report.content_value, content);
        prop_assert_eq!(report.adversarial_value, adv);
    }

    #[test]
    fn feature_loss_is_quadratic_in_rescale(seed in any::<u64>(), s in 0.01f64..10.0) {
        let fx = extractor();
        let sr = image(seed, 1, 8);
        let hr = image(seed ^ 7, 1, 8);
        let base = feature_content_loss(&sr, &hr, &fx, s).unwrap().value;
        let doubled = feature_content_loss(&sr, &hr, &fx, 2.0 * s).unwrap().value;
        prop_assert!((doubled - 4.0 * base).abs() <= 1e-9 * doubled.abs());
    }

    #[test]
    fn content_losses_are_symmetric_and_zero_on_identity(seed in any::<u64>()) {
        let fx = extractor();
        let a = image(seed, 2, 8);
        let b = image(seed ^ 3, 2, 8);
        prop_assert_eq!(mse_content_loss(&a, &b).unwrap().value, mse_content_loss(&b, &a).unwrap().value);
        let fab = feature_content_loss(&a, &b, &fx, 0.5).unwrap().value;
        let fba = feature_content_loss(&b, &a, &fx, 0.5).unwrap().value;
        prop_assert!((fab - fba).abs() <= 1e-12 * fab.abs());
        prop_assert_eq!(mse_content_loss(&a, &a).unwrap().value, 0.0);
        prop_assert_eq!(feature_content_loss(&a, &a, &fx, 0.5).unwrap().value, 0.0);
        prop_assert!(mse_content_loss(&a, &b).unwrap().value > 0.0);
    }

    #[test]
    fn small_step_against_the_gradient_lowers_each_loss(seed in any::<u64>()) {
        let fx = extractor();
        let sr = image(seed, 1, 8);
        let hr = image(seed ^ 5, 1, 8);
        let step = |x: &Tensor<f64>, g: &Tensor<f64>, eta: f64| {
            let mut y = x.clone();
            for (v, d) in y.data_mut().iter_mut().zip(g.data()) {
                *v -= eta * d;
            }
            y
        };
        let mse = mse_content_loss(&sr, &hr).unwrap();
        prop_assert!(mse_content_loss(&step(&sr, &mse.grad, 1e-3), &hr).unwrap().value < mse.value);
        let feat = feature_content_loss(&sr, &hr, &fx, 1.0).unwrap();
        prop_assert!(feature_content_loss(&step(&sr, &feat.grad, 1e-4), &hr, &fx, 1.0).unwrap().value < feat.value);
        let tv = total_variation_loss(&sr).unwrap();
        prop_assert!(total_variation_loss(&step(&sr, &tv.grad, 1e-4)).unwrap().value < tv.value);
        let z = Tensor::from_vec(&[3, 1], vec![-1.0, 0.0, 2.0]).unwrap();
        let adv = adversarial_gen_loss_logits(&z, false).unwrap();
        prop_assert!(adversarial_gen_loss_logits(&step(&z, &adv.grad, 1e-2), false).unwrap().value < adv.value);
    }
}
