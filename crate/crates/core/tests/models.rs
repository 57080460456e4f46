mod common;

use proptest::prelude::*;
use srgan_core::models::layers::Layer;
use srgan_core::models::{
    build_discriminator, build_feature_extractor, build_generator, generator_forward, param_count,
    Discriminator, DiscriminatorConfig, FeatureExtractorConfig, FeatureSource, Generator,
    GeneratorConfig, ModelParams,
};
use srgan_core::nn_ops::Mode;
use srgan_core::trainer::{set_eval_mode, set_train_mode};
use srgan_core::{Error, Tensor};

/// Closed-form count: head conv k9 + PReLU, B blocks of two k3 convs with
/// BN and one PReLU, post conv + BN, ×2 stages of k3 conv to 4w + PReLU,
/// tail conv k9 to 3 channels.
fn generator_count_oracle(b: usize, w: usize, stages: usize) -> usize {
    let conv = |k: usize, cin: usize, cout: usize| k * k * cin * cout + cout;
    let head = conv(9, 3, w) + w;
    let block = 2 * conv(3, w, w) + 2 * (2 * w) + w;
    let post = conv(3, w, w) + 2 * w;
    let stage = conv(3, w, 4 * w) + w;
    let tail = conv(9, w, 3);
    head + b * block + post + stages * stage + tail
}

fn discriminator_count_oracle(cfg: &DiscriminatorConfig) -> usize {
    let mut total = 0;
    let mut c_in = 3;
    let mut side = cfg.input_size;
    for (i, (&w, &s)) in cfg.widths.iter().zip(&cfg.strides).enumerate() {
        total += 9 * c_in * w + w;
        if i > 0 {
            total += 2 * w;
        }
        c_in = w;
        side /= s;
    }
    total + (c_in * side * side + 1) * cfg.dense_width + cfg.dense_width + 1
}

#[test]
fn generator_param_count_matches_layer_sum() {
    for b in [1, 8, 16] {
        let cfg = GeneratorConfig {
            blocks: b,
            ..GeneratorConfig::default()
        };
        let params: ModelParams<f32> = build_generator(&cfg, 0).unwrap();
        let expected = generator_count_oracle(b, 64, 2);
        assert_eq!(param_count(&params), expected, "B={b}");
        assert_eq!(Generator::new(&cfg).unwrap().param_count(), expected);
    }
    assert_eq!(generator_count_oracle(16, 64, 2), 1_550_659);
}

#[test]
fn single_conv_count() {
    let mut p = ModelParams::<f32>::new();
    let layer = Layer::conv("c", 3, 64, 64, 1).unwrap();
    layer.init(&mut p, 1.0, &mut common::rng(0)).unwrap();
    assert_eq!(param_count(&p), 36_928);
    assert_eq!(param_count(&ModelParams::<f32>::new()), 0);
}

#[test]
fn discriminator_param_count_matches_layer_sum() {
    let cfg = DiscriminatorConfig::default();
    let params: ModelParams<f32> = build_discriminator(&cfg, 0).unwrap();
    assert_eq!(param_count(&params), discriminator_count_oracle(&cfg));
}

#[test]
fn discriminator_default_feature_map_and_range() {
    let cfg = DiscriminatorConfig::default();
    let net = Discriminator::new(&cfg).unwrap();
    let params: ModelParams<f32> = net.init_params(5).unwrap();
    let x = Tensor::<f32>::rand_uniform(&[2, 3, 96, 96], -1.0, 1.0, &mut common::rng(6));
    let (p, tape) = net.forward(&params, &x, Mode::Train).unwrap();
    assert_eq!(tape.features.shape(), &[2, 512, 6, 6]);
    assert_eq!(p.shape(), &[2, 1]);
    assert!(p.data().iter().all(|&v| v > 0.0 && v < 1.0));
}

#[test]
fn discriminator_saturated_logits_stay_inside_unit_interval() {
    let cfg = DiscriminatorConfig {
        input_size: 16,
        widths: vec![2, 2, 2, 2, 2, 2, 2, 2],
        dense_width: 4,
        ..DiscriminatorConfig::default()
    };
    let net = Discriminator::new(&cfg).unwrap();
    let mut params: ModelParams<f64> = net.init_params(1).unwrap();
    for sign in [1.0, -1.0] {
        params.get_mut("dense2.bias").unwrap().data_mut()[0] = sign * 1e4;
        let x = Tensor::<f64>::randn(&[3, 3, 16, 16], 1.0, &mut common::rng(2));
        let (p, _) = net.forward(&params, &x, Mode::Train).unwrap();
        assert!(
            p.data().iter().all(|&v| v > 0.0 && v < 1.0),
            "{:?}",
            p.data()
        );
    }
}

fn tiny(skip: bool) -> GeneratorConfig {
    GeneratorConfig {
        blocks: 2,
        width: 4,
        global_skip: skip,
        ..GeneratorConfig::default()
    }
}

fn zero(params: &mut ModelParams<f64>, pred: impl Fn(&str) -> bool) {
    for (name, t) in params.iter_mut() {
        if pred(name) {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

#[test]
fn zeroed_residual_path_reduces_trunk_to_head_activation() {
    let cfg = tiny(true);
    let net = Generator::new(&cfg).unwrap();
    let mut params: ModelParams<f64> = net.init_params(3).unwrap();
    zero(&mut params, |n| {
        n.contains(".bn2.") || n.starts_with("post.bn.")
    });
    let x = Tensor::<f64>::rand_uniform(&[2, 3, 7, 5], 0.0, 1.0, &mut common::rng(4));
    let (_, tape) = net.forward(&params, &x, Mode::Train).unwrap();
    assert_eq!(tape.trunk_output.data(), tape.head_output.data());
}

#[test]
fn without_global_skip_zeroed_trunk_output_ignores_input() {
    let cfg = tiny(false);
    let net = Generator::new(&cfg).unwrap();
    let mut params: ModelParams<f64> = net.init_params(3).unwrap();
    zero(&mut params, |n| n.starts_with("post.bn."));
    let a = Tensor::<f64>::rand_uniform(&[1, 3, 6, 6], 0.0, 1.0, &mut common::rng(5));
    let b = Tensor::<f64>::rand_uniform(&[1, 3, 6, 6], 0.0, 1.0, &mut common::rng(6));
    let (ya, _) = net.forward(&params, &a, Mode::Train).unwrap();
    let (yb, _) = net.forward(&params, &b, Mode::Train).unwrap();
    assert_eq!(ya.data(), yb.data());
}

#[test]
fn eval_forward_is_bit_identical_and_batch_independent() {
    let cfg = tiny(true);
    let mut params: ModelParams<f32> = build_generator(&cfg, 9).unwrap();
    // Move the running statistics away from their initial values first.
    let warm = Tensor::<f32>::rand_uniform(&[4, 3, 8, 8], 0.0, 1.0, &mut common::rng(1));
    generator_forward(&mut params, &cfg, &warm, Mode::Train).unwrap();
    let x = Tensor::<f32>::rand_uniform(&[3, 3, 8, 8], 0.0, 1.0, &mut common::rng(2));
    let snapshot = params.clone();
    let a = generator_forward(&mut params, &cfg, &x, Mode::Eval).unwrap();
    let b = generator_forward(&mut params, &cfg, &x, Mode::Eval).unwrap();
    assert_eq!(a.data(), b.data());
    assert_eq!(
        params.bn_iter().collect::<Vec<_>>(),
        snapshot.bn_iter().collect::<Vec<_>>()
    );
    let single = Tensor::from_vec(&[1, 3, 8, 8], x.sample(1).to_vec()).unwrap();
    let c = generator_forward(&mut params, &cfg, &single, Mode::Eval).unwrap();
    assert_eq!(c.data(), a.sample(1));
}

#[test]
fn train_forward_moves_running_statistics_unless_eval_mode_is_set() {
    let cfg = tiny(true);
    let mut params: ModelParams<f32> = build_generator(&cfg, 9).unwrap();
    let x = Tensor::<f32>::rand_uniform(&[2, 3, 8, 8], 0.0, 1.0, &mut common::rng(3));
    let before = params.clone();
    set_eval_mode(&mut params);
    generator_forward(&mut params, &cfg, &x, Mode::Train).unwrap();
    for ((_, a), (_, b)) in params.bn_iter().zip(before.bn_iter()) {
        assert_eq!(a.running_mean, b.running_mean);
    }
    set_train_mode(&mut params);
    generator_forward(&mut params, &cfg, &x, Mode::Train).unwrap();
    let moved = params
        .bn_iter()
        .zip(before.bn_iter())
        .any(|((_, a), (_, b))| a.running_mean != b.running_mean);
    assert!(moved);
}

#[test]
fn same_seed_same_outputs() {
    let cfg = tiny(true);
    let a: ModelParams<f32> = build_generator(&cfg, 17).unwrap();
    let b: ModelParams<f32> = build_generator(&cfg, 17).unwrap();
    let x = Tensor::<f32>::rand_uniform(&[1, 3, 5, 9], 0.0, 1.0, &mut common::rng(8));
    let net = Generator::new(&cfg).unwrap();
    let (ya, _) = net.forward(&a, &x, Mode::Train).unwrap();
    let (yb, _) = net.forward(&b, &x, Mode::Train).unwrap();
    assert_eq!(ya.data(), yb.data());
}

#[test]
fn wrong_discriminator_input_size_is_rejected() {
    let cfg = DiscriminatorConfig::default();
    let net = Discriminator::new(&cfg).unwrap();
    let params: ModelParams<f32> = net.init_params(0).unwrap();
    let x = Tensor::<f32>::zeros(&[1, 3, 64, 64]);
    assert!(matches!(
        net.forward(&params, &x, Mode::Eval),
        Err(Error::ShapeMismatch(_))
    ));
    let short = DiscriminatorConfig {
        widths: vec![64; 7],
        ..DiscriminatorConfig::default()
    };
    assert!(matches!(
        Discriminator::new(&short),
        Err(Error::InvalidArgument(_))
    ));
}

#[test]
fn feature_map_sizes_follow_pooling() {
    for (tap, side) in [((2, 2), 16), ((5, 4), 2)] {
        let cfg = FeatureExtractorConfig {
            width_per_block: vec![2, 2, 2, 2, 2],
            tap,
            ..FeatureExtractorConfig::default()
        };
        let ext = build_feature_extractor::<f32>(&cfg, &FeatureSource::Seeded(1)).unwrap();
        let (y, _) = ext.forward(&Tensor::zeros(&[1, 3, 32, 32])).unwrap();
        assert_eq!(&y.shape()[2..], &[side, side]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn generator_output_is_four_times_input(h in 1usize..=64, w in 1usize..=64) {
        let cfg = GeneratorConfig { blocks: 1, width: 4, ..GeneratorConfig::default() };
        let params: ModelParams<f32> = build_generator(&cfg, 0).unwrap();
        let net = Generator::new(&cfg).unwrap();
        let (y, _) = net.forward(&params, &Tensor::zeros(&[1, 3, h, w]), Mode::Eval).unwrap();
        prop_assert_eq!(y.shape(), &[1, 3, 4 * h, 4 * w]);
    }
}
