mod common;

use rand::Rng;
use srgan_core::image_pipeline::DegradeConfig;
use srgan_core::losses::{ContentLoss, LossSpec};
use srgan_core::models::{
    build_discriminator, build_generator, DiscriminatorConfig, GeneratorConfig, ModelParams,
};
use srgan_core::trainer::{
    adam_step, discriminator_step, extractor_for, generator_step, load_checkpoint,
    pretrain_srresnet, train_srgan, AdamState, CheckpointOptions, Dataset, DiscriminatorState,
    FeatureNetConfig, GeneratorState, Phase, TrainSchedule,
};
use srgan_core::{Error, Tensor};

fn gen_cfg() -> GeneratorConfig {
    GeneratorConfig {
        blocks: 1,
        width: 8,
        ..GeneratorConfig::default()
    }
}

fn disc_cfg() -> DiscriminatorConfig {
    DiscriminatorConfig {
        input_size: 16,
        widths: vec![4, 4, 8, 8, 8, 8, 8, 8],
        dense_width: 16,
        ..DiscriminatorConfig::default()
    }
}

fn schedule(segments: Vec<(usize, f64)>, batch: usize) -> TrainSchedule {
    TrainSchedule {
        lr_segments: segments,
        batch_size: batch,
        crop: 16,
        seed: 3,
        checkpoint_every: 0,
    }
}

fn gan_spec() -> LossSpec {
    LossSpec {
        content: ContentLoss::Feature(2, 2),
        ..LossSpec::default()
    }
}

fn feature_net() -> FeatureNetConfig {
    FeatureNetConfig {
        width_per_block: vec![4, 4, 4, 4, 4],
        ..FeatureNetConfig::default()
    }
}

fn gen_state(seed: u64) -> GeneratorState {
    GeneratorState::new(&gen_cfg(), build_generator(&gen_cfg(), seed).unwrap(), None).unwrap()
}

fn disc_state(seed: u64) -> DiscriminatorState {
    DiscriminatorState::new(
        &disc_cfg(),
        build_discriminator(&disc_cfg(), seed).unwrap(),
        None,
    )
    .unwrap()
}

/// Bit patterns of every learnable and running statistic.
fn fingerprint(p: &ModelParams<f32>) -> Vec<u32> {
    let mut out: Vec<u32> = p
        .iter()
        .flat_map(|(_, t)| t.data().iter().map(|v| v.to_bits()))
        .collect();
    for (_, st) in p.bn_iter() {
        out.extend(
            st.running_mean
                .iter()
                .chain(&st.running_var)
                .map(|v| v.to_bits()),
        );
    }
    out
}

fn learnables(p: &ModelParams<f32>) -> Vec<u32> {
    p.iter()
        .flat_map(|(_, t)| t.data().iter().map(|v| v.to_bits()))
        .collect()
}

#[test]
fn adam_matches_a_direct_64_bit_evaluation() {
    let mut r = common::rng(11);
    let mut params = ModelParams::<f64>::new();
    params
        .insert("a", Tensor::randn(&[3, 4], 1.0, &mut r))
        .unwrap();
    params
        .insert("b", Tensor::randn(&[5], 1.0, &mut r))
        .unwrap();
    let mut st = AdamState::new(&params, 2e-3);
    let mut w: Vec<f64> = params.iter().flat_map(|(_, t)| t.data().to_vec()).collect();
    let (mut m, mut v) = (vec![0.0; w.len()], vec![0.0; w.len()]);
    for t in 1..=25 {
        let grads: Vec<f64> = (0..w.len()).map(|_| r.random_range(-3.0..3.0)).collect();
        let mut offset = 0;
        for (_, p) in params.iter_mut() {
            let n = p.len();
            p.accumulate_grad(&grads[offset..offset + n]).unwrap();
            offset += n;
        }
        adam_step(&mut params, &mut st).unwrap();
        for i in 0..w.len() {
            m[i] = 0.9 * m[i] + 0.1 * grads[i];
            v[i] = 0.999 * v[i] + 0.001 * grads[i] * grads[i];
            let mh = m[i] / (1.0 - 0.9f64.powi(t));
            let vh = v[i] / (1.0 - 0.999f64.powi(t));
            w[i] -= 2e-3 * mh / (vh.sqrt() + 1e-8);
        }
        let got: Vec<f64> = params.iter().flat_map(|(_, t)| t.data().to_vec()).collect();
        for (g, e) in got.iter().zip(&w) {
            assert!(
                (g - e).abs() <= 1e-6 * e.abs().max(1e-12),
                "step {t}: {g} vs {e}"
            );
        }
        assert!(st.v.values().all(|t| t.data().iter().all(|&x| x >= 0.0)));
    }
    assert_eq!(st.t, 25);
}

#[test]
fn learning_rate_switches_exactly_after_the_first_segment() {
    let data = Dataset::from_images(common::scenes(2, 16, 1)).unwrap();
    let mut gen = gen_state(0);
    let mut disc = disc_state(1);
    let ext = extractor_for(&gan_spec(), &feature_net()).unwrap();
    let log = train_srgan(
        &mut gen,
        Phase::Pretrain,
        false,
        &mut disc,
        &data,
        &gan_spec(),
        &schedule(vec![(100, 1e-4), (100, 1e-5)], 2),
        &DegradeConfig::default(),
        ext.as_ref(),
        &CheckpointOptions::default(),
    )
    .unwrap();
    assert_eq!(log.records.len(), 200);
    assert!(log.records[..100].iter().all(|r| r.learning_rate == 1e-4));
    assert!(log.records[100..].iter().all(|r| r.learning_rate == 1e-5));
    assert_eq!(log.records[100].iteration, 101);
    for r in &log.records[..50] {
        let p = r.d_fake_mean.unwrap();
        assert!(p > 0.0 && p < 1.0);
    }
}

#[test]
fn discriminator_and_generator_steps_touch_only_their_own_model() {
    let data = Dataset::from_images(common::scenes(3, 16, 2)).unwrap();
    let mut gen = gen_state(0);
    let mut disc = disc_state(1);
    let ext = extractor_for(&gan_spec(), &feature_net()).unwrap();
    let mut r = common::rng(5);
    for _ in 0..3 {
        let (lr, hr) = data
            .sample_batch(2, 16, &DegradeConfig::default(), &mut r)
            .unwrap();
        let g_before = learnables(&gen.params);
        let d_before = fingerprint(&disc.params);
        let d = discriminator_step(&mut gen, &mut disc, &lr, &hr, 1e-3).unwrap();
        assert_eq!(learnables(&gen.params), g_before, "D step moved G");
        assert_ne!(fingerprint(&disc.params), d_before);

        let g_before = fingerprint(&gen.params);
        let d_before = fingerprint(&disc.params);
        let d_adam = disc.adam.clone();
        generator_step(&mut gen, &disc, &d, &hr, &gan_spec(), ext.as_ref(), 1e-3).unwrap();
        assert_eq!(fingerprint(&disc.params), d_before, "G step moved D");
        assert_eq!(disc.adam, d_adam);
        assert_ne!(learnables(&gen.params), g_before);
    }
}

#[test]
fn pretraining_lowers_the_loss_and_samples_with_replacement() {
    let data = Dataset::from_images(common::scenes(2, 16, 3)).unwrap();
    let mut gen = gen_state(4);
    let log = pretrain_srresnet(
        &mut gen,
        &data,
        &LossSpec::content_only(ContentLoss::Mse),
        &schedule(vec![(120, 3e-3)], 6),
        &DegradeConfig::default(),
        None,
        &CheckpointOptions::default(),
    )
    .unwrap();
    let n = log.records.len();
    assert!(log.mean_g_loss(n - 20..n) < log.mean_g_loss(0..20));
    assert!(log.records.iter().all(|r| r.g_loss.is_finite()));
}

#[test]
fn adversarial_training_requires_pretrained_generator_unless_overridden() {
    let data = Dataset::from_images(common::scenes(1, 16, 4)).unwrap();
    let ext = extractor_for(&gan_spec(), &feature_net()).unwrap();
    let run = |allow: bool| {
        train_srgan(
            &mut gen_state(0),
            Phase::Init,
            allow,
            &mut disc_state(1),
            &data,
            &gan_spec(),
            &schedule(vec![(1, 1e-4)], 2),
            &DegradeConfig::default(),
            ext.as_ref(),
            &CheckpointOptions::default(),
        )
    };
    assert!(matches!(run(false), Err(Error::Provenance(_))));
    let log = run(true).unwrap();
    assert_eq!(log.warnings.len(), 1);
}

#[test]
fn empty_training_set_is_a_data_error() {
    assert!(matches!(
        Dataset::from_images(Vec::new()),
        Err(Error::Data(_))
    ));
}

fn full_run(dir: &std::path::Path) -> (Vec<u8>, String, String) {
    let data = Dataset::from_images(common::scenes(3, 16, 9)).unwrap();
    let mut gen = gen_state(7);
    let opts = CheckpointOptions {
        dir: Some(dir.join("pre")),
        run_config: serde_json::json!({"seed": 3}),
    };
    let pre = pretrain_srresnet(
        &mut gen,
        &data,
        &LossSpec::content_only(ContentLoss::Mse),
        &schedule(vec![(6, 1e-3)], 2),
        &DegradeConfig::default(),
        None,
        &opts,
    )
    .unwrap();
    let mut disc = disc_state(8);
    let ext = extractor_for(&gan_spec(), &feature_net()).unwrap();
    let opts = CheckpointOptions {
        dir: Some(dir.join("gan")),
        run_config: serde_json::json!({"seed": 3}),
    };
    let gan = train_srgan(
        &mut gen,
        Phase::Pretrain,
        false,
        &mut disc,
        &data,
        &gan_spec(),
        &schedule(vec![(4, 1e-4)], 2),
        &DegradeConfig::default(),
        ext.as_ref(),
        &opts,
    )
    .unwrap();
    let bytes = std::fs::read(dir.join("gan/final.srck")).unwrap();
    (bytes, pre.to_csv(), gan.to_csv())
}

#[test]
fn equal_seeds_give_identical_checkpoints_and_logs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = full_run(a.path());
    let rb = full_run(b.path());
    assert_eq!(ra, rb);
    let ck = load_checkpoint(a.path().join("gan/final.srck")).unwrap();
    let meta = ck.meta().unwrap();
    assert_eq!(meta.phase, Phase::Gan);
    assert!(meta.adam_d.is_some());
    assert_eq!(ck.step, 4);
}
