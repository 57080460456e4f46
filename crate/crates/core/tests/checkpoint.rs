mod common;

use proptest::prelude::*;
use srgan_core::models::{build_generator, GeneratorConfig, ModelParams};
use srgan_core::nn_ops::BatchNormState;
use srgan_core::trainer::{
    adam_step, load_checkpoint, save_checkpoint, AdamState, Checkpoint, CheckpointMeta, Phase,
};
use srgan_core::{Error, Tensor};

#[derive(Debug, Clone)]
struct RawParam {
    shape: Vec<usize>,
    bits: Vec<u32>,
}

fn raw_param() -> impl Strategy<Value = RawParam> {
    prop::collection::vec(1usize..5, 0..4).prop_flat_map(|shape| {
        let n = shape.iter().product::<usize>();
        prop::collection::vec(any::<u32>(), n).prop_map(move |bits| RawParam {
            shape: shape.clone(),
            bits,
        })
    })
}

fn model(params: &[RawParam], bn: &[(Vec<u32>, Vec<u32>)]) -> ModelParams<f32> {
    let mut p = ModelParams::new();
    for (i, r) in params.iter().enumerate() {
        let data = r.bits.iter().map(|&b| f32::from_bits(b)).collect();
        p.insert(
            format!("layer{i}.w"),
            Tensor::from_vec(&r.shape, data).unwrap(),
        )
        .unwrap();
    }
    for (i, (m, v)) in bn.iter().enumerate() {
        let mut st = BatchNormState::new(m.len());
        st.running_mean = m.iter().map(|&b| f32::from_bits(b)).collect();
        st.running_var = v.iter().map(|&b| f32::from_bits(b)).collect();
        p.insert_bn(format!("bn{i}"), st).unwrap();
    }
    p
}

fn bits(p: &ModelParams<f32>) -> Vec<(String, Vec<u32>)> {
    let mut out: Vec<(String, Vec<u32>)> = p
        .iter()
        .map(|(n, t)| {
            (
                n.to_string(),
                t.data().iter().map(|v| v.to_bits()).collect(),
            )
        })
        .collect();
    for (n, st) in p.bn_iter() {
        out.push((
            format!("{n}.mean"),
            st.running_mean.iter().map(|v| v.to_bits()).collect(),
        ));
        out.push((
            format!("{n}.var"),
            st.running_var.iter().map(|v| v.to_bits()).collect(),
        ));
    }
    out
}

fn zeroed_like(p: &ModelParams<f32>) -> ModelParams<f32> {
    let mut q = p.clone();
    for (_, t) in q.iter_mut() {
        t.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    for (_, st) in q.bn_iter_mut() {
        st.running_mean.iter_mut().for_each(|v| *v = 0.0);
        st.running_var.iter_mut().for_each(|v| *v = 0.0);
    }
    q
}

fn sample_checkpoint() -> Vec<u8> {
    let cfg = GeneratorConfig {
        blocks: 1,
        width: 4,
        ..GeneratorConfig::default()
    };
    let params: ModelParams<f32> = build_generator(&cfg, 1).unwrap();
    let meta = CheckpointMeta {
        phase: Phase::Pretrain,
        generator: cfg,
        discriminator: None,
        adam_g: None,
        adam_d: None,
        run: serde_json::Value::Null,
    };
    let mut ck = Checkpoint::with_meta(42, &meta).unwrap();
    ck.put_model("G/", &params).unwrap();
    ck.to_bytes().unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn random_params_survive_save_and_load_bit_exact(
        params in prop::collection::vec(raw_param(), 0..6),
        bn in prop::collection::vec(
            (1usize..6).prop_flat_map(|c| (prop::collection::vec(any::<u32>(), c), prop::collection::vec(any::<u32>(), c))),
            0..3,
        ),
        step in any::<u64>(),
    ) {
        let p = model(&params, &bn);
        let mut ck = Checkpoint::new(step, "{}".into());
        ck.put_model("G/", &p).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.srck");
        save_checkpoint(&path, &ck).unwrap();
        let back = load_checkpoint(&path).unwrap();
        prop_assert_eq!(back.step, step);
        let mut q = zeroed_like(&p);
        back.take_model("G/", &mut q).unwrap();
        prop_assert_eq!(bits(&q), bits(&p));
        prop_assert_eq!(back.to_bytes().unwrap(), ck.to_bytes().unwrap());
    }
}

#[test]
fn every_truncation_is_a_format_error() {
    let bytes = sample_checkpoint();
    assert!(Checkpoint::from_bytes(&bytes).is_ok());
    for cut in 0..bytes.len() {
        match Checkpoint::from_bytes(&bytes[..cut]) {
            Err(Error::Format(_)) => {}
            other => panic!("truncation at {cut}: {:?}", other.map(|c| c.step)),
        }
    }
}

#[test]
fn trailing_bytes_and_bad_magic_are_format_errors() {
    let mut bytes = sample_checkpoint();
    bytes.push(0);
    assert!(matches!(
        Checkpoint::from_bytes(&bytes),
        Err(Error::Format(_))
    ));
    let mut bytes = sample_checkpoint();
    bytes[0] ^= 0xff;
    let err = Checkpoint::from_bytes(&bytes).unwrap_err().to_string();
    assert!(err.contains("magic"), "{err}");
}

#[test]
fn truncated_file_names_the_path() {
    let bytes = sample_checkpoint();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cut.srck");
    std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
    let err = load_checkpoint(&path).unwrap_err();
    assert!(matches!(err, Error::Format(_)));
    assert!(err.to_string().contains("cut.srck"));
}

#[test]
fn optimizer_state_round_trips_when_present() {
    let cfg = GeneratorConfig {
        blocks: 1,
        width: 4,
        ..GeneratorConfig::default()
    };
    let mut params: ModelParams<f32> = build_generator(&cfg, 1).unwrap();
    let mut adam = AdamState::new(&params, 1e-3);
    for (_, t) in params.iter_mut() {
        let g: Vec<f32> = (0..t.len()).map(|i| (i as f32 * 0.37).sin()).collect();
        t.accumulate_grad(&g).unwrap();
    }
    adam_step(&mut params, &mut adam).unwrap();

    let mut without = Checkpoint::new(1, "{}".into());
    without.put_model("G/", &params).unwrap();
    let back = Checkpoint::from_bytes(&without.to_bytes().unwrap()).unwrap();
    assert!(back
        .take_adam("G/", &params, Some(adam.hyper()))
        .unwrap()
        .is_none());

    let mut with = without.clone();
    with.put_adam("G/", &adam).unwrap();
    let back = Checkpoint::from_bytes(&with.to_bytes().unwrap()).unwrap();
    let restored = back
        .take_adam("G/", &params, Some(adam.hyper()))
        .unwrap()
        .unwrap();
    assert_eq!(restored.t, adam.t);
    for (name, m) in &adam.m {
        assert_eq!(restored.m[name].data(), m.data());
        assert_eq!(restored.v[name].data(), adam.v[name].data());
    }
    assert!(matches!(
        back.take_adam("G/", &params, None),
        Err(Error::Format(_))
    ));
}
