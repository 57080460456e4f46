use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::adam::{adam_step, AdamState};
use super::checkpoint::{save_checkpoint, Checkpoint, CheckpointMeta, Phase};
use super::config::{FeatureNetConfig, TrainSchedule};
use crate::error::{Error, Result};
use crate::image_pipeline::{
    load_image, random_crop_pair, read_manifest, to_float, DegradeConfig, ImageF, ValueRange,
};
use crate::losses::{
    discriminator_loss_logits, perceptual_loss, AdvInput, ContentLoss, LossReport, LossSpec,
};
use crate::models::{
    BackwardOpts, Discriminator, DiscriminatorConfig, FeatureExtractor, FeatureSource, Generator,
    GeneratorConfig, GeneratorTape, ModelParams,
};
use crate::nn_ops::{Mode, Tensor};

/// High-resolution training images held in memory, values in `[0, 1]`.
#[derive(Clone, Debug)]
pub struct Dataset {
    images: Vec<ImageF>,
}

impl Dataset {
    pub fn from_images(images: Vec<ImageF>) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::Data("training set is empty".into()));
        }
        let images = images
            .into_iter()
            .map(|img| {
                let img = img.remap(ValueRange::Unit);
                if img.channels == 3 {
                    return Ok(img);
                }
                let data = img.data.iter().flat_map(|&v| [v, v, v]).collect();
                ImageF::new(img.height, img.width, 3, data, ValueRange::Unit)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { images })
    }

    pub fn from_manifest(path: impl AsRef<Path>) -> Result<Self> {
        let paths = read_manifest(path.as_ref())?;
        if paths.is_empty() {
            return Err(Error::Data(format!(
                "manifest {} lists no images",
                path.as_ref().display()
            )));
        }
        let images = paths
            .iter()
            .map(|p| Ok(to_float(&load_image(p)?, ValueRange::Unit)))
            .collect::<Result<Vec<_>>>()?;
        Self::from_images(images)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Draws `batch` images uniformly with replacement and a random crop of
    /// each. Returns `(lr, hr)` with LR values in `[0, 1]` and HR values in
    /// `[-1, 1]`.
    pub fn sample_batch<R: Rng + ?Sized>(
        &self,
        batch: usize,
        crop: usize,
        degrade: &DegradeConfig,
        rng: &mut R,
    ) -> Result<(Tensor<f32>, Tensor<f32>)> {
        let mut lrs = Vec::with_capacity(batch);
        let mut hrs = Vec::with_capacity(batch);
        for _ in 0..batch {
            let img = &self.images[rng.random_range(0..self.images.len())];
            let (hr, lr) = random_crop_pair(img, crop, degrade, rng)?;
            lrs.push(lr.to_tensor());
            hrs.push(hr.remap(ValueRange::Symmetric).to_tensor());
        }
        Ok((Tensor::stack(&lrs)?, Tensor::stack(&hrs)?))
    }
}

/// One row of the training log. Losses are evaluated with the parameters in
/// effect before that iteration's update.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRecord {
    pub iteration: usize,
    pub learning_rate: f64,
    pub g_loss: f64,
    pub content: f64,
    pub adversarial: f64,
    pub tv: f64,
    pub d_loss: Option<f64>,
    pub d_real_mean: Option<f64>,
    pub d_fake_mean: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<LogRecord>,
    pub warnings: Vec<String>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut s = String::from("iteration,learning_rate,g_loss,content,adversarial,tv,d_loss,d_real_mean,d_fake_mean\n");
        for r in &self.records {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                r.iteration,
                r.learning_rate,
                r.g_loss,
                r.content,
                r.adversarial,
                r.tv,
                opt(r.d_loss),
                opt(r.d_real_mean),
                opt(r.d_fake_mean)
            );
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    /// Mean generator loss over records `range`.
    pub fn mean_g_loss(&self, range: std::ops::Range<usize>) -> f64 {
        let r = &self.records[range];
        r.iter().map(|x| x.g_loss).sum::<f64>() / r.len() as f64
    }
}

/// Output location and configuration echo for checkpoints written during training.
#[derive(Clone, Debug, Default)]
pub struct CheckpointOptions {
    pub dir: Option<PathBuf>,
    pub run_config: serde_json::Value,
}

/// Builds the frozen extractor a loss needs (none for pixel losses).
pub fn extractor_for(
    spec: &LossSpec,
    net: &FeatureNetConfig,
) -> Result<Option<FeatureExtractor<f32>>> {
    match spec.content {
        ContentLoss::Mse => Ok(None),
        ContentLoss::Feature(i, j) => {
            let source = match &net.weights {
                Some(p) => FeatureSource::WeightFile(p.clone()),
                None => FeatureSource::Seeded(net.seed),
            };
            Ok(Some(FeatureExtractor::new(
                &net.extractor_config((i, j)),
                &source,
            )?))
        }
    }
}

/// Puts every batch-normalization layer into inference mode.
pub fn set_eval_mode<T: crate::Float>(params: &mut ModelParams<T>) {
    params.set_mode(Mode::Eval);
}

pub fn set_train_mode<T: crate::Float>(params: &mut ModelParams<T>) {
    params.set_mode(Mode::Train);
}

/// Generator, its parameters and optimizer.
pub struct GeneratorState {
    pub net: Generator,
    pub params: ModelParams<f32>,
    pub adam: AdamState<f32>,
}

impl GeneratorState {
    pub fn new(
        cfg: &GeneratorConfig,
        params: ModelParams<f32>,
        adam: Option<AdamState<f32>>,
    ) -> Result<Self> {
        let net = Generator::new(cfg)?;
        let adam = adam.unwrap_or_else(|| AdamState::new(&params, 0.0));
        Ok(Self { net, params, adam })
    }
}

pub struct DiscriminatorState {
    pub net: Discriminator,
    pub params: ModelParams<f32>,
    pub adam: AdamState<f32>,
}

impl DiscriminatorState {
    pub fn new(
        cfg: &DiscriminatorConfig,
        params: ModelParams<f32>,
        adam: Option<AdamState<f32>>,
    ) -> Result<Self> {
        let net = Discriminator::new(cfg)?;
        let adam = adam.unwrap_or_else(|| AdamState::new(&params, 0.0));
        Ok(Self { net, params, adam })
    }
}

fn mean(t: &Tensor<f32>) -> f64 {
    t.data().iter().map(|&v| v as f64).sum::<f64>() / t.len() as f64
}

/// One pixel- or feature-space update of the generator.
pub fn pretrain_step(
    gen: &mut GeneratorState,
    lr_batch: &Tensor<f32>,
    hr_batch: &Tensor<f32>,
    spec: &LossSpec,
    extractor: Option<&FeatureExtractor<f32>>,
    learning_rate: f64,
) -> Result<LossReport<f32>> {
    let (sr, tape) = gen.net.forward(&gen.params, lr_batch, Mode::Train)?;
    let report = perceptual_loss(&sr, hr_batch, None, spec, extractor)?;
    gen.net.commit(&mut gen.params, &tape)?;
    gen.params.zero_grads();
    gen.net.backward(
        &mut gen.params,
        &tape,
        report.image_grad.clone(),
        BackwardOpts {
            param_grads: true,
            input_grad: false,
        },
    )?;
    gen.adam.learning_rate = learning_rate;
    adam_step(&mut gen.params, &mut gen.adam)?;
    Ok(report)
}

/// Result of the discriminator half of an adversarial iteration.
pub struct DStep {
    pub fake: Tensor<f32>,
    pub tape: GeneratorTape<f32>,
    pub d_loss: f64,
    pub d_real_mean: f64,
    pub d_fake_mean: f64,
}

/// Generates a batch and updates only the discriminator, with separate
/// forward passes for the real and generated images.
pub fn discriminator_step(
    gen: &mut GeneratorState,
    disc: &mut DiscriminatorState,
    lr_batch: &Tensor<f32>,
    hr_batch: &Tensor<f32>,
    learning_rate: f64,
) -> Result<DStep> {
    let (fake, tape) = gen.net.forward(&gen.params, lr_batch, Mode::Train)?;
    gen.net.commit(&mut gen.params, &tape)?;
    let (p_real, t_real) = disc.net.forward(&disc.params, hr_batch, Mode::Train)?;
    let (p_fake, t_fake) = disc.net.forward(&disc.params, &fake, Mode::Train)?;
    let loss = discriminator_loss_logits(&t_real.logits, &t_fake.logits)?;
    disc.net.commit(&mut disc.params, &t_real)?;
    disc.net.commit(&mut disc.params, &t_fake)?;
    disc.params.zero_grads();
    let opts = BackwardOpts {
        param_grads: true,
        input_grad: false,
    };
    disc.net
        .backward(&mut disc.params, &t_real, loss.grad_real, opts)?;
    disc.net
        .backward(&mut disc.params, &t_fake, loss.grad_fake, opts)?;
    disc.adam.learning_rate = learning_rate;
    adam_step(&mut disc.params, &mut disc.adam)?;
    Ok(DStep {
        fake,
        tape,
        d_loss: loss.value,
        d_real_mean: mean(&p_real),
        d_fake_mean: mean(&p_fake),
    })
}

/// Updates only the generator against the current discriminator. The
/// discriminator runs on batch statistics without committing them and
/// receives no parameter gradients.
pub fn generator_step(
    gen: &mut GeneratorState,
    disc: &DiscriminatorState,
    d: &DStep,
    hr_batch: &Tensor<f32>,
    spec: &LossSpec,
    extractor: Option<&FeatureExtractor<f32>>,
    learning_rate: f64,
) -> Result<LossReport<f32>> {
    let (_, d_tape) = disc.net.forward(&disc.params, &d.fake, Mode::Train)?;
    let report = perceptual_loss(
        &d.fake,
        hr_batch,
        Some(AdvInput::Logits(&d_tape.logits)),
        spec,
        extractor,
    )?;
    let mut grad = report.image_grad.clone();
    if spec.adversarial_weight > 0.0 {
        let g_logits = report
            .adversarial_grad
            .as_ref()
            .expect("adversarial input given")
            .map(|v| v * spec.adversarial_weight as f32);
        let g_img = disc.net.input_grad(&disc.params, &d_tape, g_logits)?;
        for (a, &b) in grad.data_mut().iter_mut().zip(g_img.data()) {
            *a += b;
        }
    }
    gen.params.zero_grads();
    gen.net.backward(
        &mut gen.params,
        &d.tape,
        grad,
        BackwardOpts {
            param_grads: true,
            input_grad: false,
        },
    )?;
    gen.adam.learning_rate = learning_rate;
    adam_step(&mut gen.params, &mut gen.adam)?;
    Ok(report)
}

fn write_checkpoint(
    opts: &CheckpointOptions,
    file: &str,
    step: u64,
    phase: Phase,
    gen: &GeneratorState,
    disc: Option<&DiscriminatorState>,
) -> Result<()> {
    let Some(dir) = &opts.dir else { return Ok(()) };
    let meta = CheckpointMeta {
        phase,
        generator: gen.net.config().clone(),
        discriminator: disc.map(|d| d.net.config().clone()),
        adam_g: Some(gen.adam.hyper()),
        adam_d: disc.map(|d| d.adam.hyper()),
        run: opts.run_config.clone(),
    };
    let mut ck = Checkpoint::with_meta(step, &meta)?;
    ck.put_model("G/", &gen.params)?;
    ck.put_adam("G/", &gen.adam)?;
    if let Some(d) = disc {
        ck.put_model("D/", &d.params)?;
        ck.put_adam("D/", &d.adam)?;
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_checkpoint(dir.join(file), &ck)
}

fn data_rng(seed: u64) -> ChaCha8Rng {
    // Separate stream from parameter initialization.
    ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_da7a)
}

/// Content-loss training of the generator alone.
#[allow(clippy::too_many_arguments)]
pub fn pretrain_srresnet(
    gen: &mut GeneratorState,
    data: &Dataset,
    spec: &LossSpec,
    sched: &TrainSchedule,
    degrade: &DegradeConfig,
    extractor: Option<&FeatureExtractor<f32>>,
    ckpt: &CheckpointOptions,
) -> Result<TrainLog> {
    sched.validate()?;
    spec.validate()?;
    if spec.adversarial_weight != 0.0 {
        return Err(Error::InvalidArgument(
            "pretraining takes a content-only loss".into(),
        ));
    }
    if data.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let mut rng = data_rng(sched.seed);
    let mut log = TrainLog::default();
    for it in 1..=sched.iterations() {
        let lr = sched.lr_at(it);
        let (lr_b, hr_b) = data.sample_batch(sched.batch_size, sched.crop, degrade, &mut rng)?;
        let r = pretrain_step(gen, &lr_b, &hr_b, spec, extractor, lr)?;
        log.records.push(LogRecord {
            iteration: it,
            learning_rate: lr,
            g_loss: r.total,
            content: r.content_value,
            adversarial: 0.0,
            tv: r.tv_value,
            d_loss: None,
            d_real_mean: None,
            d_fake_mean: None,
        });
        if sched.checkpoint_every > 0 && it % sched.checkpoint_every == 0 && it < sched.iterations()
        {
            write_checkpoint(
                ckpt,
                &format!("pretrain_{it:08}.srck"),
                it as u64,
                Phase::Pretrain,
                gen,
                None,
            )?;
        }
    }
    write_checkpoint(
        ckpt,
        "final.srck",
        sched.iterations() as u64,
        Phase::Pretrain,
        gen,
        None,
    )?;
    Ok(log)
}

/// Alternating discriminator/generator training. The generator must come
/// from a pretraining (or earlier adversarial) checkpoint unless
/// `allow_unpretrained` is set, in which case a warning is logged.
#[allow(clippy::too_many_arguments)]
pub fn train_srgan(
    gen: &mut GeneratorState,
    provenance: Phase,
    allow_unpretrained: bool,
    disc: &mut DiscriminatorState,
    data: &Dataset,
    spec: &LossSpec,
    sched: &TrainSchedule,
    degrade: &DegradeConfig,
    extractor: Option<&FeatureExtractor<f32>>,
    ckpt: &CheckpointOptions,
) -> Result<TrainLog> {
    sched.validate()?;
    spec.validate()?;
    let mut log = TrainLog::default();
    if provenance == Phase::Init {
        if !allow_unpretrained {
            return Err(Error::Provenance(
                "adversarial training needs a generator initialized from a pretraining checkpoint"
                    .into(),
            ));
        }
        log.warnings.push(
            "generator was not pretrained; adversarial training may settle in a poor optimum"
                .into(),
        );
    }
    if data.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let mut rng = data_rng(sched.seed);
    for it in 1..=sched.iterations() {
        let lr = sched.lr_at(it);
        let (lr_b, hr_b) = data.sample_batch(sched.batch_size, sched.crop, degrade, &mut rng)?;
        let d = discriminator_step(gen, disc, &lr_b, &hr_b, lr)?;
        let r = generator_step(gen, disc, &d, &hr_b, spec, extractor, lr)?;
        log.records.push(LogRecord {
            iteration: it,
            learning_rate: lr,
            g_loss: r.total,
            content: r.content_value,
            adversarial: r.adversarial_value,
            tv: r.tv_value,
            d_loss: Some(d.d_loss),
            d_real_mean: Some(d.d_real_mean),
            d_fake_mean: Some(d.d_fake_mean),
        });
        if sched.checkpoint_every > 0 && it % sched.checkpoint_every == 0 && it < sched.iterations()
        {
            write_checkpoint(
                ckpt,
                &format!("gan_{it:08}.srck"),
                it as u64,
                Phase::Gan,
                gen,
                Some(disc),
            )?;
        }
    }
    write_checkpoint(
        ckpt,
        "final.srck",
        sched.iterations() as u64,
        Phase::Gan,
        gen,
        Some(disc),
    )?;
    Ok(log)
}
