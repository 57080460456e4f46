use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;
use srgan_core::image_pipeline::{
    center_crop_to_multiple, degrade, from_float, list_pngs, load_image, save_image, to_float,
    upsample_bicubic, upsample_nearest, DegradeConfig, ImageF, ValueRange,
};
use srgan_core::metrics::{evaluate, EvalOptions, MetricOptions, MetricReport};
use srgan_core::models::{
    build_discriminator, build_generator, super_resolve, Generator, ModelParams,
};
use srgan_core::trainer::{
    extractor_for, load_checkpoint, pretrain_srresnet, train_srgan, CheckpointMeta,
    CheckpointOptions, Dataset, DiscriminatorState, GeneratorState, Phase, TrainConfig, TrainLog,
};
use srgan_core::{Error, Result};

use crate::config::write_echo;

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn file_name(p: &Path) -> String {
    p.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn nonempty_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let files = list_pngs(dir)?;
    if files.is_empty() {
        return Err(Error::Data(format!("no PNG files in {}", dir.display())));
    }
    Ok(files)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DegradeSettings {
    pub factor: usize,
    pub sigma: Option<f64>,
}

impl Default for DegradeSettings {
    fn default() -> Self {
        Self {
            factor: 4,
            sigma: None,
        }
    }
}

/// Writes a low-resolution copy of every PNG in `input` under the same name.
pub fn cmd_degrade(
    input: &Path,
    output: &Path,
    s: &DegradeSettings,
    echo: &serde_json::Value,
) -> Result<Vec<PathBuf>> {
    let cfg = DegradeConfig {
        factor: s.factor,
        gaussian_sigma: s.sigma,
    };
    cfg.validate()?;
    let files = nonempty_pngs(input)?;
    write_echo(output, echo)?;
    let mut written = Vec::with_capacity(files.len());
    for f in files {
        let hr = to_float(&load_image(&f)?, ValueRange::Unit);
        let lr = degrade(&center_crop_to_multiple(&hr, s.factor)?, &cfg)?;
        let out = output.join(file_name(&f));
        save_image(&from_float(&lr), &out)?;
        written.push(out);
    }
    Ok(written)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    Nearest,
    Bicubic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineSettings {
    pub method: Interpolation,
    pub metric: MetricOptions,
}

impl Default for BaselineSettings {
    fn default() -> Self {
        Self {
            method: Interpolation::Bicubic,
            metric: MetricOptions::default(),
        }
    }
}

/// Integer factor between an LR image and its reference. The reference may
/// exceed `r·lr` by less than `r` per side, as left by centre cropping.
pub fn infer_factor(lr: (usize, usize), hr: (usize, usize)) -> Result<usize> {
    let bad = || {
        Error::Data(format!(
            "size ratio {}x{} : {}x{} is not an integer factor",
            hr.0, hr.1, lr.0, lr.1
        ))
    };
    if lr.0 == 0 || lr.1 == 0 {
        return Err(bad());
    }
    let r = hr.0 / lr.0;
    if r == 0 || hr.0 - r * lr.0 >= r || hr.1 / lr.1 != r || hr.1 - r * lr.1 >= r {
        return Err(bad());
    }
    Ok(r)
}

/// Upsamples every LR image with a classical interpolator into
/// `output/sr/` and scores the results against `hr`.
pub fn cmd_baseline(
    lr_dir: &Path,
    hr_dir: &Path,
    output: &Path,
    s: &BaselineSettings,
    echo: &serde_json::Value,
) -> Result<MetricReport> {
    let files = nonempty_pngs(lr_dir)?;
    let sr_dir = output.join("sr");
    fs::create_dir_all(&sr_dir).map_err(|e| io_err(&sr_dir, e))?;
    write_echo(output, echo)?;
    for f in &files {
        let name = file_name(f);
        let hr_path = hr_dir.join(&name);
        if !hr_path.is_file() {
            return Err(Error::Data(format!(
                "no reference for {name} in {}",
                hr_dir.display()
            )));
        }
        let lr = to_float(&load_image(f)?, ValueRange::Unit);
        let hr = load_image(&hr_path)?;
        let r = infer_factor((lr.height, lr.width), (hr.height, hr.width))?;
        let sr = match s.method {
            Interpolation::Nearest => upsample_nearest(&lr, r)?,
            Interpolation::Bicubic => upsample_bicubic(&lr, r)?,
        };
        save_image(&from_float(&sr), sr_dir.join(&name))?;
    }
    let opts = EvalOptions {
        metric: s.metric,
        skip_missing: true,
        method: match s.method {
            Interpolation::Nearest => "nearest".into(),
            Interpolation::Bicubic => "bicubic".into(),
        },
    };
    // References without an LR counterpart are listed, not scored.
    let report = evaluate(&sr_dir, hr_dir, &opts)?;
    report.write(output)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[derive(Default)]
pub struct EvalSettings {
    pub metric: MetricOptions,
    pub skip_missing: bool,
}


pub fn cmd_eval(
    sr_dir: &Path,
    hr_dir: &Path,
    output: &Path,
    s: &EvalSettings,
    echo: &serde_json::Value,
) -> Result<MetricReport> {
    let opts = EvalOptions {
        metric: s.metric,
        skip_missing: s.skip_missing,
        method: file_name(sr_dir),
    };
    let report = evaluate(sr_dir, hr_dir, &opts)?;
    write_echo(output, echo)?;
    report.write(output)?;
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    Srresnet,
    Srgan,
}

pub struct TrainOutcome {
    pub log: TrainLog,
    pub final_checkpoint: PathBuf,
}

pub const LOSS_LOG: &str = "loss.csv";
pub const FINAL_CHECKPOINT: &str = "final.srck";

/// Generator architecture and weights stored in a checkpoint.
pub fn load_generator(path: &Path) -> Result<(Generator, ModelParams<f32>, CheckpointMeta)> {
    let ck = load_checkpoint(path)?;
    let meta = ck.meta()?;
    let mut params: ModelParams<f32> = build_generator(&meta.generator, 0)?;
    ck.take_model("G/", &mut params)?;
    Ok((Generator::new(&meta.generator)?, params, meta))
}

/// Runs one training phase and writes the loss log and checkpoints to
/// `output`. `checkpoint_echo` is embedded in each checkpoint; it should hold
/// no paths so equal-seed runs into different directories stay identical.
#[allow(clippy::too_many_arguments)]
pub fn cmd_train(
    mode: TrainMode,
    cfg: &TrainConfig,
    manifest: &Path,
    output: &Path,
    init: Option<&Path>,
    allow_unpretrained: bool,
    echo: &serde_json::Value,
    checkpoint_echo: &serde_json::Value,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let data = Dataset::from_manifest(manifest)?;
    write_echo(output, echo)?;
    let ckpt = CheckpointOptions {
        dir: Some(output.to_path_buf()),
        run_config: checkpoint_echo.clone(),
    };
    let log = match mode {
        TrainMode::Srresnet => {
            let params = build_generator(&cfg.generator, cfg.pretrain.schedule.seed)?;
            let mut gen = GeneratorState::new(&cfg.generator, params, None)?;
            let ext = extractor_for(&cfg.pretrain.loss, &cfg.feature)?;
            pretrain_srresnet(
                &mut gen,
                &data,
                &cfg.pretrain.loss,
                &cfg.pretrain.schedule,
                &cfg.degrade,
                ext.as_ref(),
                &ckpt,
            )?
        }
        TrainMode::Srgan => {
            let (mut gen, provenance) = match init {
                Some(p) => {
                    let (_, params, meta) = load_generator(p)?;
                    if meta.generator != cfg.generator {
                        return Err(Error::InvalidArgument(format!(
                            "generator in {} differs from the configured generator",
                            p.display()
                        )));
                    }
                    (
                        GeneratorState::new(&cfg.generator, params, None)?,
                        meta.phase,
                    )
                }
                None => {
                    let params = build_generator(&cfg.generator, cfg.gan.schedule.seed)?;
                    (
                        GeneratorState::new(&cfg.generator, params, None)?,
                        Phase::Init,
                    )
                }
            };
            let d_params =
                build_discriminator(&cfg.discriminator, cfg.gan.schedule.seed.wrapping_add(1))?;
            let mut disc = DiscriminatorState::new(&cfg.discriminator, d_params, None)?;
            let ext = extractor_for(&cfg.gan.loss, &cfg.feature)?;
            train_srgan(
                &mut gen,
                provenance,
                allow_unpretrained,
                &mut disc,
                &data,
                &cfg.gan.loss,
                &cfg.gan.schedule,
                &cfg.degrade,
                ext.as_ref(),
                &ckpt,
            )?
        }
    };
    log.write_csv(output.join(LOSS_LOG))?;
    Ok(TrainOutcome {
        log,
        final_checkpoint: output.join(FINAL_CHECKPOINT),
    })
}

fn infer_one(net: &Generator, params: &ModelParams<f32>, input: &Path, out: &Path) -> Result<()> {
    let lr: ImageF = to_float(&load_image(input)?, ValueRange::Unit);
    let sr = super_resolve(net, params, &lr)?;
    save_image(&from_float(&sr), out)
}

/// Super-resolves one PNG or every PNG in a directory. For a single file,
/// `output` is the target file when it ends in `.png` and a directory otherwise.
pub fn cmd_infer(
    checkpoint: &Path,
    input: &Path,
    output: &Path,
    echo: &serde_json::Value,
) -> Result<Vec<PathBuf>> {
    let (net, params, _) = load_generator(checkpoint)?;
    let single_file = !input.is_dir()
        && output
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
    let out_dir = match output.parent() {
        Some(p) if single_file && !p.as_os_str().is_empty() => p.to_path_buf(),
        _ if single_file => PathBuf::from("."),
        _ => output.to_path_buf(),
    };
    let jobs: Vec<(PathBuf, PathBuf)> = if input.is_dir() {
        nonempty_pngs(input)?
            .into_iter()
            .map(|f| {
                let out = output.join(file_name(&f));
                (f, out)
            })
            .collect()
    } else if single_file {
        vec![(input.to_path_buf(), output.to_path_buf())]
    } else {
        vec![(input.to_path_buf(), output.join(file_name(input)))]
    };
    write_echo(&out_dir, echo)?;
    for (src, dst) in &jobs {
        infer_one(&net, &params, src, dst)?;
    }
    Ok(jobs.into_iter().map(|j| j.1).collect())
}

/// Echo body shared by all commands.
pub fn echo(
    command: &str,
    seed: u64,
    paths: serde_json::Value,
    config: &impl Serialize,
) -> serde_json::Value {
    json!({
        "command": command,
        "seed": seed,
        "paths": paths,
        "config": config,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factor_inference() {
        assert_eq!(infer_factor((24, 24), (96, 96)).unwrap(), 4);
        assert_eq!(infer_factor((24, 24), (97, 99)).unwrap(), 4);
        assert_eq!(infer_factor((17, 13), (68, 52)).unwrap(), 4);
        assert!(matches!(
            infer_factor((25, 25), (96, 96)),
            Err(Error::Data(_))
        ));
        assert!(matches!(
            infer_factor((24, 24), (96, 72)),
            Err(Error::Data(_))
        ));
        assert!(matches!(
            infer_factor((24, 24), (12, 12)),
            Err(Error::Data(_))
        ));
    }
}
