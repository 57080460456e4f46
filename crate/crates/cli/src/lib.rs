//! Command-line workflows over `srgan-core`: degradation, classical
//! baselines, training, inference, evaluation and depth profiling.
//!
//! Every command resolves its settings from defaults, `--config FILE`,
//! command flags and `--set key=value` overrides, in that order, and writes
//! the effective settings to `run_config.json` in each output directory.

pub mod commands;
pub mod config;
pub mod profile;

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde_json::{json, Map, Value};
use srgan_core::trainer::TrainConfig;
use srgan_core::{Error, Result};

pub use commands::{
    cmd_baseline, cmd_degrade, cmd_eval, cmd_infer, cmd_train, infer_factor, load_generator,
    BaselineSettings, DegradeSettings, EvalSettings, Interpolation, TrainMode, TrainOutcome,
    FINAL_CHECKPOINT, LOSS_LOG,
};
pub use config::ECHO_FILE;
pub use profile::{profile_depth, DepthProfile, DepthRow, LinearFit, ProfileSettings, SkipSetting};

#[derive(Debug, Parser)]
#[command(
    name = "srgan",
    version,
    about = "Single-image 4x super-resolution: train, run and evaluate"
)]
pub struct Cli {
    /// JSON file layered over the command defaults.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Dotted override applied last, e.g. `gan.schedule.batch_size=4`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Produce low-resolution copies of a directory of PNGs.
    Degrade {
        input: PathBuf,
        output: PathBuf,
        #[arg(short = 'r', long)]
        factor: Option<usize>,
        /// Gaussian blur applied before downsampling.
        #[arg(long)]
        sigma: Option<f64>,
    },
    /// Upsample LR images by interpolation and score them against HR images.
    Baseline {
        lr: PathBuf,
        hr: PathBuf,
        output: PathBuf,
        #[arg(long, value_enum)]
        method: Option<Interpolation>,
        #[arg(long)]
        border: Option<usize>,
    },
    /// Train the generator alone (srresnet) or against a discriminator (srgan).
    Train {
        #[arg(value_enum)]
        mode: TrainMode,
        /// Text file listing one training image per line.
        manifest: PathBuf,
        output: PathBuf,
        /// Base settings before `--config` and overrides: toy or paper-full.
        #[arg(long, default_value = "toy")]
        preset: String,
        /// Checkpoint whose generator initializes adversarial training.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        allow_unpretrained: bool,
    },
    /// Super-resolve a PNG or a directory of PNGs with a trained generator.
    Infer {
        checkpoint: PathBuf,
        input: PathBuf,
        output: PathBuf,
    },
    /// Score a directory of outputs against same-named references.
    Eval {
        sr: PathBuf,
        hr: PathBuf,
        /// Where metrics are written; defaults to the SR directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        border: Option<usize>,
        #[arg(long)]
        skip_missing: bool,
    },
    /// Time generator inference against the number of residual blocks.
    ProfileDepth {
        output: PathBuf,
        #[arg(long, value_delimiter = ',')]
        blocks: Option<Vec<usize>>,
        #[arg(long, value_enum)]
        skip: Option<SkipSetting>,
        #[arg(long)]
        input_size: Option<usize>,
        #[arg(long)]
        repeats: Option<usize>,
    },
}

/// Process exit status for each error class; 0 is success.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io { .. } => 10,
        Error::Format(_) => 11,
        Error::InvalidArgument(_) => 12,
        Error::ShapeMismatch(_) => 13,
        Error::ImageTooSmall(_) => 14,
        Error::DegenerateBatch(_) => 15,
        Error::Domain(_) => 16,
        Error::MissingGradient(_) => 17,
        Error::Data(_) => 18,
        Error::Provenance(_) => 19,
    }
}

fn flags(pairs: Vec<(&str, Option<Value>)>) -> Map<String, Value> {
    pairs
        .into_iter()
        .filter_map(|(k, v)| v.map(|v| (k.to_string(), v)))
        .collect()
}

fn path(p: &Path) -> Value {
    Value::String(p.display().to_string())
}

/// Output of a successful command, printed by the binary.
pub struct Outcome {
    pub summary: String,
    pub warnings: Vec<String>,
}

fn report_line(r: &srgan_core::metrics::MetricReport) -> String {
    format!(
        "{}: {} images, mean PSNR {:.4} dB, mean SSIM {:.4}",
        r.method,
        r.images.len(),
        r.mean_psnr_db,
        r.mean_ssim
    )
}

pub fn run(cli: Cli) -> Result<Outcome> {
    let file = cli.config.as_deref();
    let seed = cli.seed.unwrap_or(0);
    let done = |summary: String| Outcome {
        summary,
        warnings: Vec::new(),
    };
    match cli.command {
        Command::Degrade {
            input,
            output,
            factor,
            sigma,
        } => {
            let f = flags(vec![
                ("factor", factor.map(Value::from)),
                ("sigma", sigma.map(Value::from)),
            ]);
            let s = config::resolve(&DegradeSettings::default(), file, f, &cli.sets)?;
            let echo = commands::echo(
                "degrade",
                seed,
                json!({"input": path(&input), "output": path(&output)}),
                &s,
            );
            let n = cmd_degrade(&input, &output, &s, &echo)?.len();
            Ok(done(format!("wrote {n} images to {}", output.display())))
        }
        Command::Baseline {
            lr,
            hr,
            output,
            method,
            border,
        } => {
            let mut f = flags(vec![(
                "method",
                method.map(|m| serde_json::to_value(m).unwrap()),
            )]);
            if let Some(b) = border {
                f.insert("metric".into(), json!({ "border": b }));
            }
            let s = config::resolve(&BaselineSettings::default(), file, f, &cli.sets)?;
            let echo = commands::echo(
                "baseline",
                seed,
                json!({"lr": path(&lr), "hr": path(&hr), "output": path(&output)}),
                &s,
            );
            let r = cmd_baseline(&lr, &hr, &output, &s, &echo)?;
            Ok(done(report_line(&r)))
        }
        Command::Train {
            mode,
            manifest,
            output,
            preset,
            init,
            allow_unpretrained,
        } => {
            let mut base = TrainConfig::preset(&preset)?;
            if let Some(s) = cli.seed {
                base.pretrain.schedule.seed = s;
                base.gan.schedule.seed = s;
            }
            let cfg = config::resolve(&base, file, Map::new(), &cli.sets)?;
            let run_seed = match mode {
                TrainMode::Srresnet => cfg.pretrain.schedule.seed,
                TrainMode::Srgan => cfg.gan.schedule.seed,
            };
            let inner =
                json!({"mode": mode, "preset": preset, "allow_unpretrained": allow_unpretrained});
            let mut paths = json!({"manifest": path(&manifest), "output": path(&output)});
            if let Some(i) = &init {
                paths["init"] = path(i);
            }
            let mut echo = commands::echo("train", run_seed, paths, &cfg);
            echo["train"] = inner.clone();
            let mut ck_echo = commands::echo("train", run_seed, Value::Null, &cfg);
            ck_echo["train"] = inner;
            let out = cmd_train(
                mode,
                &cfg,
                &manifest,
                &output,
                init.as_deref(),
                allow_unpretrained,
                &echo,
                &ck_echo,
            )?;
            let n = out.log.records.len();
            Ok(Outcome {
                summary: format!(
                    "{n} iterations, final loss {:.6}, checkpoint {}",
                    out.log.records.last().map_or(f64::NAN, |r| r.g_loss),
                    out.final_checkpoint.display()
                ),
                warnings: out.log.warnings,
            })
        }
        Command::Infer {
            checkpoint,
            input,
            output,
        } => {
            let s = config::resolve(&Map::new(), file, Map::new(), &cli.sets)?;
            let echo = commands::echo(
                "infer",
                seed,
                json!({"checkpoint": path(&checkpoint), "input": path(&input), "output": path(&output)}),
                &s,
            );
            let n = cmd_infer(&checkpoint, &input, &output, &echo)?.len();
            Ok(done(format!("wrote {n} images")))
        }
        Command::Eval {
            sr,
            hr,
            out,
            border,
            skip_missing,
        } => {
            let mut f = flags(vec![(
                "skip_missing",
                skip_missing.then_some(Value::Bool(true)),
            )]);
            if let Some(b) = border {
                f.insert("metric".into(), json!({ "border": b }));
            }
            let s = config::resolve(&EvalSettings::default(), file, f, &cli.sets)?;
            let out = out.unwrap_or_else(|| sr.clone());
            let echo = commands::echo(
                "eval",
                seed,
                json!({"sr": path(&sr), "hr": path(&hr), "output": path(&out)}),
                &s,
            );
            let r = cmd_eval(&sr, &hr, &out, &s, &echo)?;
            Ok(done(report_line(&r)))
        }
        Command::ProfileDepth {
            output,
            blocks,
            skip,
            input_size,
            repeats,
        } => {
            let f = flags(vec![
                ("blocks", blocks.map(Value::from)),
                ("skip", skip.map(|s| serde_json::to_value(s).unwrap())),
                ("input_size", input_size.map(Value::from)),
                ("repeats", repeats.map(Value::from)),
                ("seed", cli.seed.map(Value::from)),
            ]);
            let s = config::resolve(&ProfileSettings::default(), file, f, &cli.sets)?;
            let echo = commands::echo(
                "profile-depth",
                s.seed,
                json!({"output": path(&output)}),
                &s,
            );
            let p = cmd_profile_depth(&output, &s, &echo)?;
            let fits: Vec<String> = p
                .fits
                .iter()
                .map(|f| {
                    format!(
                        "skip={} slope {:.2} ms/block R²={:.3}",
                        f.global_skip, f.slope_ms, f.r_squared
                    )
                })
                .collect();
            Ok(done(fits.join("; ")))
        }
    }
}

pub const DEPTH_CSV: &str = "depth_profile.csv";
pub const DEPTH_JSON: &str = "depth_profile.json";

/// Runs the depth profile and writes its CSV and JSON plot data to `output`.
pub fn cmd_profile_depth(output: &Path, s: &ProfileSettings, echo: &Value) -> Result<DepthProfile> {
    let p = profile_depth(s)?;
    config::write_echo(output, echo)?;
    let write = |name: &str, text: String| {
        let path = output.join(name);
        fs::write(&path, text).map_err(|e| Error::Io { path, source: e })
    };
    write(DEPTH_CSV, p.to_csv())?;
    write(
        DEPTH_JSON,
        serde_json::to_string_pretty(&json!({"settings": s, "rows": p.rows, "fits": p.fits}))
            .expect("profile serializes"),
    )?;
    Ok(p)
}
