//! Inference time and model size as a function of residual depth.

use std::time::Instant;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use srgan_core::models::{build_generator, param_count, Generator, GeneratorConfig, ModelParams};
use srgan_core::nn_ops::Mode;
use srgan_core::{Error, Result, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SkipSetting {
    On,
    Off,
    Both,
}

impl SkipSetting {
    fn variants(self) -> &'static [bool] {
        match self {
            SkipSetting::On => &[true],
            SkipSetting::Off => &[false],
            SkipSetting::Both => &[true, false],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProfileSettings {
    pub blocks: Vec<usize>,
    pub skip: SkipSetting,
    /// Side of the square low-resolution input.
    pub input_size: usize,
    /// Timed forwards per configuration; the median is reported.
    pub repeats: usize,
    /// Untimed forwards before measuring.
    pub warmup: usize,
    pub width: usize,
    pub seed: u64,
}

impl Default for ProfileSettings {
    fn default() -> Self {
        Self {
            blocks: vec![1, 2, 4, 8, 16],
            skip: SkipSetting::Both,
            input_size: 64,
            repeats: 5,
            warmup: 1,
            width: 64,
            seed: 0,
        }
    }
}

impl ProfileSettings {
    pub fn validate(&self) -> Result<()> {
        if self.blocks.is_empty() {
            return Err(Error::InvalidArgument("block list is empty".into()));
        }
        if self.blocks.contains(&0) {
            return Err(Error::InvalidArgument(
                "block counts must be positive".into(),
            ));
        }
        if self.repeats == 0 || self.input_size == 0 || self.width == 0 {
            return Err(Error::InvalidArgument(
                "repeats, input_size and width must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DepthRow {
    pub blocks: usize,
    pub global_skip: bool,
    pub params: usize,
    pub median_ms: f64,
    pub times_ms: Vec<f64>,
}

/// Least-squares line of median time against block count.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LinearFit {
    pub global_skip: bool,
    pub slope_ms: f64,
    pub intercept_ms: f64,
    pub r_squared: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DepthProfile {
    pub rows: Vec<DepthRow>,
    pub fits: Vec<LinearFit>,
}

impl DepthProfile {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("blocks,global_skip,params,median_ms\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{:.4}\n",
                r.blocks, r.global_skip, r.params, r.median_ms
            ));
        }
        s
    }

    pub fn rows_for(&self, global_skip: bool) -> impl Iterator<Item = &DepthRow> {
        self.rows
            .iter()
            .filter(move |r| r.global_skip == global_skip)
    }
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return (0.0, my, if syy == 0.0 { 1.0 } else { 0.0 });
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 {
        1.0
    } else {
        sxy * sxy / (sxx * syy)
    };
    (slope, my - slope * mx, r2)
}

fn time_forward(net: &Generator, params: &ModelParams<f32>, x: &Tensor<f32>) -> Result<f64> {
    let start = Instant::now();
    let (y, _) = net.forward(params, x, Mode::Eval)?;
    let ms = start.elapsed().as_secs_f64() * 1e3;
    std::hint::black_box(y);
    Ok(ms)
}

/// Times eval-mode generator forwards for each depth and skip setting. Each
/// repeat round visits every configuration once, so drift in machine load is
/// spread evenly over them rather than landing on whichever was timed last.
pub fn profile_depth(s: &ProfileSettings) -> Result<DepthProfile> {
    s.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let x = Tensor::<f32>::rand_uniform(&[1, 3, s.input_size, s.input_size], 0.0, 1.0, &mut rng);
    let mut nets = Vec::new();
    for &b in &s.blocks {
        for &skip in s.skip.variants() {
            let cfg = GeneratorConfig {
                blocks: b,
                width: s.width,
                global_skip: skip,
                ..GeneratorConfig::default()
            };
            let params: ModelParams<f32> = build_generator(&cfg, s.seed)?;
            nets.push((b, skip, Generator::new(&cfg)?, params));
        }
    }
    for (_, _, net, params) in &nets {
        for _ in 0..s.warmup {
            time_forward(net, params, &x)?;
        }
    }
    let mut times = vec![Vec::with_capacity(s.repeats); nets.len()];
    for _ in 0..s.repeats {
        for (t, (_, _, net, params)) in times.iter_mut().zip(&nets) {
            t.push(time_forward(net, params, &x)?);
        }
    }
    let rows: Vec<DepthRow> = nets
        .iter()
        .zip(times)
        .map(|((b, skip, _, params), times_ms)| DepthRow {
            blocks: *b,
            global_skip: *skip,
            params: param_count(params),
            median_ms: median(&times_ms),
            times_ms,
        })
        .collect();
    let fits = s
        .skip
        .variants()
        .iter()
        .map(|&skip| {
            let (xs, ys): (Vec<f64>, Vec<f64>) = rows
                .iter()
                .filter(|r| r.global_skip == skip)
                .map(|r| (r.blocks as f64, r.median_ms))
                .unzip();
            let (slope_ms, intercept_ms, r_squared) = linear_fit(&xs, &ys);
            LinearFit {
                global_skip: skip,
                slope_ms,
                intercept_ms,
                r_squared,
            }
        })
        .collect();
    Ok(DepthProfile { rows, fits })
}
