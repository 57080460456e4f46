//! Luma PSNR and SSIM after border cropping, and directory-level evaluation.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image_pipeline::{
    center_crop, crop_border, list_pngs, load_image, rgb_to_y, to_float, ImageF, ValueRange,
};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
pub const DEFAULT_BORDER: usize = 4;

/// Luma definition. `Full` is BT.601 on `[0, 1]`; `Studio` maps to the
/// 16–235 range (`(16 + 65.481 R + 128.553 G + 24.966 B) / 255`).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LumaRange {
    #[default]
    Full,
    Studio,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricOptions {
    pub border: usize,
    pub luma: LumaRange,
}

impl Default for MetricOptions {
    fn default() -> Self {
        Self {
            border: DEFAULT_BORDER,
            luma: LumaRange::Full,
        }
    }
}

fn luma(img: &ImageF, range: LumaRange) -> Result<Vec<f64>> {
    let unit = img.remap(ValueRange::Unit);
    if unit.channels == 1 {
        return Ok(unit.data);
    }
    match range {
        LumaRange::Full => Ok(rgb_to_y(&unit)?.data),
        LumaRange::Studio => Ok(unit
            .data
            .chunks(3)
            .map(|p| (16.0 + 65.481 * p[0] + 128.553 * p[1] + 24.966 * p[2]) / 255.0)
            .collect()),
    }
}

/// Cropped luma planes of both images as `(h, w, ref, test)`.
fn prepare(
    reference: &ImageF,
    test: &ImageF,
    opts: &MetricOptions,
) -> Result<(usize, usize, Vec<f64>, Vec<f64>)> {
    if (reference.height, reference.width, reference.channels)
        != (test.height, test.width, test.channels)
    {
        return Err(Error::ShapeMismatch(format!(
            "reference {}x{}x{} vs test {}x{}x{}",
            reference.height,
            reference.width,
            reference.channels,
            test.height,
            test.width,
            test.channels
        )));
    }
    let to_plane = |img: &ImageF| -> Result<ImageF> {
        let y = luma(img, opts.luma)?;
        crop_border(
            &ImageF::new(img.height, img.width, 1, y, ValueRange::Unit)?,
            opts.border,
        )
    };
    let r = to_plane(reference)?;
    let t = to_plane(test)?;
    Ok((r.height, r.width, r.data, t.data))
}

/// Peak signal-to-noise ratio in dB with peak 1.0; `f64::INFINITY` for identical inputs.
pub fn psnr_y_with(reference: &ImageF, test: &ImageF, opts: &MetricOptions) -> Result<f64> {
    let (_, _, r, t) = prepare(reference, test, opts)?;
    let mse = r
        .iter()
        .zip(&t)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / r.len() as f64;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    })
}

pub fn psnr_y(reference: &ImageF, test: &ImageF, border: usize) -> Result<f64> {
    psnr_y_with(
        reference,
        test,
        &MetricOptions {
            border,
            ..Default::default()
        },
    )
}

fn gaussian_window() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - half).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering of an `h × w` plane.
fn filter_valid(src: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..n).map(|i| k[i] * src[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean structural similarity over all full 11×11 Gaussian windows.
pub fn ssim_y_with(reference: &ImageF, test: &ImageF, opts: &MetricOptions) -> Result<f64> {
    let (h, w, r, t) = prepare(reference, test, opts)?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::ImageTooSmall(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} after border crop, got {h}x{w}"
        )));
    }
    let k = gaussian_window();
    let prod = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).collect::<Vec<_>>();
    let mu_r = filter_valid(&r, h, w, &k);
    let mu_t = filter_valid(&t, h, w, &k);
    let rr = filter_valid(&prod(&r, &r), h, w, &k);
    let tt = filter_valid(&prod(&t, &t), h, w, &k);
    let rt = filter_valid(&prod(&r, &t), h, w, &k);
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let total: f64 = (0..mu_r.len())
        .map(|i| {
            let (mr, mt) = (mu_r[i], mu_t[i]);
            let var_r = rr[i] - mr * mr;
            let var_t = tt[i] - mt * mt;
            let cov = rt[i] - mr * mt;
            ((2.0 * mr * mt + c1) * (2.0 * cov + c2))
                / ((mr * mr + mt * mt + c1) * (var_r + var_t + c2))
        })
        .sum();
    Ok(total / mu_r.len() as f64)
}

pub fn ssim_y(reference: &ImageF, test: &ImageF, border: usize) -> Result<f64> {
    ssim_y_with(
        reference,
        test,
        &MetricOptions {
            border,
            ..Default::default()
        },
    )
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ImageMetric {
    pub file: String,
    /// `f64::INFINITY` when the luma planes are identical.
    pub psnr_db: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub method: String,
    /// Sorted by file name.
    pub images: Vec<ImageMetric>,
    /// Files present in only one of the two directories.
    pub missing: Vec<String>,
    pub mean_psnr_db: f64,
    pub mean_ssim: f64,
}

#[derive(Serialize)]
struct Summary<'a> {
    method: &'a str,
    count: usize,
    mean_psnr_db: Option<f64>,
    psnr_infinite: bool,
    mean_ssim: f64,
    missing: &'a [String],
}

impl MetricReport {
    pub fn from_images(
        method: impl Into<String>,
        mut images: Vec<ImageMetric>,
        missing: Vec<String>,
    ) -> Self {
        images.sort_by(|a, b| a.file.cmp(&b.file));
        let n = images.len().max(1) as f64;
        let mean_psnr_db = images.iter().map(|m| m.psnr_db).sum::<f64>() / n;
        let mean_ssim = images.iter().map(|m| m.ssim).sum::<f64>() / n;
        Self {
            method: method.into(),
            images,
            missing,
            mean_psnr_db,
            mean_ssim,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("filename,psnr_db,ssim\n");
        for m in &self.images {
            let _ = writeln!(s, "{},{},{}", m.file, fmt_db(m.psnr_db), m.ssim);
        }
        s
    }

    pub fn to_json(&self) -> String {
        let finite = self.mean_psnr_db.is_finite();
        let summary = Summary {
            method: &self.method,
            count: self.images.len(),
            mean_psnr_db: finite.then_some(self.mean_psnr_db),
            psnr_infinite: !finite,
            mean_ssim: self.mean_ssim,
            missing: &self.missing,
        };
        serde_json::to_string_pretty(&summary).expect("summary serializes")
    }

    /// Writes `metrics.csv` and `summary.json` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, body) in [
            ("metrics.csv", self.to_csv()),
            ("summary.json", self.to_json()),
        ] {
            let p = dir.join(name);
            fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }
}

fn fmt_db(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        v.to_string()
    }
}

#[derive(Clone, Debug)]
pub struct EvalOptions {
    pub metric: MetricOptions,
    /// Report unmatched files and leave them out of the means instead of failing.
    pub skip_missing: bool,
    pub method: String,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            metric: MetricOptions::default(),
            skip_missing: false,
            method: "sr".into(),
        }
    }
}

fn file_name(p: &Path) -> String {
    p.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Scores a test image against its reference. A larger reference is
/// centre-cropped to the test size first, matching outputs of methods that
/// trim the input to a multiple of the scale factor.
pub fn score_pair(reference: &ImageF, test: &ImageF, opts: &MetricOptions) -> Result<(f64, f64)> {
    let reference = if (reference.height, reference.width) != (test.height, test.width) {
        center_crop(reference, test.height, test.width).map_err(|_| {
            Error::ShapeMismatch(format!(
                "test image {}x{} is larger than its reference {}x{}",
                test.height, test.width, reference.height, reference.width
            ))
        })?
    } else {
        reference.clone()
    };
    Ok((
        psnr_y_with(&reference, test, opts)?,
        ssim_y_with(&reference, test, opts)?,
    ))
}

/// Compares every PNG in `test_dir` with the same-named PNG in `reference_dir`.
pub fn evaluate(
    test_dir: impl AsRef<Path>,
    reference_dir: impl AsRef<Path>,
    opts: &EvalOptions,
) -> Result<MetricReport> {
    let tests = list_pngs(test_dir.as_ref())?;
    let refs = list_pngs(reference_dir.as_ref())?;
    let ref_names: Vec<String> = refs.iter().map(|p| file_name(p)).collect();
    let test_names: Vec<String> = tests.iter().map(|p| file_name(p)).collect();
    let mut missing: Vec<String> = test_names
        .iter()
        .filter(|n| !ref_names.contains(n))
        .chain(ref_names.iter().filter(|n| !test_names.contains(n)))
        .cloned()
        .collect();
    missing.sort();
    if !missing.is_empty() && !opts.skip_missing {
        return Err(Error::Data(format!(
            "unmatched files: {}",
            missing.join(", ")
        )));
    }
    let pairs: Vec<(String, PathBuf, PathBuf)> = tests
        .iter()
        .zip(&test_names)
        .filter(|(_, n)| ref_names.contains(n))
        .map(|(p, n)| (n.clone(), p.clone(), reference_dir.as_ref().join(n)))
        .collect();
    if pairs.is_empty() {
        return Err(Error::Data("no image pairs to evaluate".into()));
    }
    let images = pairs
        .par_iter()
        .map(|(name, tp, rp)| {
            let test = to_float(&load_image(tp)?, ValueRange::Unit);
            let reference = to_float(&load_image(rp)?, ValueRange::Unit);
            let (psnr_db, ssim) = score_pair(&reference, &test, &opts.metric)?;
            Ok(ImageMetric {
                file: name.clone(),
                psnr_db,
                ssim,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricReport::from_images(
        opts.method.clone(),
        images,
        missing,
    ))
}
