use super::ImageF;
use crate::error::{Error, Result};

/// Catmull-Rom cubic (`a = −0.5`).
pub fn catmull_rom(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        (A + 2.0) * x * x * x - (A + 3.0) * x * x + 1.0
    } else if x < 2.0 {
        A * x * x * x - 5.0 * A * x * x + 8.0 * A * x - 4.0 * A
    } else {
        0.0
    }
}

/// Source taps (edge-clamped indices) and normalized weights for one output sample.
#[derive(Clone, Debug)]
struct Taps {
    index: Vec<usize>,
    weight: Vec<f64>,
}

/// Per-output-sample contributions for resizing an axis of length `in_len`
/// by `scale = out_len / in_len`. When shrinking, the kernel is stretched by
/// `1/scale` so every source sample under the footprint contributes.
fn contributions(in_len: usize, out_len: usize) -> Vec<Taps> {
    let scale = out_len as f64 / in_len as f64;
    let stretch = if scale < 1.0 { scale } else { 1.0 };
    let support = 2.0 / stretch;
    (0..out_len)
        .map(|i| {
            let center = (i as f64 + 0.5) / scale - 0.5;
            let first = (center - support).floor() as isize;
            let last = (center + support).ceil() as isize;
            let mut index = Vec::new();
            let mut weight = Vec::new();
            for j in first..=last {
                let wt = stretch * catmull_rom(stretch * (center - j as f64));
                if wt != 0.0 {
                    index.push(j.clamp(0, in_len as isize - 1) as usize);
                    weight.push(wt);
                }
            }
            let total: f64 = weight.iter().sum();
            weight.iter_mut().for_each(|w| *w /= total);
            Taps { index, weight }
        })
        .collect()
}

fn resize_rows(img: &ImageF, out_w: usize) -> ImageF {
    let taps = contributions(img.width, out_w);
    let c = img.channels;
    let mut out = ImageF::filled(img.height, out_w, c, 0.0, img.range);
    for y in 0..img.height {
        for (x, t) in taps.iter().enumerate() {
            for ch in 0..c {
                let v: f64 = t
                    .index
                    .iter()
                    .zip(&t.weight)
                    .map(|(&j, &w)| w * img.get(y, j, ch))
                    .sum();
                out.set(y, x, ch, v);
            }
        }
    }
    out
}

fn resize_cols(img: &ImageF, out_h: usize) -> ImageF {
    let taps = contributions(img.height, out_h);
    let c = img.channels;
    let mut out = ImageF::filled(out_h, img.width, c, 0.0, img.range);
    for (y, t) in taps.iter().enumerate() {
        for x in 0..img.width {
            for ch in 0..c {
                let v: f64 = t
                    .index
                    .iter()
                    .zip(&t.weight)
                    .map(|(&j, &w)| w * img.get(j, x, ch))
                    .sum();
                out.set(y, x, ch, v);
            }
        }
    }
    out
}

/// Separable Catmull-Rom resize (vertical pass first), clamped to the declared range.
pub fn resize_bicubic(img: &ImageF, out_h: usize, out_w: usize) -> ImageF {
    let mut out = resize_rows(&resize_cols(img, out_h), out_w);
    out.clamp_to_range();
    out
}

/// Anti-aliased bicubic reduction by the integer factor `r`.
pub fn downsample_bicubic(img: &ImageF, r: usize) -> Result<ImageF> {
    if r < 1 {
        return Err(Error::InvalidArgument(
            "downsampling factor must be positive".into(),
        ));
    }
    if !img.height.is_multiple_of(r) || !img.width.is_multiple_of(r) {
        return Err(Error::InvalidArgument(format!(
            "{}x{} is not divisible by {r}",
            img.height, img.width
        )));
    }
    Ok(resize_bicubic(img, img.height / r, img.width / r))
}

/// Bicubic enlargement by the integer factor `r ≥ 2`.
pub fn upsample_bicubic(img: &ImageF, r: usize) -> Result<ImageF> {
    if r < 2 {
        return Err(Error::InvalidArgument(format!("upsampling factor {r} < 2")));
    }
    Ok(resize_bicubic(img, img.height * r, img.width * r))
}

/// Replicates every pixel into an `r × r` block.
pub fn upsample_nearest(img: &ImageF, r: usize) -> Result<ImageF> {
    if r < 1 {
        return Err(Error::InvalidArgument(
            "upsampling factor must be positive".into(),
        ));
    }
    let c = img.channels;
    let mut out = ImageF::filled(img.height * r, img.width * r, c, 0.0, img.range);
    for y in 0..out.height {
        for x in 0..out.width {
            for ch in 0..c {
                out.set(y, x, ch, img.get(y / r, x / r, ch));
            }
        }
    }
    Ok(out)
}

/// Separable Gaussian blur, radius `⌈3σ⌉`, normalized taps, clamp-to-edge.
pub fn gaussian_blur(img: &ImageF, sigma: f64) -> Result<ImageF> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as isize;
    let (h, w, c) = (img.height, img.width, img.channels);
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = ImageF::filled(h, w, c, 0.0, img.range);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let v = kernel
                    .iter()
                    .enumerate()
                    .map(|(k, &wt)| wt * img.get(y, clamp(x as isize + k as isize - radius, w), ch))
                    .sum();
                tmp.set(y, x, ch, v);
            }
        }
    }
    let mut out = ImageF::filled(h, w, c, 0.0, img.range);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let v = kernel
                    .iter()
                    .enumerate()
                    .map(|(k, &wt)| wt * tmp.get(clamp(y as isize + k as isize - radius, h), x, ch))
                    .sum();
                out.set(y, x, ch, v);
            }
        }
    }
    Ok(out)
}

/// Normalized 1-D Gaussian taps over `[-⌈3σ⌉, ⌈3σ⌉]`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}
