//! Image I/O, colour conversion and the high-to-low resolution degradation.

mod image;
mod io;
mod resample;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use image::{from_float, to_float, ImageF, ImageU8, ValueRange};
pub use io::{list_pngs, load_image, read_manifest, save_image};
pub use resample::{
    catmull_rom, downsample_bicubic, gaussian_blur, gaussian_kernel, resize_bicubic,
    upsample_bicubic, upsample_nearest,
};

use crate::error::{Error, Result};

/// How low-resolution inputs are produced from high-resolution images:
/// optional Gaussian blur, then anti-aliased bicubic reduction by `factor`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegradeConfig {
    pub factor: usize,
    pub gaussian_sigma: Option<f64>,
}

impl Default for DegradeConfig {
    fn default() -> Self {
        Self {
            factor: 4,
            gaussian_sigma: None,
        }
    }
}

impl DegradeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.factor < 2 {
            return Err(Error::InvalidArgument(format!(
                "factor {} < 2",
                self.factor
            )));
        }
        if let Some(s) = self.gaussian_sigma {
            if !(s > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "sigma must be positive, got {s}"
                )));
            }
        }
        Ok(())
    }
}

/// Blur (if configured) and downsample an image whose sides are multiples of the factor.
pub fn degrade(hr: &ImageF, cfg: &DegradeConfig) -> Result<ImageF> {
    cfg.validate()?;
    match cfg.gaussian_sigma {
        Some(s) => downsample_bicubic(&gaussian_blur(hr, s)?, cfg.factor),
        None => downsample_bicubic(hr, cfg.factor),
    }
}

/// Centre crop so both sides become multiples of `r`.
pub fn center_crop_to_multiple(img: &ImageF, r: usize) -> Result<ImageF> {
    let (h, w) = ((img.height / r) * r, (img.width / r) * r);
    if h == 0 || w == 0 {
        return Err(Error::ImageTooSmall(format!(
            "{}x{} is smaller than the factor {r}",
            img.height, img.width
        )));
    }
    img.crop((img.height - h) / 2, (img.width - w) / 2, h, w)
}

/// Centre crop to exactly `h × w`.
pub fn center_crop(img: &ImageF, h: usize, w: usize) -> Result<ImageF> {
    if h > img.height || w > img.width {
        return Err(Error::ImageTooSmall(format!(
            "cannot centre-crop {}x{} to {h}x{w}",
            img.height, img.width
        )));
    }
    img.crop((img.height - h) / 2, (img.width - w) / 2, h, w)
}

/// Draws a `crop × crop` high-resolution patch at a uniformly random offset
/// and degrades it. Equal RNG states give identical pairs.
pub fn random_crop_pair<R: Rng + ?Sized>(
    hr: &ImageF,
    crop: usize,
    cfg: &DegradeConfig,
    rng: &mut R,
) -> Result<(ImageF, ImageF)> {
    cfg.validate()?;
    if crop == 0 || !crop.is_multiple_of(cfg.factor) {
        return Err(Error::InvalidArgument(format!(
            "crop {crop} is not a positive multiple of {}",
            cfg.factor
        )));
    }
    if hr.height < crop || hr.width < crop {
        return Err(Error::ImageTooSmall(format!(
            "{}x{} image cannot supply a {crop}x{crop} crop",
            hr.height, hr.width
        )));
    }
    let top = rng.random_range(0..=hr.height - crop);
    let left = rng.random_range(0..=hr.width - crop);
    let hr_crop = hr.crop(top, left, crop, crop)?;
    let lr_crop = degrade(&hr_crop, cfg)?;
    Ok((hr_crop, lr_crop))
}

/// Luma `0.299 R + 0.587 G + 0.114 B` (BT.601, full range).
pub fn rgb_to_y(img: &ImageF) -> Result<ImageF> {
    if img.channels != 3 {
        return Err(Error::InvalidArgument(format!(
            "rgb_to_y needs 3 channels, got {}",
            img.channels
        )));
    }
    let data = img
        .data
        .chunks(3)
        .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
        .collect();
    ImageF::new(img.height, img.width, 1, data, img.range)
}

/// Removes a `border`-pixel strip from every side.
pub fn crop_border(img: &ImageF, border: usize) -> Result<ImageF> {
    if img.height <= 2 * border || img.width <= 2 * border {
        return Err(Error::ImageTooSmall(format!(
            "{}x{} image has nothing left after a {border}-pixel border crop",
            img.height, img.width
        )));
    }
    img.crop(
        border,
        border,
        img.height - 2 * border,
        img.width - 2 * border,
    )
}
