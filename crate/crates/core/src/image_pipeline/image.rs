use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn_ops::{Float, Tensor};

/// 8-bit image, row-major with interleaved channels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageU8 {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

impl ImageU8 {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        check_layout(height, width, channels, data.len())?;
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }
}

/// Declared value range of a floating-point image.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ValueRange {
    /// `[0, 1]`, used for low-resolution inputs and metrics.
    Unit,
    /// `[-1, 1]`, used for high-resolution targets and generator outputs.
    Symmetric,
}

impl ValueRange {
    pub fn bounds(self) -> (f64, f64) {
        match self {
            ValueRange::Unit => (0.0, 1.0),
            ValueRange::Symmetric => (-1.0, 1.0),
        }
    }
}

/// Floating-point image, row-major with interleaved channels.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageF {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
    pub range: ValueRange,
}

impl ImageF {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<f64>,
        range: ValueRange,
    ) -> Result<Self> {
        check_layout(height, width, channels, data.len())?;
        Ok(Self {
            height,
            width,
            channels,
            data,
            range,
        })
    }

    pub fn filled(
        height: usize,
        width: usize,
        channels: usize,
        value: f64,
        range: ValueRange,
    ) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
            range,
        }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn clamp_to_range(&mut self) {
        let (lo, hi) = self.range.bounds();
        self.data.iter_mut().for_each(|v| *v = v.clamp(lo, hi));
    }

    /// Affine remap of every sample into another declared range.
    pub fn remap(&self, target: ValueRange) -> ImageF {
        let (lo, hi) = self.range.bounds();
        let (tlo, thi) = target.bounds();
        let scale = (thi - tlo) / (hi - lo);
        ImageF {
            data: self.data.iter().map(|&v| tlo + (v - lo) * scale).collect(),
            range: target,
            ..*self
        }
    }

    /// Sub-image of size `h × w` starting at `(top, left)`.
    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Result<ImageF> {
        if top + h > self.height || left + w > self.width {
            return Err(Error::ImageTooSmall(format!(
                "crop {h}x{w} at ({top},{left}) exceeds {}x{}",
                self.height, self.width
            )));
        }
        let c = self.channels;
        let mut data = Vec::with_capacity(h * w * c);
        for y in top..top + h {
            let start = (y * self.width + left) * c;
            data.extend_from_slice(&self.data[start..start + w * c]);
        }
        Ok(ImageF {
            height: h,
            width: w,
            channels: c,
            data,
            range: self.range,
        })
    }

    /// Planar `(1, C, H, W)` tensor.
    pub fn to_tensor<T: Float>(&self) -> Tensor<T> {
        let (h, w, c) = (self.height, self.width, self.channels);
        let mut out = vec![T::zero(); h * w * c];
        for (i, px) in self.data.chunks(c).enumerate() {
            for (ch, &v) in px.iter().enumerate() {
                out[ch * h * w + i] = T::lit(v);
            }
        }
        Tensor::from_vec(&[1, c, h, w], out).expect("layout checked at construction")
    }

    /// Reads sample `n` of a `(N, C, H, W)` tensor back into an image.
    pub fn from_tensor<T: Float>(t: &Tensor<T>, n: usize, range: ValueRange) -> Result<ImageF> {
        let (batch, c, h, w) = t.dims4()?;
        if n >= batch {
            return Err(Error::InvalidArgument(format!(
                "sample {n} of batch {batch}"
            )));
        }
        let src = t.sample(n);
        let mut data = vec![0.0; h * w * c];
        for ch in 0..c {
            for i in 0..h * w {
                data[i * c + ch] = src[ch * h * w + i].as_f64();
            }
        }
        ImageF::new(h, w, c, data, range)
    }
}

fn check_layout(height: usize, width: usize, channels: usize, len: usize) -> Result<()> {
    if channels != 1 && channels != 3 {
        return Err(Error::InvalidArgument(format!(
            "{channels} channels; only 1 or 3 are supported"
        )));
    }
    if len != height * width * channels {
        return Err(Error::InvalidArgument(format!(
            "{len} samples for a {height}x{width}x{channels} image"
        )));
    }
    Ok(())
}

/// `s ↦ lo + (hi − lo)·s/255`.
pub fn to_float(img: &ImageU8, range: ValueRange) -> ImageF {
    let (lo, hi) = range.bounds();
    ImageF {
        height: img.height,
        width: img.width,
        channels: img.channels,
        data: img
            .data
            .iter()
            .map(|&s| lo + (hi - lo) * f64::from(s) / 255.0)
            .collect(),
        range,
    }
}

/// Inverse of [`to_float`]: rounds to nearest and clamps to `[0, 255]`.
pub fn from_float(img: &ImageF) -> ImageU8 {
    let (lo, hi) = img.range.bounds();
    ImageU8 {
        height: img.height,
        width: img.width,
        channels: img.channels,
        data: img
            .data
            .iter()
            .map(|&v| {
                let s = ((v - lo) / (hi - lo) * 255.0).round();
                if s.is_nan() {
                    0
                } else {
                    s.clamp(0.0, 255.0) as u8
                }
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn to_float_examples() {
        let img = ImageU8::new(1, 3, 1, vec![255, 0, 128]).unwrap();
        assert_eq!(to_float(&img, ValueRange::Unit).data[0], 1.0);
        let s = to_float(&img, ValueRange::Symmetric);
        assert_eq!(s.data[1], -1.0);
        assert!((s.data[2] - (-1.0 + 2.0 * 128.0 / 255.0)).abs() < 1e-15);
        assert!((s.data[2] - 0.003921568627).abs() < 1e-9);
    }

    #[test]
    fn byte_round_trip_is_exact() {
        let img = ImageU8::new(16, 16, 1, (0..=255).collect()).unwrap();
        for r in [ValueRange::Unit, ValueRange::Symmetric] {
            assert_eq!(from_float(&to_float(&img, r)), img);
        }
    }

    #[test]
    fn from_float_clamps() {
        let img = ImageF::new(1, 3, 1, vec![-0.2, 1.7, 0.5], ValueRange::Unit).unwrap();
        assert_eq!(from_float(&img).data, vec![0, 255, 128]);
    }

    #[test]
    fn tensor_round_trip() {
        let img = ImageF::new(
            2,
            3,
            3,
            (0..18).map(|v| v as f64 / 18.0).collect(),
            ValueRange::Unit,
        )
        .unwrap();
        let t: Tensor<f64> = img.to_tensor();
        assert_eq!(t.shape(), &[1, 3, 2, 3]);
        assert_eq!(t.data()[6], img.get(0, 0, 1));
        assert_eq!(ImageF::from_tensor(&t, 0, ValueRange::Unit).unwrap(), img);
    }

    #[test]
    fn rejects_bad_layouts() {
        assert!(ImageU8::new(2, 2, 2, vec![0; 8]).is_err());
        assert!(ImageU8::new(2, 2, 3, vec![0; 11]).is_err());
    }
}
