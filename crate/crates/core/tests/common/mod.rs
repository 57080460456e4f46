#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use srgan_core::image_pipeline::{ImageF, ValueRange};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Piecewise-smooth RGB scene in `[0, 1]`: a shaded background with
/// overlapping hard-edged discs and bars, so that edges carry most of the
/// detail lost by downsampling.
pub fn synthetic_scene(size: usize, seed: u64) -> ImageF {
    let mut r = rng(seed);
    let base: [f64; 3] = [
        r.random_range(0.2..0.8),
        r.random_range(0.2..0.8),
        r.random_range(0.2..0.8),
    ];
    let tilt: [f64; 2] = [r.random_range(-0.3..0.3), r.random_range(-0.3..0.3)];
    let mut img = ImageF::filled(size, size, 3, 0.0, ValueRange::Unit);
    for y in 0..size {
        for x in 0..size {
            let t = (tilt[0] * y as f64 + tilt[1] * x as f64) / size as f64;
            for (c, b) in base.iter().enumerate() {
                img.set(y, x, c, (b + t).clamp(0.0, 1.0));
            }
        }
    }
    let s = size as f64;
    for _ in 0..6 {
        let color: [f64; 3] = [r.random(), r.random(), r.random()];
        if r.random_bool(0.5) {
            let (cy, cx) = (r.random_range(0.0..s), r.random_range(0.0..s));
            let rad = r.random_range(0.08 * s..0.3 * s);
            for y in 0..size {
                for x in 0..size {
                    if (y as f64 - cy).hypot(x as f64 - cx) < rad {
                        for (c, v) in color.iter().enumerate() {
                            img.set(y, x, c, *v);
                        }
                    }
                }
            }
        } else {
            let angle: f64 = r.random_range(0.0..std::f64::consts::PI);
            let (sn, cs) = angle.sin_cos();
            let offset = r.random_range(-0.4 * s..0.4 * s);
            let half = r.random_range(1.5..0.1 * s);
            for y in 0..size {
                for x in 0..size {
                    let d = (x as f64 - s / 2.0) * cs + (y as f64 - s / 2.0) * sn - offset;
                    if d.abs() < half {
                        for (c, v) in color.iter().enumerate() {
                            img.set(y, x, c, *v);
                        }
                    }
                }
            }
        }
    }
    img
}

pub fn scenes(count: usize, size: usize, seed: u64) -> Vec<ImageF> {
    (0..count)
        .map(|i| synthetic_scene(size, seed.wrapping_add(i as u64)))
        .collect()
}
