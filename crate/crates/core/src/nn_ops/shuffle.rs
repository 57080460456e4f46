use super::{Float, Tensor};
use crate::error::{shape_err, Result};

/// Rearranges `(N, C·u², H, W)` into `(N, C, u·H, u·W)`:
/// `out[n, c, u·h+dy, u·w+dx] = in[n, c·u² + dy·u + dx, h, w]`.
pub fn pixel_shuffle<T: Float>(x: &Tensor<T>, u: usize) -> Result<Tensor<T>> {
    let (n, cu, h, w) = x.dims4()?;
    if u == 0 || cu % (u * u) != 0 {
        return Err(shape_err!(
            "pixel_shuffle: {} channels not divisible by {}²",
            cu,
            u
        ));
    }
    let c = cu / (u * u);
    let (oh, ow) = (h * u, w * u);
    let mut out = vec![T::zero(); x.len()];
    let src = x.data();
    for ni in 0..n {
        for ci in 0..c {
            for dy in 0..u {
                for dx in 0..u {
                    let ic = ci * u * u + dy * u + dx;
                    let ibase = ((ni * cu + ic) * h) * w;
                    for hy in 0..h {
                        let obase = ((ni * c + ci) * oh + hy * u + dy) * ow + dx;
                        for wx in 0..w {
                            out[obase + wx * u] = src[ibase + hy * w + wx];
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[n, c, oh, ow], out)
}

/// Inverse permutation of [`pixel_shuffle`]; also its exact backward pass.
pub fn pixel_unshuffle<T: Float>(y: &Tensor<T>, u: usize) -> Result<Tensor<T>> {
    let (n, c, oh, ow) = y.dims4()?;
    if u == 0 || oh % u != 0 || ow % u != 0 {
        return Err(shape_err!(
            "pixel_unshuffle: {}x{} not divisible by {}",
            oh,
            ow,
            u
        ));
    }
    let (h, w) = (oh / u, ow / u);
    let cu = c * u * u;
    let mut out = vec![T::zero(); y.len()];
    let src = y.data();
    for ni in 0..n {
        for ci in 0..c {
            for dy in 0..u {
                for dx in 0..u {
                    let ic = ci * u * u + dy * u + dx;
                    let obase = ((ni * cu + ic) * h) * w;
                    for hy in 0..h {
                        let ibase = ((ni * c + ci) * oh + hy * u + dy) * ow + dx;
                        for wx in 0..w {
                            out[obase + hy * w + wx] = src[ibase + wx * u];
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[n, cu, h, w], out)
}

pub fn pixel_shuffle_backward<T: Float>(grad_out: &Tensor<T>, u: usize) -> Result<Tensor<T>> {
    pixel_unshuffle(grad_out, u)
}
