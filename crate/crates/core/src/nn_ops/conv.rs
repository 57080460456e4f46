use std::ops::Range;

use rayon::prelude::*;

use super::{Float, Tensor};
use crate::error::{shape_err, Error, Result};

/// Square convolution descriptor: kernel size, channel counts and stride.
/// Padding is always `kernel / 2` zeros on every side.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub kernel: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
}

impl ConvSpec {
    pub fn new(
        kernel: usize,
        in_channels: usize,
        out_channels: usize,
        stride: usize,
    ) -> Result<Self> {
        if kernel.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "kernel size {kernel} is not odd"
            )));
        }
        if !(1..=2).contains(&stride) {
            return Err(Error::InvalidArgument(format!(
                "stride {stride} not in {{1,2}}"
            )));
        }
        if in_channels == 0 || out_channels == 0 {
            return Err(Error::InvalidArgument("zero channel count".into()));
        }
        Ok(Self {
            kernel,
            in_channels,
            out_channels,
            stride,
        })
    }

    pub fn padding(&self) -> usize {
        self.kernel / 2
    }

    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        let p = self.padding();
        (
            (h + 2 * p - self.kernel) / self.stride + 1,
            (w + 2 * p - self.kernel) / self.stride + 1,
        )
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [
            self.out_channels,
            self.in_channels,
            self.kernel,
            self.kernel,
        ]
    }

    /// Weights plus biases.
    pub fn param_count(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel * self.kernel + self.out_channels
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1
    }

    fn check(
        &self,
        x: &Tensor<impl Float>,
        w: &Tensor<impl Float>,
        b_len: usize,
    ) -> Result<(usize, usize, usize, usize)> {
        let (n, c, h, wd) = x.dims4()?;
        if c != self.in_channels {
            return Err(shape_err!(
                "conv expects {} input channels, got {}",
                self.in_channels,
                c
            ));
        }
        if w.shape() != self.weight_shape() {
            return Err(shape_err!(
                "conv weight {:?}, spec wants {:?}",
                w.shape(),
                self.weight_shape()
            ));
        }
        if b_len != self.out_channels {
            return Err(shape_err!(
                "conv bias length {}, expected {}",
                b_len,
                self.out_channels
            ));
        }
        Ok((n, c, h, wd))
    }
}

/// Unfolds output rows `rows` of one `(C, H, W)` sample into a
/// `(C·k·k) × (rows·Wo)` patch matrix.
fn im2col<T: Float>(
    src: &[T],
    spec: &ConvSpec,
    h: usize,
    w: usize,
    rows: Range<usize>,
    cols: &mut [T],
) {
    let k = spec.kernel;
    let s = spec.stride;
    let pad = spec.padding() as isize;
    let (_, wo) = spec.output_size(h, w);
    let plane = rows.len() * wo;
    for c in 0..spec.in_channels {
        let chan = &src[c * h * w..(c + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for (band_y, oy) in rows.clone().enumerate() {
                    let iy = (oy * s + ky) as isize - pad;
                    let out_row = &mut dst[band_y * wo..(band_y + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        out_row.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let in_row = &chan[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, v) in out_row.iter_mut().enumerate() {
                        let ix = (ox * s + kx) as isize - pad;
                        *v = if ix < 0 || ix >= w as isize {
                            T::zero()
                        } else {
                            in_row[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters patch-matrix gradients back onto the image.
fn col2im<T: Float>(cols: &[T], spec: &ConvSpec, h: usize, w: usize, dst: &mut [T]) {
    let k = spec.kernel;
    let s = spec.stride;
    let pad = spec.padding() as isize;
    let (ho, wo) = spec.output_size(h, w);
    let plane = ho * wo;
    dst.iter_mut().for_each(|v| *v = T::zero());
    for c in 0..spec.in_channels {
        let chan = &mut dst[c * h * w..(c + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..ho {
                    let iy = (oy * s + ky) as isize - pad;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let in_row = &mut chan[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..wo {
                        let ix = (ox * s + kx) as isize - pad;
                        if ix >= 0 && ix < w as isize {
                            in_row[ix as usize] += src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Patch-matrix elements unfolded at once in the forward pass.
const IM2COL_BUDGET: usize = 1 << 22;

/// Adds the convolution of one sample to `dst`, unfolding a band of output
/// rows at a time so large kernels on large images stay within the budget.
fn conv_banded<T: Float>(src: &[T], w: &[T], spec: &ConvSpec, h: usize, wd: usize, dst: &mut [T]) {
    let (ho, wo) = spec.output_size(h, wd);
    let plane = ho * wo;
    let band = (IM2COL_BUDGET / (spec.patch_len() * wo)).clamp(1, ho);
    let mut cols = vec![T::zero(); spec.patch_len() * band * wo];
    let mut acc = vec![T::zero(); spec.out_channels * band * wo];
    for y0 in (0..ho).step_by(band) {
        let rows = y0..(y0 + band).min(ho);
        let n = rows.len() * wo;
        im2col(
            src,
            spec,
            h,
            wd,
            rows.clone(),
            &mut cols[..spec.patch_len() * n],
        );
        if rows.len() == ho {
            T::gemm(
                spec.out_channels,
                spec.patch_len(),
                n,
                T::one(),
                w,
                false,
                &cols,
                false,
                T::one(),
                dst,
            );
            return;
        }
        let acc = &mut acc[..spec.out_channels * n];
        T::gemm(
            spec.out_channels,
            spec.patch_len(),
            n,
            T::one(),
            w,
            false,
            &cols,
            false,
            T::zero(),
            acc,
        );
        for (o, part) in acc.chunks(n).enumerate() {
            let off = o * plane + y0 * wo;
            for (d, &v) in dst[off..off + n].iter_mut().zip(part) {
                *d += v;
            }
        }
    }
}

/// Stride-1 forward for layers with fewer outputs than inputs: one pointwise
/// product yields a map per (output, tap) pair, which is then added into the
/// output shifted by the tap offset. Unfolds `C_out·k·k` rows instead of `C_in·k·k`.
fn conv_shift_add<T: Float>(
    src: &[T],
    w: &[T],
    spec: &ConvSpec,
    h: usize,
    wd: usize,
    dst: &mut [T],
) {
    let k = spec.kernel;
    let taps = k * k;
    let (cin, cout) = (spec.in_channels, spec.out_channels);
    let pad = spec.padding();
    let plane = h * wd;
    let mut wt = vec![T::zero(); cout * taps * cin];
    for o in 0..cout {
        for c in 0..cin {
            for t in 0..taps {
                wt[(o * taps + t) * cin + c] = w[(o * cin + c) * taps + t];
            }
        }
    }
    let band = (IM2COL_BUDGET / (cout * taps * wd).max(cin * wd)).clamp(1, h);
    let mut x = vec![T::zero(); cin * band * wd];
    let mut p = vec![T::zero(); cout * taps * band * wd];
    for y0 in (0..h).step_by(band) {
        let y1 = (y0 + band).min(h);
        let n = (y1 - y0) * wd;
        for c in 0..cin {
            x[c * n..(c + 1) * n].copy_from_slice(&src[c * plane + y0 * wd..c * plane + y1 * wd]);
        }
        T::gemm(
            cout * taps,
            cin,
            n,
            T::one(),
            &wt,
            false,
            &x,
            false,
            T::zero(),
            &mut p,
        );
        for o in 0..cout {
            let out = &mut dst[o * plane..(o + 1) * plane];
            for ky in 0..k {
                for kx in 0..k {
                    let map = &p[(o * taps + ky * k + kx) * n..][..n];
                    // Input column ix lands on output column ix + pad - kx.
                    let ix0 = kx.saturating_sub(pad);
                    let ix1 = (wd + kx).saturating_sub(pad).min(wd);
                    if ix0 >= ix1 {
                        continue;
                    }
                    for iy in y0..y1 {
                        let Some(oy) = (iy + pad).checked_sub(ky).filter(|&oy| oy < h) else {
                            continue;
                        };
                        let from = &map[(iy - y0) * wd + ix0..(iy - y0) * wd + ix1];
                        let to = &mut out[oy * wd + ix0 + pad - kx..oy * wd + ix1 + pad - kx];
                        for (d, &v) in to.iter_mut().zip(from) {
                            *d += v;
                        }
                    }
                }
            }
        }
    }
}

/// 2-D cross-correlation with zero padding `kernel / 2`.
pub fn conv2d<T: Float>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    let (n, _, h, wd) = spec.check(x, w, b.len())?;
    let (ho, wo) = spec.output_size(h, wd);
    let plane = ho * wo;
    let out_per = spec.out_channels * plane;
    let in_per = spec.in_channels * h * wd;
    let mut out = vec![T::zero(); n * out_per];
    if n > 0 && plane > 0 {
        out.par_chunks_mut(out_per)
            .zip(x.data().par_chunks(in_per))
            .for_each(|(dst, src)| {
                for (o, chunk) in dst.chunks_mut(plane).enumerate() {
                    chunk.iter_mut().for_each(|v| *v = b.data()[o]);
                }
                if spec.is_pointwise() {
                    T::gemm(
                        spec.out_channels,
                        spec.patch_len(),
                        plane,
                        T::one(),
                        w.data(),
                        false,
                        src,
                        false,
                        T::one(),
                        dst,
                    );
                } else if spec.stride == 1 && spec.out_channels < spec.in_channels {
                    conv_shift_add(src, w.data(), spec, h, wd, dst);
                } else {
                    conv_banded(src, w.data(), spec, h, wd, dst);
                }
            });
    }
    Tensor::from_vec(&[n, spec.out_channels, ho, wo], out)
}

/// Which gradients a convolution backward pass should produce.
#[derive(Clone, Copy, Debug)]
pub struct ConvGradRequest {
    pub input: bool,
    pub params: bool,
}

impl ConvGradRequest {
    pub const ALL: Self = Self {
        input: true,
        params: true,
    };
}

#[derive(Debug)]
pub struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weight: Option<Tensor<T>>,
    pub bias: Option<Tensor<T>>,
}

/// Backward pass with selectable outputs. Per-sample weight gradients are
/// reduced in sample order, so results do not depend on thread scheduling.
pub fn conv2d_backward_select<T: Float>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    spec: &ConvSpec,
    grad_out: &Tensor<T>,
    want: ConvGradRequest,
) -> Result<ConvGrads<T>> {
    let (n, _, h, wd) = spec.check(x, w, spec.out_channels)?;
    let (ho, wo) = spec.output_size(h, wd);
    if grad_out.shape() != [n, spec.out_channels, ho, wo] {
        return Err(shape_err!(
            "conv grad_out {:?}, expected {:?}",
            grad_out.shape(),
            [n, spec.out_channels, ho, wo]
        ));
    }
    let plane = ho * wo;
    let patch = spec.patch_len();
    let in_per = spec.in_channels * h * wd;
    let out_per = spec.out_channels * plane;

    let per_sample: Vec<(Option<Vec<T>>, Option<Vec<T>>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let src = &x.data()[i * in_per..(i + 1) * in_per];
            let go = &grad_out.data()[i * out_per..(i + 1) * out_per];
            let cols_owned;
            let cols: &[T] = if spec.is_pointwise() {
                src
            } else {
                cols_owned = {
                    let mut c = vec![T::zero(); patch * plane];
                    if want.params {
                        im2col(src, spec, h, wd, 0..ho, &mut c);
                    }
                    c
                };
                &cols_owned
            };
            let gw = want.params.then(|| {
                let mut gw = vec![T::zero(); spec.out_channels * patch];
                T::gemm(
                    spec.out_channels,
                    plane,
                    patch,
                    T::one(),
                    go,
                    false,
                    cols,
                    true,
                    T::zero(),
                    &mut gw,
                );
                gw
            });
            let gx = want.input.then(|| {
                let mut gcols = vec![T::zero(); patch * plane];
                T::gemm(
                    patch,
                    spec.out_channels,
                    plane,
                    T::one(),
                    w.data(),
                    true,
                    go,
                    false,
                    T::zero(),
                    &mut gcols,
                );
                if spec.is_pointwise() {
                    gcols
                } else {
                    let mut gx = vec![T::zero(); in_per];
                    col2im(&gcols, spec, h, wd, &mut gx);
                    gx
                }
            });
            (gw, gx)
        })
        .collect();

    let mut grads = ConvGrads {
        input: None,
        weight: None,
        bias: None,
    };
    if want.params {
        let mut gw = vec![T::zero(); spec.out_channels * patch];
        for (s, _) in &per_sample {
            for (a, &v) in gw.iter_mut().zip(s.as_ref().expect("requested")) {
                *a += v;
            }
        }
        let mut gb = vec![T::zero(); spec.out_channels];
        for i in 0..n {
            let go = &grad_out.data()[i * out_per..(i + 1) * out_per];
            for (o, chunk) in go.chunks(plane).enumerate() {
                gb[o] += chunk.iter().copied().sum::<T>();
            }
        }
        grads.weight = Some(Tensor::from_vec(&spec.weight_shape(), gw)?);
        grads.bias = Some(Tensor::from_vec(&[spec.out_channels], gb)?);
    }
    if want.input {
        let mut gx = Vec::with_capacity(n * in_per);
        for (_, s) in per_sample {
            gx.extend(s.expect("requested"));
        }
        grads.input = Some(Tensor::from_vec(x.shape(), gx)?);
    }
    Ok(grads)
}

/// Gradients of `sum(grad_out ⊙ conv2d(x, w, b))` with respect to `x`, `w` and `b`.
pub fn conv2d_backward<T: Float>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    spec: &ConvSpec,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let g = conv2d_backward_select(x, w, spec, grad_out, ConvGradRequest::ALL)?;
    Ok((
        g.input.expect("requested"),
        g.weight.expect("requested"),
        g.bias.expect("requested"),
    ))
}
