use super::{Float, Tensor};
use crate::error::{shape_err, Result};

/// 2×2 max pooling with stride 2 (odd trailing rows/columns dropped).
/// Returns the pooled tensor and the flat argmax index of each output.
pub fn max_pool2<T: Float>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let (n, c, h, w) = x.dims4()?;
    if h < 2 || w < 2 {
        return Err(shape_err!("max_pool2 needs at least 2x2, got {h}x{w}"));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut arg = Vec::with_capacity(n * c * oh * ow);
    let src = x.data();
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if src[idx] > src[best] {
                        best = idx;
                    }
                }
                out.push(src[best]);
                arg.push(best);
            }
        }
    }
    Ok((Tensor::from_vec(&[n, c, oh, ow], out)?, arg))
}

pub fn max_pool2_backward<T: Float>(
    input_shape: &[usize],
    argmax: &[usize],
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    if argmax.len() != grad_out.len() {
        return Err(shape_err!(
            "max_pool2 backward: {} indices for {} gradients",
            argmax.len(),
            grad_out.len()
        ));
    }
    let mut g = Tensor::zeros(input_shape);
    let data = g.data_mut();
    for (&i, &v) in argmax.iter().zip(grad_out.data()) {
        data[i] += v;
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn picks_maxima() {
        let x = Tensor::from_vec(
            &[1, 1, 2, 4],
            vec![1.0f64, 5.0, 0.0, -1.0, 2.0, 3.0, -2.0, -3.0],
        )
        .unwrap();
        let (y, arg) = max_pool2(&x).unwrap();
        assert_eq!(y.data(), &[5.0, 0.0]);
        let g = max_pool2_backward(x.shape(), &arg, &Tensor::full(&[1, 1, 1, 2], 1.0)).unwrap();
        assert_eq!(g.data(), &[0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }
}
