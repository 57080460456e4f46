use super::{Float, Tensor};
use crate::error::{shape_err, Result};

/// Slope index for channel `c`: per-channel slopes, or one slope shared by all.
fn slope_index(slopes: usize, c: usize) -> usize {
    if slopes == 1 {
        0
    } else {
        c
    }
}

fn check_slopes<T: Float>(x: &Tensor<T>, a: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let (n, c, h, w) = x.dims4()?;
    if a.len() != c && a.len() != 1 {
        return Err(shape_err!(
            "prelu has {} slopes for {} channels",
            a.len(),
            c
        ));
    }
    Ok((n, c, h * w))
}

/// Parametric ReLU: `x` where positive, `a[c]·x` otherwise.
pub fn prelu<T: Float>(x: &Tensor<T>, a: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, plane) = check_slopes(x, a)?;
    let mut out = x.clone();
    out.clear_grad();
    if plane == 0 {
        return Ok(out);
    }
    for (i, chunk) in out.data_mut().chunks_mut(plane).enumerate().take(n * c) {
        let slope = a.data()[slope_index(a.len(), i % c)];
        for v in chunk {
            if *v <= T::zero() {
                *v *= slope;
            }
        }
    }
    Ok(out)
}

/// Returns `(grad_x, grad_a)`.
pub fn prelu_backward<T: Float>(
    x: &Tensor<T>,
    a: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (_, c, plane) = check_slopes(x, a)?;
    x.same_shape(grad_out)?;
    let mut gx = grad_out.clone();
    gx.clear_grad();
    let mut ga = Tensor::zeros(a.shape());
    if plane == 0 {
        return Ok((gx, ga));
    }
    for (i, (gchunk, xchunk)) in gx
        .data_mut()
        .chunks_mut(plane)
        .zip(x.data().chunks(plane))
        .enumerate()
    {
        let si = slope_index(a.len(), i % c);
        let slope = a.data()[si];
        let mut acc = T::zero();
        for (g, &xv) in gchunk.iter_mut().zip(xchunk) {
            if xv <= T::zero() {
                acc += *g * xv;
                *g *= slope;
            }
        }
        ga.data_mut()[si] += acc;
    }
    Ok((gx, ga))
}

pub fn leaky_relu<T: Float>(x: &Tensor<T>, alpha: T) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { alpha * v })
}

pub fn leaky_relu_backward<T: Float>(
    x: &Tensor<T>,
    alpha: T,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    x.same_shape(grad_out)?;
    let data = x
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&xv, &g)| if xv > T::zero() { g } else { alpha * g })
        .collect();
    Tensor::from_vec(x.shape(), data)
}

pub fn relu<T: Float>(x: &Tensor<T>) -> Tensor<T> {
    leaky_relu(x, T::zero())
}

pub fn relu_backward<T: Float>(x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    leaky_relu_backward(x, T::zero(), grad_out)
}

/// Logistic function evaluated without overflow for large `|x|`.
#[inline]
pub fn sigmoid_scalar<T: Float>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `log(1 + e^x)` without overflow.
#[inline]
pub fn softplus<T: Float>(x: T) -> T {
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid<T: Float>(x: &Tensor<T>) -> Tensor<T> {
    x.map(sigmoid_scalar)
}

/// Backward from the forward output `y`: `grad · y(1−y)`.
pub fn sigmoid_backward<T: Float>(y: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    y.same_shape(grad_out)?;
    let data = y
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&yv, &g)| g * yv * (T::one() - yv))
        .collect();
    Tensor::from_vec(y.shape(), data)
}

pub fn elementwise_add<T: Float>(x: &Tensor<T>, y: &Tensor<T>) -> Result<Tensor<T>> {
    x.same_shape(y)?;
    let data = x
        .data()
        .iter()
        .zip(y.data())
        .map(|(&a, &b)| a + b)
        .collect();
    Tensor::from_vec(x.shape(), data)
}

/// The upstream gradient reaches both summands unchanged.
pub fn elementwise_add_backward<T: Float>(grad_out: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
    let mut g = grad_out.clone();
    g.clear_grad();
    (g.clone(), g)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(&[1, 1, 1, v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn prelu_definition() {
        let a = Tensor::from_vec(&[1], vec![0.25]).unwrap();
        assert_eq!(prelu(&t(&[-2.0]), &a).unwrap().data(), &[-0.5]);
        let x = t(&[0.0, 1.0, 3.5]);
        assert_eq!(prelu(&x, &a).unwrap().data(), x.data());
    }

    #[test]
    fn prelu_per_channel_slopes() {
        let x = Tensor::from_vec(&[1, 2, 1, 1], vec![-1.0, -1.0]).unwrap();
        let a = Tensor::from_vec(&[2], vec![0.1, 0.5]).unwrap();
        assert_eq!(prelu(&x, &a).unwrap().data(), &[-0.1, -0.5]);
        let (_, ga) = prelu_backward(&x, &a, &Tensor::full(&[1, 2, 1, 1], 1.0)).unwrap();
        assert_eq!(ga.data(), &[-1.0, -1.0]);
        assert!(prelu(&x, &Tensor::from_vec(&[3], vec![0.0; 3]).unwrap()).is_err());
    }

    #[test]
    fn leaky_relu_values() {
        assert_eq!(leaky_relu(&t(&[-1.0, 3.0]), 0.2).data(), &[-0.2, 3.0]);
    }

    #[test]
    fn sigmoid_is_stable() {
        let y = sigmoid(&t(&[0.0, 40.0, -1000.0, 1000.0]));
        assert_eq!(y.data()[0], 0.5);
        assert!((y.data()[1] - 1.0).abs() < 1e-12);
        assert!(y.all_finite());
        assert_eq!(y.data()[3], 1.0);
        assert!(softplus(1000.0f64).is_finite() && softplus(-1000.0f64) >= 0.0);
    }

    #[test]
    fn add_commutes_and_splits_gradient() {
        let x = t(&[1.0, -2.0]);
        let y = t(&[0.5, 4.0]);
        assert_eq!(
            elementwise_add(&x, &y).unwrap(),
            elementwise_add(&y, &x).unwrap()
        );
        assert_eq!(elementwise_add(&x, &Tensor::zeros_like(&x)).unwrap(), x);
        let (a, b) = elementwise_add_backward(&y);
        assert_eq!(a, y);
        assert_eq!(b, y);
        assert!(elementwise_add(&x, &t(&[1.0])).is_err());
    }
}
