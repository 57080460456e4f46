use super::{Float, Tensor};
use crate::error::{shape_err, Result};

/// Fully connected layer `y = x·W + b` over the flattened sample: `x` is
/// `(N, …)` with `in_features` elements per sample, `W` is `(in, out)`.
pub fn dense<T: Float>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, fin, fout) = check(x, w, b)?;
    let mut out = Vec::with_capacity(n * fout);
    for _ in 0..n {
        out.extend_from_slice(b.data());
    }
    T::gemm(
        n,
        fin,
        fout,
        T::one(),
        x.data(),
        false,
        w.data(),
        false,
        T::one(),
        &mut out,
    );
    Tensor::from_vec(&[n, fout], out)
}

/// Returns `(grad_x, grad_w, grad_b)`; `grad_x` keeps the shape of `x`.
pub fn dense_backward<T: Float>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let fout = w.shape()[1];
    let (n, fin, _) = check(x, w, &Tensor::zeros(&[fout]))?;
    if grad_out.shape() != [n, fout] {
        return Err(shape_err!(
            "dense grad_out {:?}, expected [{n}, {fout}]",
            grad_out.shape()
        ));
    }
    let mut gx = vec![T::zero(); n * fin];
    T::gemm(
        n,
        fout,
        fin,
        T::one(),
        grad_out.data(),
        false,
        w.data(),
        true,
        T::zero(),
        &mut gx,
    );
    let mut gw = vec![T::zero(); fin * fout];
    T::gemm(
        fin,
        n,
        fout,
        T::one(),
        x.data(),
        true,
        grad_out.data(),
        false,
        T::zero(),
        &mut gw,
    );
    let mut gb = vec![T::zero(); fout];
    for row in grad_out.data().chunks(fout) {
        for (a, &v) in gb.iter_mut().zip(row) {
            *a += v;
        }
    }
    Ok((
        Tensor::from_vec(x.shape(), gx)?,
        Tensor::from_vec(&[fin, fout], gw)?,
        Tensor::from_vec(&[fout], gb)?,
    ))
}

fn check<T: Float>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let [fin, fout] = w.shape() else {
        return Err(shape_err!("dense weight must be 2-D, got {:?}", w.shape()));
    };
    let n = *x
        .shape()
        .first()
        .ok_or_else(|| shape_err!("dense input has no batch axis"))?;
    if n == 0 || x.len() / n != *fin || !x.len().is_multiple_of(n) {
        return Err(shape_err!(
            "dense input {:?} does not flatten to {} features",
            x.shape(),
            fin
        ));
    }
    if b.len() != *fout {
        return Err(shape_err!(
            "dense bias length {}, expected {}",
            b.len(),
            fout
        ));
    }
    Ok((n, *fin, *fout))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_weights() {
        let x = Tensor::from_vec(&[2, 3], vec![1.0f64, 2.0, 3.0, -1.0, 0.5, 0.0]).unwrap();
        let mut w = Tensor::zeros(&[3, 3]);
        for i in 0..3 {
            w.data_mut()[i * 3 + i] = 1.0;
        }
        assert_eq!(
            dense(&x, &w, &Tensor::zeros(&[3])).unwrap().data(),
            x.data()
        );
    }

    #[test]
    fn hand_multiplied() {
        // [1,2]·[[1,2],[3,4]] + [0.5,-1] = [7.5, 9]
        let x = Tensor::from_vec(&[1, 2], vec![1.0f64, 2.0]).unwrap();
        let w = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::from_vec(&[2], vec![0.5, -1.0]).unwrap();
        assert_eq!(dense(&x, &w, &b).unwrap().data(), &[7.5, 9.0]);
    }

    #[test]
    fn flattens_4d_input() {
        let x = Tensor::<f64>::full(&[2, 2, 2, 2], 1.0);
        let w = Tensor::full(&[8, 1], 1.0);
        let y = dense(&x, &w, &Tensor::zeros(&[1])).unwrap();
        assert_eq!(y.shape(), &[2, 1]);
        assert_eq!(y.data(), &[8.0, 8.0]);
        assert!(dense(&x, &Tensor::zeros(&[7, 1]), &Tensor::zeros(&[1])).is_err());
    }
}
