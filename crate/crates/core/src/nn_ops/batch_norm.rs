use serde::{Deserialize, Serialize};

use super::{Float, Tensor};
use crate::error::{shape_err, Error, Result};

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Whether normalization layers use batch statistics (and update their
/// running estimates) or the frozen running statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Train,
    Eval,
}

/// Non-learnable part of a batch-normalization layer. The affine `gamma` and
/// `beta` live with the other learnables in [`crate::models::ModelParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormState<T> {
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub momentum: f64,
    pub epsilon: f64,
    pub mode: Mode,
}

impl<T: Float> BatchNormState<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            momentum: BN_MOMENTUM,
            epsilon: BN_EPSILON,
            mode: Mode::Train,
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }

    /// Folds the batch statistics recorded in `cache` into the running
    /// estimates (unbiased variance). No-op for eval-mode caches.
    pub fn update_running(&mut self, cache: &BnCache<T>) {
        let Some(stats) = &cache.batch else { return };
        let m = self.momentum;
        let count = stats.count as f64;
        for c in 0..self.channels() {
            let mean = stats.mean[c];
            let var_unbiased = stats.var[c] * count / (count - 1.0);
            self.running_mean[c] = T::lit((1.0 - m) * self.running_mean[c].as_f64() + m * mean);
            self.running_var[c] =
                T::lit((1.0 - m) * self.running_var[c].as_f64() + m * var_unbiased);
        }
    }
}

#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Biased (population) variance of the batch.
    pub var: Vec<f64>,
    pub count: usize,
}

/// What the backward pass needs from the forward pass.
#[derive(Clone, Debug)]
pub struct BnCache<T> {
    x_hat: Vec<T>,
    inv_std: Vec<T>,
    pub batch: Option<BatchStats>,
}

fn check<T: Float>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    st: &BatchNormState<T>,
) -> Result<(usize, usize, usize)> {
    let (n, c, h, w) = x.dims4()?;
    if gamma.len() != c || beta.len() != c || st.channels() != c {
        return Err(shape_err!(
            "batch_norm over {} channels with gamma {}, beta {}, state {}",
            c,
            gamma.len(),
            beta.len(),
            st.channels()
        ));
    }
    Ok((n, c, h * w))
}

/// Forward pass in the mode recorded in `st`. The state is not modified; call
/// [`BatchNormState::update_running`] with the returned cache to commit the
/// train-mode statistics, or use [`batch_norm_step`].
pub fn batch_norm<T: Float>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    st: &BatchNormState<T>,
) -> Result<(Tensor<T>, BnCache<T>)> {
    batch_norm_with_mode(x, gamma, beta, st, st.mode)
}

/// Forward pass in an explicit mode, ignoring the mode stored in `st`.
pub fn batch_norm_with_mode<T: Float>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    st: &BatchNormState<T>,
    mode: Mode,
) -> Result<(Tensor<T>, BnCache<T>)> {
    let (n, c, plane) = check(x, gamma, beta, st)?;
    let count = n * plane;
    let (mean, var, batch) = match mode {
        Mode::Train => {
            if count < 2 {
                return Err(Error::DegenerateBatch(format!(
                    "train-mode batch norm needs at least 2 values per channel, got {count}"
                )));
            }
            let mut mean = vec![0.0f64; c];
            let mut var = vec![0.0f64; c];
            for ch in 0..c {
                let mut s = 0.0;
                for ni in 0..n {
                    let off = (ni * c + ch) * plane;
                    s += x.data()[off..off + plane]
                        .iter()
                        .map(|v| v.as_f64())
                        .sum::<f64>();
                }
                let mu = s / count as f64;
                let mut q = 0.0;
                for ni in 0..n {
                    let off = (ni * c + ch) * plane;
                    q += x.data()[off..off + plane]
                        .iter()
                        .map(|v| {
                            let d = v.as_f64() - mu;
                            d * d
                        })
                        .sum::<f64>();
                }
                mean[ch] = mu;
                var[ch] = q / count as f64;
            }
            let stats = BatchStats {
                mean: mean.clone(),
                var: var.clone(),
                count,
            };
            (mean, var, Some(stats))
        }
        Mode::Eval => (
            st.running_mean.iter().map(|v| v.as_f64()).collect(),
            st.running_var.iter().map(|v| v.as_f64()).collect(),
            None,
        ),
    };
    let inv_std: Vec<T> = var
        .iter()
        .map(|&v| T::lit(1.0 / (v + st.epsilon).sqrt()))
        .collect();
    let mean_t: Vec<T> = mean.iter().map(|&m| T::lit(m)).collect();
    let mut x_hat = vec![T::zero(); x.len()];
    let mut y = vec![T::zero(); x.len()];
    for (i, (xs, (hs, ys))) in x
        .data()
        .chunks(plane)
        .zip(x_hat.chunks_mut(plane).zip(y.chunks_mut(plane)))
        .enumerate()
    {
        let ch = i % c;
        let (mu, is, g, b) = (mean_t[ch], inv_std[ch], gamma.data()[ch], beta.data()[ch]);
        for ((&xv, hv), yv) in xs.iter().zip(hs.iter_mut()).zip(ys.iter_mut()) {
            *hv = (xv - mu) * is;
            *yv = g * *hv + b;
        }
    }
    Ok((
        Tensor::from_vec(x.shape(), y)?,
        BnCache {
            x_hat,
            inv_std,
            batch,
        },
    ))
}

/// Forward pass that also commits train-mode running statistics.
pub fn batch_norm_step<T: Float>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    st: &mut BatchNormState<T>,
) -> Result<(Tensor<T>, BnCache<T>)> {
    let (y, cache) = batch_norm(x, gamma, beta, st)?;
    st.update_running(&cache);
    Ok((y, cache))
}

/// Returns `(grad_x, grad_gamma, grad_beta)`. In train mode the gradient flows
/// through the batch mean and variance as well.
pub fn batch_norm_backward<T: Float>(
    cache: &BnCache<T>,
    gamma: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (n, c, h, w) = grad_out.dims4()?;
    let plane = h * w;
    if cache.x_hat.len() != grad_out.len() || gamma.len() != c {
        return Err(shape_err!(
            "batch_norm backward: cache/gradient shape mismatch"
        ));
    }
    let mut sum_g = vec![T::zero(); c];
    let mut sum_gx = vec![T::zero(); c];
    for (i, (gs, hs)) in grad_out
        .data()
        .chunks(plane)
        .zip(cache.x_hat.chunks(plane))
        .enumerate()
    {
        let ch = i % c;
        for (&g, &xh) in gs.iter().zip(hs) {
            sum_g[ch] += g;
            sum_gx[ch] += g * xh;
        }
    }
    let count = T::lit((n * plane) as f64);
    let mut gx = vec![T::zero(); grad_out.len()];
    for (i, ((gs, hs), out)) in grad_out
        .data()
        .chunks(plane)
        .zip(cache.x_hat.chunks(plane))
        .zip(gx.chunks_mut(plane))
        .enumerate()
    {
        let ch = i % c;
        let scale = gamma.data()[ch] * cache.inv_std[ch];
        if cache.batch.is_some() {
            let mg = sum_g[ch] / count;
            let mgx = sum_gx[ch] / count;
            for ((&g, &xh), o) in gs.iter().zip(hs).zip(out.iter_mut()) {
                *o = scale * (g - mg - xh * mgx);
            }
        } else {
            for (&g, o) in gs.iter().zip(out.iter_mut()) {
                *o = scale * g;
            }
        }
    }
    Ok((
        Tensor::from_vec(grad_out.shape(), gx)?,
        Tensor::from_vec(&[c], sum_gx)?,
        Tensor::from_vec(&[c], sum_g)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn eval_with_unit_stats_is_near_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Tensor::<f64>::randn(&[2, 3, 4, 4], 1.0, &mut rng);
        let mut st = BatchNormState::new(3);
        st.mode = Mode::Eval;
        let (y, _) = batch_norm(&x, &Tensor::full(&[3], 1.0), &Tensor::zeros(&[3]), &st).unwrap();
        let scale = 1.0 / (1.0 + BN_EPSILON).sqrt();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b * scale).abs() < 1e-12);
        }
    }

    #[test]
    fn train_mode_standardizes_each_channel() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::<f64>::randn(&[4, 2, 3, 3], 3.0, &mut rng).map(|v| v + 5.0);
        let st = BatchNormState::new(2);
        let (y, _) = batch_norm(&x, &Tensor::full(&[2], 1.0), &Tensor::zeros(&[2]), &st).unwrap();
        for ch in 0..2 {
            let vals: Vec<f64> = (0..4)
                .flat_map(|n| y.data()[(n * 2 + ch) * 9..(n * 2 + ch + 1) * 9].to_vec())
                .collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let v = vals.iter().map(|a| (a - m).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(m.abs() < 1e-5);
            assert!((v - 1.0).abs() < 1e-5, "var {v}");
        }
    }

    #[test]
    fn eval_never_mutates_and_train_updates() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::<f64>::randn(&[2, 2, 2, 2], 1.0, &mut rng);
        let (g, b) = (Tensor::full(&[2], 1.0), Tensor::zeros(&[2]));
        let mut st = BatchNormState::new(2);
        st.mode = Mode::Eval;
        let before = st.clone();
        batch_norm_step(&x, &g, &b, &mut st).unwrap();
        assert_eq!(st, before);
        st.mode = Mode::Train;
        batch_norm_step(&x, &g, &b, &mut st).unwrap();
        assert_ne!(st.running_mean, before.running_mean);
        assert!(st.running_var.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn single_element_batch_is_degenerate() {
        let x = Tensor::<f64>::zeros(&[1, 2, 1, 1]);
        let st = BatchNormState::new(2);
        let r = batch_norm(&x, &Tensor::full(&[2], 1.0), &Tensor::zeros(&[2]), &st);
        assert!(matches!(r, Err(Error::DegenerateBatch(_))));
    }
}
