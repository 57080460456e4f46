//! Content, adversarial and total-variation losses with analytic gradients
//! with respect to the generated image (or the discriminator output).
//!
//! Loss values are accumulated and returned in `f64`; gradients have the
//! precision of the inputs.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::models::FeatureExtractor;
use crate::nn_ops::{sigmoid_scalar, softplus, Float, Tensor};

/// Probabilities are clamped into `[PROB_CLAMP, 1 - PROB_CLAMP]` before logs.
pub const PROB_CLAMP: f64 = 1e-7;
pub const TV_EPSILON: f64 = 1e-8;

/// A scalar loss and its gradient with respect to one input.
#[derive(Clone, Debug)]
pub struct Loss<T> {
    pub value: f64,
    pub grad: Tensor<T>,
}

fn check_same(a: &Tensor<impl Float>, b: &Tensor<impl Float>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(shape_err!(
            "loss inputs differ in shape: {:?} vs {:?}",
            a.shape(),
            b.shape()
        ));
    }
    Ok(())
}

/// Squared error summed over channels and pixels, divided by the pixel count
/// `H·W` and averaged over the batch.
pub fn mse_content_loss<T: Float>(sr: &Tensor<T>, hr: &Tensor<T>) -> Result<Loss<T>> {
    check_same(sr, hr)?;
    let (n, _, h, w) = sr.dims4()?;
    let denom = (n * h * w) as f64;
    let mut acc = 0.0;
    let scale = T::lit(2.0 / denom);
    let grad = sr
        .data()
        .iter()
        .zip(hr.data())
        .map(|(&s, &r)| {
            let d = s - r;
            acc += d.as_f64() * d.as_f64();
            scale * d
        })
        .collect();
    Ok(Loss {
        value: acc / denom,
        grad: Tensor::from_vec(sr.shape(), grad)?,
    })
}

/// Euclidean distance between rescaled feature maps, normalized by the
/// feature map's spatial size and averaged over the batch. The reference
/// features are treated as constants.
pub fn feature_content_loss<T: Float>(
    sr: &Tensor<T>,
    hr: &Tensor<T>,
    extractor: &FeatureExtractor<T>,
    rescale: f64,
) -> Result<Loss<T>> {
    check_same(sr, hr)?;
    let (f_sr, tape) = extractor.forward(sr)?;
    let (f_hr, _) = extractor.forward(hr)?;
    let (n, _, fh, fw) = f_sr.dims4()?;
    let denom = (n * fh * fw) as f64;
    let s2 = rescale * rescale;
    let mut acc = 0.0;
    let scale = T::lit(2.0 * s2 / denom);
    let g_feat = f_sr
        .data()
        .iter()
        .zip(f_hr.data())
        .map(|(&a, &b)| {
            let d = (a - b).as_f64();
            acc += d * d;
            scale * (a - b)
        })
        .collect();
    let grad = extractor.backward(&tape, Tensor::from_vec(f_sr.shape(), g_feat)?)?;
    Ok(Loss {
        value: s2 * acc / denom,
        grad,
    })
}

fn check_probs<T: Float>(p: &Tensor<T>) -> Result<()> {
    match p
        .data()
        .iter()
        .find(|v| !(v.as_f64() >= 0.0 && v.as_f64() <= 1.0))
    {
        Some(v) => Err(Error::Domain(format!(
            "discriminator output {v} is not a probability"
        ))),
        None => Ok(()),
    }
}

/// `-log p` with clamping, and its derivative (zero where the clamp is active).
fn neg_log<T: Float>(p: T) -> (f64, T) {
    let v = p.as_f64();
    let c = v.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    let d = if v == c { T::lit(-1.0 / c) } else { T::zero() };
    (-c.ln(), d)
}

fn batch_scale(n: usize, mean: bool) -> f64 {
    if mean {
        1.0 / n as f64
    } else {
        1.0
    }
}

/// `Σ_n −log D(G(x_n))` (or the batch mean when `mean` is set); gradient
/// with respect to the probabilities.
pub fn adversarial_gen_loss<T: Float>(d_out: &Tensor<T>, mean: bool) -> Result<Loss<T>> {
    check_probs(d_out)?;
    let k = batch_scale(d_out.len(), mean);
    let mut acc = 0.0;
    let grad = d_out
        .data()
        .iter()
        .map(|&p| {
            let (v, d) = neg_log(p);
            acc += v;
            d * T::lit(k)
        })
        .collect();
    Ok(Loss {
        value: acc * k,
        grad: Tensor::from_vec(d_out.shape(), grad)?,
    })
}

/// Same loss computed from pre-sigmoid logits as `softplus(−z)`; gradient
/// with respect to the logits.
pub fn adversarial_gen_loss_logits<T: Float>(logits: &Tensor<T>, mean: bool) -> Result<Loss<T>> {
    let k = batch_scale(logits.len(), mean);
    let mut acc = 0.0;
    let grad = logits
        .data()
        .iter()
        .map(|&z| {
            acc += softplus(-z).as_f64();
            (sigmoid_scalar(z) - T::one()) * T::lit(k)
        })
        .collect();
    Ok(Loss {
        value: acc * k,
        grad: Tensor::from_vec(logits.shape(), grad)?,
    })
}

/// Discriminator objective value and gradients for the real and fake inputs.
#[derive(Clone, Debug)]
pub struct DiscLoss<T> {
    pub value: f64,
    pub grad_real: Tensor<T>,
    pub grad_fake: Tensor<T>,
}

/// `−mean log d_real − mean log(1 − d_fake)` from probabilities.
pub fn discriminator_loss<T: Float>(d_real: &Tensor<T>, d_fake: &Tensor<T>) -> Result<DiscLoss<T>> {
    check_probs(d_real)?;
    check_probs(d_fake)?;
    let (kr, kf) = (1.0 / d_real.len() as f64, 1.0 / d_fake.len() as f64);
    let mut acc = 0.0;
    let grad_real = d_real
        .data()
        .iter()
        .map(|&p| {
            let (v, d) = neg_log(p);
            acc += v * kr;
            d * T::lit(kr)
        })
        .collect();
    let grad_fake = d_fake
        .data()
        .iter()
        .map(|&p| {
            let (v, d) = neg_log(T::one() - p);
            acc += v * kf;
            -d * T::lit(kf)
        })
        .collect();
    Ok(DiscLoss {
        value: acc,
        grad_real: Tensor::from_vec(d_real.shape(), grad_real)?,
        grad_fake: Tensor::from_vec(d_fake.shape(), grad_fake)?,
    })
}

/// Discriminator objective from logits: `mean softplus(−z_real) + mean softplus(z_fake)`.
pub fn discriminator_loss_logits<T: Float>(
    z_real: &Tensor<T>,
    z_fake: &Tensor<T>,
) -> Result<DiscLoss<T>> {
    let (kr, kf) = (1.0 / z_real.len() as f64, 1.0 / z_fake.len() as f64);
    let mut acc = 0.0;
    let grad_real = z_real
        .data()
        .iter()
        .map(|&z| {
            acc += softplus(-z).as_f64() * kr;
            (sigmoid_scalar(z) - T::one()) * T::lit(kr)
        })
        .collect();
    let grad_fake = z_fake
        .data()
        .iter()
        .map(|&z| {
            acc += softplus(z).as_f64() * kf;
            sigmoid_scalar(z) * T::lit(kf)
        })
        .collect();
    Ok(DiscLoss {
        value: acc,
        grad_real: Tensor::from_vec(z_real.shape(), grad_real)?,
        grad_fake: Tensor::from_vec(z_fake.shape(), grad_fake)?,
    })
}

/// Isotropic total variation `Σ sqrt(dx² + dy² + ε²)` with forward
/// differences (zero past the last row/column), summed over channels and
/// averaged over the batch.
pub fn total_variation_loss<T: Float>(sr: &Tensor<T>) -> Result<Loss<T>> {
    let (n, c, h, w) = sr.dims4()?;
    if h < 2 || w < 2 {
        return Err(shape_err!(
            "total variation needs at least 2x2, got {h}x{w}"
        ));
    }
    let x = sr.data();
    let mut grad = vec![0.0f64; x.len()];
    let eps2 = TV_EPSILON * TV_EPSILON;
    let inv_n = 1.0 / n as f64;
    let mut acc = 0.0;
    for plane in 0..n * c {
        let base = plane * h * w;
        for i in 0..h {
            for j in 0..w {
                let p = base + i * w + j;
                let v = x[p].as_f64();
                let dx = if j + 1 < w {
                    x[p + 1].as_f64() - v
                } else {
                    0.0
                };
                let dy = if i + 1 < h {
                    x[p + w].as_f64() - v
                } else {
                    0.0
                };
                let t = (dx * dx + dy * dy + eps2).sqrt();
                acc += t;
                grad[p] -= (dx + dy) / t * inv_n;
                if j + 1 < w {
                    grad[p + 1] += dx / t * inv_n;
                }
                if i + 1 < h {
                    grad[p + w] += dy / t * inv_n;
                }
            }
        }
    }
    Ok(Loss {
        value: acc * inv_n,
        grad: Tensor::from_vec(sr.shape(), grad.into_iter().map(T::lit).collect())?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContentLoss {
    Mse,
    /// Feature-space loss at tap `(i, j)`.
    Feature(usize, usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossSpec {
    pub content: ContentLoss,
    pub adversarial_weight: f64,
    pub tv_weight: f64,
    pub feature_rescale: f64,
    /// Average the adversarial term over the batch instead of summing.
    pub adv_mean: bool,
}

impl Default for LossSpec {
    fn default() -> Self {
        Self {
            content: ContentLoss::Mse,
            adversarial_weight: 1e-3,
            tv_weight: 0.0,
            feature_rescale: 1.0 / 12.75,
            adv_mean: false,
        }
    }
}

impl LossSpec {
    pub fn content_only(content: ContentLoss) -> Self {
        Self {
            content,
            adversarial_weight: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("adversarial_weight", self.adversarial_weight),
            ("tv_weight", self.tv_weight),
            ("feature_rescale", self.feature_rescale),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        if let ContentLoss::Feature(i, j) = self.content {
            crate::models::FeatureExtractorConfig::with_tap(i, j).validate()?;
        }
        Ok(())
    }
}

/// Discriminator output fed to the adversarial term.
#[derive(Clone, Copy, Debug)]
pub enum AdvInput<'a, T> {
    Probs(&'a Tensor<T>),
    Logits(&'a Tensor<T>),
}

#[derive(Clone, Debug)]
pub struct LossReport<T> {
    pub content_value: f64,
    pub adversarial_value: f64,
    pub tv_value: f64,
    pub total: f64,
    pub content_grad: Tensor<T>,
    pub tv_grad: Option<Tensor<T>>,
    /// Unweighted gradient of the adversarial term w.r.t. the discriminator
    /// output it was computed from.
    pub adversarial_grad: Option<Tensor<T>>,
    /// `content_grad + tv_weight · tv_grad`: every image-space term that does
    /// not pass through the discriminator.
    pub image_grad: Tensor<T>,
}

/// Weighted sum of content, adversarial and TV terms.
pub fn perceptual_loss<T: Float>(
    sr: &Tensor<T>,
    hr: &Tensor<T>,
    d_fake: Option<AdvInput<'_, T>>,
    spec: &LossSpec,
    extractor: Option<&FeatureExtractor<T>>,
) -> Result<LossReport<T>> {
    spec.validate()?;
    let content = match (spec.content, extractor) {
        (ContentLoss::Mse, None) => mse_content_loss(sr, hr)?,
        (ContentLoss::Feature(..), Some(fx)) => {
            feature_content_loss(sr, hr, fx, spec.feature_rescale)?
        }
        (ContentLoss::Mse, Some(_)) => {
            return Err(Error::InvalidArgument(
                "feature extractor given for pixel content loss".into(),
            ))
        }
        (ContentLoss::Feature(..), None) => {
            return Err(Error::InvalidArgument(
                "feature content loss needs an extractor".into(),
            ))
        }
    };
    let adv = match d_fake {
        Some(AdvInput::Probs(p)) => Some(adversarial_gen_loss(p, spec.adv_mean)?),
        Some(AdvInput::Logits(z)) => Some(adversarial_gen_loss_logits(z, spec.adv_mean)?),
        None if spec.adversarial_weight > 0.0 => {
            return Err(Error::InvalidArgument(
                "adversarial weight set but no discriminator output".into(),
            ))
        }
        None => None,
    };
    let tv = if spec.tv_weight > 0.0 {
        Some(total_variation_loss(sr)?)
    } else {
        None
    };
    let adversarial_value = adv.as_ref().map_or(0.0, |l| l.value);
    let tv_value = tv.as_ref().map_or(0.0, |l| l.value);
    let total =
        content.value + spec.adversarial_weight * adversarial_value + spec.tv_weight * tv_value;
    let mut image_grad = content.grad.clone();
    if let Some(tv) = &tv {
        let w = T::lit(spec.tv_weight);
        for (g, &t) in image_grad.data_mut().iter_mut().zip(tv.grad.data()) {
            *g += w * t;
        }
    }
    Ok(LossReport {
        content_value: content.value,
        adversarial_value,
        tv_value,
        total,
        content_grad: content.grad,
        tv_grad: tv.map(|l| l.grad),
        adversarial_grad: adv.map(|l| l.grad),
        image_grad,
    })
}
