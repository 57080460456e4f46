use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{
    apply_grads, backprop_stack, commit_running_stats, rectifier_gain, run_stack, BackwardOpts,
    Cache, GradSink, Layer,
};
use super::ModelParams;
use crate::error::{shape_err, Error, Result};
use crate::nn_ops::{sigmoid, Float, Mode, Tensor};

/// Strided convolutional classifier layout. The first convolution has no batch norm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscriminatorConfig {
    pub input_size: usize,
    pub widths: Vec<usize>,
    pub strides: Vec<usize>,
    pub dense_width: usize,
    pub leaky_alpha: f64,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            input_size: 96,
            widths: vec![64, 64, 128, 128, 256, 256, 512, 512],
            strides: vec![1, 2, 1, 2, 1, 2, 1, 2],
            dense_width: 1024,
            leaky_alpha: 0.2,
        }
    }
}

impl DiscriminatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.widths.len() != 8 || self.strides.len() != 8 {
            return Err(Error::InvalidArgument(format!(
                "discriminator needs 8 widths and 8 strides, got {} and {}",
                self.widths.len(),
                self.strides.len()
            )));
        }
        if self.widths.contains(&0) || self.dense_width == 0 {
            return Err(Error::InvalidArgument(
                "discriminator widths must be positive".into(),
            ));
        }
        if self.strides.iter().any(|&s| s != 1 && s != 2) {
            return Err(Error::InvalidArgument(
                "discriminator strides must be 1 or 2".into(),
            ));
        }
        let total: usize = self.strides.iter().product();
        if self.input_size == 0 || !self.input_size.is_multiple_of(total) {
            return Err(Error::InvalidArgument(format!(
                "input size {} not divisible by total stride {total}",
                self.input_size
            )));
        }
        if !(self.leaky_alpha.is_finite() && self.leaky_alpha >= 0.0) {
            return Err(Error::InvalidArgument(
                "leaky_alpha must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Shape `(C, H, W)` of the last convolutional map.
    pub fn feature_shape(&self) -> (usize, usize, usize) {
        let total: usize = self.strides.iter().product();
        let side = self.input_size / total;
        (*self.widths.last().unwrap_or(&0), side, side)
    }
}

const OUTPUT_GAIN: f64 = 0.1;

pub struct Discriminator {
    cfg: DiscriminatorConfig,
    convs: Vec<Layer>,
    head: Vec<Layer>,
}

pub struct DiscriminatorTape<T> {
    convs: Vec<Cache<T>>,
    head: Vec<Cache<T>>,
    /// Output of the last convolutional block, before flattening.
    pub features: Tensor<T>,
    /// Pre-sigmoid scores, shape `(N, 1)`.
    pub logits: Tensor<T>,
}

impl Discriminator {
    pub fn new(cfg: &DiscriminatorConfig) -> Result<Self> {
        cfg.validate()?;
        let leaky = Layer::LeakyRelu {
            alpha: cfg.leaky_alpha,
        };
        let mut convs = Vec::new();
        let mut c_in = 3;
        for (i, (&w, &s)) in cfg.widths.iter().zip(&cfg.strides).enumerate() {
            convs.push(Layer::conv(format!("conv{i}"), 3, c_in, w, s)?);
            if i > 0 {
                convs.push(Layer::BatchNorm {
                    name: format!("bn{i}"),
                    channels: w,
                });
            }
            convs.push(leaky.clone());
            c_in = w;
        }
        let (c, h, w) = cfg.feature_shape();
        let head = vec![
            Layer::Dense {
                name: "dense1".into(),
                inputs: c * h * w,
                outputs: cfg.dense_width,
            },
            leaky,
            Layer::Dense {
                name: "dense2".into(),
                inputs: cfg.dense_width,
                outputs: 1,
            },
        ];
        Ok(Self {
            cfg: cfg.clone(),
            convs,
            head,
        })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.cfg
    }

    pub fn layers(&self) -> impl Iterator<Item = &Layer> {
        self.convs.iter().chain(&self.head)
    }

    pub fn init_params<T: Float>(&self, seed: u64) -> Result<ModelParams<T>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ModelParams::new();
        let gain = rectifier_gain(self.cfg.leaky_alpha);
        for layer in self.layers() {
            // The scoring layer starts small so fresh outputs sit near 0.5.
            let g = match layer {
                Layer::Dense { name, .. } if name == "dense2" => OUTPUT_GAIN,
                _ => gain,
            };
            layer.init(&mut params, g, &mut rng)?;
        }
        Ok(params)
    }

    pub fn param_count(&self) -> usize {
        self.layers().map(Layer::param_count).sum()
    }

    /// Returns probabilities `(N, 1)`, kept strictly inside (0, 1), and the tape (which also holds the logits).
    pub fn forward<T: Float>(
        &self,
        params: &ModelParams<T>,
        x: &Tensor<T>,
        mode: Mode,
    ) -> Result<(Tensor<T>, DiscriminatorTape<T>)> {
        let (_, c, h, w) = x.dims4()?;
        if c != 3 || h != self.cfg.input_size || w != self.cfg.input_size {
            return Err(shape_err!(
                "discriminator expects 3x{s}x{s} input, got {c}x{h}x{w}",
                s = self.cfg.input_size
            ));
        }
        let (features, convs) = run_stack(&self.convs, params, x.clone(), mode)?;
        let (logits, head) = run_stack(&self.head, params, features.clone(), mode)?;
        // Saturated logits would round to exactly 0 or 1.
        let eps = T::epsilon();
        let probs = sigmoid(&logits).map(|v| v.max(eps).min(T::one() - eps));
        Ok((
            probs,
            DiscriminatorTape {
                convs,
                head,
                features,
                logits,
            },
        ))
    }

    pub fn commit<T: Float>(
        &self,
        params: &mut ModelParams<T>,
        tape: &DiscriminatorTape<T>,
    ) -> Result<()> {
        commit_running_stats(params, tape.convs.iter().chain(&tape.head))
    }

    /// Back-propagates a gradient w.r.t. the logits.
    pub fn backward<T: Float>(
        &self,
        params: &mut ModelParams<T>,
        tape: &DiscriminatorTape<T>,
        grad_logits: Tensor<T>,
        opts: BackwardOpts,
    ) -> Result<Option<Tensor<T>>> {
        let mut sink = GradSink::new();
        let inner = BackwardOpts {
            param_grads: opts.param_grads,
            input_grad: true,
        };
        let g = backprop_stack(
            &self.head,
            params,
            &tape.head,
            grad_logits,
            inner,
            &mut sink,
        )?
        .expect("input grad");
        let gx = backprop_stack(&self.convs, params, &tape.convs, g, opts, &mut sink)?;
        if opts.param_grads {
            apply_grads(params, sink)?;
        }
        Ok(gx)
    }
}

impl Discriminator {
    /// Gradient w.r.t. the input image only; `params` is left untouched.
    pub fn input_grad<T: Float>(
        &self,
        params: &ModelParams<T>,
        tape: &DiscriminatorTape<T>,
        grad_logits: Tensor<T>,
    ) -> Result<Tensor<T>> {
        let mut sink = GradSink::new();
        let opts = BackwardOpts {
            param_grads: false,
            input_grad: true,
        };
        let g = backprop_stack(&self.head, params, &tape.head, grad_logits, opts, &mut sink)?
            .expect("input grad");
        Ok(
            backprop_stack(&self.convs, params, &tape.convs, g, opts, &mut sink)?
                .expect("input grad"),
        )
    }
}

pub fn build_discriminator<T: Float>(
    cfg: &DiscriminatorConfig,
    init_seed: u64,
) -> Result<ModelParams<T>> {
    Discriminator::new(cfg)?.init_params(init_seed)
}

/// Probabilities `(N, 1)`; train-mode batch statistics are committed.
pub fn discriminator_forward<T: Float>(
    params: &mut ModelParams<T>,
    cfg: &DiscriminatorConfig,
    img: &Tensor<T>,
    mode: Mode,
) -> Result<Tensor<T>> {
    let d = Discriminator::new(cfg)?;
    let (p, tape) = d.forward(params, img, mode)?;
    if mode == Mode::Train {
        d.commit(params, &tape)?;
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> DiscriminatorConfig {
        DiscriminatorConfig {
            input_size: 16,
            widths: vec![2, 2, 4, 4, 4, 4, 8, 8],
            dense_width: 8,
            ..Default::default()
        }
    }

    #[test]
    fn rejects_seven_widths() {
        let cfg = DiscriminatorConfig {
            widths: vec![64; 7],
            ..Default::default()
        };
        assert!(matches!(
            Discriminator::new(&cfg),
            Err(Error::InvalidArgument(_))
        ));
        let cfg = DiscriminatorConfig {
            input_size: 40,
            ..Default::default()
        };
        assert!(matches!(
            Discriminator::new(&cfg),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn default_feature_map_is_512_6_6() {
        assert_eq!(DiscriminatorConfig::default().feature_shape(), (512, 6, 6));
    }

    #[test]
    fn first_conv_has_no_batch_norm() {
        let p: ModelParams<f32> = build_discriminator(&small(), 0).unwrap();
        assert!(!p.contains("bn0.gamma"));
        assert!(p.contains("bn1.gamma"));
        assert!(p.contains("bn7.gamma"));
    }

    #[test]
    fn outputs_are_probabilities_of_batch_shape() {
        let cfg = small();
        let mut p: ModelParams<f32> = build_discriminator(&cfg, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Tensor::randn(&[4, 3, 16, 16], 1.0, &mut rng);
        let y = discriminator_forward(&mut p, &cfg, &x, Mode::Train).unwrap();
        assert_eq!(y.shape(), &[4, 1]);
        assert!(y.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn wrong_size_is_shape_mismatch() {
        let cfg = small();
        let mut p: ModelParams<f32> = build_discriminator(&cfg, 3).unwrap();
        let x = Tensor::zeros(&[1, 3, 8, 8]);
        assert!(matches!(
            discriminator_forward(&mut p, &cfg, &x, Mode::Eval),
            Err(Error::ShapeMismatch(_))
        ));
    }
}
