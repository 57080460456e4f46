//! Layer vocabulary shared by the networks and a sequential executor that
//! records what each backward pass needs.

use rand::Rng;

use super::ModelParams;
use crate::error::{shape_err, Result};
use crate::nn_ops::{
    batch_norm_backward, batch_norm_with_mode, conv2d, conv2d_backward_select, dense,
    dense_backward, leaky_relu, leaky_relu_backward, max_pool2, max_pool2_backward, pixel_shuffle,
    pixel_shuffle_backward, prelu, prelu_backward, relu, relu_backward, BatchNormState, BnCache,
    ConvGradRequest, ConvSpec, Float, Mode, Tensor,
};

pub const PRELU_INIT: f64 = 0.25;

/// Parameter gradients collected during a backward pass, in visit order.
pub type GradSink<T> = Vec<(String, Tensor<T>)>;

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    /// Parameters `{name}.weight`, `{name}.bias`.
    Conv {
        name: String,
        spec: ConvSpec,
    },
    /// Parameters `{name}.gamma`, `{name}.beta`; running statistics under `name`.
    BatchNorm {
        name: String,
        channels: usize,
    },
    /// Parameter `{name}.slope` with one slope per channel, or a single shared slope.
    PRelu {
        name: String,
        slopes: usize,
    },
    LeakyRelu {
        alpha: f64,
    },
    Relu,
    MaxPool2,
    PixelShuffle {
        factor: usize,
    },
    /// Parameters `{name}.weight` of shape `(inputs, outputs)`, `{name}.bias`.
    Dense {
        name: String,
        inputs: usize,
        outputs: usize,
    },
}

/// Forward-pass record for one layer.
#[derive(Clone, Debug)]
pub enum Cache<T> {
    Input(Tensor<T>),
    BatchNorm {
        name: String,
        cache: BnCache<T>,
    },
    Pool {
        input_shape: Vec<usize>,
        argmax: Vec<usize>,
    },
    Shuffle,
}

/// Options for a backward pass through a stack of layers.
#[derive(Clone, Copy, Debug)]
pub struct BackwardOpts {
    /// Accumulate gradients into the learnables' gradient buffers.
    pub param_grads: bool,
    /// Produce the gradient with respect to the stack's input.
    pub input_grad: bool,
}

impl BackwardOpts {
    pub const FULL: Self = Self {
        param_grads: true,
        input_grad: true,
    };
}

impl Layer {
    pub fn conv(
        name: impl Into<String>,
        kernel: usize,
        n_in: usize,
        n_out: usize,
        stride: usize,
    ) -> Result<Self> {
        Ok(Layer::Conv {
            name: name.into(),
            spec: ConvSpec::new(kernel, n_in, n_out, stride)?,
        })
    }

    /// Registers this layer's learnables. Weights are drawn from a zero-mean
    /// normal with standard deviation `gain / sqrt(fan_in)`; biases and
    /// `beta` start at zero, `gamma` at one.
    pub fn init<T: Float, R: Rng + ?Sized>(
        &self,
        params: &mut ModelParams<T>,
        gain: f64,
        rng: &mut R,
    ) -> Result<()> {
        match self {
            Layer::Conv { name, spec } => {
                let fan_in = (spec.in_channels * spec.kernel * spec.kernel) as f64;
                params.insert(
                    format!("{name}.weight"),
                    Tensor::randn(&spec.weight_shape(), gain / fan_in.sqrt(), rng),
                )?;
                params.insert(format!("{name}.bias"), Tensor::zeros(&[spec.out_channels]))?;
            }
            Layer::BatchNorm { name, channels } => {
                params.insert(
                    format!("{name}.gamma"),
                    Tensor::full(&[*channels], T::one()),
                )?;
                params.insert(format!("{name}.beta"), Tensor::zeros(&[*channels]))?;
                params.insert_bn(name.clone(), BatchNormState::new(*channels))?;
            }
            Layer::PRelu { name, slopes } => {
                params.insert(
                    format!("{name}.slope"),
                    Tensor::full(&[*slopes], T::lit(PRELU_INIT)),
                )?;
            }
            Layer::Dense {
                name,
                inputs,
                outputs,
            } => {
                let std = gain / (*inputs as f64).sqrt();
                params.insert(
                    format!("{name}.weight"),
                    Tensor::randn(&[*inputs, *outputs], std, rng),
                )?;
                params.insert(format!("{name}.bias"), Tensor::zeros(&[*outputs]))?;
            }
            Layer::LeakyRelu { .. }
            | Layer::Relu
            | Layer::MaxPool2
            | Layer::PixelShuffle { .. } => {}
        }
        Ok(())
    }

    pub fn forward<T: Float>(
        &self,
        params: &ModelParams<T>,
        x: Tensor<T>,
        mode: Mode,
    ) -> Result<(Tensor<T>, Cache<T>)> {
        Ok(match self {
            Layer::Conv { name, spec } => {
                let y = conv2d(
                    &x,
                    params.get(&format!("{name}.weight"))?,
                    params.get(&format!("{name}.bias"))?,
                    spec,
                )?;
                (y, Cache::Input(x))
            }
            Layer::BatchNorm { name, .. } => {
                let st = params.bn(name)?;
                // A state switched to eval stays frozen whatever the pass requests.
                let mode = if st.mode == Mode::Eval {
                    Mode::Eval
                } else {
                    mode
                };
                let (y, cache) = batch_norm_with_mode(
                    &x,
                    params.get(&format!("{name}.gamma"))?,
                    params.get(&format!("{name}.beta"))?,
                    st,
                    mode,
                )?;
                (
                    y,
                    Cache::BatchNorm {
                        name: name.clone(),
                        cache,
                    },
                )
            }
            Layer::PRelu { name, .. } => (
                prelu(&x, params.get(&format!("{name}.slope"))?)?,
                Cache::Input(x),
            ),
            Layer::LeakyRelu { alpha } => (leaky_relu(&x, T::lit(*alpha)), Cache::Input(x)),
            Layer::Relu => (relu(&x), Cache::Input(x)),
            Layer::MaxPool2 => {
                let (y, argmax) = max_pool2(&x)?;
                (
                    y,
                    Cache::Pool {
                        input_shape: x.shape().to_vec(),
                        argmax,
                    },
                )
            }
            Layer::PixelShuffle { factor } => (pixel_shuffle(&x, *factor)?, Cache::Shuffle),
            Layer::Dense { name, .. } => {
                let y = dense(
                    &x,
                    params.get(&format!("{name}.weight"))?,
                    params.get(&format!("{name}.bias"))?,
                )?;
                (y, Cache::Input(x))
            }
        })
    }

    /// Back-propagates `grad` through this layer. Parameter gradients are
    /// pushed onto `sink` when `param_grads` is set; the input gradient is
    /// returned when `want_input` is set.
    pub fn backward<T: Float>(
        &self,
        params: &ModelParams<T>,
        cache: &Cache<T>,
        grad: Tensor<T>,
        param_grads: bool,
        want_input: bool,
        sink: &mut GradSink<T>,
    ) -> Result<Option<Tensor<T>>> {
        let bad_cache = || shape_err!("cache does not belong to layer {:?}", self);
        match (self, cache) {
            (Layer::Conv { name, spec }, Cache::Input(x)) => {
                let wname = format!("{name}.weight");
                let g = conv2d_backward_select(
                    x,
                    params.get(&wname)?,
                    spec,
                    &grad,
                    ConvGradRequest {
                        input: want_input,
                        params: param_grads,
                    },
                )?;
                if let (Some(gw), Some(gb)) = (g.weight, g.bias) {
                    sink.push((wname, gw));
                    sink.push((format!("{name}.bias"), gb));
                }
                Ok(g.input)
            }
            (Layer::BatchNorm { name: lname, .. }, Cache::BatchNorm { cache, .. }) => {
                let gname = format!("{lname}.gamma");
                let (gx, gg, gb) = batch_norm_backward(cache, params.get(&gname)?, &grad)?;
                if param_grads {
                    sink.push((gname, gg));
                    sink.push((format!("{lname}.beta"), gb));
                }
                Ok(Some(gx))
            }
            (Layer::PRelu { name, .. }, Cache::Input(x)) => {
                let sname = format!("{name}.slope");
                let (gx, ga) = prelu_backward(x, params.get(&sname)?, &grad)?;
                if param_grads {
                    sink.push((sname, ga));
                }
                Ok(Some(gx))
            }
            (Layer::LeakyRelu { alpha }, Cache::Input(x)) => {
                Ok(Some(leaky_relu_backward(x, T::lit(*alpha), &grad)?))
            }
            (Layer::Relu, Cache::Input(x)) => Ok(Some(relu_backward(x, &grad)?)),
            (
                Layer::MaxPool2,
                Cache::Pool {
                    input_shape,
                    argmax,
                },
            ) => Ok(Some(max_pool2_backward(input_shape, argmax, &grad)?)),
            (Layer::PixelShuffle { factor }, Cache::Shuffle) => {
                Ok(Some(pixel_shuffle_backward(&grad, *factor)?))
            }
            (Layer::Dense { name, .. }, Cache::Input(x)) => {
                let wname = format!("{name}.weight");
                let (gx, gw, gb) = dense_backward(x, params.get(&wname)?, &grad)?;
                if param_grads {
                    sink.push((wname, gw));
                    sink.push((format!("{name}.bias"), gb));
                }
                Ok(Some(gx))
            }
            _ => Err(bad_cache()),
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Layer::Conv { spec, .. } => spec.param_count(),
            Layer::BatchNorm { channels, .. } => 2 * channels,
            Layer::PRelu { slopes, .. } => *slopes,
            Layer::Dense {
                inputs, outputs, ..
            } => inputs * outputs + outputs,
            _ => 0,
        }
    }
}

/// Runs `layers` in order, returning the output and one cache per layer.
pub fn run_stack<T: Float>(
    layers: &[Layer],
    params: &ModelParams<T>,
    x: Tensor<T>,
    mode: Mode,
) -> Result<(Tensor<T>, Vec<Cache<T>>)> {
    let mut caches = Vec::with_capacity(layers.len());
    let mut h = x;
    for layer in layers {
        let (y, c) = layer.forward(params, h, mode)?;
        caches.push(c);
        h = y;
    }
    Ok((h, caches))
}

/// Reverse pass through a stack recorded by [`run_stack`].
pub fn backprop_stack<T: Float>(
    layers: &[Layer],
    params: &ModelParams<T>,
    caches: &[Cache<T>],
    grad: Tensor<T>,
    opts: BackwardOpts,
    sink: &mut GradSink<T>,
) -> Result<Option<Tensor<T>>> {
    if layers.len() != caches.len() {
        return Err(shape_err!(
            "{} layers but {} caches",
            layers.len(),
            caches.len()
        ));
    }
    let mut g = Some(grad);
    for (i, (layer, cache)) in layers.iter().zip(caches).enumerate().rev() {
        let want_input = i > 0 || opts.input_grad;
        g = layer.backward(
            params,
            cache,
            g.expect("gradient present"),
            opts.param_grads,
            want_input,
            sink,
        )?;
        if g.is_none() {
            break;
        }
    }
    Ok(g)
}

/// Adds every collected gradient into the matching parameter's buffer.
pub fn apply_grads<T: Float>(params: &mut ModelParams<T>, sink: GradSink<T>) -> Result<()> {
    for (name, g) in sink {
        params.accumulate_grad(&name, &g)?;
    }
    Ok(())
}

/// Commits the batch statistics recorded in `caches` to the running estimates.
pub fn commit_running_stats<'a, T: Float + 'a>(
    params: &mut ModelParams<T>,
    caches: impl IntoIterator<Item = &'a Cache<T>>,
) -> Result<()> {
    for c in caches {
        if let Cache::BatchNorm { name, cache } = c {
            params.bn_mut(name)?.update_running(cache);
        }
    }
    Ok(())
}

/// He-style gain for a rectifier with negative slope `a`.
pub fn rectifier_gain(a: f64) -> f64 {
    (2.0 / (1.0 + a * a)).sqrt()
}
