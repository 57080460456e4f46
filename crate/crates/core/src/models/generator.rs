use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{
    apply_grads, backprop_stack, commit_running_stats, rectifier_gain, run_stack, BackwardOpts,
    Cache, GradSink, Layer, PRELU_INIT,
};
use super::ModelParams;
use crate::error::{shape_err, Error, Result};
use crate::image_pipeline::{ImageF, ValueRange};
use crate::nn_ops::{elementwise_add, Float, Mode, Tensor};

/// Residual super-resolution generator layout.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    /// Number of residual blocks.
    pub blocks: usize,
    /// Feature maps in the residual trunk.
    pub width: usize,
    /// Upscaling factor: 2 or 4, realized as ×2 sub-pixel stages.
    pub upscale: usize,
    /// Sum the head activation into the output of the residual trunk.
    pub global_skip: bool,
    /// One PReLU slope per layer instead of one per channel.
    pub shared_prelu: bool,
    /// Add the block input before the block's second batch norm instead of after it.
    pub block_sum_before_bn: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            blocks: 16,
            width: 64,
            upscale: 4,
            global_skip: true,
            shared_prelu: false,
            block_sum_before_bn: false,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.blocks == 0 {
            return Err(Error::InvalidArgument(
                "generator needs at least one residual block".into(),
            ));
        }
        if self.width == 0 {
            return Err(Error::InvalidArgument(
                "generator width must be positive".into(),
            ));
        }
        if self.upscale != 2 && self.upscale != 4 {
            return Err(Error::InvalidArgument(format!(
                "upscale {} not in {{2,4}}",
                self.upscale
            )));
        }
        Ok(())
    }

    pub fn upsample_stages(&self) -> usize {
        if self.upscale == 4 {
            2
        } else {
            1
        }
    }
}

struct Block {
    main: Vec<Layer>,
    after_sum: Vec<Layer>,
}

/// Layer graph of the generator: head, residual trunk, global skip,
/// sub-pixel upsampling stages and output convolution.
pub struct Generator {
    cfg: GeneratorConfig,
    head: Vec<Layer>,
    blocks: Vec<Block>,
    post: Vec<Layer>,
    ups: Vec<Vec<Layer>>,
    tail: Vec<Layer>,
}

/// Activations recorded by [`Generator::forward`].
pub struct GeneratorTape<T> {
    head: Vec<Cache<T>>,
    blocks: Vec<(Vec<Cache<T>>, Vec<Cache<T>>)>,
    post: Vec<Cache<T>>,
    ups: Vec<Vec<Cache<T>>>,
    tail: Vec<Cache<T>>,
    /// Output of the residual trunk after the global skip, before upsampling.
    pub trunk_output: Tensor<T>,
    /// Activation after the head convolution.
    pub head_output: Tensor<T>,
}

impl<T> GeneratorTape<T> {
    fn caches(&self) -> impl Iterator<Item = &Cache<T>> {
        self.head
            .iter()
            .chain(self.blocks.iter().flat_map(|(a, b)| a.iter().chain(b)))
            .chain(&self.post)
            .chain(self.ups.iter().flatten())
            .chain(&self.tail)
    }
}

impl Generator {
    pub fn new(cfg: &GeneratorConfig) -> Result<Self> {
        cfg.validate()?;
        let w = cfg.width;
        let slopes = |c: usize| if cfg.shared_prelu { 1 } else { c };
        let head = vec![
            Layer::conv("head.conv", 9, 3, w, 1)?,
            Layer::PRelu {
                name: "head.prelu".into(),
                slopes: slopes(w),
            },
        ];
        let blocks = (0..cfg.blocks)
            .map(|b| -> Result<Block> {
                let p = format!("res{b}");
                let mut main = vec![
                    Layer::conv(format!("{p}.conv1"), 3, w, w, 1)?,
                    Layer::BatchNorm {
                        name: format!("{p}.bn1"),
                        channels: w,
                    },
                    Layer::PRelu {
                        name: format!("{p}.prelu"),
                        slopes: slopes(w),
                    },
                    Layer::conv(format!("{p}.conv2"), 3, w, w, 1)?,
                ];
                let bn2 = Layer::BatchNorm {
                    name: format!("{p}.bn2"),
                    channels: w,
                };
                let after_sum = if cfg.block_sum_before_bn {
                    vec![bn2]
                } else {
                    main.push(bn2);
                    Vec::new()
                };
                Ok(Block { main, after_sum })
            })
            .collect::<Result<Vec<_>>>()?;
        let post = vec![
            Layer::conv("post.conv", 3, w, w, 1)?,
            Layer::BatchNorm {
                name: "post.bn".into(),
                channels: w,
            },
        ];
        let ups = (0..cfg.upsample_stages())
            .map(|s| -> Result<Vec<Layer>> {
                Ok(vec![
                    Layer::conv(format!("up{s}.conv"), 3, w, 4 * w, 1)?,
                    Layer::PixelShuffle { factor: 2 },
                    Layer::PRelu {
                        name: format!("up{s}.prelu"),
                        slopes: slopes(w),
                    },
                ])
            })
            .collect::<Result<Vec<_>>>()?;
        let tail = vec![Layer::conv("tail.conv", 9, w, 3, 1)?];
        Ok(Self {
            cfg: cfg.clone(),
            head,
            blocks,
            post,
            ups,
            tail,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.cfg
    }

    /// Every layer in registration order.
    pub fn layers(&self) -> impl Iterator<Item = &Layer> {
        self.head
            .iter()
            .chain(
                self.blocks
                    .iter()
                    .flat_map(|b| b.main.iter().chain(&b.after_sum)),
            )
            .chain(&self.post)
            .chain(self.ups.iter().flatten())
            .chain(&self.tail)
    }

    /// Fresh parameters drawn deterministically from `seed`.
    pub fn init_params<T: Float>(&self, seed: u64) -> Result<ModelParams<T>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ModelParams::new();
        let prelu_gain = rectifier_gain(PRELU_INIT);
        let mut layers = self.layers().peekable();
        while let Some(layer) = layers.next() {
            // Gain depends on the nonlinearity the layer feeds.
            let gain = match (layer, layers.peek()) {
                (Layer::Conv { name, .. }, _) if name.starts_with("up") => prelu_gain,
                (Layer::Conv { .. }, Some(Layer::PRelu { .. })) => prelu_gain,
                (Layer::Conv { .. }, Some(Layer::BatchNorm { .. })) if name_is_conv1(layer) => {
                    prelu_gain
                }
                _ => 1.0,
            };
            layer.init(&mut params, gain, &mut rng)?;
        }
        Ok(params)
    }

    /// Analytic parameter count from the layer shapes.
    pub fn param_count(&self) -> usize {
        self.layers().map(Layer::param_count).sum()
    }

    /// Maps `(N, 3, H, W)` to `(N, 3, rH, rW)`. Batch-norm layers use batch
    /// statistics in `Train` mode; the running statistics are not touched here
    /// (see [`Generator::commit`]).
    pub fn forward<T: Float>(
        &self,
        params: &ModelParams<T>,
        x: &Tensor<T>,
        mode: Mode,
    ) -> Result<(Tensor<T>, GeneratorTape<T>)> {
        let (_, c, _, _) = x.dims4()?;
        if c != 3 {
            return Err(shape_err!("generator expects 3 input channels, got {c}"));
        }
        let (head_out, head) = run_stack(&self.head, params, x.clone(), mode)?;
        let mut cur = head_out.clone();
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (m, mc) = run_stack(&b.main, params, cur.clone(), mode)?;
            let summed = elementwise_add(&cur, &m)?;
            let (out, ac) = run_stack(&b.after_sum, params, summed, mode)?;
            blocks.push((mc, ac));
            cur = out;
        }
        let (mut trunk, post) = run_stack(&self.post, params, cur, mode)?;
        if self.cfg.global_skip {
            trunk = elementwise_add(&trunk, &head_out)?;
        }
        let mut h = trunk.clone();
        let mut ups = Vec::with_capacity(self.ups.len());
        for up in &self.ups {
            let (o, uc) = run_stack(up, params, h, mode)?;
            ups.push(uc);
            h = o;
        }
        let (out, tail) = run_stack(&self.tail, params, h, mode)?;
        Ok((
            out,
            GeneratorTape {
                head,
                blocks,
                post,
                ups,
                tail,
                trunk_output: trunk,
                head_output: head_out,
            },
        ))
    }

    /// Commits train-mode batch statistics recorded in `tape`.
    pub fn commit<T: Float>(
        &self,
        params: &mut ModelParams<T>,
        tape: &GeneratorTape<T>,
    ) -> Result<()> {
        commit_running_stats(params, tape.caches())
    }

    /// Back-propagates `grad_out` (gradient w.r.t. the generator output).
    /// Parameter gradients are accumulated when `opts.param_grads` is set.
    pub fn backward<T: Float>(
        &self,
        params: &mut ModelParams<T>,
        tape: &GeneratorTape<T>,
        grad_out: Tensor<T>,
        opts: BackwardOpts,
    ) -> Result<Option<Tensor<T>>> {
        let mut sink = GradSink::new();
        let inner = BackwardOpts {
            param_grads: opts.param_grads,
            input_grad: true,
        };
        let mut g = backprop_stack(&self.tail, params, &tape.tail, grad_out, inner, &mut sink)?
            .expect("input grad");
        for (up, caches) in self.ups.iter().zip(&tape.ups).rev() {
            g = backprop_stack(up, params, caches, g, inner, &mut sink)?.expect("input grad");
        }
        let skip = self.cfg.global_skip.then(|| g.clone());
        let mut g = backprop_stack(&self.post, params, &tape.post, g, inner, &mut sink)?
            .expect("input grad");
        for (b, (mc, ac)) in self.blocks.iter().zip(&tape.blocks).rev() {
            let g_sum =
                backprop_stack(&b.after_sum, params, ac, g, inner, &mut sink)?.expect("input grad");
            let g_main = backprop_stack(&b.main, params, mc, g_sum.clone(), inner, &mut sink)?
                .expect("input grad");
            g = elementwise_add(&g_sum, &g_main)?;
        }
        if let Some(s) = skip {
            g = elementwise_add(&g, &s)?;
        }
        let gx = backprop_stack(&self.head, params, &tape.head, g, opts, &mut sink)?;
        if opts.param_grads {
            apply_grads(params, sink)?;
        }
        Ok(gx)
    }
}

fn name_is_conv1(layer: &Layer) -> bool {
    matches!(layer, Layer::Conv { name, .. } if name.ends_with(".conv1"))
}

/// Builds the layout for `cfg` and draws its initial parameters.
pub fn build_generator<T: Float>(cfg: &GeneratorConfig, init_seed: u64) -> Result<ModelParams<T>> {
    Generator::new(cfg)?.init_params(init_seed)
}

/// One forward pass; in `Train` mode the batch statistics are committed to
/// the running estimates.
pub fn generator_forward<T: Float>(
    params: &mut ModelParams<T>,
    cfg: &GeneratorConfig,
    lr: &Tensor<T>,
    mode: Mode,
) -> Result<Tensor<T>> {
    let g = Generator::new(cfg)?;
    let (out, tape) = g.forward(params, lr, mode)?;
    if mode == Mode::Train {
        g.commit(params, &tape)?;
    }
    Ok(out)
}

/// Eval-mode super-resolution of one image of any size. The input is read in
/// `[0, 1]`; the output is clamped to `[0, 1]`.
pub fn super_resolve<T: Float>(
    net: &Generator,
    params: &ModelParams<T>,
    lr: &ImageF,
) -> Result<ImageF> {
    let lr = lr.remap(ValueRange::Unit);
    let x = if lr.channels == 3 {
        lr.to_tensor::<T>()
    } else {
        let data = lr.data.iter().flat_map(|&v| [v, v, v]).collect();
        ImageF::new(lr.height, lr.width, 3, data, ValueRange::Unit)?.to_tensor::<T>()
    };
    let (out, _) = net.forward(params, &x, Mode::Eval)?;
    let mut sr = ImageF::from_tensor(&out, 0, ValueRange::Symmetric)?;
    sr.clamp_to_range();
    Ok(sr.remap(ValueRange::Unit))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::param_count;

    fn tiny() -> GeneratorConfig {
        GeneratorConfig {
            blocks: 1,
            width: 4,
            ..Default::default()
        }
    }

    #[test]
    fn one_block_in_name_map() {
        let p: ModelParams<f32> = build_generator(&tiny(), 0).unwrap();
        assert!(p.contains("res0.conv1.weight"));
        assert!(!p.names().any(|n| n.starts_with("res1.")));
    }

    #[test]
    fn same_seed_same_params() {
        let a: ModelParams<f32> = build_generator(&tiny(), 42).unwrap();
        let b: ModelParams<f32> = build_generator(&tiny(), 42).unwrap();
        let c: ModelParams<f32> = build_generator(&tiny(), 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn counts_agree() {
        for cfg in [tiny(), GeneratorConfig::default()] {
            let g = Generator::new(&cfg).unwrap();
            let p: ModelParams<f32> = g.init_params(0).unwrap();
            assert_eq!(param_count(&p), g.param_count());
        }
    }

    #[test]
    fn arbitrary_sizes_scale_by_factor() {
        let cfg = tiny();
        let mut p: ModelParams<f32> = build_generator(&cfg, 1).unwrap();
        let x = Tensor::full(&[1, 3, 17, 13], 0.5f32);
        let y = generator_forward(&mut p, &cfg, &x, Mode::Eval).unwrap();
        assert_eq!(y.shape(), &[1, 3, 68, 52]);
        let cfg2 = GeneratorConfig {
            upscale: 2,
            ..tiny()
        };
        let mut p2: ModelParams<f32> = build_generator(&cfg2, 1).unwrap();
        assert_eq!(
            generator_forward(&mut p2, &cfg2, &x, Mode::Eval)
                .unwrap()
                .shape(),
            &[1, 3, 34, 26]
        );
    }

    #[test]
    fn rejects_bad_config_and_input() {
        assert!(Generator::new(&GeneratorConfig {
            blocks: 0,
            ..tiny()
        })
        .is_err());
        assert!(Generator::new(&GeneratorConfig {
            upscale: 3,
            ..tiny()
        })
        .is_err());
        let cfg = tiny();
        let mut p: ModelParams<f32> = build_generator(&cfg, 1).unwrap();
        let x = Tensor::zeros(&[1, 1, 4, 4]);
        assert!(matches!(
            generator_forward(&mut p, &cfg, &x, Mode::Eval),
            Err(Error::ShapeMismatch(_))
        ));
    }
}
