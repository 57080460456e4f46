use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::layers::{backprop_stack, run_stack, BackwardOpts, Cache, GradSink, Layer};
use super::ModelParams;
use crate::error::{shape_err, Error, Result};
use crate::nn_ops::{Float, Mode, Tensor};
use crate::trainer::load_checkpoint;

/// VGG-style feature network truncated at `tap = (i, j)`: the activation of the
/// `j`-th convolution of block `i`, where blocks are separated by max pooling.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureExtractorConfig {
    pub block_convs: Vec<usize>,
    pub width_per_block: Vec<usize>,
    pub tap: (usize, usize),
}

impl Default for FeatureExtractorConfig {
    fn default() -> Self {
        Self {
            block_convs: vec![2, 2, 4, 4, 4],
            width_per_block: vec![64, 128, 256, 512, 512],
            tap: (5, 4),
        }
    }
}

impl FeatureExtractorConfig {
    pub fn with_tap(i: usize, j: usize) -> Self {
        Self {
            tap: (i, j),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.block_convs.len() != self.width_per_block.len() {
            return Err(Error::InvalidArgument(
                "block_convs and width_per_block differ in length".into(),
            ));
        }
        let (i, j) = self.tap;
        if i == 0 || i > self.block_convs.len() {
            return Err(Error::InvalidArgument(format!(
                "tap block {i} outside 1..={}",
                self.block_convs.len()
            )));
        }
        if j == 0 || j > self.block_convs[i - 1] {
            return Err(Error::InvalidArgument(format!(
                "tap conv {j} outside 1..={} for block {i}",
                self.block_convs[i - 1]
            )));
        }
        if self.width_per_block.contains(&0) {
            return Err(Error::InvalidArgument(
                "feature widths must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Convolutions and poolings up to and including the tap.
    pub fn depth(&self) -> (usize, usize) {
        let (i, j) = self.tap;
        (self.block_convs[..i - 1].iter().sum::<usize>() + j, i - 1)
    }
}

/// Where the extractor weights come from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSource {
    /// Deterministic orthogonal initialization.
    Seeded(u64),
    /// Checkpoint container with `block{b}.conv{c}.weight` / `.bias` tensors.
    WeightFile(PathBuf),
}

impl Default for FeatureSource {
    fn default() -> Self {
        FeatureSource::Seeded(0)
    }
}

/// Frozen feature network. Backward passes produce input gradients only.
#[derive(Clone, Debug)]
pub struct FeatureExtractor<T> {
    layers: Vec<Layer>,
    params: ModelParams<T>,
    input_channels: Option<usize>,
}

pub struct FeatureTape<T>(Vec<Cache<T>>);

fn vgg_layers(cfg: &FeatureExtractorConfig) -> Result<Vec<Layer>> {
    let (ti, tj) = cfg.tap;
    let mut layers = Vec::new();
    let mut c_in = 3;
    for b in 1..=ti {
        if b > 1 {
            layers.push(Layer::MaxPool2);
        }
        let width = cfg.width_per_block[b - 1];
        let n = if b == ti { tj } else { cfg.block_convs[b - 1] };
        for c in 1..=n {
            layers.push(Layer::conv(format!("block{b}.conv{c}"), 3, c_in, width, 1)?);
            layers.push(Layer::Relu);
            c_in = width;
        }
    }
    Ok(layers)
}

/// Orthonormalizes the rows (or columns, whichever are fewer) of a
/// `rows × cols` Gaussian matrix, then scales so the element variance is
/// `gain² / cols`.
fn orthogonal<R: rand::Rng>(rows: usize, cols: usize, gain: f64, rng: &mut R) -> Vec<f64> {
    let transpose = rows > cols;
    let (r, c) = if transpose {
        (cols, rows)
    } else {
        (rows, cols)
    };
    let mut m: Vec<f64> = (0..r * c).map(|_| StandardNormal.sample(rng)).collect();
    for i in 0..r {
        for k in 0..i {
            let dot: f64 = (0..c).map(|t| m[i * c + t] * m[k * c + t]).sum();
            for t in 0..c {
                m[i * c + t] -= dot * m[k * c + t];
            }
        }
        let norm = (0..c)
            .map(|t| m[i * c + t].powi(2))
            .sum::<f64>()
            .sqrt()
            .max(1e-12);
        for t in 0..c {
            m[i * c + t] /= norm;
        }
    }
    let scale = gain * (rows.max(cols) as f64 / cols as f64).sqrt();
    let mut out = vec![0.0; rows * cols];
    for i in 0..r {
        for t in 0..c {
            let (row, col) = if transpose { (t, i) } else { (i, t) };
            out[row * cols + col] = m[i * c + t] * scale;
        }
    }
    out
}

impl<T: Float> FeatureExtractor<T> {
    pub fn new(cfg: &FeatureExtractorConfig, source: &FeatureSource) -> Result<Self> {
        cfg.validate()?;
        let layers = vgg_layers(cfg)?;
        let mut params = ModelParams::new();
        match source {
            FeatureSource::Seeded(seed) => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                for layer in &layers {
                    if let Layer::Conv { name, spec } = layer {
                        let fan_in = spec.in_channels * spec.kernel * spec.kernel;
                        let w = orthogonal(
                            spec.out_channels,
                            fan_in,
                            std::f64::consts::SQRT_2,
                            &mut rng,
                        );
                        params.insert(
                            format!("{name}.weight"),
                            Tensor::from_vec(
                                &spec.weight_shape(),
                                w.into_iter().map(T::lit).collect(),
                            )?,
                        )?;
                        params
                            .insert(format!("{name}.bias"), Tensor::zeros(&[spec.out_channels]))?;
                    }
                }
            }
            FeatureSource::WeightFile(path) => {
                let ck = load_checkpoint(path)?;
                for layer in &layers {
                    if let Layer::Conv { name, spec } = layer {
                        for (suffix, shape) in [
                            ("weight", spec.weight_shape().to_vec()),
                            ("bias", vec![spec.out_channels]),
                        ] {
                            let key = format!("{name}.{suffix}");
                            let t = ck.tensors.get(&key).ok_or_else(|| {
                                Error::Format(format!(
                                    "{}: weight file lacks tensor {key}",
                                    path.display()
                                ))
                            })?;
                            if t.shape() != shape.as_slice() {
                                return Err(Error::Format(format!(
                                    "{}: tensor {key} has shape {:?}, expected {:?}",
                                    path.display(),
                                    t.shape(),
                                    shape
                                )));
                            }
                            params.insert(key, t.cast())?;
                        }
                    }
                }
            }
        }
        params.clear_grads();
        Ok(Self {
            layers,
            params,
            input_channels: Some(3),
        })
    }

    /// Extractor over an arbitrary layer list, for custom or test networks.
    pub fn from_layers(layers: Vec<Layer>, mut params: ModelParams<T>) -> Self {
        params.clear_grads();
        Self {
            layers,
            params,
            input_channels: None,
        }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn params(&self) -> &ModelParams<T> {
        &self.params
    }

    /// Number of convolutions and max-pooling layers.
    pub fn depth(&self) -> (usize, usize) {
        let convs = self
            .layers
            .iter()
            .filter(|l| matches!(l, Layer::Conv { .. }))
            .count();
        let pools = self
            .layers
            .iter()
            .filter(|l| matches!(l, Layer::MaxPool2))
            .count();
        (convs, pools)
    }

    pub fn cast<U: Float>(&self) -> FeatureExtractor<U> {
        FeatureExtractor {
            layers: self.layers.clone(),
            params: self.params.cast(),
            input_channels: self.input_channels,
        }
    }

    pub fn forward(&self, img: &Tensor<T>) -> Result<(Tensor<T>, FeatureTape<T>)> {
        let (_, c, h, w) = img.dims4()?;
        if let Some(expect) = self.input_channels {
            if c != expect {
                return Err(shape_err!(
                    "feature extractor expects {expect} channels, got {c}"
                ));
            }
        }
        let (_, pools) = self.depth();
        let need = 1usize << pools;
        if h < need || w < need {
            return Err(shape_err!(
                "feature extractor needs at least {need}x{need} input, got {h}x{w}"
            ));
        }
        let (y, caches) = run_stack(&self.layers, &self.params, img.clone(), Mode::Eval)?;
        Ok((y, FeatureTape(caches)))
    }

    /// Gradient w.r.t. the input image. Weights never receive gradients.
    pub fn backward(&self, tape: &FeatureTape<T>, grad: Tensor<T>) -> Result<Tensor<T>> {
        let mut sink = GradSink::new();
        let opts = BackwardOpts {
            param_grads: false,
            input_grad: true,
        };
        let g = backprop_stack(&self.layers, &self.params, &tape.0, grad, opts, &mut sink)?;
        debug_assert!(sink.is_empty());
        Ok(g.expect("input gradient requested"))
    }
}

pub fn build_feature_extractor<T: Float>(
    cfg: &FeatureExtractorConfig,
    source: &FeatureSource,
) -> Result<FeatureExtractor<T>> {
    FeatureExtractor::new(cfg, source)
}

pub fn feature_forward<T: Float>(
    extractor: &FeatureExtractor<T>,
    img: &Tensor<T>,
) -> Result<Tensor<T>> {
    Ok(extractor.forward(img)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tap_depths() {
        assert_eq!(FeatureExtractorConfig::with_tap(2, 2).depth(), (4, 1));
        assert_eq!(FeatureExtractorConfig::with_tap(5, 4).depth(), (16, 4));
        let fx: FeatureExtractor<f32> = FeatureExtractor::new(
            &FeatureExtractorConfig::with_tap(2, 2),
            &FeatureSource::Seeded(1),
        )
        .unwrap();
        assert_eq!(fx.depth(), (4, 1));
        assert!(matches!(
            FeatureExtractorConfig::with_tap(6, 1).validate(),
            Err(Error::InvalidArgument(_))
        ));
        assert!(FeatureExtractorConfig::with_tap(1, 3).validate().is_err());
    }

    #[test]
    fn orthogonal_rows_are_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = orthogonal(4, 9, 1.0, &mut rng);
        for a in 0..4 {
            for b in 0..4 {
                let dot: f64 = (0..9).map(|t| m[a * 9 + t] * m[b * 9 + t]).sum();
                let expect = if a == b { 1.0 } else { 0.0 };
                assert!((dot - expect).abs() < 1e-12);
            }
        }
        let tall = orthogonal(9, 4, 1.0, &mut rng);
        for a in 0..4 {
            for b in 0..4 {
                let dot: f64 = (0..9).map(|t| tall[t * 4 + a] * tall[t * 4 + b]).sum();
                let expect = if a == b { 9.0 / 4.0 } else { 0.0 };
                assert!((dot - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn feature_map_size_halves_per_pool() {
        let fx: FeatureExtractor<f32> = FeatureExtractor::new(
            &FeatureExtractorConfig::with_tap(2, 2),
            &FeatureSource::Seeded(1),
        )
        .unwrap();
        let x = Tensor::full(&[1, 3, 16, 16], 0.1f32);
        assert_eq!(feature_forward(&fx, &x).unwrap().shape(), &[1, 128, 8, 8]);
    }
}
