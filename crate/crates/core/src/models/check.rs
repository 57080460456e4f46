//! Whole networks exposed as [`DifferentiableOp`]s over `[image, parameters...]`
//! so their backward passes can be compared against finite differences.

use crate::error::Result;
use crate::models::{
    BackwardOpts, Discriminator, DiscriminatorConfig, Generator, GeneratorConfig, ModelParams,
};
use crate::nn_ops::gradcheck::DifferentiableOp;
use crate::nn_ops::{sigmoid_backward, Mode, Tensor};

fn with_values(template: &ModelParams<f64>, values: &[Tensor<f64>]) -> ModelParams<f64> {
    let mut p = template.clone();
    for ((_, t), v) in p.iter_mut().zip(values) {
        t.data_mut().copy_from_slice(v.data());
        t.zero_grad();
    }
    p
}

fn inputs_of(template: &ModelParams<f64>, x: &Tensor<f64>) -> Vec<Tensor<f64>> {
    std::iter::once(x.clone())
        .chain(template.iter().map(|(_, t)| {
            let mut t = t.clone();
            t.clear_grad();
            t
        }))
        .collect()
}

fn grads_of(x_grad: Tensor<f64>, params: &ModelParams<f64>) -> Vec<Tensor<f64>> {
    std::iter::once(x_grad)
        .chain(params.iter().map(|(_, t)| {
            let g = t
                .grad()
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; t.len()]);
            Tensor::from_vec(t.shape(), g).expect("gradient mirrors parameter")
        }))
        .collect()
}

/// Generator output as a function of the input image and every learnable.
/// Batch norm uses the batch statistics of each call in `Train` mode.
pub struct GeneratorOp {
    net: Generator,
    template: ModelParams<f64>,
    mode: Mode,
}

impl GeneratorOp {
    pub fn new(cfg: &GeneratorConfig, template: ModelParams<f64>, mode: Mode) -> Result<Self> {
        Ok(Self {
            net: Generator::new(cfg)?,
            template,
            mode,
        })
    }

    pub fn inputs(&self, x: &Tensor<f64>) -> Vec<Tensor<f64>> {
        inputs_of(&self.template, x)
    }
}

impl DifferentiableOp for GeneratorOp {
    fn forward(&self, inputs: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        let p = with_values(&self.template, &inputs[1..]);
        Ok(self.net.forward(&p, &inputs[0], self.mode)?.0)
    }

    fn backward(&self, inputs: &[Tensor<f64>], grad_out: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        let mut p = with_values(&self.template, &inputs[1..]);
        let (_, tape) = self.net.forward(&p, &inputs[0], self.mode)?;
        let gx = self
            .net
            .backward(&mut p, &tape, grad_out.clone(), BackwardOpts::FULL)?;
        Ok(grads_of(gx.expect("input gradient requested"), &p))
    }
}

/// Discriminator probabilities as a function of the image and every learnable.
pub struct DiscriminatorOp {
    net: Discriminator,
    template: ModelParams<f64>,
    mode: Mode,
}

impl DiscriminatorOp {
    pub fn new(cfg: &DiscriminatorConfig, template: ModelParams<f64>, mode: Mode) -> Result<Self> {
        Ok(Self {
            net: Discriminator::new(cfg)?,
            template,
            mode,
        })
    }

    pub fn inputs(&self, x: &Tensor<f64>) -> Vec<Tensor<f64>> {
        inputs_of(&self.template, x)
    }
}

impl DifferentiableOp for DiscriminatorOp {
    fn forward(&self, inputs: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        let p = with_values(&self.template, &inputs[1..]);
        Ok(self.net.forward(&p, &inputs[0], self.mode)?.0)
    }

    fn backward(&self, inputs: &[Tensor<f64>], grad_out: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        let mut p = with_values(&self.template, &inputs[1..]);
        let (probs, tape) = self.net.forward(&p, &inputs[0], self.mode)?;
        let g_logits = sigmoid_backward(&probs, grad_out)?;
        let gx = self
            .net
            .backward(&mut p, &tape, g_logits, BackwardOpts::FULL)?;
        Ok(grads_of(gx.expect("input gradient requested"), &p))
    }
}
