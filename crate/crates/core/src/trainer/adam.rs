use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::ModelParams;
use crate::nn_ops::{Float, Tensor};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// Scalar part of the optimizer state.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamHyper {
    pub t: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

/// Moment buffers per parameter name, mirroring the parameter shapes.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: IndexMap<String, Tensor<T>>,
    pub v: IndexMap<String, Tensor<T>>,
    pub t: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl<T: Float> AdamState<T> {
    pub fn new(params: &ModelParams<T>, learning_rate: f64) -> Self {
        let zeros = || -> IndexMap<String, Tensor<T>> {
            params
                .iter()
                .map(|(k, p)| (k.to_string(), Tensor::zeros(p.shape())))
                .collect()
        };
        Self {
            m: zeros(),
            v: zeros(),
            t: 0,
            learning_rate,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            epsilon: ADAM_EPSILON,
        }
    }

    pub fn hyper(&self) -> AdamHyper {
        AdamHyper {
            t: self.t,
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    pub fn with_hyper(mut self, h: AdamHyper) -> Self {
        self.t = h.t;
        self.learning_rate = h.learning_rate;
        self.beta1 = h.beta1;
        self.beta2 = h.beta2;
        self.epsilon = h.epsilon;
        self
    }
}

/// One bias-corrected Adam update of every parameter, then zeroes the
/// gradients. Nothing is modified if any gradient is missing. Moments are
/// updated at 64-bit and stored at the parameter precision.
pub fn adam_step<T: Float>(params: &mut ModelParams<T>, st: &mut AdamState<T>) -> Result<()> {
    for (name, p) in params.iter() {
        if p.grad().is_none() {
            return Err(Error::MissingGradient(name.to_string()));
        }
        if let Some(m) = st.m.get(name) {
            if m.shape() != p.shape() {
                return Err(Error::InvalidArgument(format!(
                    "optimizer buffer for '{name}' has shape {:?}, parameter {:?}",
                    m.shape(),
                    p.shape()
                )));
            }
        }
    }
    st.t += 1;
    let t = st.t as f64;
    let (b1, b2) = (st.beta1, st.beta2);
    let c1 = 1.0 - b1.powf(t);
    let c2 = 1.0 - b2.powf(t);
    for (name, p) in params.iter_mut() {
        let m =
            st.m.entry(name.to_string())
                .or_insert_with(|| Tensor::zeros(p.shape()));
        let v =
            st.v.entry(name.to_string())
                .or_insert_with(|| Tensor::zeros(p.shape()));
        let grad = p.grad().expect("checked above").to_vec();
        for (((w, g), mi), vi) in p
            .data_mut()
            .iter_mut()
            .zip(grad)
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            let g = g.as_f64();
            let m_new = b1 * mi.as_f64() + (1.0 - b1) * g;
            let v_new = b2 * vi.as_f64() + (1.0 - b2) * g * g;
            *mi = T::lit(m_new);
            *vi = T::lit(v_new);
            let m_hat = m_new / c1;
            let v_hat = v_new / c2;
            *w = T::lit(w.as_f64() - st.learning_rate * m_hat / (v_hat.sqrt() + st.epsilon));
        }
    }
    params.zero_grads();
    Ok(())
}
