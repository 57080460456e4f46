use indexmap::IndexMap;

use crate::error::{shape_err, Error, Result};
use crate::nn_ops::{BatchNormState, Float, Mode, Tensor};

/// Learnable tensors of one network in a fixed, deterministic order, each
/// with a gradient buffer, plus the running statistics of its
/// batch-normalization layers keyed by layer name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelParams<T> {
    params: IndexMap<String, Tensor<T>>,
    bn: IndexMap<String, BatchNormState<T>>,
}

impl<T: Float> ModelParams<T> {
    pub fn new() -> Self {
        Self {
            params: IndexMap::new(),
            bn: IndexMap::new(),
        }
    }

    /// Registers a learnable; the gradient buffer starts at zero.
    pub fn insert(&mut self, name: impl Into<String>, mut value: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::InvalidArgument(format!(
                "duplicate parameter '{name}'"
            )));
        }
        value.zero_grad();
        self.params.insert(name, value);
        Ok(())
    }

    pub fn insert_bn(&mut self, name: impl Into<String>, state: BatchNormState<T>) -> Result<()> {
        let name = name.into();
        if self.bn.contains_key(&name) {
            return Err(Error::InvalidArgument(format!(
                "duplicate batch-norm layer '{name}'"
            )));
        }
        self.bn.insert(name, state);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.params
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter '{name}'")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter '{name}'")))
    }

    pub fn bn(&self, name: &str) -> Result<&BatchNormState<T>> {
        self.bn
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown batch-norm layer '{name}'")))
    }

    pub fn bn_mut(&mut self, name: &str) -> Result<&mut BatchNormState<T>> {
        self.bn
            .get_mut(name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown batch-norm layer '{name}'")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn bn_iter(&self) -> impl Iterator<Item = (&str, &BatchNormState<T>)> {
        self.bn.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn bn_iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut BatchNormState<T>)> {
        self.bn.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Adds `delta` into the gradient of `name`.
    pub fn accumulate_grad(&mut self, name: &str, delta: &Tensor<T>) -> Result<()> {
        let p = self.get_mut(name)?;
        if p.len() != delta.len() {
            return Err(shape_err!(
                "gradient {:?} for parameter '{name}' of shape {:?}",
                delta.shape(),
                p.shape()
            ));
        }
        p.accumulate_grad(delta.data())
    }

    pub fn zero_grads(&mut self) {
        self.params.values_mut().for_each(Tensor::zero_grad);
    }

    /// Drops every gradient buffer; an optimizer step then fails with
    /// `MissingGradient` until a backward pass repopulates them.
    pub fn clear_grads(&mut self) {
        self.params.values_mut().for_each(Tensor::clear_grad);
    }

    /// Puts every batch-normalization layer into `mode`.
    pub fn set_mode(&mut self, mode: Mode) {
        self.bn.values_mut().for_each(|s| s.mode = mode);
    }

    /// `Eval` only when every batch-normalization layer is in eval mode.
    pub fn mode(&self) -> Mode {
        if !self.bn.is_empty() && self.bn.values().all(|s| s.mode == Mode::Eval) {
            Mode::Eval
        } else {
            Mode::Train
        }
    }

    /// Sum of squares of all learnables, accumulated at 64-bit.
    pub fn squared_norm(&self) -> f64 {
        self.params
            .values()
            .flat_map(|t| t.data().iter())
            .map(|v| {
                let f = v.as_f64();
                f * f
            })
            .sum()
    }

    pub fn cast<U: Float>(&self) -> ModelParams<U> {
        let mut out = ModelParams::new();
        for (k, v) in &self.params {
            let mut t = v.cast::<U>();
            t.zero_grad();
            out.params.insert(k.clone(), t);
        }
        for (k, s) in &self.bn {
            out.bn.insert(
                k.clone(),
                BatchNormState {
                    running_mean: s.running_mean.iter().map(|v| U::lit(v.as_f64())).collect(),
                    running_var: s.running_var.iter().map(|v| U::lit(v.as_f64())).collect(),
                    momentum: s.momentum,
                    epsilon: s.epsilon,
                    mode: s.mode,
                },
            );
        }
        out
    }
}

/// Total number of learnable scalars (batch-norm affine terms included).
pub fn param_count<T: Float>(params: &ModelParams<T>) -> usize {
    params.iter().map(|(_, t)| t.len()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_has_zero_params() {
        assert_eq!(param_count(&ModelParams::<f32>::new()), 0);
    }

    #[test]
    fn names_unique_and_ordered() {
        let mut p = ModelParams::<f32>::new();
        p.insert("b", Tensor::zeros(&[2])).unwrap();
        p.insert("a", Tensor::zeros(&[3])).unwrap();
        assert!(p.insert("a", Tensor::zeros(&[1])).is_err());
        assert_eq!(p.names().collect::<Vec<_>>(), vec!["b", "a"]);
        assert!(p
            .iter()
            .all(|(_, t)| t.grad().is_some_and(|g| g.len() == t.len())));
        assert_eq!(param_count(&p), 5);
    }

    #[test]
    fn mode_switching() {
        let mut p = ModelParams::<f32>::new();
        p.insert_bn("bn", BatchNormState::new(2)).unwrap();
        assert_eq!(p.mode(), Mode::Train);
        p.set_mode(Mode::Eval);
        assert_eq!(p.mode(), Mode::Eval);
        p.set_mode(Mode::Train);
        assert_eq!(p.mode(), Mode::Train);
    }
}
