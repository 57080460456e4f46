//! Central finite-difference verification of analytic gradients.
//!
//! An operator is reduced to the scalar `L = Σ r ⊙ op(inputs)` with a fixed
//! random projection `r`; the analytic gradients come from the operator's
//! backward pass fed with `r`, the numeric ones from
//! `(L(x + h·e_i) − L(x − h·e_i)) / 2h`.
//!
//! The per-input error is the largest `|analytic − numeric| / max(|analytic|,
//! |numeric|, 0.01·s, 1e-4·S)` over the checked coordinates, where `s` is the
//! largest gradient magnitude seen for that input and `S` the largest over all
//! inputs. The floors keep near-zero entries, and inputs whose true gradient is
//! identically zero, from being scored on cancellation noise.
//!
//! A coordinate whose one-sided differences disagree by more than the tolerance
//! sits within one step of a non-differentiable point (a rectifier kink); it is
//! counted in [`InputReport::kinks`] and left out of the error. Deep rectifier
//! stacks need a small step to keep such coordinates rare.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Tensor;
use crate::error::{Error, Result};

/// Anything with a forward pass and a matching backward pass at 64-bit.
pub trait DifferentiableOp {
    fn forward(&self, inputs: &[Tensor<f64>]) -> Result<Tensor<f64>>;
    /// Gradients of `Σ grad_out ⊙ forward(inputs)` with respect to every input.
    fn backward(&self, inputs: &[Tensor<f64>], grad_out: &Tensor<f64>) -> Result<Vec<Tensor<f64>>>;
}

/// Adapter turning a pair of closures into a [`DifferentiableOp`].
pub struct FnOp<F, B> {
    pub forward: F,
    pub backward: B,
}

impl<F, B> DifferentiableOp for FnOp<F, B>
where
    F: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
    B: Fn(&[Tensor<f64>], &Tensor<f64>) -> Result<Vec<Tensor<f64>>>,
{
    fn forward(&self, inputs: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        (self.forward)(inputs)
    }

    fn backward(&self, inputs: &[Tensor<f64>], grad_out: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        (self.backward)(inputs, grad_out)
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    pub step: f64,
    pub tolerance: f64,
    /// Check at most this many randomly chosen coordinates per input.
    pub max_coords: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            max_coords: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct InputReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub coords_checked: usize,
    /// Checked coordinates skipped because a kink lies within one step.
    pub kinks: usize,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub inputs: Vec<InputReport>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.inputs
            .iter()
            .map(|r| r.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn kinks(&self) -> usize {
        self.inputs.iter().map(|r| r.kinks).sum()
    }

    pub fn coords_checked(&self) -> usize {
        self.inputs.iter().map(|r| r.coords_checked).sum()
    }

    pub fn passed(&self) -> bool {
        self.inputs.iter().all(|r| r.max_rel_error < self.tolerance)
    }
}

fn project(y: &Tensor<f64>, r: &Tensor<f64>) -> f64 {
    y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

pub fn finite_difference_check(
    op: &dyn DifferentiableOp,
    inputs: &[Tensor<f64>],
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let y0 = op.forward(inputs)?;
    let r = Tensor::<f64>::randn(y0.shape(), 1.0, &mut rng);
    let analytic = op.backward(inputs, &r)?;
    if analytic.len() != inputs.len() {
        return Err(Error::InvalidArgument(format!(
            "backward returned {} gradients for {} inputs",
            analytic.len(),
            inputs.len()
        )));
    }
    let f0 = project(&y0, &r);
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    let mut per_input = Vec::with_capacity(inputs.len());
    for (k, grad) in analytic.iter().enumerate() {
        if grad.len() != inputs[k].len() {
            return Err(Error::ShapeMismatch(format!(
                "gradient {k} has {} elements, input has {}",
                grad.len(),
                inputs[k].len()
            )));
        }
        let n = inputs[k].len();
        let coords: Vec<usize> = match cfg.max_coords {
            Some(m) if m < n => {
                let mut c = sample(&mut rng, n, m).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..n).collect(),
        };
        let mut samples = Vec::with_capacity(coords.len());
        for &i in &coords {
            let orig = work[k].data()[i];
            work[k].data_mut()[i] = orig + cfg.step;
            let plus = project(&op.forward(&work)?, &r);
            work[k].data_mut()[i] = orig - cfg.step;
            let minus = project(&op.forward(&work)?, &r);
            work[k].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * cfg.step);
            // One-sided slopes differ by h·f'' on smooth stretches and by the
            // full slope jump when a kink lies inside the step.
            let spread = ((plus - f0) - (f0 - minus)).abs() / cfg.step;
            samples.push((grad.data()[i], numeric, spread));
        }
        per_input.push(samples);
    }
    let magnitude = |s: &[(f64, f64, f64)]| {
        s.iter()
            .map(|(a, b, _)| a.abs().max(b.abs()))
            .fold(0.0, f64::max)
    };
    let global = per_input.iter().map(|s| magnitude(s)).fold(0.0, f64::max);
    let mut reports = Vec::with_capacity(inputs.len());
    for samples in per_input {
        let floor = (0.01 * magnitude(&samples)).max(1e-4 * global);
        let mut max_rel = 0.0f64;
        let mut max_abs = 0.0f64;
        let mut kinks = 0;
        for &(a, b, spread) in &samples {
            let denom = a.abs().max(b.abs()).max(floor);
            if denom > 0.0 && spread / denom > cfg.tolerance {
                kinks += 1;
                continue;
            }
            let diff = (a - b).abs();
            max_abs = max_abs.max(diff);
            if diff > 0.0 {
                max_rel = max_rel.max(diff / denom);
            }
        }
        reports.push(InputReport {
            max_rel_error: max_rel,
            max_abs_error: max_abs,
            coords_checked: samples.len(),
            kinks,
        });
    }
    Ok(GradCheckReport {
        inputs: reports,
        tolerance: cfg.tolerance,
    })
}
