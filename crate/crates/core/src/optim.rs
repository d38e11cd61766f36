//! Gradient-descent updates: plain steps and the adaptive-moment variant.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::ParamStore;
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("non-finite gradient in parameter {param:?} at flat index {index}")]
    NonFiniteGradient { param: String, index: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    /// Exact `theta <- theta - lr * grad`.
    Sgd,
    /// First/second-moment update with bias correction.
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerSettings {
    pub rule: StepRule,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            rule: StepRule::Adam,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Moment buffers, one pair per parameter, in store iteration order.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<S: Scalar> {
    pub step: u64,
    pub first: Vec<Vec<S>>,
    pub second: Vec<Vec<S>>,
}

impl<S: Scalar> OptimizerState<S> {
    pub fn new(store: &ParamStore<S>) -> Self {
        let first = store
            .iter()
            .map(|(_, n)| vec![S::zero(); n.value().len()])
            .collect::<Vec<_>>();
        Self {
            step: 0,
            second: first.clone(),
            first,
        }
    }
}

/// Apply one update from the gradients currently stored on the parameters.
/// Gradients are validated for finiteness and left untouched (the caller
/// zeroes them).
pub fn optimizer_step<S: Scalar>(
    store: &ParamStore<S>,
    state: &mut OptimizerState<S>,
    settings: &OptimizerSettings,
    learning_rate: f64,
) -> Result<(), OptimError> {
    let lr = S::from_f64_lit(learning_rate);
    let wd = S::from_f64_lit(settings.weight_decay);
    let one = S::one();
    state.step += 1;

    match settings.rule {
        StepRule::Sgd => {
            for (name, node) in store.iter() {
                let grad = node.grad().data().to_vec();
                check_finite(name, &grad)?;
                let mut value = node.value().clone();
                for (v, g) in value.data_mut().iter_mut().zip(&grad) {
                    let g = *g + wd * *v;
                    *v = *v - lr * g;
                }
                node.set_value(value);
            }
        }
        StepRule::Adam => {
            let b1 = S::from_f64_lit(settings.beta1);
            let b2 = S::from_f64_lit(settings.beta2);
            let eps = S::from_f64_lit(settings.eps);
            let t = state.step as i32;
            let bias1 = one - b1.powi(t);
            let bias2 = one - b2.powi(t);
            for (idx, (name, node)) in store.iter().enumerate() {
                let grad = node.grad().data().to_vec();
                check_finite(name, &grad)?;
                let m = &mut state.first[idx];
                let v = &mut state.second[idx];
                let mut value = node.value().clone();
                for (((val, &g), m), v) in value.data_mut().iter_mut().zip(&grad).zip(m).zip(v) {
                    let g = g + wd * *val;
                    *m = b1 * *m + (one - b1) * g;
                    *v = b2 * *v + (one - b2) * g * g;
                    let m_hat = *m / bias1;
                    let v_hat = *v / bias2;
                    *val = *val - lr * m_hat / (v_hat.sqrt() + eps);
                }
                node.set_value(value);
            }
        }
    }
    Ok(())
}

fn check_finite<S: Scalar>(name: &str, grad: &[S]) -> Result<(), OptimError> {
    if let Some(index) = grad.iter().position(|g| !g.is_finite()) {
        return Err(OptimError::NonFiniteGradient {
            param: name.to_string(),
            index,
        });
    }
    Ok(())
}
