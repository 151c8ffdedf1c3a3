use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWHyper {
    fn default() -> Self {
        AdamWHyper { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

/// First/second moments aligned to the flat parameter layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step: u64,
    pub hyper: AdamWHyper,
}

impl OptimizerState {
    pub fn new(len: usize, hyper: AdamWHyper) -> Self {
        OptimizerState { first_moment: vec![0.0; len], second_moment: vec![0.0; len], step: 0, hyper }
    }
}

/// One decoupled-weight-decay Adam update, in place.
///
/// Coordinates with `update[i] == false` are frozen: no moment update, no
/// decay and no parameter change. The step counter advances once per call.
pub fn adamw_step(state: &mut OptimizerState, params: &mut [f64], grad: &[f64], update: Option<&[bool]>) -> Result<()> {
    let n = params.len();
    if grad.len() != n || state.first_moment.len() != n || update.is_some_and(|u| u.len() != n) {
        return Err(Error::contract(format!(
            "adamw_step: lengths differ (params {n}, grad {}, moments {})",
            grad.len(),
            state.first_moment.len()
        )));
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numerical { example: None, message: format!("non-finite gradient at coordinate {i}") });
    }
    state.step += 1;
    let h = state.hyper;
    let bias1 = 1.0 - h.beta1.powi(state.step as i32);
    let bias2 = 1.0 - h.beta2.powi(state.step as i32);
    let shrink = 1.0 - h.learning_rate * h.weight_decay;
    for i in 0..n {
        if update.is_some_and(|u| !u[i]) {
            continue;
        }
        let g = grad[i];
        let m = &mut state.first_moment[i];
        let v = &mut state.second_moment[i];
        *m = h.beta1 * *m + (1.0 - h.beta1) * g;
        *v = h.beta2 * *v + (1.0 - h.beta2) * g * g;
        let m_hat = *m / bias1;
        let v_hat = *v / bias2;
        params[i] *= shrink;
        params[i] -= h.learning_rate * m_hat / (v_hat.sqrt() + h.eps);
    }
    Ok(())
}
