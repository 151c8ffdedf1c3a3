//! Finite-difference oracles. They only call the forward loss, never the
//! reverse pass they are checking.

use subnet_tda::model::{self, Example, Parameters, SubnetworkMask};

/// Central differences of the loss w.r.t. every flat parameter.
pub fn param_fd(params: &Parameters, ex: &Example, mask: &SubnetworkMask, step: f64) -> Vec<f64> {
    let mut p = params.clone();
    (0..params.len())
        .map(|i| {
            let orig = p.values()[i];
            p.values_mut()[i] = orig + step;
            let up = model::loss(&p, ex, mask).unwrap();
            p.values_mut()[i] = orig - step;
            let down = model::loss(&p, ex, mask).unwrap();
            p.values_mut()[i] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// Central differences of `scale · L` w.r.t. each continuous gate value.
pub fn gate_fd_scaled(params: &Parameters, ex: &Example, gates: &[f64], step: f64, scale: f64) -> Vec<f64> {
    let mut g = gates.to_vec();
    (0..gates.len())
        .map(|i| {
            g[i] = gates[i] + step;
            let up = scale * model::loss_with_gates(params, ex, &g).unwrap();
            g[i] = gates[i] - step;
            let down = scale * model::loss_with_gates(params, ex, &g).unwrap();
            g[i] = gates[i];
            (up - down) / (2.0 * step)
        })
        .collect()
}

pub fn gate_fd(params: &Parameters, ex: &Example, gates: &[f64], step: f64) -> Vec<f64> {
    gate_fd_scaled(params, ex, gates, step, 1.0)
}

/// Floor below which entries are compared on an absolute scale; central
/// differences at step 1e-4 cannot resolve relative error on smaller values.
pub const REL_FLOOR: f64 = 1e-6;

/// max_i |a_i − n_i| / max(|a_i|, |n_i|, REL_FLOOR)
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR))
        .fold(0.0, f64::max)
}
