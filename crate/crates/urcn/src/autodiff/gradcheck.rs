//! Central finite-difference oracles for gradient verification.
//!
//! These helpers are testing utilities: they re-evaluate a forward closure
//! under coordinate perturbations and never touch the tape's backward
//! implementation, so they remain an independent check of it.

use super::{ParamId, ParameterStore};

/// Central finite difference of a scalar function of one coordinate.
pub fn central_diff(mut f: impl FnMut(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// d eval / d store[pid][idx] via central differences; restores the store.
pub fn fd_param_grad(
    store: &mut ParameterStore,
    pid: ParamId,
    idx: usize,
    h: f64,
    eval: impl Fn(&ParameterStore) -> f64,
) -> f64 {
    let orig = store.get(pid).value.data[idx];
    store.get_mut(pid).value.data[idx] = orig + h;
    let fp = eval(store);
    store.get_mut(pid).value.data[idx] = orig - h;
    let fm = eval(store);
    store.get_mut(pid).value.data[idx] = orig;
    (fp - fm) / (2.0 * h)
}

/// d eval / d x[idx] for a plain input vector; restores the input.
pub fn fd_input_grad(
    x: &mut [f64],
    idx: usize,
    h: f64,
    eval: impl Fn(&[f64]) -> f64,
) -> f64 {
    let orig = x[idx];
    x[idx] = orig + h;
    let fp = eval(x);
    x[idx] = orig - h;
    let fm = eval(x);
    x[idx] = orig;
    (fp - fm) / (2.0 * h)
}

/// Relative agreement check between an analytic and a finite-difference
/// gradient, with an absolute floor that absorbs FD roundoff on
/// coordinates whose true gradient is at or near zero.
pub fn grads_agree(analytic: f64, numeric: f64, rel_tol: f64, abs_floor: f64) -> bool {
    let diff = (analytic - numeric).abs();
    diff <= rel_tol * analytic.abs().max(numeric.abs()) || diff <= abs_floor
}
