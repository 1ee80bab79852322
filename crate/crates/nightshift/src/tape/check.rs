//! Central finite-difference gradient checking.

use super::{Tape, Value};
use ndarray::ArrayD;

/// Builds a scalar loss from differentiable leaves inserted for `inputs`.
pub type LossBuilder = dyn Fn(&Tape, &[Value<'_>]) -> f64;

fn eval(build: &dyn for<'t> Fn(&'t Tape, &[Value<'t>]) -> Value<'t>, inputs: &[ArrayD<f64>]) -> f64 {
    let tape = Tape::new();
    let leaves: Vec<Value<'_>> = inputs.iter().map(|x| tape.param(x.clone())).collect();
    build(&tape, &leaves).scalar_value()
}

/// Maximum relative error between analytic and central finite-difference
/// gradients, over all elements of all inputs.
///
/// The relative error is `|analytic - numeric|_inf / max(|numeric|_inf, floor)`.
pub fn max_relative_grad_error(
    build: &dyn for<'t> Fn(&'t Tape, &[Value<'t>]) -> Value<'t>,
    inputs: &[ArrayD<f64>],
    step: f64,
) -> f64 {
    let tape = Tape::new();
    let leaves: Vec<Value<'_>> = inputs.iter().map(|x| tape.param(x.clone())).collect();
    let loss = build(&tape, &leaves);
    let grads = tape.backward(loss);
    let analytic: Vec<ArrayD<f64>> = leaves.iter().map(|&l| grads.get(l)).collect();

    let mut max_abs_diff = 0.0f64;
    let mut max_numeric = 0.0f64;
    for (i, input) in inputs.iter().enumerate() {
        let flat_len = input.len();
        for j in 0..flat_len {
            let mut plus = inputs.to_vec();
            let mut minus = inputs.to_vec();
            {
                let p = plus[i].as_slice_mut().unwrap();
                p[j] += step;
                let m = minus[i].as_slice_mut().unwrap();
                m[j] -= step;
            }
            let numeric = (eval(build, &plus) - eval(build, &minus)) / (2.0 * step);
            let a = analytic[i].as_slice().unwrap()[j];
            max_abs_diff = max_abs_diff.max((a - numeric).abs());
            max_numeric = max_numeric.max(numeric.abs());
        }
    }
    max_abs_diff / max_numeric.max(1e-6)
}
