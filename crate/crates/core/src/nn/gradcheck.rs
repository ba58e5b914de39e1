use candle_core::{Tensor, Var};

use super::{scalar, ParamStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Largest `|analytic − numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_rel_error: f64,
    pub checked: usize,
}

/// Compares autograd gradients of `loss` against central differences for up
/// to `max_per_param` evenly spaced coordinates of every parameter.
/// Parameters must be `f64`.
pub fn check_gradients(
    params: &ParamStore,
    loss: impl Fn() -> Result<Tensor>,
    step: f64,
    max_per_param: usize,
    floor: f64,
) -> Result<GradCheckReport> {
    let grads = loss()?.backward()?;
    let mut max_rel_error: f64 = 0.0;
    let mut checked = 0;
    for (name, var) in params.iter() {
        let n = var.as_tensor().elem_count();
        let analytic = match grads.get(var.as_tensor()) {
            Some(g) => g.flatten_all()?.to_vec1::<f64>()?,
            None => vec![0.0; n],
        };
        let base = var.as_tensor().flatten_all()?.to_vec1::<f64>()?;
        let stride = (n / max_per_param.max(1)).max(1);
        for i in (0..n).step_by(stride).take(max_per_param) {
            let numeric = (eval_at(var, &base, i, step, &loss)? - eval_at(var, &base, i, -step, &loss)?) / (2.0 * step);
            let denom = analytic[i].abs().max(numeric.abs()).max(floor);
            let rel = (analytic[i] - numeric).abs() / denom;
            if !rel.is_finite() {
                return Err(Error::NumericalFailure(format!("gradient check on `{name}`[{i}] produced {rel}")));
            }
            max_rel_error = max_rel_error.max(rel);
            checked += 1;
        }
        var.set(&Tensor::from_vec(base, var.as_tensor().shape(), var.as_tensor().device())?)?;
    }
    Ok(GradCheckReport { max_rel_error, checked })
}

fn eval_at(var: &Var, base: &[f64], i: usize, delta: f64, loss: &impl Fn() -> Result<Tensor>) -> Result<f64> {
    let mut v = base.to_vec();
    v[i] += delta;
    var.set(&Tensor::from_vec(v, var.as_tensor().shape(), var.as_tensor().device())?)?;
    scalar(&loss()?)
}
