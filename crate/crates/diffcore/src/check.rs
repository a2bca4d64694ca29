//! Finite-difference gradient checking.
//!
//! Only forward evaluations are used to build the numerical estimate, so the
//! check stays independent of the backward rules it validates.

use crate::backprop::grad;
use crate::error::Result;
use crate::tensor::Tensor;

/// Outcome of comparing analytic and central-difference gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    /// `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)`, per input.
    pub rel_err: Vec<f64>,
    pub max_rel_err: f64,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale < 1e-300 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Central finite-difference gradient of a scalar function of `inputs`.
pub fn numeric_grad(
    f: &dyn Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
    inputs: &[Tensor<f64>],
    step: f64,
) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let base = inputs[i].to_vec();
        let mut g = vec![0.0; base.len()];
        for j in 0..base.len() {
            let eval = |delta: f64| -> Result<f64> {
                let mut data = base.clone();
                data[j] += delta;
                let mut args = inputs.to_vec();
                args[i] = Tensor::from_vec(data, inputs[i].shape())?;
                f(&args)?.item()
            };
            g[j] = (eval(step)? - eval(-step)?) / (2.0 * step);
        }
        out.push(g);
    }
    Ok(out)
}

/// Checks the backward pass of `f` at `inputs` against central differences.
pub fn gradcheck(
    f: &dyn Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
    inputs: &[Tensor<f64>],
    step: f64,
) -> Result<GradCheck> {
    let vars: Vec<Tensor<f64>> = inputs.iter().map(|t| t.as_var()).collect();
    let loss = f(&vars)?;
    let refs: Vec<&Tensor<f64>> = vars.iter().collect();
    let analytic = grad(&loss, &refs, false)?;
    let numeric = numeric_grad(f, inputs, step)?;
    let rel_err: Vec<f64> = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| relative_error(a.data(), n))
        .collect();
    let max_rel_err = rel_err.iter().copied().fold(0.0, f64::max);
    Ok(GradCheck {
        rel_err,
        max_rel_err,
    })
}
