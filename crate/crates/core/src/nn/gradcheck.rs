//! Central finite-difference gradient checks in `f64`.

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Relative error `‖a − n‖ / max(‖a‖, ‖n‖)`; zero when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n) * (a - n)).sum::<f64>().sqrt();
    let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn: f64 = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    let denom = na.max(nn);
    if denom == 0.0 {
        0.0
    } else {
        diff / denom
    }
}

/// Builds the graph via `build(graph, param_vars)` (which must return a
/// scalar), compares backprop gradients with central differences of step `h`
/// for every element of every parameter, and returns the relative error of
/// each parameter tensor.
pub fn check<B>(params: &[Tensor<f64>], h: f64, build: B) -> Result<Vec<f64>>
where
    B: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |ps: &[Tensor<f64>]| -> Result<(Graph<f64>, Vec<Var>, Var)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ps.iter().map(|p| g.param(p.clone())).collect();
        let out = build(&mut g, &vars)?;
        Ok((g, vars, out))
    };
    let (g, vars, out) = eval(params)?;
    if g.value(out).len() != 1 {
        return Err(Error::Shape("gradient check needs a scalar output".into()));
    }
    let grads = g.backward(out)?;
    let mut work: Vec<Tensor<f64>> = params.to_vec();
    let mut errors = Vec::with_capacity(params.len());
    for (pi, var) in vars.iter().enumerate() {
        let analytic = grads
            .get(*var)
            .map(|t| t.data().to_vec())
            .unwrap_or_else(|| vec![0.0; params[pi].len()]);
        let mut numeric = Vec::with_capacity(params[pi].len());
        for j in 0..params[pi].len() {
            let orig = params[pi].data()[j];
            work[pi].data_mut()[j] = orig + h;
            let (gp, _, op) = eval(&work)?;
            work[pi].data_mut()[j] = orig - h;
            let (gm, _, om) = eval(&work)?;
            work[pi].data_mut()[j] = orig;
            numeric.push((gp.value(op).data()[0] - gm.value(om).data()[0]) / (2.0 * h));
        }
        errors.push(relative_error(&analytic, &numeric));
    }
    Ok(errors)
}
