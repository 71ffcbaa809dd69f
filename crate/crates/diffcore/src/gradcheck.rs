//! Central-difference verification of reverse-mode gradients.

use crate::error::Result;
use crate::graph::{Graph, Mode, Var};
use crate::params::ParameterStore;
use crate::tensor::Tensor;

/// Gradients smaller than this are compared on an absolute scale.
pub const MAGNITUDE_FLOOR: f64 = 1e-3;

/// `|a - n| / max(|a|, |n|, MAGNITUDE_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(MAGNITUDE_FLOOR)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Parameter (or `input[i]`) holding the worst coordinate.
    pub worst: String,
    pub coordinates: usize,
}

fn scalar_of(g: &Graph, v: Var) -> f64 {
    g.value(v).item()
}

/// Compares the gradient of a scalar computation with respect to each input
/// tensor against central differences with step `eps`. Returns the largest
/// relative error over all coordinates.
pub fn grad_check<F>(inputs: &[Tensor], eps: f64, f: F) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new(Mode::Eval, 0);
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    g.backward(out)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| g.grad(*v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new(Mode::Eval, 0);
        let vars: Vec<Var> = perturbed.iter().map(|t| g.input(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(scalar_of(&g, out))
    };

    let mut worst = 0.0f64;
    let mut work = inputs.to_vec();
    for i in 0..inputs.len() {
        for j in 0..inputs[i].len() {
            let orig = inputs[i].data()[j];
            work[i].data_mut()[j] = orig + eps;
            let plus = eval(&work)?;
            work[i].data_mut()[j] = orig - eps;
            let minus = eval(&work)?;
            work[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            worst = worst.max(relative_error(analytic[i].data()[j], numeric));
        }
    }
    Ok(worst)
}

/// Evenly spaced coordinates, at most `max` of them.
fn sample_coords(len: usize, max: usize) -> Vec<usize> {
    if len <= max {
        (0..len).collect()
    } else {
        (0..max).map(|i| i * len / max).collect()
    }
}

/// Gradient check over the parameters of a store.
///
/// `f` builds the scalar objective from the store on a fresh evaluation-mode
/// graph. At most `max_coords` coordinates per parameter are perturbed.
pub fn grad_check_params<F>(store: &ParameterStore, eps: f64, max_coords: usize, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParameterStore) -> Result<Var>,
{
    let mut g = Graph::new(Mode::Eval, 0);
    let out = f(&mut g, store)?;
    g.backward(out)?;
    let grads = g.param_gradients();

    let eval = |s: &ParameterStore| -> Result<f64> {
        let mut g = Graph::new(Mode::Eval, 0);
        let out = f(&mut g, s)?;
        Ok(scalar_of(&g, out))
    };

    let mut work = store.clone();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: String::new(),
        coordinates: 0,
    };
    let names: Vec<String> = store.names().map(str::to_string).collect();
    for name in names {
        let len = store.get(&name)?.len();
        for j in sample_coords(len, max_coords) {
            let orig = store.get(&name)?.data()[j];
            work.get_mut(&name)?.data_mut()[j] = orig + eps;
            let plus = eval(&work)?;
            work.get_mut(&name)?.data_mut()[j] = orig - eps;
            let minus = eval(&work)?;
            work.get_mut(&name)?.data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let analytic = grads.get(&name).map(|t| t.data()[j]).unwrap_or(0.0);
            let err = relative_error(analytic, numeric);
            report.coordinates += 1;
            if err > report.max_relative_error {
                report.max_relative_error = err;
                report.worst = name.clone();
            }
        }
    }
    Ok(report)
}
