//! Central finite-difference gradient checking.

use super::graph::{Graph, Var};
use super::tensor::{ParamStore, Tensor};
use crate::error::Result;

/// Default finite-difference step.
pub const FD_STEP: f64 = 1e-5;

fn norm(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|x| x * x).sum::<f64>().sqrt()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`; falls back to the absolute difference when
/// both gradients are essentially zero.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = norm(a.iter().zip(b).map(|(x, y)| x - y));
    let scale = norm(a.iter().copied()).max(norm(b.iter().copied()));
    if scale < 1e-10 {
        diff
    } else {
        diff / scale
    }
}

/// Compares reverse-mode gradients of `f` at `inputs` against central differences.
/// Returns one relative error per input tensor.
pub fn check_gradients<F>(f: F, inputs: &[Tensor], h: f64) -> Result<Vec<f64>>
where
    F: for<'g> Fn(&'g Graph, &[Var<'g>]) -> Result<Var<'g>>,
{
    let g = Graph::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let loss = f(&g, &vars)?;
    let grads = g.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| grads.wrt(*v).map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec))
        .collect();

    let eval = |xs: &[Tensor]| -> Result<f64> {
        let g = Graph::new();
        let vars: Vec<Var<'_>> = xs.iter().map(|t| g.constant(t.clone())).collect();
        Ok(f(&g, &vars)?.item())
    };

    let mut work = inputs.to_vec();
    let mut errors = Vec::with_capacity(inputs.len());
    for (i, a) in analytic.iter().enumerate() {
        let mut numeric = vec![0.0; a.len()];
        for (k, n) in numeric.iter_mut().enumerate() {
            let orig = work[i].data()[k];
            work[i].data_mut()[k] = orig + h;
            let up = eval(&work)?;
            work[i].data_mut()[k] = orig - h;
            let down = eval(&work)?;
            work[i].data_mut()[k] = orig;
            *n = (up - down) / (2.0 * h);
        }
        errors.push(relative_error(a, &numeric));
    }
    Ok(errors)
}

/// Same check over every trainable tensor of a parameter store.
/// Returns `(name, relative error)` pairs.
pub fn check_param_gradients<F>(
    store: &ParamStore,
    f: F,
    h: f64,
) -> Result<Vec<(String, f64)>>
where
    F: for<'g> Fn(&'g Graph, &ParamStore) -> Result<Var<'g>>,
{
    let g = Graph::new();
    let loss = f(&g, store)?;
    let grads = g.backward(loss)?;

    let mut work = store.clone();
    let mut out = Vec::new();
    for id in store.ids() {
        let t = store.get(id);
        if !t.requires_grad() {
            continue;
        }
        let analytic = grads
            .param(id)
            .map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec);
        let mut numeric = vec![0.0; t.len()];
        for (k, n) in numeric.iter_mut().enumerate() {
            let orig = t.data()[k];
            work.get_mut(id).data_mut()[k] = orig + h;
            let up = {
                let g = Graph::new();
                f(&g, &work)?.item()
            };
            work.get_mut(id).data_mut()[k] = orig - h;
            let down = {
                let g = Graph::new();
                f(&g, &work)?.item()
            };
            work.get_mut(id).data_mut()[k] = orig;
            *n = (up - down) / (2.0 * h);
        }
        out.push((store.name(id).to_string(), relative_error(&analytic, &numeric)));
    }
    Ok(out)
}
