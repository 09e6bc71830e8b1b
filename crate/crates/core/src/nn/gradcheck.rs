//! Central finite-difference checks of the tape's gradients.

use super::graph::{Graph, Var};
use super::param::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{contract, Result};

/// `|a - b| / max(1, |a|, |b|)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1f64.max(a.abs()).max(b.abs())
}

fn scalar_of(g: &Graph, v: Var) -> Result<f64> {
    let t = g.value(v);
    if t.len() != 1 {
        return Err(contract(format!("gradient check of non-scalar {:?}", t.shape())));
    }
    Ok(t.item())
}

/// Compares backprop gradients of `f` at `inputs` to central differences
/// with step `h`, returning the largest [`relative_error`] over all
/// coordinates of all inputs.
pub fn gradient_check<F>(inputs: &[Tensor], h: f64, f: F) -> Result<f64>
where
    F: Fn(&mut Graph<'_>, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|x| g.variable(x.clone())).collect();
        let out = f(&mut g, &vars)?;
        scalar_of(&g, out)
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|x| g.variable(x.clone())).collect();
    let out = f(&mut g, &vars)?;
    scalar_of(&g, out)?;
    let grads = g.backward(out)?;
    let mut worst = 0.0f64;
    let mut xs = inputs.to_vec();
    for (k, var) in vars.iter().enumerate() {
        let analytic = grads.grad(*var);
        for i in 0..xs[k].len() {
            let orig = xs[k].data()[i];
            xs[k].data_mut()[i] = orig + h;
            let up = eval(&xs)?;
            xs[k].data_mut()[i] = orig - h;
            let down = eval(&xs)?;
            xs[k].data_mut()[i] = orig;
            let fd = (up - down) / (2.0 * h);
            worst = worst.max(relative_error(fd, analytic.data()[i]));
        }
    }
    Ok(worst)
}

/// Per-parameter outcome of [`param_gradient_check`].
#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
}

/// Finite-difference check of a loss built from parameters in `store`.
///
/// At most `max_coords` coordinates per parameter are perturbed, spread
/// evenly over the array. `f` must be deterministic: it is re-run for
/// every perturbation.
pub fn param_gradient_check<F>(
    store: &ParamStore,
    ids: &[ParamId],
    h: f64,
    max_coords: usize,
    f: F,
) -> Result<Vec<ParamCheck>>
where
    F: Fn(&mut Graph<'_>) -> Result<Var>,
{
    let grads = {
        let mut g = Graph::with_params(store);
        let out = f(&mut g)?;
        scalar_of(&g, out)?;
        g.backward(out)?.into_params()
    };
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut g = Graph::with_params(s);
        let out = f(&mut g)?;
        scalar_of(&g, out)
    };
    let mut work = store.clone();
    let mut report = Vec::with_capacity(ids.len());
    for &id in ids {
        let len = store.tensor(id).len();
        let stride = len.div_ceil(max_coords.max(1)).max(1);
        let analytic = grads.get(id);
        let mut worst = 0.0f64;
        let mut checked = 0;
        for i in (0..len).step_by(stride) {
            let orig = store.tensor(id).data()[i];
            work.tensor_mut(id).data_mut()[i] = orig + h;
            let up = eval(&work)?;
            work.tensor_mut(id).data_mut()[i] = orig - h;
            let down = eval(&work)?;
            work.tensor_mut(id).data_mut()[i] = orig;
            let fd = (up - down) / (2.0 * h);
            let ad = analytic.map_or(0.0, |g| g[i]);
            worst = worst.max(relative_error(fd, ad));
            checked += 1;
        }
        report.push(ParamCheck {
            name: store.get(id).name.clone(),
            checked,
            max_rel_error: worst,
        });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares() {
        let x = Tensor::row_vector(&[1.0, 2.0]);
        let err = gradient_check(&[x], 1e-4, |g, v| {
            let sq = g.mul(v[0], v[0])?;
            Ok(g.sum(sq))
        })
        .unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn constant_function_has_zero_gradients() {
        let x = Tensor::row_vector(&[1.0, 2.0]);
        let err = gradient_check(&[x], 1e-4, |g, _| Ok(g.input(Tensor::scalar(3.0)))).unwrap();
        assert_eq!(err, 0.0);
    }
}
