//! Central-difference gradient verification (64-bit only).

use super::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::error::{Error, Result};

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn scalar_of(g: &Graph<f64>, v: Var) -> Result<f64> {
    let t = g.value(v);
    if t.numel() != 1 {
        return Err(Error::shape("grad_check", format!("function must be scalar-valued, got {:?}", t.shape())));
    }
    Ok(t.item())
}

fn check_repeatable(first: f64, second: f64) -> Result<()> {
    if first.to_bits() != second.to_bits() {
        return Err(Error::NonDeterministic { first, second });
    }
    Ok(())
}

/// Maximum relative error between the reverse-mode gradient of `f` at `x`
/// and central differences with step `epsilon * max(1, |x_i|)`.
pub fn grad_check<F>(f: F, x: &Tensor<f64>, epsilon: f64) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    if epsilon <= 0.0 {
        return Err(Error::InvalidArgument("epsilon must be positive".into()));
    }
    let eval = |t: Tensor<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let v = g.input(t);
        let out = f(&mut g, v)?;
        scalar_of(&g, out)
    };
    let mut g = Graph::new();
    let xv = g.variable(x.clone());
    let out = f(&mut g, xv)?;
    let base = scalar_of(&g, out)?;
    check_repeatable(base, eval(x.clone())?)?;
    g.backward(out)?;
    let analytic = g.grad(xv).cloned().unwrap_or_else(|| Tensor::zeros(x.shape()));

    let mut worst = 0.0f64;
    for i in 0..x.numel() {
        let xi = x.data()[i];
        let h = epsilon * xi.abs().max(1.0);
        let mut plus = x.clone();
        plus.data_mut()[i] = xi + h;
        let mut minus = x.clone();
        minus.data_mut()[i] = xi - h;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * h);
        worst = worst.max(relative_error(analytic.data()[i], numeric));
    }
    Ok(worst)
}

#[derive(Clone, Debug)]
pub struct ParamCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

/// Checks the gradient of `loss(graph, store)` with respect to every entry
/// of every parameter in `store`. `stride` > 1 checks every `stride`-th
/// entry of each parameter (always including the first).
pub fn grad_check_params<F>(store: &ParamStore<f64>, loss: F, epsilon: f64, stride: usize) -> Result<ParamCheckReport>
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
{
    if epsilon <= 0.0 {
        return Err(Error::InvalidArgument("epsilon must be positive".into()));
    }
    let eval = |s: &ParamStore<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let out = loss(&mut g, s)?;
        scalar_of(&g, out)
    };
    let mut g = Graph::new();
    let out = loss(&mut g, store)?;
    let base = scalar_of(&g, out)?;
    check_repeatable(base, eval(store)?)?;
    g.backward(out)?;
    let mut grads = store.clone();
    grads.zero_grads();
    g.accumulate_param_grads(&mut grads);

    let mut report = ParamCheckReport { max_rel_error: 0.0, worst: None, checked: 0 };
    let mut probe = store.clone();
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        let n = store.value(id).numel();
        for i in (0..n).step_by(stride.max(1)) {
            let xi = store.value(id).data()[i];
            let h = epsilon * xi.abs().max(1.0);
            probe.value_mut(id).data_mut()[i] = xi + h;
            let fp = eval(&probe)?;
            probe.value_mut(id).data_mut()[i] = xi - h;
            let fm = eval(&probe)?;
            probe.value_mut(id).data_mut()[i] = xi;
            let numeric = (fp - fm) / (2.0 * h);
            let analytic = grads.grad(id).map_or(0.0, |g| g.data()[i]);
            let err = relative_error(analytic, numeric);
            report.checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((store.name(id).to_string(), i));
            }
        }
    }
    Ok(report)
}
