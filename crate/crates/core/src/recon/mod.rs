//! Iterative shrinkage-thresholding and its unfolded, learned variant.

mod train;

pub use train::{augment, train, Augmentation, TrainConfig, TrainReport};

use crate::erra::ErraModel;
use crate::error::{Error, Result};
use crate::imaging::{init_estimate, FilterArray, HyperCube, Measurement, SensingOperator};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ProxKind {
    /// Soft thresholding at `threshold`.
    SoftThreshold { threshold: f64 },
    Erra,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UnfoldingConfig {
    pub stages: usize,
    pub rho_init: f64,
    pub share_params: bool,
    pub prox: ProxKind,
}

impl UnfoldingConfig {
    pub fn classical(stages: usize, rho: f64, threshold: f64) -> Self {
        UnfoldingConfig { stages, rho_init: rho, share_params: true, prox: ProxKind::SoftThreshold { threshold } }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages == 0 {
            return Err(Error::InvalidArgument("stage count must be at least 1".into()));
        }
        if !(self.rho_init >= 0.0 && self.rho_init.is_finite()) {
            return Err(Error::InvalidArgument(format!("step size must be finite and >= 0, got {}", self.rho_init)));
        }
        if let ProxKind::SoftThreshold { threshold } = self.prox {
            if !(threshold >= 0.0) {
                return Err(Error::InvalidArgument(format!("threshold must be >= 0, got {threshold}")));
            }
        }
        Ok(())
    }
}

/// Estimate and step output after one stage.
#[derive(Clone, Debug)]
pub struct StageState {
    pub stage: usize,
    pub x: HyperCube,
    pub r: HyperCube,
}

/// `½‖y − Ax‖² + reg_weight ‖x‖₁`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReconObjective {
    pub fidelity: f64,
    pub reg_weight: f64,
    pub l1: f64,
}

impl ReconObjective {
    pub fn evaluate<A: SensingOperator>(op: &A, x: &[f64], y: &[f64], reg_weight: f64) -> Self {
        let mut ax = vec![0.0; op.output_len()];
        op.apply(x, &mut ax);
        let fidelity = 0.5 * ax.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        ReconObjective { fidelity, reg_weight, l1: x.iter().map(|v| v.abs()).sum() }
    }

    pub fn total(&self) -> f64 {
        self.fidelity + self.reg_weight * self.l1
    }
}

/// `r = x − ρ Aᵀ(Ax − y)` for any sensing operator.
pub fn gradient_step_op<A: SensingOperator>(op: &A, x: &[f64], y: &[f64], rho: f64) -> Vec<f64> {
    let mut res = vec![0.0; op.output_len()];
    op.apply(x, &mut res);
    for (r, &yv) in res.iter_mut().zip(y) {
        *r -= yv;
    }
    let mut back = vec![0.0; op.input_len()];
    op.adjoint(&res, &mut back);
    x.iter().zip(&back).map(|(&xv, &b)| xv - rho * b).collect()
}

pub fn gradient_step(x: &HyperCube, y: &Measurement, phi: &FilterArray, rho: f64) -> Result<HyperCube> {
    if !rho.is_finite() {
        return Err(Error::InvalidArgument(format!("step size must be finite, got {rho}")));
    }
    if x.dims() != (phi.height(), phi.width(), phi.bands()) || y.y.len() != phi.output_len() {
        return Err(Error::shape("gradient_step", format!("cube {:?}, measurement {}x{}, mosaic {}x{}x{}", x.dims(), y.height, y.width, phi.height(), phi.width(), phi.bands())));
    }
    let r = gradient_step_op(phi, x.data(), &y.y, rho);
    HyperCube::new(x.height(), x.width(), x.bands(), r)
}

#[inline]
pub fn soft_threshold(v: f64, t: f64) -> f64 {
    v.signum() * (v.abs() - t).max(0.0)
}

pub fn prox_soft_threshold(r: &HyperCube, t: f64) -> Result<HyperCube> {
    if !(t >= 0.0) {
        return Err(Error::InvalidArgument(format!("threshold must be >= 0, got {t}")));
    }
    let data = r.data().iter().map(|&v| soft_threshold(v, t)).collect();
    HyperCube::new(r.height(), r.width(), r.bands(), data)
}

/// Classical ISTA from `x0`, returning the iterate and the objective after
/// each iteration (index 0 is the starting point).
pub fn ista<A: SensingOperator>(op: &A, y: &[f64], x0: &[f64], rho: f64, lambda: f64, iters: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = x0.to_vec();
    let mut history = vec![ReconObjective::evaluate(op, &x, y, lambda).total()];
    for _ in 0..iters {
        let r = gradient_step_op(op, &x, y, rho);
        x = r.iter().map(|&v| soft_threshold(v, rho * lambda)).collect();
        history.push(ReconObjective::evaluate(op, &x, y, lambda).total());
    }
    (x, history)
}

/// Final estimate plus per-stage diagnostics.
#[derive(Clone, Debug)]
pub struct UnfoldingResult {
    pub estimate: HyperCube,
    pub stages: Vec<StageState>,
    /// `½‖y − Θx_k‖²` for `k = 0..=K`.
    pub fidelity: Vec<f64>,
}

/// Runs `K` stages from the per-pixel initial estimate. Classical mode uses
/// the configured step and threshold; learned mode requires `model`.
pub fn run_unfolding(y: &Measurement, phi: &FilterArray, config: &UnfoldingConfig, model: Option<&ErraModel<f32>>) -> Result<UnfoldingResult> {
    config.validate()?;
    let x0 = init_estimate(y, phi)?;
    let fid = |x: &HyperCube| ReconObjective::evaluate(phi, x.data(), &y.y, 0.0).fidelity;
    let mut fidelity = vec![fid(&x0)];
    let mut stages = Vec::with_capacity(config.stages);
    match config.prox {
        ProxKind::SoftThreshold { threshold } => {
            let mut x = x0;
            for k in 0..config.stages {
                let r = gradient_step(&x, y, phi, config.rho_init).map_err(|e| stage_error(k, e))?;
                x = prox_soft_threshold(&r, threshold).map_err(|e| stage_error(k, e))?;
                fidelity.push(fid(&x));
                stages.push(StageState { stage: k + 1, x: x.clone(), r });
            }
        }
        ProxKind::Erra => {
            let model = model.ok_or_else(|| Error::InvalidArgument("learned reconstruction needs a model".into()))?;
            if model.config.stages != config.stages {
                return Err(Error::InvalidArgument(format!("model has {} stages, configuration asks for {}", model.config.stages, config.stages)));
            }
            let (rs, xs) = model.reconstruct_detailed(y, phi)?;
            for (k, (r, x)) in rs.into_iter().zip(xs).enumerate() {
                fidelity.push(fid(&x));
                stages.push(StageState { stage: k + 1, x, r });
            }
        }
    }
    let estimate = stages.last().map(|s| s.x.clone()).expect("at least one stage");
    Ok(UnfoldingResult { estimate, stages, fidelity })
}

fn stage_error(k: usize, e: Error) -> Error {
    match e {
        Error::NonFinite(what) => Error::NonFinite(format!("{what} at stage {}", k + 1)),
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn soft_threshold_values() {
        assert_eq!(soft_threshold(0.5, 1.0), 0.0);
        assert_eq!(soft_threshold(-2.0, 0.5), -1.5);
        assert_eq!(soft_threshold(0.3, 0.0), 0.3);
    }

    #[test]
    fn config_checks() {
        assert!(UnfoldingConfig::classical(0, 1.0, 0.0).validate().is_err());
        assert!(UnfoldingConfig::classical(1, -1.0, 0.0).validate().is_err());
        assert!(UnfoldingConfig::classical(1, 1.0, -0.1).validate().is_err());
    }
}
