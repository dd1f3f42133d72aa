//! Adam for Euclidean parameters and Riemannian Adam for ball parameters.
//!
//! For a ball row `x` with ambient gradient `g` the Riemannian gradient is
//! `((1 − ‖x‖²)/2)² g`. Both Adam moments accumulate it coordinate-wise,
//! the step is taken with `exp_x`, the first moment is carried to the new
//! point by the conformal-factor ratio `λ_x / λ_x'` and the result is
//! projected.

use serde::{Deserialize, Serialize};

use crate::autodiff::Gradients;
use crate::backend::{self, Eval};
use crate::error::{Error, Result};
use crate::geometry::{kernel, StabilityConfig};
use crate::params::{Manifold, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 penalty added to Euclidean gradients.
    pub weight_decay: f64,
    /// Global ambient gradient norm cap; non-positive disables clipping.
    pub max_grad_norm: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.0005,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            max_grad_norm: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OptimizerState {
    pub step: u64,
    /// Indexed by parameter id.
    pub moments: Vec<Moments>,
}

/// How ball rows are moved. [`BallGeometry::Poincare`] is the real thing;
/// [`BallGeometry::Flat`] replaces every factor by one and the retraction by
/// addition, which turns the update into plain Adam.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BallGeometry {
    Poincare,
    Flat,
}

impl BallGeometry {
    // 1/λ_x², the Riemannian gradient rescale
    fn rescale(self, x: &[f64]) -> f64 {
        match self {
            BallGeometry::Poincare => {
                let s = 0.5 * (1.0 - backend::norm_sq(x));
                s * s
            }
            BallGeometry::Flat => 1.0,
        }
    }

    fn retract(self, o: &Eval, x: &[f64], u: &[f64]) -> Vec<f64> {
        match self {
            BallGeometry::Poincare => kernel::project(o, &kernel::exp_x(o, &x.to_vec(), &u.to_vec())),
            BallGeometry::Flat => x.iter().zip(u).map(|(a, b)| a + b).collect(),
        }
    }

    // λ_x / λ_x'
    fn transport(self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            BallGeometry::Poincare => (1.0 - backend::norm_sq(y)) / (1.0 - backend::norm_sq(x)),
            BallGeometry::Flat => 1.0,
        }
    }
}

/// Outcome of one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    /// Global ambient gradient norm before clipping.
    pub grad_norm: f64,
    pub clipped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiemannianAdam {
    pub config: AdamConfig,
    pub state: OptimizerState,
    pub geometry: BallGeometry,
    eval: Eval,
}

impl RiemannianAdam {
    pub fn new(config: AdamConfig, stability: StabilityConfig) -> Self {
        Self {
            config,
            state: OptimizerState::default(),
            geometry: BallGeometry::Poincare,
            eval: Eval::new(stability),
        }
    }

    pub fn with_state(mut self, state: OptimizerState) -> Self {
        self.state = state;
        self
    }

    /// Applies one update to every parameter. Parameters without a gradient
    /// entry are treated as having a zero gradient. Nothing is modified when
    /// a gradient is non-finite.
    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients) -> Result<StepReport> {
        for (id, g) in grads.iter() {
            if id.0 >= params.len() {
                return Err(Error::InvalidArgument(format!("gradient for unknown parameter {}", id.0)));
            }
            let p = params.get(id);
            if g.len() != p.data.len() {
                return Err(Error::dims(p.data.len(), g.len()));
            }
            if let Some(bad) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::InvalidValue(format!(
                    "non-finite gradient for `{}` at coordinate {bad}",
                    p.name
                )));
            }
        }
        let c = self.config;
        let grad_norm = grads.global_norm();
        let clipped = c.max_grad_norm > 0.0 && grad_norm > c.max_grad_norm;
        let clip = if clipped { c.max_grad_norm / grad_norm } else { 1.0 };

        self.state.moments.resize_with(params.len(), Moments::default);
        self.state.step += 1;
        let t = self.state.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);

        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            let p = params.get_mut(id);
            let n = p.data.len();
            let mom = &mut self.state.moments[id.0];
            if mom.m.len() != n {
                mom.m = vec![0.0; n];
                mom.v = vec![0.0; n];
            }
            let zeros;
            let g: &[f64] = match grads.get(id) {
                Some(g) => g,
                None => {
                    zeros = vec![0.0; n];
                    &zeros
                }
            };
            match p.manifold {
                Manifold::Euclidean => {
                    for i in 0..n {
                        let gi = clip * g[i] + c.weight_decay * p.data[i];
                        mom.m[i] = c.beta1 * mom.m[i] + (1.0 - c.beta1) * gi;
                        mom.v[i] = c.beta2 * mom.v[i] + (1.0 - c.beta2) * gi * gi;
                        let mh = mom.m[i] / bc1;
                        let vh = mom.v[i] / bc2;
                        p.data[i] -= c.lr * mh / (vh.sqrt() + c.eps);
                    }
                }
                Manifold::Ball => {
                    let cols = p.cols;
                    for r in 0..p.rows {
                        let range = r * cols..(r + 1) * cols;
                        let x = p.data[range.clone()].to_vec();
                        let scale = self.geometry.rescale(&x);
                        let mut u = vec![0.0; cols];
                        for (j, i) in range.clone().enumerate() {
                            let gi = scale * (clip * g[i]);
                            mom.m[i] = c.beta1 * mom.m[i] + (1.0 - c.beta1) * gi;
                            mom.v[i] = c.beta2 * mom.v[i] + (1.0 - c.beta2) * gi * gi;
                            let mh = mom.m[i] / bc1;
                            let vh = mom.v[i] / bc2;
                            u[j] = -c.lr * mh / (vh.sqrt() + c.eps);
                        }
                        let y = self.geometry.retract(&self.eval, &x, &u);
                        let ratio = self.geometry.transport(&x, &y);
                        for i in range.clone() {
                            mom.m[i] *= ratio;
                        }
                        p.data[range].copy_from_slice(&y);
                    }
                }
            }
        }
        Ok(StepReport { grad_norm, clipped })
    }
}
