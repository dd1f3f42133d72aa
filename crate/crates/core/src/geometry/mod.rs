//! Poincaré-ball geometry.
//!
//! [`kernel`] holds the backend-generic operations used by the layers.
//! The free functions here are their validated `f64` entry points over
//! [`BallPoint`] and [`TangentVector`].

pub mod kernel;

use serde::{Deserialize, Serialize};

use crate::backend::{Eval, Matrix, Unary};
use crate::error::{Error, Result};

pub use kernel::kernel_calls;

pub const EPS_BOUNDARY: f64 = 1e-5;
pub const EPS_ZERO: f64 = 1e-15;

/// Slack allowed on the ball radius to absorb the rounding of a projection.
const RADIUS_SLACK: f64 = 1e-12;

/// Numerical guards for hyperbolic arithmetic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityConfig {
    /// Points are kept within radius `1 - eps_boundary`.
    pub eps_boundary: f64,
    /// Norms below this are treated as zero.
    pub eps_zero: f64,
    pub tanh_clip: f64,
    pub atanh_clip: f64,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        Self {
            eps_boundary: EPS_BOUNDARY,
            eps_zero: EPS_ZERO,
            tanh_clip: 15.0,
            atanh_clip: 1.0 - 1e-15,
        }
    }
}

impl StabilityConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = 0.0 < self.eps_zero
            && self.eps_zero < self.eps_boundary
            && self.eps_boundary < 1.0
            && self.tanh_clip > 0.0
            && 0.0 < self.atanh_clip
            && self.atanh_clip < 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("inconsistent stability settings {self:?}")))
        }
    }

    pub fn max_radius(&self) -> f64 {
        1.0 - self.eps_boundary
    }
}

fn eval() -> Eval {
    Eval::default()
}

fn check_finite(v: &[f64]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidValue("vector has non-finite coordinates".into()))
    }
}

fn same_dim(a: usize, b: usize) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::dims(a, b))
    }
}

/// A point of the open unit ball, kept at radius ≤ `1 − eps_boundary`.
#[derive(Debug, Clone, PartialEq)]
pub struct BallPoint(Vec<f64>);

impl BallPoint {
    /// Validates `coords` without projecting.
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        check_finite(&coords)?;
        let n = crate::backend::norm(&coords);
        if n > StabilityConfig::default().max_radius() + RADIUS_SLACK {
            return Err(Error::InvalidValue(format!("norm {n} lies outside the ball")));
        }
        Ok(Self(coords))
    }

    pub fn origin(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        crate::backend::norm(&self.0)
    }

    pub fn is_valid(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
            && self.norm() <= StabilityConfig::default().max_radius() + RADIUS_SLACK
    }

    /// The Möbius inverse `−x`.
    pub fn neg(&self) -> Self {
        Self(self.0.iter().map(|x| -x).collect())
    }

    // Kernel outputs are projected, so they satisfy the invariant.
    fn trusted(coords: Vec<f64>) -> Self {
        debug_assert!(coords.iter().all(|x| x.is_finite()));
        Self(coords)
    }
}

/// A tangent vector together with its base point.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    coords: Vec<f64>,
    base: BallPoint,
}

impl TangentVector {
    pub fn new(coords: Vec<f64>, base: BallPoint) -> Result<Self> {
        check_finite(&coords)?;
        same_dim(base.dim(), coords.len())?;
        Ok(Self { coords, base })
    }

    /// A vector in the tangent space at the origin.
    pub fn at_origin(coords: Vec<f64>) -> Result<Self> {
        let dim = coords.len();
        Self::new(coords, BallPoint::origin(dim))
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn base(&self) -> &BallPoint {
        &self.base
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }
}

pub fn project_to_ball(v: &[f64]) -> Result<BallPoint> {
    check_finite(v)?;
    Ok(BallPoint::trusted(kernel::project(&eval(), &v.to_vec())))
}

pub fn conformal_factor(x: &BallPoint) -> f64 {
    kernel::conformal_factor(&eval(), &x.0)
}

pub fn lorentz_factor(x: &BallPoint) -> f64 {
    kernel::lorentz_factor(&eval(), &x.0)
}

pub fn mobius_add(x: &BallPoint, y: &BallPoint) -> Result<BallPoint> {
    same_dim(x.dim(), y.dim())?;
    Ok(BallPoint::trusted(kernel::mobius_add(&eval(), &x.0, &y.0)))
}

pub fn mobius_scalar_mul(r: f64, x: &BallPoint) -> Result<BallPoint> {
    if !r.is_finite() {
        return Err(Error::InvalidValue(format!("scalar {r}")));
    }
    Ok(BallPoint::trusted(kernel::mobius_scalar_mul(&eval(), &r, &x.0)))
}

pub fn mobius_matvec(m: &Matrix, x: &BallPoint) -> Result<BallPoint> {
    same_dim(m.cols(), x.dim())?;
    check_finite(m.data())?;
    Ok(BallPoint::trusted(kernel::mobius_matvec(&eval(), m, &x.0)))
}

/// Möbius version of an arbitrary scalar function, applied coordinate-wise
/// in the tangent space at the origin.
pub fn mobius_pointwise(phi: impl Fn(f64) -> f64, x: &BallPoint) -> Result<BallPoint> {
    let o = eval();
    let tangent: Vec<f64> = kernel::log0(&o, &x.0).into_iter().map(&phi).collect();
    check_finite(&tangent)?;
    Ok(BallPoint::trusted(kernel::exp0(&o, &tangent)))
}

/// [`mobius_pointwise`] for one of the backend's built-in functions.
pub fn mobius_pointwise_unary(phi: Unary, x: &BallPoint) -> BallPoint {
    BallPoint::trusted(kernel::mobius_pointwise(&eval(), phi, &x.0))
}

pub fn distance(x: &BallPoint, y: &BallPoint) -> Result<f64> {
    same_dim(x.dim(), y.dim())?;
    Ok(kernel::distance(&eval(), &x.0, &y.0))
}

pub fn exp0(v: &TangentVector) -> BallPoint {
    BallPoint::trusted(kernel::exp0(&eval(), &v.coords))
}

pub fn log0(y: &BallPoint) -> TangentVector {
    let coords = kernel::log0(&eval(), &y.0);
    TangentVector {
        coords,
        base: BallPoint::origin(y.dim()),
    }
}

/// Exponential map at `x`; the base point of `v` is ignored in favour of `x`.
pub fn exp_x(x: &BallPoint, v: &TangentVector) -> Result<BallPoint> {
    same_dim(x.dim(), v.dim())?;
    Ok(BallPoint::trusted(kernel::exp_x(&eval(), &x.0, &v.coords)))
}

pub fn log_x(x: &BallPoint, y: &BallPoint) -> Result<TangentVector> {
    same_dim(x.dim(), y.dim())?;
    let coords = kernel::log_x(&eval(), &x.0, &y.0);
    Ok(TangentVector {
        coords,
        base: x.clone(),
    })
}

pub fn parallel_transport_from_origin(x: &BallPoint, v: &TangentVector) -> Result<TangentVector> {
    same_dim(x.dim(), v.dim())?;
    let coords = kernel::parallel_transport_from_origin(&eval(), &x.0, &v.coords);
    Ok(TangentVector {
        coords,
        base: x.clone(),
    })
}

pub fn mobius_midpoint(points: &[BallPoint], weights: &[f64]) -> Result<BallPoint> {
    if let Some(first) = points.first() {
        for p in points {
            same_dim(first.dim(), p.dim())?;
        }
    }
    let coords: Vec<Vec<f64>> = points.iter().map(|p| p.0.clone()).collect();
    kernel::mobius_midpoint(&eval(), &coords, weights).map(BallPoint::trusted)
}

pub fn safe_tanh(t: f64) -> f64 {
    Unary::Tanh.value(t, &StabilityConfig::default())
}

pub fn safe_atanh(t: f64) -> f64 {
    Unary::Atanh.value(t, &StabilityConfig::default())
}
