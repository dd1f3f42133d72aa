//! Fully hyperbolic neural classification in the Poincaré ball.
//!
//! The crate is organised bottom-up: [`geometry`] holds the ball
//! operations, [`autodiff`] differentiates them, [`layers`] builds
//! hyperbolic and Euclidean network components, [`model`] assembles the
//! entity-typing classifier and [`optim`] trains it with (Riemannian) Adam.

pub mod autodiff;
pub mod data;
pub mod backend;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod geometry;
pub mod gradcheck;
pub mod init;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod synthetic;
pub mod train;
pub mod workflow;

#[cfg(test)]
mod testutil;

pub use backend::{Eval, Matrix, Ops, Unary};
pub use error::{Error, Result};
pub use geometry::{BallPoint, StabilityConfig, TangentVector};
pub use layers::SpaceTag;
pub use params::{Manifold, ParamId, ParamStore};
