//! Network components in either geometry.
//!
//! Every layer carries a [`SpaceTag`]. In the hyperbolic space inputs,
//! outputs and biases are ball points and the layer is built from Möbius
//! operations; in the Euclidean space the same parameters are combined with
//! ordinary vector arithmetic. Layers are generic over [`Ops`], so the same
//! code evaluates plain values and records a tape.

mod attention;
mod linear;
mod mlr;
mod recurrent;

pub use attention::{Attended, Attention};
pub use linear::{Concat, Linear};
pub use mlr::{eu_mlr_logit, multilabel_predict, Mlr};
pub use recurrent::{BiGru, GruCell, RnnCell};

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::backend::{Ops, Unary};
use crate::error::{Error, Result};
use crate::geometry::kernel;
use crate::init;
use crate::params::{Manifold, ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpaceTag {
    Hyperbolic,
    Euclidean,
}

impl SpaceTag {
    pub const ALL: [SpaceTag; 2] = [SpaceTag::Hyperbolic, SpaceTag::Euclidean];

    pub fn as_str(self) -> &'static str {
        match self {
            SpaceTag::Hyperbolic => "hyperbolic",
            SpaceTag::Euclidean => "euclidean",
        }
    }

    pub fn is_hyperbolic(self) -> bool {
        self == SpaceTag::Hyperbolic
    }

    /// Manifold of point-valued parameters (biases, embeddings) in this space.
    pub fn point_manifold(self) -> Manifold {
        match self {
            SpaceTag::Hyperbolic => Manifold::Ball,
            SpaceTag::Euclidean => Manifold::Euclidean,
        }
    }
}

impl fmt::Display for SpaceTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SpaceTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "hyperbolic" | "hy" => Ok(SpaceTag::Hyperbolic),
            "euclidean" | "eu" => Ok(SpaceTag::Euclidean),
            other => Err(Error::InvalidArgument(format!("unknown space `{other}`"))),
        }
    }
}

/// Moves a ball point into the tangent space at the origin.
pub fn to_euclidean<O: Ops>(o: &O, x: &O::V) -> O::V {
    kernel::log0(o, x)
}

/// Moves a tangent vector at the origin onto the ball.
pub fn to_hyperbolic<O: Ops>(o: &O, v: &O::V) -> O::V {
    kernel::exp0(o, v)
}

/// Carries `x` from space `from` to space `to`; a no-op when they agree.
pub fn convert<O: Ops>(o: &O, x: &O::V, from: SpaceTag, to: SpaceTag) -> O::V {
    match (from, to) {
        (SpaceTag::Hyperbolic, SpaceTag::Euclidean) => to_euclidean(o, x),
        (SpaceTag::Euclidean, SpaceTag::Hyperbolic) => to_hyperbolic(o, x),
        _ => x.clone(),
    }
}

/// Inverted dropout with an explicit keep mask. Hyperbolic inputs are
/// dropped in the tangent space at the origin so the result stays a point.
pub fn dropout<O: Ops>(o: &O, space: SpaceTag, x: &O::V, keep: &[bool], rate: f64) -> Result<O::V> {
    if keep.len() != o.dim(x) {
        return Err(Error::dims(o.dim(x), keep.len()));
    }
    let scale = 1.0 / (1.0 - rate);
    let mask: Vec<f64> = keep.iter().map(|&k| if k { scale } else { 0.0 }).collect();
    let mask = o.vector(&mask);
    Ok(match space {
        SpaceTag::Hyperbolic => kernel::exp0(o, &o.hadamard(&mask, &kernel::log0(o, x))),
        SpaceTag::Euclidean => o.hadamard(&mask, x),
    })
}

/// Samples a keep mask with drop probability `rate`.
pub fn keep_mask<R: Rng + ?Sized>(rng: &mut R, n: usize, rate: f64) -> Vec<bool> {
    (0..n).map(|_| rate <= 0.0 || rng.gen::<f64>() >= rate).collect()
}

fn check_dim<O: Ops>(o: &O, v: &O::V, expected: usize) -> Result<()> {
    let found = o.dim(v);
    if found == expected {
        Ok(())
    } else {
        Err(Error::dims(expected, found))
    }
}

fn add_matrix<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, name: String, rows: usize, cols: usize) -> ParamId {
    let data = init::glorot(rng, rows, cols);
    store.add(name, Manifold::Euclidean, rows, cols, data)
}

fn add_bias(store: &mut ParamStore, space: SpaceTag, name: String, n: usize) -> ParamId {
    store.add(name, space.point_manifold(), 1, n, vec![0.0; n])
}

/// A table of `rows` small points: `U(±1e-4)`, mapped with `exp₀` in the
/// hyperbolic space.
pub fn add_point_table<R: Rng + ?Sized>(
    store: &mut ParamStore,
    rng: &mut R,
    space: SpaceTag,
    name: String,
    rows: usize,
    cols: usize,
) -> ParamId {
    let mut data = init::small_uniform(rng, rows * cols);
    if space.is_hyperbolic() {
        init::exp0_rows(&mut data, cols);
    }
    store.add(name, space.point_manifold(), rows, cols, data)
}

// φ applied in the layer's space; `None` is the identity.
fn activate<O: Ops>(o: &O, space: SpaceTag, act: Option<Unary>, x: O::V) -> O::V {
    match (act, space) {
        (None, _) => x,
        (Some(f), SpaceTag::Hyperbolic) => kernel::mobius_pointwise(o, f, &x),
        (Some(f), SpaceTag::Euclidean) => o.vmap(f, &x),
    }
}
