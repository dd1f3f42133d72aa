//! Named, manifold-tagged parameter tensors.

use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::backend::{Eval, Matrix, Ops};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Where a parameter lives, which decides how the optimizer moves it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Manifold {
    Euclidean,
    /// Each row is a point of the Poincaré ball.
    Ball,
}

impl Manifold {
    pub fn as_str(self) -> &'static str {
        match self {
            Manifold::Euclidean => "euclidean",
            Manifold::Ball => "ball",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub manifold: Manifold,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Parameter {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_matrix(&self) -> Matrix {
        Matrix::new(self.rows, self.cols, self.data.clone())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, manifold: Manifold, rows: usize, cols: usize, data: Vec<f64>) -> ParamId {
        assert_eq!(rows * cols, data.len(), "parameter data does not match its shape");
        let name = name.into();
        debug_assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        self.params.push(Parameter {
            name,
            manifold,
            rows,
            cols,
            data,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    /// Replaces every tensor's values, checking names and shapes agree.
    pub fn load_values(&mut self, other: &ParamStore) -> Result<()> {
        if other.len() != self.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {}",
                self.len(),
                other.len()
            )));
        }
        for (mine, theirs) in self.params.iter_mut().zip(&other.params) {
            if mine.name != theirs.name || mine.rows != theirs.rows || mine.cols != theirs.cols || mine.manifold != theirs.manifold {
                return Err(Error::Checkpoint(format!(
                    "parameter `{}` {}x{} does not match `{}` {}x{}",
                    mine.name, mine.rows, mine.cols, theirs.name, theirs.rows, theirs.cols
                )));
            }
            mine.data.clone_from(&theirs.data);
        }
        Ok(())
    }

    pub fn bind<O: Bind>(&self, o: &O) -> Bound<O> {
        Bound {
            mats: self.iter().map(|(id, p)| o.bind(id, p)).collect(),
        }
    }
}

/// Backends that can expose a stored parameter as a matrix handle.
pub trait Bind: Ops {
    fn bind(&self, id: ParamId, p: &Parameter) -> Self::M;
}

impl Bind for Eval {
    fn bind(&self, _id: ParamId, p: &Parameter) -> Matrix {
        p.as_matrix()
    }
}

impl Bind for Tape {
    fn bind(&self, id: ParamId, p: &Parameter) -> Self::M {
        self.param(id, &p.data, p.cols)
    }
}

/// Parameters of a store bound to one backend.
pub struct Bound<O: Ops> {
    mats: Vec<O::M>,
}

impl<O: Ops> Bound<O> {
    /// Wraps handles listed in parameter-id order.
    pub fn from_handles(mats: Vec<O::M>) -> Self {
        Self { mats }
    }

    pub fn mat(&self, id: ParamId) -> &O::M {
        &self.mats[id.0]
    }

    pub fn vec(&self, o: &O, id: ParamId) -> O::V {
        o.as_vector(&self.mats[id.0])
    }

    pub fn row(&self, o: &O, id: ParamId, i: usize) -> O::V {
        o.row(&self.mats[id.0], i)
    }
}
