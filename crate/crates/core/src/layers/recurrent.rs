use rand::Rng;

use super::{activate, add_bias, add_matrix, check_dim, Concat, SpaceTag};
use crate::backend::{Ops, Unary};
use crate::error::{Error, Result};
use crate::geometry::kernel;
use crate::params::{Bound, ParamId, ParamStore};

/// `h' = φ⊗(W ⊗ h ⊕ U ⊗ c ⊕ b)`, or `φ(Wh + Uc + b)` in Euclidean space.
#[derive(Debug, Clone, PartialEq)]
pub struct RnnCell {
    pub space: SpaceTag,
    pub w: ParamId,
    pub u: ParamId,
    pub b: ParamId,
    pub activation: Option<Unary>,
    pub in_dim: usize,
    pub hidden: usize,
}

impl RnnCell {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        space: SpaceTag,
        in_dim: usize,
        hidden: usize,
        activation: Option<Unary>,
    ) -> Self {
        Self {
            space,
            w: add_matrix(store, rng, format!("{name}.w"), hidden, hidden),
            u: add_matrix(store, rng, format!("{name}.u"), hidden, in_dim),
            b: add_bias(store, space, format!("{name}.b"), hidden),
            activation,
            in_dim,
            hidden,
        }
    }

    pub fn step<O: Ops>(&self, o: &O, p: &Bound<O>, h: &O::V, c: &O::V) -> Result<O::V> {
        check_dim(o, h, self.hidden)?;
        check_dim(o, c, self.in_dim)?;
        let (w, u, b) = (p.mat(self.w), p.mat(self.u), p.vec(o, self.b));
        let pre = affine(o, self.space, w, h, u, c, &b);
        Ok(activate(o, self.space, self.activation, pre))
    }

    /// States `h₁ … h_l` from the origin.
    pub fn run<O: Ops>(&self, o: &O, p: &Bound<O>, inputs: &[O::V]) -> Result<Vec<O::V>> {
        let mut h = o.zeros(self.hidden);
        let mut out = Vec::with_capacity(inputs.len());
        for c in inputs {
            h = self.step(o, p, &h, c)?;
            out.push(h.clone());
        }
        Ok(out)
    }
}

// (W ⊗ h ⊕ U ⊗ x) ⊕ b
fn affine<O: Ops>(o: &O, space: SpaceTag, w: &O::M, h: &O::V, u: &O::M, x: &O::V, b: &O::V) -> O::V {
    match space {
        SpaceTag::Hyperbolic => {
            let wh = kernel::mobius_matvec(o, w, h);
            let ux = kernel::mobius_matvec(o, u, x);
            kernel::mobius_add(o, &kernel::mobius_add(o, &wh, &ux), b)
        }
        SpaceTag::Euclidean => o.vadd(&o.vadd(&o.matvec(w, h), &o.matvec(u, x)), b),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GruCell {
    pub space: SpaceTag,
    pub wr: ParamId,
    pub ur: ParamId,
    pub br: ParamId,
    pub wz: ParamId,
    pub uz: ParamId,
    pub bz: ParamId,
    pub w: ParamId,
    pub u: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub hidden: usize,
}

impl GruCell {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        space: SpaceTag,
        in_dim: usize,
        hidden: usize,
    ) -> Self {
        let mut mat = |store: &mut ParamStore, s: &str, cols| add_matrix(store, rng, format!("{name}.{s}"), hidden, cols);
        let wr = mat(store, "wr", hidden);
        let ur = mat(store, "ur", in_dim);
        let wz = mat(store, "wz", hidden);
        let uz = mat(store, "uz", in_dim);
        let w = mat(store, "w", hidden);
        let u = mat(store, "u", in_dim);
        Self {
            space,
            wr,
            ur,
            br: add_bias(store, space, format!("{name}.br"), hidden),
            wz,
            uz,
            bz: add_bias(store, space, format!("{name}.bz"), hidden),
            w,
            u,
            b: add_bias(store, space, format!("{name}.b"), hidden),
            in_dim,
            hidden,
        }
    }

    fn gate<O: Ops>(&self, o: &O, p: &Bound<O>, w: ParamId, u: ParamId, b: ParamId, h: &O::V, x: &O::V) -> O::V {
        let pre = affine(o, self.space, p.mat(w), h, p.mat(u), x, &p.vec(o, b));
        let pre = match self.space {
            SpaceTag::Hyperbolic => kernel::log0(o, &pre),
            SpaceTag::Euclidean => pre,
        };
        o.vmap(Unary::Sigmoid, &pre)
    }

    /// Candidate state `tanh⊗((W diag(r)) ⊗ h ⊕ U ⊗ x ⊕ b)`.
    fn candidate<O: Ops>(&self, o: &O, p: &Bound<O>, r: &O::V, h: &O::V, x: &O::V) -> O::V {
        let (w, u, b) = (p.mat(self.w), p.mat(self.u), p.vec(o, self.b));
        match self.space {
            SpaceTag::Hyperbolic => {
                let wh = kernel::mobius_matvec_gated(o, w, r, h);
                let ux = kernel::mobius_matvec(o, u, x);
                let pre = kernel::mobius_add(o, &kernel::mobius_add(o, &wh, &ux), &b);
                kernel::mobius_pointwise(o, Unary::Tanh, &pre)
            }
            SpaceTag::Euclidean => {
                let pre = o.vadd(&o.vadd(&o.matvec(w, &o.hadamard(r, h)), &o.matvec(u, x)), &b);
                o.vmap(Unary::Tanh, &pre)
            }
        }
    }

    /// Update `h ⊕ diag(z) ⊗ (−h ⊕ h̃)`, or `h + z ⊙ (h̃ − h)`.
    pub fn combine<O: Ops>(&self, o: &O, h: &O::V, z: &O::V, candidate: &O::V) -> O::V {
        match self.space {
            SpaceTag::Hyperbolic => {
                let delta = kernel::mobius_add(o, &o.vneg(h), candidate);
                kernel::mobius_add(o, h, &kernel::mobius_diag_mul(o, z, &delta))
            }
            SpaceTag::Euclidean => o.vadd(h, &o.hadamard(z, &o.vsub(candidate, h))),
        }
    }

    pub fn step<O: Ops>(&self, o: &O, p: &Bound<O>, h: &O::V, x: &O::V) -> Result<O::V> {
        check_dim(o, h, self.hidden)?;
        check_dim(o, x, self.in_dim)?;
        let r = self.gate(o, p, self.wr, self.ur, self.br, h, x);
        let z = self.gate(o, p, self.wz, self.uz, self.bz, h, x);
        let cand = self.candidate(o, p, &r, h, x);
        Ok(self.combine(o, h, &z, &cand))
    }

    pub fn run<O: Ops>(&self, o: &O, p: &Bound<O>, inputs: &[O::V]) -> Result<Vec<O::V>> {
        let mut h = o.zeros(self.hidden);
        let mut out = Vec::with_capacity(inputs.len());
        for x in inputs {
            h = self.step(o, p, &h, x)?;
            out.push(h.clone());
        }
        Ok(out)
    }
}

/// Forward and backward GRUs whose per-token states are merged by a
/// two-input [`Concat`].
#[derive(Debug, Clone, PartialEq)]
pub struct BiGru {
    pub forward: GruCell,
    pub backward: GruCell,
    pub merge: Concat,
}

impl BiGru {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        space: SpaceTag,
        in_dim: usize,
        hidden: usize,
    ) -> Self {
        Self {
            forward: GruCell::new(store, rng, &format!("{name}.fwd"), space, in_dim, hidden),
            backward: GruCell::new(store, rng, &format!("{name}.bwd"), space, in_dim, hidden),
            merge: Concat::new(store, rng, &format!("{name}.merge"), space, &[hidden, hidden], 2 * hidden),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.merge.out_dim
    }

    /// Forward states and backward states, both aligned with the tokens.
    pub fn directional_states<O: Ops>(&self, o: &O, p: &Bound<O>, inputs: &[O::V]) -> Result<(Vec<O::V>, Vec<O::V>)> {
        if inputs.is_empty() {
            return Err(Error::InvalidArgument("empty input sequence".into()));
        }
        let fwd = self.forward.run(o, p, inputs)?;
        let reversed: Vec<O::V> = inputs.iter().rev().cloned().collect();
        let mut bwd = self.backward.run(o, p, &reversed)?;
        bwd.reverse();
        Ok((fwd, bwd))
    }

    pub fn forward<O: Ops>(&self, o: &O, p: &Bound<O>, inputs: &[O::V]) -> Result<Vec<O::V>> {
        let (fwd, bwd) = self.directional_states(o, p, inputs)?;
        fwd.into_iter()
            .zip(bwd)
            .map(|(f, b)| self.merge.forward(o, p, &[f, b]))
            .collect()
    }
}
