use rand::Rng;

use super::{activate, add_bias, add_matrix, check_dim, SpaceTag};
use crate::backend::{Ops, Unary};
use crate::error::{Error, Result};
use crate::geometry::kernel;
use crate::params::{Bound, ParamId, ParamStore};

/// Feed-forward layer: `φ⊗(M ⊗ x ⊕ b)` or `φ(Mx + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub space: SpaceTag,
    pub weight: ParamId,
    pub bias: ParamId,
    pub activation: Option<Unary>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        space: SpaceTag,
        in_dim: usize,
        out_dim: usize,
        activation: Option<Unary>,
    ) -> Self {
        Self {
            space,
            weight: add_matrix(store, rng, format!("{name}.weight"), out_dim, in_dim),
            bias: add_bias(store, space, format!("{name}.bias"), out_dim),
            activation,
            in_dim,
            out_dim,
        }
    }

    pub fn forward<O: Ops>(&self, o: &O, p: &Bound<O>, x: &O::V) -> Result<O::V> {
        check_dim(o, x, self.in_dim)?;
        let m = p.mat(self.weight);
        let b = p.vec(o, self.bias);
        let pre = match self.space {
            SpaceTag::Hyperbolic => kernel::mobius_add(o, &kernel::mobius_matvec(o, m, x), &b),
            SpaceTag::Euclidean => o.vadd(&o.matvec(m, x), &b),
        };
        Ok(activate(o, self.space, self.activation, pre))
    }
}

/// Generalised concatenation `M₁ ⊗ x₁ ⊕ … ⊕ Mₙ ⊗ xₙ ⊕ b`, associated left
/// to right; in Euclidean space `Σ Mᵢ xᵢ + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Concat {
    pub space: SpaceTag,
    pub mats: Vec<ParamId>,
    pub bias: ParamId,
    pub in_dims: Vec<usize>,
    pub out_dim: usize,
}

impl Concat {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        space: SpaceTag,
        in_dims: &[usize],
        out_dim: usize,
    ) -> Self {
        assert!(!in_dims.is_empty(), "concatenation needs at least one input");
        let mats = in_dims
            .iter()
            .enumerate()
            .map(|(i, &d)| add_matrix(store, rng, format!("{name}.m{}", i + 1), out_dim, d))
            .collect();
        Self {
            space,
            mats,
            bias: add_bias(store, space, format!("{name}.bias"), out_dim),
            in_dims: in_dims.to_vec(),
            out_dim,
        }
    }

    pub fn forward<O: Ops>(&self, o: &O, p: &Bound<O>, parts: &[O::V]) -> Result<O::V> {
        if parts.len() != self.mats.len() {
            return Err(Error::dims(self.mats.len(), parts.len()));
        }
        let mut acc: Option<O::V> = None;
        for ((x, &m), &d) in parts.iter().zip(&self.mats).zip(&self.in_dims) {
            check_dim(o, x, d)?;
            let m = p.mat(m);
            acc = Some(match (self.space, acc) {
                (SpaceTag::Hyperbolic, None) => kernel::mobius_matvec(o, m, x),
                (SpaceTag::Hyperbolic, Some(a)) => kernel::mobius_add(o, &a, &kernel::mobius_matvec(o, m, x)),
                (SpaceTag::Euclidean, None) => o.matvec(m, x),
                (SpaceTag::Euclidean, Some(a)) => o.vadd(&a, &o.matvec(m, x)),
            });
        }
        let acc = acc.expect("at least one part");
        let b = p.vec(o, self.bias);
        Ok(match self.space {
            SpaceTag::Hyperbolic => kernel::mobius_add(o, &acc, &b),
            SpaceTag::Euclidean => o.vadd(&acc, &b),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::Matrix;
    use crate::testutil::{close, eval, random_point, rng};

    fn set(store: &mut ParamStore, id: ParamId, data: Vec<f64>) {
        store.get_mut(id).data = data;
    }

    #[test]
    fn identity_layer_is_identity() {
        let mut store = ParamStore::new();
        let mut r = rng(0);
        let l = Linear::new(&mut store, &mut r, "f", SpaceTag::Hyperbolic, 3, 3, None);
        set(&mut store, l.weight, Matrix::identity(3).data().to_vec());
        let o = eval();
        let x = vec![0.2, -0.5, 0.1];
        let y = l.forward(&o, &store.bind(&o), &x).unwrap();
        assert!(close(&x, &y, 1e-12));

        let l = Linear::new(&mut store, &mut r, "g", SpaceTag::Hyperbolic, 3, 2, Some(Unary::Tanh));
        let y = l.forward(&o, &store.bind(&o), &vec![0.0; 3]).unwrap();
        assert_eq!(y, vec![0.0; 2]);
    }

    #[test]
    fn ffnn_matches_composed_kernels() {
        let o = eval();
        let mut r = rng(1);
        for _ in 0..100 {
            let mut store = ParamStore::new();
            let l = Linear::new(&mut store, &mut r, "f", SpaceTag::Hyperbolic, 5, 4, Some(Unary::Tanh));
            set(&mut store, l.bias, random_point(&mut r, 4, 0.9));
            let x = random_point(&mut r, 5, 0.9);
            let got = l.forward(&o, &store.bind(&o), &x).unwrap();
            let m = store.get(l.weight).as_matrix();
            let b = store.get(l.bias).data.clone();
            let want = kernel::mobius_pointwise(
                &o,
                Unary::Tanh,
                &kernel::mobius_add(&o, &kernel::mobius_matvec(&o, &m, &x), &b),
            );
            assert!(close(&got, &want, 1e-12));
        }
    }

    #[test]
    fn euclidean_ffnn_is_affine() {
        let o = eval();
        let mut r = rng(2);
        let mut store = ParamStore::new();
        let l = Linear::new(&mut store, &mut r, "f", SpaceTag::Euclidean, 2, 2, Some(Unary::Tanh));
        set(&mut store, l.weight, vec![1.0, 2.0, 0.0, -1.0]);
        set(&mut store, l.bias, vec![0.5, 0.0]);
        let y = l.forward(&o, &store.bind(&o), &vec![1.0, 1.0]).unwrap();
        assert!(close(&y, &[3.5f64.tanh(), (-1.0f64).tanh()], 1e-15));
    }

    #[test]
    fn concat_matches_composed_kernels() {
        let o = eval();
        let mut r = rng(3);
        for _ in 0..100 {
            let mut store = ParamStore::new();
            let c = Concat::new(&mut store, &mut r, "c", SpaceTag::Hyperbolic, &[3, 2], 4);
            set(&mut store, c.bias, random_point(&mut r, 4, 0.9));
            let x = random_point(&mut r, 3, 0.9);
            let y = random_point(&mut r, 2, 0.9);
            let got = c.forward(&o, &store.bind(&o), &[x.clone(), y.clone()]).unwrap();
            let m1 = store.get(c.mats[0]).as_matrix();
            let m2 = store.get(c.mats[1]).as_matrix();
            let b = store.get(c.bias).data.clone();
            let want = kernel::mobius_add(
                &o,
                &kernel::mobius_add(&o, &kernel::mobius_matvec(&o, &m1, &x), &kernel::mobius_matvec(&o, &m2, &y)),
                &b,
            );
            assert!(close(&got, &want, 1e-12));
        }
    }

    #[test]
    fn concat_limits() {
        let o = eval();
        let mut r = rng(4);
        let mut store = ParamStore::new();
        let c = Concat::new(&mut store, &mut r, "c", SpaceTag::Hyperbolic, &[2, 3], 2);
        let zero = c.forward(&o, &store.bind(&o), &[vec![0.0; 2], vec![0.0; 3]]).unwrap();
        assert_eq!(zero, vec![0.0; 2]);
        set(&mut store, c.mats[1], vec![0.0; 6]);
        let x = vec![0.4, -0.1];
        let got = c.forward(&o, &store.bind(&o), &[x.clone(), vec![0.2, 0.1, 0.3]]).unwrap();
        let want = kernel::mobius_matvec(&o, &store.get(c.mats[0]).as_matrix(), &x);
        assert!(close(&got, &want, 1e-12));
        assert!(c.forward(&o, &store.bind(&o), &[x.clone()]).is_err());
        assert!(c.forward(&o, &store.bind(&o), &[x.clone(), x]).is_err());
    }
}
