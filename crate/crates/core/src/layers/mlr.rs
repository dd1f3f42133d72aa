use rand::Rng;

use super::{add_matrix, add_point_table, check_dim, SpaceTag};
use crate::backend::Ops;
use crate::error::Result;
use crate::geometry::kernel;
use crate::params::{Bound, ParamId, ParamStore};

/// Multinomial logistic regression with one hyperplane per class, given by a
/// point `p_k` and a normal `a′_k` in the tangent space at the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlr {
    pub space: SpaceTag,
    /// `K × m`; rows are ball points in the hyperbolic space.
    pub p: ParamId,
    /// `K × m`, always Euclidean.
    pub a: ParamId,
    pub classes: usize,
    pub dim: usize,
}

impl Mlr {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        space: SpaceTag,
        dim: usize,
        classes: usize,
    ) -> Self {
        Self {
            space,
            p: add_point_table(store, rng, space, format!("{name}.p"), classes, dim),
            a: add_matrix(store, rng, format!("{name}.a"), classes, dim),
            classes,
            dim,
        }
    }

    pub fn logits<O: Ops>(&self, o: &O, params: &Bound<O>, x: &O::V) -> Result<O::V> {
        check_dim(o, x, self.dim)?;
        let logits: Vec<O::S> = (0..self.classes)
            .map(|k| {
                let p = params.row(o, self.p, k);
                let a = params.row(o, self.a, k);
                match self.space {
                    SpaceTag::Hyperbolic => kernel::mlr_logit(o, &p, &a, x),
                    SpaceTag::Euclidean => eu_mlr_logit(o, &p, &a, x),
                }
            })
            .collect();
        Ok(o.stack(&logits))
    }
}

/// `4⟨x − p, a⟩`.
pub fn eu_mlr_logit<O: Ops>(o: &O, p: &O::V, a: &O::V, x: &O::V) -> O::S {
    o.mul(&o.lit(4.0), &o.dot(&o.vsub(x, p), a))
}

/// Labels whose logit is strictly positive, i.e. whose sigmoid exceeds ½.
pub fn multilabel_predict(logits: &[f64]) -> Vec<usize> {
    logits
        .iter()
        .enumerate()
        .filter(|(_, &z)| z > 0.0)
        .map(|(k, _)| k)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{eval, random_point, rng};

    fn layer(space: SpaceTag) -> (ParamStore, Mlr) {
        let mut store = ParamStore::new();
        let m = Mlr::new(&mut store, &mut rng(0), "mlr", space, 3, 2);
        store.get_mut(m.p).data = vec![-0.25, 0.3, 0.05, 0.4, 0.1, -0.2];
        store.get_mut(m.a).data = vec![0.8, -0.6, 1.3, 0.2, 0.2, 0.5];
        (store, m)
    }

    #[test]
    fn matches_scripted_formula() {
        let o = eval();
        let (store, m) = layer(SpaceTag::Hyperbolic);
        let z = m.logits(&o, &store.bind(&o), &vec![0.1, -0.35, 0.2]).unwrap();
        assert!((z[0] - 4.073308884513748).abs() < 1e-10);
    }

    #[test]
    fn euclidean_matches_hand_formula() {
        let o = eval();
        let (store, m) = layer(SpaceTag::Euclidean);
        let z = m.logits(&o, &store.bind(&o), &vec![0.1, -0.35, 0.2]).unwrap();
        assert!((z[0] - 3.46).abs() < 1e-14);
        let z2 = eu_mlr_logit(&o, &vec![0.0; 2], &vec![2.0, 4.0], &vec![1.0, 1.0]);
        assert_eq!(z2, 2.0 * eu_mlr_logit(&o, &vec![0.0; 2], &vec![1.0, 2.0], &vec![1.0, 1.0]));
    }

    #[test]
    fn logit_vanishes_on_the_hyperplane_point() {
        let o = eval();
        for space in SpaceTag::ALL {
            let (store, m) = layer(space);
            let x = store.get(m.p).row(1).to_vec();
            let z = m.logits(&o, &store.bind(&o), &x).unwrap();
            assert!(z[1].abs() < 1e-14, "{space}: {}", z[1]);
        }
    }

    #[test]
    fn normal_flip_and_scale() {
        let o = eval();
        let mut r = rng(1);
        for _ in 0..100 {
            let p = random_point(&mut r, 4, 0.9);
            let x = random_point(&mut r, 4, 0.9);
            let a: Vec<f64> = (0..4).map(|_| rand::Rng::gen_range(&mut r, -2.0..2.0)).collect();
            let neg: Vec<f64> = a.iter().map(|v| -v).collect();
            let big: Vec<f64> = a.iter().map(|v| 3.7 * v).collect();
            let z = kernel::mlr_logit(&o, &p, &a, &x);
            assert!((kernel::mlr_logit(&o, &p, &neg, &x) + z).abs() < 1e-12);
            assert_eq!(kernel::mlr_logit(&o, &p, &big, &x).signum(), z.signum());
        }
    }

    #[test]
    fn prediction_threshold() {
        assert!(multilabel_predict(&[0.0, 0.0]).is_empty());
        assert_eq!(multilabel_predict(&[1.0, -1.0, 2.0]), vec![0, 2]);
        assert!(multilabel_predict(&[-0.1, -5.0]).is_empty());
    }
}
