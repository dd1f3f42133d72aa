use rand::Rng;

use super::{add_bias, add_matrix, add_point_table, check_dim, SpaceTag};
use crate::backend::{Ops, Unary};
use crate::error::{Error, Result};
use crate::geometry::kernel;
use crate::params::{Bound, Manifold, ParamId, ParamStore};

/// Distance-based attention.
///
/// Each state is enriched with a position embedding, `rᵢ = xᵢ ⊕ pᵢ`, mapped
/// to a query and a key, and weighted by `softmax(−β d(qᵢ, kᵢ))`. The output
/// is the weighted Möbius midpoint of the `rᵢ` (their weighted mean in
/// Euclidean space, where `d` is the Euclidean distance).
#[derive(Debug, Clone, PartialEq)]
pub struct Attention {
    pub space: SpaceTag,
    pub wq: ParamId,
    pub wk: ParamId,
    pub bq: ParamId,
    pub bk: ParamId,
    pub beta: ParamId,
    pub positions: ParamId,
    pub dim: usize,
    pub num_positions: usize,
}

pub struct Attended<O: Ops> {
    pub output: O::V,
    pub weights: Vec<O::S>,
}

impl Attention {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        space: SpaceTag,
        dim: usize,
        num_positions: usize,
    ) -> Self {
        Self {
            space,
            wq: add_matrix(store, rng, format!("{name}.wq"), dim, dim),
            wk: add_matrix(store, rng, format!("{name}.wk"), dim, dim),
            bq: add_bias(store, space, format!("{name}.bq"), dim),
            bk: add_bias(store, space, format!("{name}.bk"), dim),
            beta: store.add(format!("{name}.beta"), Manifold::Euclidean, 1, 1, vec![1.0]),
            positions: add_point_table(store, rng, space, format!("{name}.positions"), num_positions, dim),
            dim,
            num_positions,
        }
    }

    /// Attention over `states` using positions `0, 1, …`.
    pub fn forward<O: Ops>(&self, o: &O, p: &Bound<O>, states: &[O::V]) -> Result<Attended<O>> {
        let positions: Vec<usize> = (0..states.len()).collect();
        self.forward_at(o, p, states, &positions, None)
    }

    /// Attention with explicit position-table rows; `mask[i] = false` gives
    /// state `i` zero weight.
    pub fn forward_at<O: Ops>(
        &self,
        o: &O,
        p: &Bound<O>,
        states: &[O::V],
        positions: &[usize],
        mask: Option<&[bool]>,
    ) -> Result<Attended<O>> {
        if states.is_empty() {
            return Err(Error::InvalidArgument("attention over an empty sequence".into()));
        }
        if positions.len() != states.len() {
            return Err(Error::dims(states.len(), positions.len()));
        }
        if let Some(m) = mask {
            if m.len() != states.len() {
                return Err(Error::dims(states.len(), m.len()));
            }
        }
        let (wq, wk) = (p.mat(self.wq), p.mat(self.wk));
        let (bq, bk) = (p.vec(o, self.bq), p.vec(o, self.bk));
        let beta = o.component(&p.vec(o, self.beta), 0);
        let hyp = self.space.is_hyperbolic();

        let mut enriched = Vec::with_capacity(states.len());
        let mut scores = Vec::with_capacity(states.len());
        for (x, &pos) in states.iter().zip(positions) {
            check_dim(o, x, self.dim)?;
            if pos >= self.num_positions {
                return Err(Error::InvalidArgument(format!(
                    "position {pos} outside a table of {}",
                    self.num_positions
                )));
            }
            let pe = p.row(o, self.positions, pos);
            let (r, d) = if hyp {
                let r = kernel::mobius_add(o, x, &pe);
                let q = kernel::mobius_add(o, &kernel::mobius_matvec(o, wq, &r), &bq);
                let k = kernel::mobius_add(o, &kernel::mobius_matvec(o, wk, &r), &bk);
                let d = kernel::distance(o, &q, &k);
                (r, d)
            } else {
                let r = o.vadd(x, &pe);
                let q = o.vadd(&o.matvec(wq, &r), &bq);
                let k = o.vadd(&o.matvec(wk, &r), &bk);
                let d = o.norm(&o.vsub(&q, &k));
                (r, d)
            };
            scores.push(o.neg(&o.mul(&beta, &d)));
            enriched.push(r);
        }
        let weights = softmax(o, &scores, mask)?;
        let output = if hyp {
            kernel::mobius_midpoint(o, &enriched, &weights)?
        } else {
            let mut acc = o.scale(&enriched[0], &weights[0]);
            for (r, w) in enriched.iter().zip(&weights).skip(1) {
                acc = o.vadd(&acc, &o.scale(r, w));
            }
            acc
        };
        Ok(Attended { output, weights })
    }
}

/// Softmax over the unmasked scores; masked entries get weight zero.
pub fn softmax<O: Ops>(o: &O, scores: &[O::S], mask: Option<&[bool]>) -> Result<Vec<O::S>> {
    let keep = |i: usize| mask.is_none_or(|m| m[i]);
    let max = (0..scores.len())
        .filter(|&i| keep(i))
        .map(|i| o.val(&scores[i]))
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::InvalidArgument("every attention position is masked".into()));
    }
    let shift = o.lit(max);
    let exps: Vec<Option<O::S>> = scores
        .iter()
        .enumerate()
        .map(|(i, s)| keep(i).then(|| o.unary(Unary::Exp, &o.sub(s, &shift))))
        .collect();
    let mut total: Option<O::S> = None;
    for e in exps.iter().flatten() {
        total = Some(match total {
            None => e.clone(),
            Some(t) => o.add(&t, e),
        });
    }
    let inv = o.unary(Unary::Recip, &total.expect("at least one unmasked score"));
    Ok(exps
        .into_iter()
        .map(|e| match e {
            Some(e) => o.mul(&e, &inv),
            None => o.lit(0.0),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{close, eval, random_point, rng};

    fn layer(space: SpaceTag, seed: u64) -> (ParamStore, Attention) {
        let mut store = ParamStore::new();
        let mut r = rng(seed);
        let att = Attention::new(&mut store, &mut r, "att", space, 3, 8);
        for id in [att.bq, att.bk] {
            store.get_mut(id).data = random_point(&mut r, 3, 0.5);
        }
        (store, att)
    }

    #[test]
    fn single_state_gets_full_weight() {
        let o = eval();
        let (store, att) = layer(SpaceTag::Hyperbolic, 0);
        let p = store.bind(&o);
        let x = vec![0.2, -0.4, 0.1];
        let out = att.forward(&o, &p, &[x.clone()]).unwrap();
        assert_eq!(out.weights, vec![1.0]);
        let r = kernel::mobius_add(&o, &x, &store.get(att.positions).row(0).to_vec());
        assert!(close(&out.output, &r, 1e-12));
    }

    #[test]
    fn zero_beta_is_uniform() {
        let o = eval();
        let (mut store, att) = layer(SpaceTag::Hyperbolic, 1);
        store.get_mut(att.beta).data = vec![0.0];
        let mut r = rng(9);
        let xs: Vec<Vec<f64>> = (0..4).map(|_| random_point(&mut r, 3, 0.9)).collect();
        let out = att.forward(&o, &store.bind(&o), &xs).unwrap();
        assert!(out.weights.iter().all(|w| (w - 0.25).abs() < 1e-15));
        let rs: Vec<Vec<f64>> = xs
            .iter()
            .enumerate()
            .map(|(i, x)| kernel::mobius_add(&o, x, &store.get(att.positions).row(i).to_vec()))
            .collect();
        let want = kernel::mobius_midpoint(&o, &rs, &[1.0; 4]).unwrap();
        assert!(close(&out.output, &want, 1e-12));
    }

    #[test]
    fn equal_distances_give_uniform_weights() {
        let o = eval();
        let (mut store, att) = layer(SpaceTag::Hyperbolic, 2);
        // identical queries and keys: every distance is zero
        let wq = store.get(att.wq).data.clone();
        store.get_mut(att.wk).data = wq;
        let bq = store.get(att.bq).data.clone();
        store.get_mut(att.bk).data = bq;
        let mut r = rng(3);
        let xs: Vec<Vec<f64>> = (0..5).map(|_| random_point(&mut r, 3, 0.9)).collect();
        let out = att.forward(&o, &store.bind(&o), &xs).unwrap();
        assert!(out.weights.iter().all(|w| (w - 0.2).abs() < 1e-15));
    }

    #[test]
    fn weights_form_a_distribution() {
        let o = eval();
        for space in SpaceTag::ALL {
            let (store, att) = layer(space, 4);
            let p = store.bind(&o);
            let mut r = rng(5);
            for _ in 0..100 {
                let xs: Vec<Vec<f64>> = (0..6).map(|_| random_point(&mut r, 3, 0.9)).collect();
                let out = att.forward(&o, &p, &xs).unwrap();
                assert!(out.weights.iter().all(|&w| w >= 0.0));
                assert!((out.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                if space.is_hyperbolic() {
                    assert!(crate::backend::norm(&out.output) <= 1.0 - 1e-5 + 1e-12);
                }
            }
        }
    }

    #[test]
    fn masked_positions_get_zero_weight() {
        let o = eval();
        let (store, att) = layer(SpaceTag::Hyperbolic, 6);
        let p = store.bind(&o);
        let mut r = rng(7);
        let xs: Vec<Vec<f64>> = (0..3).map(|_| random_point(&mut r, 3, 0.9)).collect();
        let out = att.forward_at(&o, &p, &xs, &[0, 1, 2], Some(&[true, false, true])).unwrap();
        assert_eq!(out.weights[1], 0.0);
        assert!((out.weights[0] + out.weights[2] - 1.0).abs() < 1e-15);
        assert!(att.forward_at(&o, &p, &xs, &[0, 1, 2], Some(&[false; 3])).is_err());
        assert!(att.forward_at(&o, &p, &xs, &[0, 1, 8], None).is_err());
        assert!(att.forward(&o, &p, &[]).is_err());
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let o = eval();
        let s = [0.3, -1.2, 2.0, 0.7];
        let shifted: Vec<f64> = s.iter().map(|v| v + 123.0).collect();
        let a = softmax(&o, &s, None).unwrap();
        let b = softmax(&o, &shifted, None).unwrap();
        assert!(close(&a, &b, 1e-15));
        let argmax = |v: &[f64]| v.iter().enumerate().max_by(|x, y| x.1.total_cmp(y.1)).unwrap().0;
        assert_eq!(argmax(&a), argmax(&b));
    }

    #[test]
    fn euclidean_attention_is_weighted_mean() {
        let o = eval();
        let (mut store, att) = layer(SpaceTag::Euclidean, 8);
        store.get_mut(att.beta).data = vec![0.0];
        let xs = vec![vec![1.0, 0.0, 0.0], vec![0.0, 3.0, 0.0]];
        let out = att.forward(&o, &store.bind(&o), &xs).unwrap();
        let pos = store.get(att.positions);
        let want: Vec<f64> = (0..3).map(|j| 0.5 * (xs[0][j] + pos.row(0)[j] + xs[1][j] + pos.row(1)[j])).collect();
        assert!(close(&out.output, &want, 1e-15));
    }
}
