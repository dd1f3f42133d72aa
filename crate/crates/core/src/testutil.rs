//! Helpers shared by the unit tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backend::Eval;
use crate::geometry::StabilityConfig;

pub fn eval() -> Eval {
    Eval::new(StabilityConfig::default())
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A point with uniformly random direction and norm in `[0, max_norm]`.
pub fn random_point<R: Rng>(rng: &mut R, n: usize, max_norm: f64) -> Vec<f64> {
    let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let norm = crate::backend::norm(&v).max(1e-12);
    let r = rng.gen_range(0.0..max_norm);
    v.iter().map(|x| x * r / norm).collect()
}

pub fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}
