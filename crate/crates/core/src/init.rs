//! Parameter initialisers.

use rand::Rng;

use crate::backend::Eval;
use crate::geometry::{kernel, StabilityConfig};

/// Half-width of the uniform range used for embeddings and MLR points.
pub const SMALL_INIT: f64 = 1e-4;

/// Glorot-uniform values for a `rows × cols` matrix.
pub fn glorot<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Vec<f64> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    (0..rows * cols).map(|_| rng.gen_range(-limit..=limit)).collect()
}

pub fn small_uniform<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-SMALL_INIT..=SMALL_INIT)).collect()
}

/// Maps every row of a row-major table through `exp₀`.
pub fn exp0_rows(data: &mut [f64], cols: usize) {
    let o = Eval::new(StabilityConfig::default());
    for row in data.chunks_mut(cols) {
        let y = kernel::exp0(&o, &row.to_vec());
        row.copy_from_slice(&y);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn glorot_respects_limit() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = glorot(&mut rng, 10, 20);
        let limit = (6.0f64 / 30.0).sqrt();
        assert!(w.iter().all(|v| v.abs() <= limit));
        assert!(w.iter().any(|v| v.abs() > limit / 2.0));
    }

    #[test]
    fn exp0_rows_stays_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let d = 20;
        let mut t = small_uniform(&mut rng, 5 * d);
        exp0_rows(&mut t, d);
        let bound = (SMALL_INIT * (d as f64).sqrt()).tanh();
        for row in t.chunks(d) {
            assert!(crate::backend::norm(row) <= bound);
        }
    }
}
