//! Fixtures shared by the benchmarks.

use rand::Rng;

use hypertyping_core::data::{Granularity, LabelInventory};
use hypertyping_core::model::{ComponentSpaceConfig, EncodedExample, Model, OOV};
use hypertyping_core::{config::RunConfig, Matrix};

/// A point with uniformly random direction and norm below `max_norm`.
pub fn point<R: Rng>(rng: &mut R, dim: usize, max_norm: f64) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    let r = rng.gen_range(0.0..max_norm);
    v.iter().map(|x| x * r / n).collect()
}

pub fn matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Matrix {
    let s = (6.0 / (rows + cols) as f64).sqrt();
    Matrix::new(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-s..s)).collect())
}

/// A base-preset model over a 50-word, 30-label problem and one example
/// with a 3-token mention in a 20-token sentence.
pub fn model_and_example<R: Rng>(rng: &mut R, spaces: ComponentSpaceConfig) -> (Model, EncodedExample, LabelInventory) {
    let (vocab, word_dim, labels) = (50, 50, 30);
    let mut cfg = RunConfig::default();
    cfg.spaces = spaces;
    let words: Vec<Vec<f64>> = (0..vocab).map(|_| point(rng, word_dim, 0.8)).collect();
    let model_cfg = cfg.model_config(word_dim, labels, vocab, 40);
    let model = Model::new(model_cfg, Matrix::from_rows(&words), 7).expect("valid model");
    let grans = [Granularity::Coarse, Granularity::Fine, Granularity::Ultra];
    let inventory = LabelInventory::new((0..labels).map(|i| (format!("l{i}"), grans[i % 3]))).expect("unique labels");
    let mut context: Vec<usize> = (0..20).map(|_| rng.gen_range(0..vocab)).collect();
    context[5] = OOV;
    let ex = EncodedExample {
        mention: context[8..11].to_vec(),
        chars: (0..14).map(|_| rng.gen_range(0..40)).collect(),
        context,
        span: (8, 11),
        labels: vec![0, 4, 11],
    };
    (model, ex, inventory)
}
