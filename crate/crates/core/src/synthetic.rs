//! Synthetic hierarchical typing benchmark.
//!
//! Labels form a balanced tree; every example's gold set is a leaf and all
//! of its ancestors. Each label has an anchor point in the ball: deeper
//! labels sit a fixed hyperbolic distance further out and children fan out
//! around their parent's direction in a cone that narrows with depth, as in
//! low-distortion tree embeddings. Word vectors are noisy copies of anchors,
//! stored as tangent vectors at the origin. The Euclidean model reads them
//! as they are, the hyperbolic one reads `exp₀` of them.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::backend::{self, Eval, Matrix};
use crate::geometry::kernel;
use crate::data::{EmbeddingSpace, EmbeddingTable, EpochSchedule, Granularity, LabelInventory};
use crate::error::{Error, Result};
use crate::geometry::StabilityConfig;
use crate::layers::SpaceTag;
use crate::metrics::score;
use crate::model::{ComponentSpaceConfig, EncodedExample, Model, ModelConfig};
use crate::optim::AdamConfig;
use crate::train::{evaluate_model, Splits, TrainSettings, Trainer};

/// A balanced tree of labels, stored level by level.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelTree {
    pub depth: usize,
    pub branching: usize,
    parent: Vec<Option<usize>>,
    level: Vec<usize>,
}

impl LabelTree {
    pub fn balanced(depth: usize, branching: usize) -> Result<Self> {
        if depth < 2 || branching < 2 {
            return Err(Error::InvalidArgument(format!(
                "tree needs depth >= 2 and branching >= 2, got {depth} and {branching}"
            )));
        }
        let mut parent = Vec::new();
        let mut level = Vec::new();
        let mut prev: Vec<Option<usize>> = vec![None];
        for l in 1..=depth {
            let mut cur = Vec::new();
            for &p in &prev {
                for _ in 0..branching {
                    cur.push(Some(parent.len()));
                    parent.push(p);
                    level.push(l);
                }
            }
            prev = cur;
        }
        Ok(Self {
            depth,
            branching,
            parent,
            level,
        })
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    /// Level of a label, 1 for the roots' children.
    pub fn level(&self, label: usize) -> usize {
        self.level[label]
    }

    pub fn parent(&self, label: usize) -> Option<usize> {
        self.parent[label]
    }

    pub fn labels_at(&self, level: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(move |&i| self.level[i] == level)
    }

    /// The label followed by its ancestors, deepest first.
    pub fn path(&self, label: usize) -> Vec<usize> {
        let mut out = vec![label];
        let mut cur = label;
        while let Some(p) = self.parent[cur] {
            out.push(p);
            cur = p;
        }
        out
    }

    /// Level 1 is coarse, the deepest level ultra, everything between fine.
    pub fn granularity(&self, label: usize) -> Granularity {
        match self.level[label] {
            1 => Granularity::Coarse,
            l if l == self.depth => Granularity::Ultra,
            _ => Granularity::Fine,
        }
    }

    pub fn inventory(&self) -> LabelInventory {
        LabelInventory::new((0..self.len()).map(|i| (format!("L{}.{}", self.level[i], i), self.granularity(i))))
            .expect("tree labels are unique")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SyntheticSpec {
    pub depth: usize,
    pub branching: usize,
    pub dim: usize,
    pub train: usize,
    pub test: usize,
    /// Hyperbolic distance from the origin gained per tree level.
    pub edge: f64,
    /// Angular spread of the level-1 labels around their parent direction;
    /// deeper levels shrink it by `e^(−edge)` per level so siblings stay
    /// at a similar hyperbolic distance.
    pub spread: f64,
    /// Standard deviation of the per-coordinate token noise, as hyperbolic
    /// displacement.
    pub noise: f64,
    pub mention_tokens: usize,
    /// Tokens on each side of the mention.
    pub context_tokens: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            depth: 4,
            branching: 3,
            dim: 4,
            train: 2000,
            test: 500,
            edge: 1.0,
            spread: 1.0,
            noise: 0.15,
            mention_tokens: 2,
            context_tokens: 2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub tree: LabelTree,
    pub inventory: LabelInventory,
    /// Tangent-space anchor of every label.
    pub anchors: Vec<Vec<f64>>,
    /// One token per row, tangent-space coordinates.
    pub embeddings: EmbeddingTable,
    pub train: Vec<EncodedExample>,
    pub test: Vec<EncodedExample>,
}

fn gaussian<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn unit<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    loop {
        let v = gaussian(rng, n);
        let norm = backend::norm(&v);
        if norm > 1e-9 {
            return v.iter().map(|x| x / norm).collect();
        }
    }
}

const CHARS: usize = 8;

pub fn generate(spec: &SyntheticSpec, seed: u64) -> Result<SyntheticData> {
    let tree = LabelTree::balanced(spec.depth, spec.branching)?;
    if spec.dim == 0 || spec.mention_tokens == 0 {
        return Err(Error::InvalidArgument("dim and mention_tokens must be positive".into()));
    }
    let rng = &mut ChaCha8Rng::seed_from_u64(seed);
    let o = Eval::default();
    let mut directions: Vec<Vec<f64>> = Vec::with_capacity(tree.len());
    for label in 0..tree.len() {
        let d = match tree.parent(label) {
            None => unit(rng, spec.dim),
            Some(p) => {
                let cone = spec.spread * (-spec.edge * (tree.level(label) - 1) as f64).exp();
                let u = unit(rng, spec.dim);
                let v: Vec<f64> = directions[p].iter().zip(&u).map(|(a, b)| a + cone * b).collect();
                let n = backend::norm(&v).max(1e-12);
                v.iter().map(|x| x / n).collect()
            }
        };
        directions.push(d);
    }
    // d(0, exp₀ v) = 2‖v‖
    let anchors: Vec<Vec<f64>> = (0..tree.len())
        .map(|l| {
            let r = 0.5 * spec.edge * tree.level(l) as f64;
            directions[l].iter().map(|x| x * r).collect()
        })
        .collect();
    let points: Vec<Vec<f64>> = anchors.iter().map(|a| kernel::exp0(&o, a)).collect();

    let leaves: Vec<usize> = tree.labels_at(spec.depth).collect();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    // Noise moves a hyperbolic distance of about `noise` per coordinate.
    let mut token = |rng: &mut ChaCha8Rng, label: usize| {
        let x = &points[label];
        let lambda = 2.0 / (1.0 - backend::norm_sq(x));
        let step: Vec<f64> = gaussian(rng, spec.dim).iter().map(|e| spec.noise * e / lambda).collect();
        let moved = kernel::project(&o, &kernel::exp_x(&o, x, &step));
        rows.push(kernel::log0(&o, &moved));
        rows.len() - 1
    };
    let mut make = |rng: &mut ChaCha8Rng| {
        let leaf = *leaves.choose(rng).expect("tree has leaves");
        let path = tree.path(leaf);
        let mention: Vec<usize> = (0..spec.mention_tokens).map(|_| token(rng, leaf)).collect();
        let side = |rng: &mut ChaCha8Rng, token: &mut dyn FnMut(&mut ChaCha8Rng, usize) -> usize| -> Vec<usize> {
            (0..spec.context_tokens)
                .map(|_| {
                    let a = path[rng.gen_range(1..path.len())];
                    token(rng, a)
                })
                .collect()
        };
        let left = side(rng, &mut token);
        let right = side(rng, &mut token);
        let mut context = left.clone();
        context.extend(&mention);
        context.extend(&right);
        let chars: Vec<usize> = (0..3).map(|_| rng.gen_range(0..CHARS)).collect();
        let mut labels = path;
        labels.sort_unstable();
        EncodedExample {
            span: (left.len(), left.len() + mention.len()),
            mention,
            chars,
            context,
            labels,
        }
    };
    let train: Vec<EncodedExample> = (0..spec.train).map(|_| make(rng)).collect();
    let test: Vec<EncodedExample> = (0..spec.test).map(|_| make(rng)).collect();
    let embeddings = EmbeddingTable::new(
        rows.into_iter().enumerate().map(|(i, v)| (format!("t{i}"), v)).collect(),
        EmbeddingSpace::Euclidean,
        1.0,
    )?;
    Ok(SyntheticData {
        inventory: tree.inventory(),
        tree,
        anchors,
        embeddings,
        train,
        test,
    })
}

/// Training budget shared by every model in a comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BenchSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub dropout_input: f64,
    pub dropout_concat: f64,
}

impl Default for BenchSettings {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_size: 32,
            lr: 0.01,
            dropout_input: 0.0,
            dropout_concat: 0.0,
        }
    }
}

/// Scores of one space configuration at one tree level, averaged over
/// seeds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelRow {
    pub space: String,
    pub level: usize,
    pub macro_p: f64,
    pub macro_r: f64,
    pub macro_f1: f64,
    pub micro_f1: f64,
    pub seeds: usize,
}

/// Builds and trains one model on `data`; returns per-level scores on the
/// test split, ordered by level.
pub fn train_and_score(
    data: &SyntheticData,
    spec: &SyntheticSpec,
    settings: &BenchSettings,
    spaces: ComponentSpaceConfig,
    seed: u64,
) -> Result<Vec<(f64, f64, f64, f64)>> {
    let stability = StabilityConfig::default();
    let config = ModelConfig {
        d_m: spec.dim,
        d_c: spec.dim,
        d_s: spec.dim,
        word_dim: spec.dim,
        num_classes: data.tree.len(),
        vocab_size: data.embeddings.len(),
        char_vocab_size: CHARS,
        mention_positions: spec.mention_tokens,
        max_relative: spec.context_tokens + spec.mention_tokens,
        dropout_input: settings.dropout_input,
        dropout_concat: settings.dropout_concat,
        spaces,
        stability,
    };
    let words: Matrix = data.embeddings.prepare(spaces.encoder, stability);
    let model = Model::new(config, words, seed)?;
    let adam = AdamConfig {
        lr: settings.lr,
        ..AdamConfig::default()
    };
    let mut trainer = Trainer::new(model, adam, data.inventory.clone(), seed)?;
    let splits = Splits {
        main: data.train.clone(),
        crowd: Vec::new(),
        dev: Vec::new(),
    };
    let train = TrainSettings {
        epochs: settings.epochs,
        batch_size: settings.batch_size,
        schedule: EpochSchedule {
            main_passes: 1,
            crowd_cycles: 0,
        },
        adam,
        seed,
    };
    for _ in 0..train.epochs {
        trainer.epoch(&splits, &train)?;
    }
    let ev = evaluate_model(&trainer.model, &data.test, &data.inventory)?;
    let golds: Vec<Vec<usize>> = data.test.iter().map(|e| e.labels.clone()).collect();
    Ok((1..=spec.depth)
        .map(|level| {
            let s = score(&ev.predictions, &golds, |l| data.tree.level(l) == level);
            (s.macro_avg.precision, s.macro_avg.recall, s.macro_avg.f1, s.micro_avg.f1)
        })
        .collect())
}

/// Runs every configuration in `spaces` on the same data for each seed and
/// returns per-level means, grouped by level then configuration.
pub fn run(spec: &SyntheticSpec, settings: &BenchSettings, spaces: &[(String, ComponentSpaceConfig)], seeds: &[u64]) -> Result<Vec<LevelRow>> {
    if seeds.is_empty() {
        return Err(Error::InvalidArgument("at least one seed is required".into()));
    }
    let mut sums = vec![vec![[0.0; 4]; spec.depth]; spaces.len()];
    for &seed in seeds {
        let data = generate(spec, seed)?;
        for (i, (_, cfg)) in spaces.iter().enumerate() {
            for (lvl, r) in train_and_score(&data, spec, settings, *cfg, seed)?.into_iter().enumerate() {
                for (acc, v) in sums[i][lvl].iter_mut().zip([r.0, r.1, r.2, r.3]) {
                    *acc += v;
                }
            }
        }
    }
    let n = seeds.len() as f64;
    let mut rows = Vec::new();
    for level in 1..=spec.depth {
        for (i, (name, _)) in spaces.iter().enumerate() {
            let s = sums[i][level - 1];
            rows.push(LevelRow {
                space: name.clone(),
                level,
                macro_p: s[0] / n,
                macro_r: s[1] / n,
                macro_f1: s[2] / n,
                micro_f1: s[3] / n,
                seeds: seeds.len(),
            });
        }
    }
    Ok(rows)
}

/// The two configurations compared by default.
pub fn default_spaces(hyperbolic: ComponentSpaceConfig) -> Vec<(String, ComponentSpaceConfig)> {
    vec![
        ("hyperbolic".to_string(), hyperbolic),
        ("euclidean".to_string(), ComponentSpaceConfig::uniform(SpaceTag::Euclidean)),
    ]
}

pub fn write_csv<W: Write>(w: W, rows: &[LevelRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    }
    out.flush()?;
    Ok(())
}
