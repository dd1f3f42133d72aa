//! Gradient verification of every layer and of the end-to-end loss.

use std::fmt;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{check_gradients, Scheme, Tape, Var};
use crate::backend::{Matrix, Ops, Unary};
use crate::config::RunConfig;
use crate::data::{Granularity, LabelInventory};
use crate::error::Result;
use crate::geometry::kernel;
use crate::layers::{Attention, BiGru, Concat, Linear, Mlr, RnnCell, SpaceTag};
use crate::metrics::multitask_loss;
use crate::model::{EncodedExample, Model, OOV};
use crate::params::{Bound, Manifold, ParamStore};

const MAX_NORM: f64 = 0.3;

pub const COMPONENTS: &[&str] = &["ffnn", "rnn", "gru", "concat", "attention", "mlr", "end-to-end"];

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckOptions {
    pub seeds: Vec<u64>,
    pub scheme: Scheme,
    /// Coordinates checked per tensor; smaller tensors are checked fully.
    pub coords_per_tensor: usize,
    pub tolerance: f64,
    /// Test fixture: corrupts the reverse-mode gradient of this component.
    pub fault: Option<String>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            seeds: (0..10).collect(),
            scheme: Scheme::Richardson { step: 2e-2 },
            coords_per_tensor: 24,
            tolerance: 1e-6,
            fault: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComponentReport {
    pub component: String,
    pub max_rel_error: f64,
    pub coordinates: usize,
    /// Tensor holding the worst coordinate.
    pub worst: String,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub tolerance: f64,
    pub rows: Vec<ComponentReport>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ComponentReport> {
        self.rows.iter().filter(|r| !r.passed)
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<12} {:>12} {:>7}  {:<28} result", "component", "max rel err", "coords", "worst tensor")?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<12} {:>12.3e} {:>7}  {:<28} {}",
                r.component,
                r.max_rel_error,
                r.coordinates,
                r.worst,
                if r.passed { "PASS" } else { "FAIL" }
            )?;
        }
        write!(f, "{} (tolerance {:e})", if self.passed() { "PASS" } else { "FAIL" }, self.tolerance)
    }
}

/// A scalar built from a parameter store: the store's tensors are the
/// checked variables.
struct Case {
    store: ParamStore,
    objective: Box<dyn Fn(&Tape, &Bound<Tape>) -> Result<Var>>,
}

fn random_points<R: Rng>(rng: &mut R, space: SpaceTag, n: usize, dim: usize) -> Vec<f64> {
    random_points_within(rng, space, n, dim, 0.9)
}

/// Points with norms in `[0.05, max_norm)`, as tangent vectors at the origin
/// for Euclidean layers.
fn random_points_within<R: Rng>(rng: &mut R, space: SpaceTag, n: usize, dim: usize, max_norm: f64) -> Vec<f64> {
    let o = crate::backend::Eval::default();
    let mut out = Vec::with_capacity(n * dim);
    for _ in 0..n {
        let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm = crate::backend::norm(&v).max(1e-12);
        let r = rng.gen_range(0.05..max_norm);
        let scaled: Vec<f64> = v.iter().map(|x| x * r / norm).collect();
        out.extend(match space {
            SpaceTag::Hyperbolic => scaled,
            SpaceTag::Euclidean => kernel::log0(&o, &scaled),
        });
    }
    out
}

fn add_inputs<R: Rng>(store: &mut ParamStore, rng: &mut R, space: SpaceTag, n: usize, dim: usize) -> crate::ParamId {
    let data = random_points(rng, space, n, dim);
    let name = match store.iter().filter(|(_, p)| p.name.starts_with("inputs")).count() {
        0 => "inputs".to_string(),
        k => format!("inputs.{k}"),
    };
    store.add(name, space.point_manifold(), n, dim, data)
}

/// `⟨w, log₀ y⟩` for ball outputs, `⟨w, y⟩` otherwise.
fn readout(o: &Tape, space: SpaceTag, y: &Var, w: &[f64]) -> Var {
    let t = match space {
        SpaceTag::Hyperbolic => kernel::log0(o, y),
        SpaceTag::Euclidean => *y,
    };
    o.dot(&t, &o.vector(w))
}

fn weights<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn rows(o: &Tape, p: &Bound<Tape>, id: crate::ParamId, n: usize) -> Vec<Var> {
    (0..n).map(|i| p.row(o, id, i)).collect()
}

fn layer_case(component: &str, cfg: &RunConfig, word_dim: usize, rng: &mut ChaCha8Rng) -> Case {
    let sp = cfg.spaces;
    let mut store = ParamStore::new();
    match component {
        "ffnn" => {
            let layer = Linear::new(&mut store, rng, "mention.ffnn", sp.encoder, word_dim, cfg.d_m, Some(Unary::Tanh));
            let x = add_inputs(&mut store, rng, sp.encoder, 1, word_dim);
            let w = weights(rng, cfg.d_m);
            Case {
                store,
                objective: Box::new(move |o, p| {
                    let y = layer.forward(o, p, &p.vec(o, x))?;
                    Ok(readout(o, sp.encoder, &y, &w))
                }),
            }
        }
        "rnn" => {
            let cell = RnnCell::new(&mut store, rng, "chars.rnn", sp.encoder, cfg.d_c, cfg.d_c, Some(Unary::Tanh));
            let x = add_inputs(&mut store, rng, sp.encoder, 4, cfg.d_c);
            let w = weights(rng, cfg.d_c);
            Case {
                store,
                objective: Box::new(move |o, p| {
                    let hs = cell.run(o, p, &rows(o, p, x, 4))?;
                    Ok(readout(o, sp.encoder, hs.last().expect("non-empty"), &w))
                }),
            }
        }
        "gru" => {
            let gru = BiGru::new(&mut store, rng, "context.gru", sp.encoder, word_dim, cfg.d_s);
            let x = add_inputs(&mut store, rng, sp.encoder, 4, word_dim);
            let w = weights(rng, gru.out_dim());
            Case {
                store,
                objective: Box::new(move |o, p| {
                    let hs = gru.forward(o, p, &rows(o, p, x, 4))?;
                    let mut acc = o.lit(0.0);
                    for h in &hs {
                        acc = o.add(&acc, &readout(o, sp.encoder, h, &w));
                    }
                    Ok(acc)
                }),
            }
        }
        "concat" => {
            let dims = [cfg.d_m, cfg.d_c, 2 * cfg.d_s];
            let m = dims.iter().sum::<usize>();
            let layer = Concat::new(&mut store, rng, "concat", sp.concat, &dims, m);
            let xs: Vec<_> = dims.iter().map(|&d| add_inputs(&mut store, rng, sp.concat, 1, d)).collect();
            let w = weights(rng, m);
            Case {
                store,
                objective: Box::new(move |o, p| {
                    let parts: Vec<Var> = xs.iter().map(|&id| p.vec(o, id)).collect();
                    let y = layer.forward(o, p, &parts)?;
                    Ok(readout(o, sp.concat, &y, &w))
                }),
            }
        }
        "attention" => {
            let n = 5;
            let att = Attention::new(&mut store, rng, "context.attention", sp.attention, 2 * cfg.d_s, n);
            // Fresh position tables sit at the origin's doorstep; spread them
            // so every term of the score contributes.
            let pos = att.positions;
            let spread = random_points(rng, sp.attention, n, 2 * cfg.d_s);
            store.get_mut(pos).data = spread;
            let x = add_inputs(&mut store, rng, sp.attention, n, 2 * cfg.d_s);
            let w = weights(rng, 2 * cfg.d_s);
            Case {
                store,
                objective: Box::new(move |o, p| {
                    let a = att.forward(o, p, &rows(o, p, x, n))?;
                    Ok(readout(o, sp.attention, &a.output, &w))
                }),
            }
        }
        "mlr" => {
            let m = cfg.d_m + cfg.d_c + 2 * cfg.d_s;
            let k = 9;
            let mlr = Mlr::new(&mut store, rng, "mlr", sp.mlr, m, k);
            let spread = random_points(rng, sp.mlr, k, m);
            store.get_mut(mlr.p).data = spread;
            let x = add_inputs(&mut store, rng, sp.mlr, 1, m);
            let w = weights(rng, k);
            Case {
                store,
                objective: Box::new(move |o, p| {
                    let logits = mlr.logits(o, p, &p.vec(o, x))?;
                    Ok(o.dot(&logits, &o.vector(&w)))
                }),
            }
        }
        other => unreachable!("no layer case for {other}"),
    }
}

fn end_to_end_case(cfg: &RunConfig, word_dim: usize, seed: u64, rng: &mut ChaCha8Rng) -> Result<Case> {
    let inventory = LabelInventory::new(
        (0..9).map(|i| (format!("t{i}"), [Granularity::Coarse, Granularity::Fine, Granularity::Ultra][i / 3])),
    )?;
    let vocab = 6;
    let words = {
        let data = random_points(rng, cfg.spaces.encoder, vocab, word_dim);
        Matrix::new(vocab, word_dim, data)
    };
    let model_cfg = cfg.model_config(word_dim, inventory.len(), vocab, 7);
    let mut model = Model::new(model_cfg, words, seed)?;
    // Fresh biases sit at the origin and the tables within 1e-4 of it, which
    // leaves many gradients near 1e-7, below what differences of a float64
    // loss can resolve. Check at a generic point instead.
    let ids: Vec<_> = model.params.ids().collect();
    for id in ids {
        let p = model.params.get_mut(id);
        if p.data.iter().all(|v| v.abs() <= crate::init::SMALL_INIT) {
            let space = if p.manifold == Manifold::Ball { SpaceTag::Hyperbolic } else { SpaceTag::Euclidean };
            p.data = random_points_within(rng, space, p.rows, p.cols, MAX_NORM);
        }
    }
    let ex = EncodedExample {
        // The OOV row starts next to the origin; keeping it out of the
        // mention avoids a query and key that nearly coincide, where the
        // distance-based score has a kink.
        mention: vec![2, 4],
        chars: vec![1, 4, 0, 6, 3],
        context: vec![0, 5, 2, 4, OOV, 3],
        span: (2, 4),
        labels: vec![0, 4, 8],
    };
    let store = model.params.clone();
    Ok(Case {
        store,
        objective: Box::new(move |o, p| {
            let f = model.forward::<_, ChaCha8Rng>(o, p, &ex, None)?;
            Ok(multitask_loss(o, &f.logits, &ex.labels, &inventory))
        }),
    })
}

/// Adds a term whose value is zero but whose reverse-mode gradient is not,
/// so analytic and numeric gradients disagree.
fn corrupt(o: &Tape, loss: Var, params: &[Var]) -> Var {
    let live = o.sum(&params[0]);
    let frozen = o.lit(o.val(&live));
    o.add(&loss, &o.mul(&o.sub(&live, &frozen), &o.lit(1e-3)))
}

fn check(component: &str, case: Case, opts: &GradcheckOptions, rng: &mut ChaCha8Rng) -> Result<(f64, usize, String)> {
    let tensors: Vec<Matrix> = case.store.iter().map(|(_, p)| p.as_matrix()).collect();
    let names: Vec<String> = case.store.iter().map(|(_, p)| p.name.clone()).collect();
    let mut coords = Vec::new();
    for (i, t) in tensors.iter().enumerate() {
        let n = t.data().len();
        let take = n.min(opts.coords_per_tensor);
        let mut picked: Vec<usize> = sample(rng, n, take).into_vec();
        picked.sort_unstable();
        coords.extend(picked.into_iter().map(|c| (i, c)));
    }
    let faulty = opts.fault.as_deref() == Some(component);
    let objective = &case.objective;
    let report = check_gradients(
        |o, vars| {
            let p = Bound::from_handles(vars.to_vec());
            let loss = objective(o, &p)?;
            Ok(if faulty { corrupt(o, loss, vars) } else { loss })
        },
        &tensors,
        &coords,
        opts.scheme,
    )?;
    let worst = report.worst.map_or_else(String::new, |(p, _)| names[p].clone());
    Ok((report.max_rel_error, report.coordinates, worst))
}

/// Runs every component over all seeds and keeps the worst error of each.
pub fn run(cfg: &RunConfig, opts: &GradcheckOptions) -> Result<GradcheckReport> {
    cfg.validate()?;
    let word_dim = 10;
    let mut rows: Vec<ComponentReport> = COMPONENTS
        .iter()
        .map(|c| ComponentReport {
            component: c.to_string(),
            max_rel_error: 0.0,
            coordinates: 0,
            worst: String::new(),
            passed: true,
        })
        .collect();
    for &seed in &opts.seeds {
        for row in rows.iter_mut() {
            let rng = &mut ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9).wrapping_add(row.component.len() as u64));
            let case = if row.component == "end-to-end" {
                end_to_end_case(cfg, word_dim, seed, rng)?
            } else {
                layer_case(&row.component, cfg, word_dim, rng)
            };
            let (err, n, worst) = check(&row.component, case, opts, rng)?;
            row.coordinates += n;
            if err > row.max_rel_error || row.worst.is_empty() {
                row.max_rel_error = row.max_rel_error.max(err);
                row.worst = worst;
            }
        }
    }
    for row in rows.iter_mut() {
        row.passed = row.max_rel_error < opts.tolerance;
    }
    Ok(GradcheckReport {
        tolerance: opts.tolerance,
        rows,
    })
}
