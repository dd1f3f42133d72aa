//! File-level train, evaluate and inspect runs.
//!
//! A training run writes into its output directory:
//!
//! ```text
//! config.txt            the resolved configuration
//! seed-<s>/log.jsonl    one JSON record per epoch
//! seed-<s>/best.ckpt    checkpoint with the best validation total macro-F1
//! summary.json          best scores per seed and their mean
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::backend::{norm, Eval};
use crate::checkpoint::{write_atomic, Checkpoint};
use crate::config::RunConfig;
use crate::data::{load_embeddings, load_examples, EpochSchedule, LabelInventory, Strictness, TypedExample, Vocab};
use crate::error::{Error, Result};
use crate::geometry::kernel;
use crate::layers::SpaceTag;
use crate::metrics::GranularityScores;
use crate::model::{EncodedExample, Model};
use crate::train::{evaluate_model, Splits, TrainSettings, Trainer};

/// Input files of a training run. `crowd` and `dev` are optional.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataPaths {
    pub labels: PathBuf,
    pub embeddings: PathBuf,
    pub train: PathBuf,
    pub crowd: Option<PathBuf>,
    pub dev: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedResult {
    pub seed: u64,
    pub best_epoch: usize,
    pub scores: GranularityScores,
    pub checkpoint: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSummary {
    pub runs: Vec<SeedResult>,
    pub mean: GranularityScores,
}

fn read_split(path: &Path, inventory: &LabelInventory) -> Result<Vec<TypedExample>> {
    Ok(load_examples(path, inventory, Strictness::Strict)?.examples)
}

/// Trains one model per seed, one after another, and reports the mean of
/// their best validation scores. `progress` receives one line per epoch.
pub fn train(config: &RunConfig, paths: &DataPaths, seeds: &[u64], out: &Path, progress: &mut dyn FnMut(&str)) -> Result<TrainSummary> {
    config.validate()?;
    if seeds.is_empty() {
        return Err(Error::InvalidArgument("at least one seed is required".into()));
    }
    let inventory = LabelInventory::load(&paths.labels)?;
    let table = load_embeddings(&paths.embeddings, config.embedding_space, config.embedding_rescale)?;
    let main = read_split(&paths.train, &inventory)?;
    if main.is_empty() {
        return Err(Error::InvalidArgument(format!("{} holds no examples", paths.train.display())));
    }
    let crowd = paths.crowd.as_deref().map(|p| read_split(p, &inventory)).transpose()?.unwrap_or_default();
    let dev = paths.dev.as_deref().map(|p| read_split(p, &inventory)).transpose()?.unwrap_or_default();

    let mut chars_from = main.clone();
    chars_from.extend(crowd.iter().cloned());
    let vocab = Vocab::build(&table, &chars_from);
    let encode = |xs: &[TypedExample]| xs.iter().map(|x| vocab.encode(x)).collect::<Vec<_>>();
    let splits = Splits {
        main: encode(&main),
        crowd: encode(&crowd),
        dev: encode(&dev),
    };
    let model_cfg = config.model_config(table.dim(), inventory.len(), vocab.num_words(), vocab.num_chars());
    let words = table.prepare(config.spaces.encoder, config.stability);

    std::fs::create_dir_all(out)?;
    write_atomic(&out.join("config.txt"), config.to_text().as_bytes())?;

    let mut runs = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let dir = out.join(format!("seed-{seed}"));
        std::fs::create_dir_all(&dir)?;
        let ckpt_path = dir.join("best.ckpt");
        let log_path = dir.join("log.jsonl");
        let model = Model::new(model_cfg.clone(), words.clone(), seed)?;
        let mut trainer = Trainer::new(model, config.adam, inventory.clone(), seed)?;
        let settings = TrainSettings {
            epochs: config.epochs,
            batch_size: config.batch_size,
            schedule: EpochSchedule {
                main_passes: 1,
                crowd_cycles: config.crowd_cycles,
            },
            adam: config.adam,
            seed,
        };
        let mut log_text = String::new();
        let mut best: Option<(usize, GranularityScores)> = None;
        trainer.run(&splits, &settings, |log, improved, t| {
            let line = serde_json::to_string(&serde_json::json!({ "seed": seed, "log": log }))
                .map_err(|e| Error::InvalidArgument(e.to_string()))?;
            log_text.push_str(&line);
            log_text.push('\n');
            write_atomic(&log_path, log_text.as_bytes())?;
            progress(&format!(
                "seed {seed} epoch {} loss {:.5} total macro-F1 {:.4} text norm {:.4}",
                log.epoch, log.loss, log.scores.total.macro_avg.f1, log.mean_text_norm
            ));
            if improved {
                best = Some((log.epoch, log.scores));
                let mut meta = BTreeMap::new();
                meta.insert("seed".to_string(), seed.into());
                meta.insert("epoch".to_string(), log.epoch.into());
                meta.insert(
                    "scores".to_string(),
                    serde_json::to_value(log.scores).map_err(|e| Error::InvalidArgument(e.to_string()))?,
                );
                checkpoint_of(t, &vocab, meta).save(&ckpt_path)?;
            }
            Ok(())
        })?;
        let (best_epoch, scores) = best.unwrap_or_default();
        runs.push(SeedResult {
            seed,
            best_epoch,
            scores,
            checkpoint: ckpt_path,
        });
    }
    let mean = GranularityScores::mean(&runs.iter().map(|r| r.scores).collect::<Vec<_>>());
    let summary = TrainSummary { runs, mean };
    let json = serde_json::to_vec_pretty(&summary).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    write_atomic(&out.join("summary.json"), &json)?;
    Ok(summary)
}

fn checkpoint_of(t: &Trainer, vocab: &Vocab, meta: BTreeMap<String, serde_json::Value>) -> Checkpoint {
    Checkpoint {
        config: t.model.config.clone(),
        adam: t.optimizer.config,
        inventory: t.inventory.clone(),
        vocab: vocab.clone(),
        words: t.model.words.clone(),
        params: t.model.params.clone(),
        optimizer: t.optimizer.state.clone(),
        meta,
    }
}

/// The model stored in a checkpoint.
pub fn model_of(ckpt: &Checkpoint) -> Result<Model> {
    Model::from_parts(ckpt.config.clone(), ckpt.words.clone(), ckpt.params.clone())
}

/// Scores a checkpoint on a dataset file. When `labels` is given it must
/// match the checkpoint's inventory exactly.
pub fn evaluate_file(ckpt: &Checkpoint, data: &Path, labels: Option<&LabelInventory>) -> Result<GranularityScores> {
    if let Some(inv) = labels {
        if inv != &ckpt.inventory {
            return Err(Error::InvalidArgument(format!(
                "label inventory does not match the checkpoint ({} labels given, {} stored)",
                inv.len(),
                ckpt.inventory.len()
            )));
        }
    }
    let examples = read_split(data, &ckpt.inventory)?;
    if examples.is_empty() {
        return Err(Error::InvalidArgument(format!("{} holds no examples", data.display())));
    }
    let encoded: Vec<EncodedExample> = examples.iter().map(|x| ckpt.vocab.encode(x)).collect();
    let model = model_of(ckpt)?;
    Ok(evaluate_model(&model, &encoded, &ckpt.inventory)?.scores)
}

/// The `k` labels whose MLR points lie closest to `label`'s, nearest first.
/// Distances are hyperbolic for a hyperbolic classifier and Euclidean
/// otherwise. The label itself is never listed.
pub fn nearest_labels(model: &Model, inventory: &LabelInventory, label: &str, k: usize) -> Result<Vec<(String, f64)>> {
    let target = inventory.id(label).ok_or_else(|| Error::UnknownLabel(label.to_string()))?;
    let mlr = &model.components.mlr;
    let p = model.params.get(mlr.p).as_matrix();
    let o = Eval::new(model.config.stability);
    let x = p.row(target).to_vec();
    let mut out: Vec<(usize, f64)> = (0..inventory.len())
        .filter(|&i| i != target)
        .map(|i| {
            let y = p.row(i).to_vec();
            let d = match mlr.space {
                SpaceTag::Hyperbolic => kernel::distance(&o, &x, &y),
                SpaceTag::Euclidean => norm(&x.iter().zip(&y).map(|(a, b)| a - b).collect::<Vec<_>>()),
            };
            (i, d)
        })
        .collect();
    out.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    out.truncate(k);
    Ok(out.into_iter().map(|(i, d)| (inventory.name(i).to_string(), d)).collect())
}
