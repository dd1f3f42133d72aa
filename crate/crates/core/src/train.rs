//! Mini-batch training with per-epoch evaluation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{Gradients, Tape};
use crate::backend::Ops;
use crate::data::{batches, EpochSchedule, LabelInventory, Split};
use crate::error::{Error, Result};
use crate::layers::multilabel_predict;
use crate::metrics::{evaluate, multitask_loss, GranularityScores};
use crate::model::{text_norm, Dropout, EncodedExample, Model};
use crate::optim::{AdamConfig, RiemannianAdam};

/// Examples recorded on one tape before its gradients are folded in.
const CHUNK: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: EpochSchedule,
    pub adam: AdamConfig,
    pub seed: u64,
}

/// Training and validation data. `crowd` may be empty.
#[derive(Debug, Clone, Default)]
pub struct Splits {
    pub main: Vec<EncodedExample>,
    pub crowd: Vec<EncodedExample>,
    pub dev: Vec<EncodedExample>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean training loss over the epoch's batches.
    pub loss: f64,
    pub scores: GranularityScores,
    /// Mean size of the merged text vector on the validation data.
    pub mean_text_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub predictions: Vec<Vec<usize>>,
    pub scores: GranularityScores,
    pub mean_text_norm: f64,
}

/// Predictions, scores and mean text-vector size of `model` on `examples`.
pub fn evaluate_model(model: &Model, examples: &[EncodedExample], inventory: &LabelInventory) -> Result<Evaluation> {
    let o = model.eval();
    let p = model.bind(&o);
    let mut predictions = Vec::with_capacity(examples.len());
    let mut norm_sum = 0.0;
    for ex in examples {
        let f = model.forward::<_, ChaCha8Rng>(&o, &p, ex, None)?;
        norm_sum += text_norm(&o, model.config.spaces.concat, &f.text);
        predictions.push(multilabel_predict(&f.logits));
    }
    let golds: Vec<Vec<usize>> = examples.iter().map(|e| e.labels.clone()).collect();
    Ok(Evaluation {
        scores: evaluate(&predictions, &golds, inventory),
        predictions,
        mean_text_norm: if examples.is_empty() { 0.0 } else { norm_sum / examples.len() as f64 },
    })
}

/// Owns the model, optimizer and the random stream used for shuffling and
/// dropout.
pub struct Trainer {
    pub model: Model,
    pub optimizer: RiemannianAdam,
    pub inventory: LabelInventory,
    rng: ChaCha8Rng,
    tape: Tape,
}

impl Trainer {
    pub fn new(model: Model, adam: AdamConfig, inventory: LabelInventory, seed: u64) -> Result<Self> {
        if inventory.len() != model.config.num_classes {
            return Err(Error::InvalidArgument(format!(
                "model has {} classes, inventory {}",
                model.config.num_classes,
                inventory.len()
            )));
        }
        let optimizer = RiemannianAdam::new(adam, model.config.stability);
        Ok(Self {
            tape: Tape::new(model.config.stability),
            model,
            optimizer,
            inventory,
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x7261_696e),
        })
    }

    /// Mean loss and gradients over `batch`, with dropout active.
    pub fn batch_gradients(&mut self, batch: &[&EncodedExample]) -> Result<(f64, Gradients)> {
        let mut total = Gradients::default();
        let mut loss_sum = 0.0;
        for chunk in batch.chunks(CHUNK) {
            self.tape.clear();
            let tape = &self.tape;
            let p = self.model.bind(tape);
            let mut loss = None;
            for ex in chunk {
                let f = self.model.forward(tape, &p, ex, Some(Dropout { rng: &mut self.rng }))?;
                let l = multitask_loss(tape, &f.logits, &ex.labels, &self.inventory);
                loss = Some(match loss {
                    None => l,
                    Some(acc) => tape.add(&acc, &l),
                });
            }
            let Some(loss) = loss else { continue };
            loss_sum += tape.scalar(loss);
            total.accumulate(&tape.backward(loss)?);
        }
        let n = batch.len().max(1) as f64;
        total.scale(1.0 / n);
        Ok((loss_sum / n, total))
    }

    /// One shuffled pass over `examples`; returns the mean batch loss.
    pub fn pass(&mut self, examples: &[EncodedExample], batch_size: usize) -> Result<f64> {
        let order = batches(examples.len(), batch_size, &mut self.rng);
        let mut sum = 0.0;
        for idx in &order {
            let batch: Vec<&EncodedExample> = idx.iter().map(|&i| &examples[i]).collect();
            let (loss, grads) = self.batch_gradients(&batch)?;
            if !loss.is_finite() {
                return Err(Error::InvalidValue(format!("training loss is {loss}")));
            }
            self.optimizer.step(&mut self.model.params, &grads)?;
            sum += loss;
        }
        Ok(if order.is_empty() { 0.0 } else { sum / order.len() as f64 })
    }

    /// The passes of one epoch; returns the mean loss over all of them.
    pub fn epoch(&mut self, splits: &Splits, settings: &TrainSettings) -> Result<f64> {
        let passes = settings.schedule.passes(!splits.crowd.is_empty());
        let mut sum = 0.0;
        for split in &passes {
            let data = match split {
                Split::Main => &splits.main,
                Split::Crowd => &splits.crowd,
            };
            sum += self.pass(data, settings.batch_size)?;
        }
        Ok(sum / passes.len().max(1) as f64)
    }

    /// Trains for `settings.epochs`, evaluating on `splits.dev` (or on the
    /// main split when there is no validation data) after each epoch.
    /// `on_epoch` sees each log and whether it is the best total macro-F1 so
    /// far.
    pub fn run<F>(&mut self, splits: &Splits, settings: &TrainSettings, mut on_epoch: F) -> Result<Vec<EpochLog>>
    where
        F: FnMut(&EpochLog, bool, &Trainer) -> Result<()>,
    {
        let dev = if splits.dev.is_empty() { &splits.main } else { &splits.dev };
        let mut logs = Vec::with_capacity(settings.epochs);
        let mut best = f64::NEG_INFINITY;
        for epoch in 1..=settings.epochs {
            let loss = self.epoch(splits, settings)?;
            let ev = evaluate_model(&self.model, dev, &self.inventory)?;
            let log = EpochLog {
                epoch,
                loss,
                scores: ev.scores,
                mean_text_norm: ev.mean_text_norm,
            };
            let f1 = log.scores.total.macro_avg.f1;
            let improved = f1 > best;
            if improved {
                best = f1;
            }
            on_epoch(&log, improved, self)?;
            logs.push(log);
        }
        Ok(logs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::Matrix;
    use crate::data::Granularity;
    use crate::model::{ComponentSpaceConfig, ModelConfig};
    use crate::SpaceTag;

    fn inventory() -> LabelInventory {
        LabelInventory::new([
            ("a".to_string(), Granularity::Coarse),
            ("b".to_string(), Granularity::Coarse),
            ("c".to_string(), Granularity::Fine),
            ("d".to_string(), Granularity::Fine),
        ])
        .unwrap()
    }

    fn toy(spaces: ComponentSpaceConfig) -> (Model, Splits) {
        let config = ModelConfig {
            d_m: 4,
            d_c: 3,
            d_s: 2,
            word_dim: 3,
            num_classes: 4,
            vocab_size: 4,
            char_vocab_size: 4,
            mention_positions: 3,
            max_relative: 3,
            dropout_input: 0.2,
            dropout_concat: 0.1,
            spaces,
            stability: Default::default(),
        };
        let words = Matrix::new(4, 3, vec![0.3, 0.0, 0.0, 0.0, 0.3, 0.0, 0.0, 0.0, 0.3, 0.1, 0.1, 0.1]);
        let model = Model::new(config, words, 5).unwrap();
        let ex = |w: usize, labels: Vec<usize>| EncodedExample {
            mention: vec![w],
            chars: vec![w % 4, 1],
            context: vec![3, w, 3],
            span: (1, 2),
            labels,
        };
        let main: Vec<_> = (0..12).map(|i| if i % 2 == 0 { ex(0, vec![0, 2]) } else { ex(1, vec![1, 3]) }).collect();
        let splits = Splits {
            crowd: main[..4].to_vec(),
            dev: main.clone(),
            main,
        };
        (model, splits)
    }

    fn settings(epochs: usize) -> TrainSettings {
        TrainSettings {
            epochs,
            batch_size: 4,
            schedule: EpochSchedule {
                main_passes: 1,
                crowd_cycles: 1,
            },
            adam: AdamConfig {
                lr: 0.05,
                ..AdamConfig::default()
            },
            seed: 1,
        }
    }

    #[test]
    fn training_is_deterministic_and_learns() {
        let run = || {
            let (model, splits) = toy(ComponentSpaceConfig::default());
            let mut t = Trainer::new(model, settings(1).adam, inventory(), 3).unwrap();
            t.run(&splits, &settings(15), |_, _, _| Ok(())).unwrap()
        };
        let a = run();
        assert_eq!(a, run());
        assert!(a.last().unwrap().loss < a[0].loss);
        assert!(a.last().unwrap().scores.total.macro_avg.f1 > 0.9, "{:?}", a.last());
    }

    #[test]
    fn batch_gradient_is_mean_of_examples() {
        let (model, splits) = toy(ComponentSpaceConfig::uniform(SpaceTag::Euclidean));
        let mut model = model;
        model.config.dropout_input = 0.0;
        model.config.dropout_concat = 0.0;
        let mut t = Trainer::new(model, AdamConfig::default(), inventory(), 0).unwrap();
        let refs: Vec<&EncodedExample> = splits.main.iter().take(40).collect();
        let (_, whole) = t.batch_gradients(&refs).unwrap();
        let mut parts = Gradients::default();
        for r in &refs {
            let (_, mut g) = t.batch_gradients(&[r]).unwrap();
            g.scale(1.0 / refs.len() as f64);
            parts.accumulate(&g);
        }
        for (id, g) in whole.iter() {
            let h = parts.get(id).unwrap();
            for (x, y) in g.iter().zip(h) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn best_flag_tracks_macro_f1() {
        let (model, splits) = toy(ComponentSpaceConfig::default());
        let mut t = Trainer::new(model, settings(1).adam, inventory(), 3).unwrap();
        let mut best = f64::NEG_INFINITY;
        t.run(&splits, &settings(4), |log, improved, _| {
            let f1 = log.scores.total.macro_avg.f1;
            assert_eq!(improved, f1 > best);
            best = best.max(f1);
            Ok(())
        })
        .unwrap();
    }
}
