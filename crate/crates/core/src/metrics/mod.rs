//! Losses and granularity-stratified evaluation.

use std::fmt;

use serde::Serialize;

use crate::backend::{Ops, Unary};
use crate::data::{Granularity, LabelInventory};

/// Mean binary cross-entropy of `logits` against `gold`, in the stable form
/// `softplus(z) − y z`. With `mask`, only the selected labels count and the
/// mean is over them.
pub fn bce_loss<O: Ops>(o: &O, logits: &O::V, gold: &[bool], mask: Option<&[bool]>) -> O::S {
    let k = gold.len();
    assert_eq!(o.dim(logits), k, "one gold flag per logit");
    let y: Vec<f64> = gold
        .iter()
        .enumerate()
        .map(|(i, &g)| if g && mask.is_none_or(|m| m[i]) { 1.0 } else { 0.0 })
        .collect();
    let sp = o.vmap(Unary::Softplus, logits);
    let (sp_sum, count) = match mask {
        None => (o.sum(&sp), k),
        Some(m) => {
            let w: Vec<f64> = m.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
            (o.dot(&sp, &o.vector(&w)), m.iter().filter(|&&b| b).count())
        }
    };
    let fit = o.dot(logits, &o.vector(&y));
    o.div(&o.sub(&sp_sum, &fit), &o.lit(count.max(1) as f64))
}

/// Sum over granularities of the BCE restricted to that granularity's
/// labels, counting a granularity only when the example has a gold label in
/// it.
pub fn multitask_loss<O: Ops>(o: &O, logits: &O::V, gold: &[usize], inventory: &LabelInventory) -> O::S {
    let k = inventory.len();
    let mut flags = vec![false; k];
    for &g in gold {
        flags[g] = true;
    }
    let mut total: Option<O::S> = None;
    for g in Granularity::ALL {
        let mask: Vec<bool> = (0..k).map(|i| inventory.granularity(i) == g).collect();
        if !gold.iter().any(|&l| mask[l]) {
            continue;
        }
        let term = bce_loss(o, logits, &flags, Some(&mask));
        total = Some(match total {
            None => term,
            Some(t) => o.add(&t, &term),
        });
    }
    total.unwrap_or_else(|| o.lit(0.0))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub fn new(precision: f64, recall: f64) -> Self {
        Self {
            precision,
            recall,
            f1: f1(precision, recall),
        }
    }
}

/// Harmonic mean, zero when both inputs are zero.
pub fn f1(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Scores {
    #[serde(rename = "macro")]
    pub macro_avg: Prf,
    #[serde(rename = "micro")]
    pub micro_avg: Prf,
    /// Examples that entered the macro average.
    pub examples: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct GranularityScores {
    pub total: Scores,
    pub coarse: Scores,
    pub fine: Scores,
    pub ultra: Scores,
    /// Fraction of examples whose predicted set equals the gold set.
    pub strict_accuracy: f64,
}

impl GranularityScores {
    pub fn get(&self, g: Option<Granularity>) -> &Scores {
        match g {
            None => &self.total,
            Some(Granularity::Coarse) => &self.coarse,
            Some(Granularity::Fine) => &self.fine,
            Some(Granularity::Ultra) => &self.ultra,
        }
    }

    /// Field-wise mean over runs; every number, F1 included, is averaged.
    pub fn mean(runs: &[GranularityScores]) -> GranularityScores {
        let n = runs.len().max(1) as f64;
        let avg = |f: &dyn Fn(&GranularityScores) -> f64| runs.iter().map(f).sum::<f64>() / n;
        let prf = |pick: &dyn Fn(&GranularityScores) -> Prf| Prf {
            precision: avg(&|r| pick(r).precision),
            recall: avg(&|r| pick(r).recall),
            f1: avg(&|r| pick(r).f1),
        };
        let scores = |g: Option<Granularity>| Scores {
            macro_avg: prf(&|r| r.get(g).macro_avg),
            micro_avg: prf(&|r| r.get(g).micro_avg),
            examples: runs.first().map_or(0, |r| r.get(g).examples),
        };
        GranularityScores {
            total: scores(None),
            coarse: scores(Some(Granularity::Coarse)),
            fine: scores(Some(Granularity::Fine)),
            ultra: scores(Some(Granularity::Ultra)),
            strict_accuracy: avg(&|r| r.strict_accuracy),
        }
    }
}

impl fmt::Display for GranularityScores {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}", "", "ma-P", "ma-R", "ma-F1", "mi-P", "mi-R", "mi-F1")?;
        for (name, s) in [
            ("total", &self.total),
            ("coarse", &self.coarse),
            ("fine", &self.fine),
            ("ultra", &self.ultra),
        ] {
            let (a, b) = (s.macro_avg, s.micro_avg);
            writeln!(
                f,
                "{name:<8} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
                a.precision, a.recall, a.f1, b.precision, b.recall, b.f1
            )?;
        }
        write!(f, "strict accuracy {:.4}", self.strict_accuracy)
    }
}

/// Scores restricted to labels for which `keep` holds.
///
/// Macro: per-example precision and recall averaged over the examples with
/// at least one relevant gold label (an empty prediction has precision 0),
/// F1 taken from the averages. Micro: corpus-level true/false positive and
/// false negative counts over every example.
pub fn score(predictions: &[Vec<usize>], golds: &[Vec<usize>], keep: impl Fn(usize) -> bool) -> Scores {
    assert_eq!(predictions.len(), golds.len(), "one prediction per gold set");
    let (mut p_sum, mut r_sum, mut n) = (0.0, 0.0, 0usize);
    let (mut tp, mut fp, mut fne) = (0usize, 0usize, 0usize);
    for (pred, gold) in predictions.iter().zip(golds) {
        let pred: Vec<usize> = pred.iter().copied().filter(|&l| keep(l)).collect();
        let gold: Vec<usize> = gold.iter().copied().filter(|&l| keep(l)).collect();
        let hit = pred.iter().filter(|l| gold.contains(l)).count();
        tp += hit;
        fp += pred.len() - hit;
        fne += gold.len() - hit;
        if gold.is_empty() {
            continue;
        }
        n += 1;
        if !pred.is_empty() {
            p_sum += hit as f64 / pred.len() as f64;
        }
        r_sum += hit as f64 / gold.len() as f64;
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let macro_avg = if n == 0 {
        Prf::default()
    } else {
        Prf::new(p_sum / n as f64, r_sum / n as f64)
    };
    Scores {
        macro_avg,
        micro_avg: Prf::new(ratio(tp, tp + fp), ratio(tp, tp + fne)),
        examples: n,
    }
}

pub fn evaluate(predictions: &[Vec<usize>], golds: &[Vec<usize>], inventory: &LabelInventory) -> GranularityScores {
    let by = |g: Granularity| score(predictions, golds, |l| inventory.granularity(l) == g);
    GranularityScores {
        total: score(predictions, golds, |_| true),
        coarse: by(Granularity::Coarse),
        fine: by(Granularity::Fine),
        ultra: by(Granularity::Ultra),
        strict_accuracy: strict_accuracy(predictions, golds),
    }
}

pub fn strict_accuracy(predictions: &[Vec<usize>], golds: &[Vec<usize>]) -> f64 {
    if golds.is_empty() {
        return 0.0;
    }
    let exact = predictions
        .iter()
        .zip(golds)
        .filter(|(p, g)| {
            let (mut p, mut g) = ((*p).clone(), (*g).clone());
            p.sort_unstable();
            p.dedup();
            g.sort_unstable();
            g.dedup();
            p == g
        })
        .count();
    exact as f64 / golds.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{finite_diff_check, Tape};
    use crate::backend::{sigmoid, Eval, Matrix};

    fn inventory() -> LabelInventory {
        LabelInventory::new([
            ("a", Granularity::Coarse),
            ("b", Granularity::Coarse),
            ("c", Granularity::Fine),
            ("d", Granularity::Ultra),
            ("e", Granularity::Ultra),
        ])
        .unwrap()
    }

    #[test]
    fn bce_values() {
        let o = Eval::default();
        assert!((bce_loss(&o, &vec![0.0], &[true], None) - 2f64.ln()).abs() < 1e-15);
        assert!(bce_loss(&o, &vec![30.0], &[true], None) < 1e-12);
        assert!((bce_loss(&o, &vec![-800.0], &[true], None) - 800.0).abs() < 1e-9);
        let z = vec![0.3, -1.7, 2.2, 0.05];
        let y = [true, false, false, true];
        let naive: f64 = z
            .iter()
            .zip(&y)
            .map(|(&z, &y)| {
                let s = sigmoid(z);
                if y {
                    -s.ln()
                } else {
                    -(1.0 - s).ln()
                }
            })
            .sum::<f64>()
            / 4.0;
        assert!((bce_loss(&o, &z, &y, None) - naive).abs() < 1e-12);
    }

    #[test]
    fn multitask_inclusion_rule() {
        let o = Eval::default();
        let inv = inventory();
        let z = vec![0.4, -0.3, 1.1, -2.0, 0.7];
        let mask = |g: Granularity| -> Vec<bool> { (0..5).map(|i| inv.granularity(i) == g).collect() };
        let flags = |gold: &[usize]| -> Vec<bool> { (0..5).map(|i| gold.contains(&i)).collect() };
        let coarse_only = multitask_loss(&o, &z, &[1], &inv);
        assert_eq!(coarse_only, bce_loss(&o, &z, &flags(&[1]), Some(&mask(Granularity::Coarse))));
        let all = multitask_loss(&o, &z, &[0, 2, 4], &inv);
        let want: f64 = Granularity::ALL
            .iter()
            .map(|&g| bce_loss(&o, &z, &flags(&[0, 2, 4]), Some(&mask(g))))
            .sum();
        assert!((all - want).abs() < 1e-15);

        let single = LabelInventory::new([("x", Granularity::Fine), ("y", Granularity::Fine)]).unwrap();
        let z = vec![0.2, -0.9];
        assert_eq!(multitask_loss(&o, &z, &[1], &single), bce_loss(&o, &z, &[false, true], None));
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let inv = inventory();
        let report = finite_diff_check(
            |t: &Tape, v| Ok(multitask_loss(t, &v[0], &[0, 3], &inv)),
            &[Matrix::new(1, 5, vec![0.4, -0.3, 1.1, -2.0, 0.7])],
            1e-6,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-6, "{report:?}");
    }

    #[test]
    fn toy_corpus() {
        // a = 0, b = 1
        let preds = vec![vec![0], vec![0, 1]];
        let golds = vec![vec![0, 1], vec![1]];
        let s = score(&preds, &golds, |_| true);
        assert_eq!(s.macro_avg.precision, 0.75);
        assert_eq!(s.macro_avg.recall, 0.75);
        assert_eq!(s.macro_avg.f1, 0.75);
        assert_eq!(s.micro_avg.precision, 2.0 / 3.0);
    }

    #[test]
    fn perfect_and_empty_predictions() {
        let inv = inventory();
        let golds = vec![vec![0, 2], vec![1, 3, 4], vec![4]];
        let perfect = evaluate(&golds, &golds, &inv);
        for g in [None, Some(Granularity::Coarse), Some(Granularity::Fine), Some(Granularity::Ultra)] {
            let s = perfect.get(g);
            assert_eq!((s.macro_avg.f1, s.micro_avg.f1), (1.0, 1.0));
        }
        assert_eq!(perfect.strict_accuracy, 1.0);
        let empty = evaluate(&vec![vec![]; 3], &golds, &inv);
        assert_eq!(empty.total.macro_avg.recall, 0.0);
        assert_eq!(empty.total.macro_avg.f1, 0.0);
        assert_eq!(empty.total.micro_avg.f1, 0.0);
        assert_eq!(empty.strict_accuracy, 0.0);
        // fine labels only on the first example
        assert_eq!(perfect.fine.examples, 1);
    }

    #[test]
    fn single_granularity_total_equals_partition() {
        let inv = LabelInventory::new([("x", Granularity::Fine), ("y", Granularity::Fine), ("z", Granularity::Fine)]).unwrap();
        let preds = vec![vec![0, 2], vec![1], vec![]];
        let golds = vec![vec![0], vec![1, 2], vec![2]];
        let s = evaluate(&preds, &golds, &inv);
        assert_eq!(s.total, s.fine);
    }

    #[test]
    fn mean_over_runs() {
        let inv = inventory();
        let golds = vec![vec![0, 2], vec![1, 3, 4], vec![4]];
        let perfect = evaluate(&golds, &golds, &inv);
        let empty = evaluate(&vec![vec![]; 3], &golds, &inv);
        let m = GranularityScores::mean(&[perfect, empty]);
        assert_eq!(m.total.macro_avg.f1, 0.5);
        assert_eq!(m.ultra.micro_avg.recall, 0.5);
        assert_eq!(m.strict_accuracy, 0.5);
        assert_eq!(GranularityScores::mean(&[perfect]), perfect);
    }

    mod props {
        use proptest::prelude::*;

        use super::*;

        fn label_sets(n: usize) -> impl Strategy<Value = Vec<Vec<usize>>> {
            proptest::collection::vec(proptest::collection::btree_set(0usize..6, 1..4).prop_map(|s| s.into_iter().collect()), n)
        }

        proptest! {
            #[test]
            fn scores_are_bounded((preds, golds) in (1usize..30).prop_flat_map(|n| (label_sets(n), label_sets(n)))) {
                let s = score(&preds, &golds, |_| true);
                for prf in [s.macro_avg, s.micro_avg] {
                    for v in [prf.precision, prf.recall, prf.f1] {
                        prop_assert!((0.0..=1.0).contains(&v));
                    }
                }
                let acc = strict_accuracy(&preds, &golds);
                prop_assert!((0.0..=1.0).contains(&acc));
                prop_assert!(acc <= s.macro_avg.f1 + 1e-12);
            }

            #[test]
            fn perfect_predictions_score_one(golds in (1usize..30).prop_flat_map(label_sets)) {
                let s = score(&golds, &golds, |_| true);
                prop_assert_eq!((s.macro_avg.f1, s.micro_avg.f1), (1.0, 1.0));
                prop_assert_eq!(strict_accuracy(&golds, &golds), 1.0);
            }
        }
    }
}
