//! Datasets, embeddings, vocabularies, label inventories and batching.

mod embeddings;
mod examples;
mod labels;

pub use embeddings::{load_embeddings, EmbeddingSpace, EmbeddingTable};
pub use examples::{load_examples, read_examples, write_examples, Diagnostic, LoadedExamples, Strictness, TypedExample};
pub use labels::{Granularity, LabelInventory};

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::model::{EncodedExample, ModelConfig, OOV};
use crate::params::ParamStore;

/// Token and character ids. Word ids index the frozen embedding table;
/// character id 0 stands for any character not seen in training.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "VocabRepr", into = "VocabRepr")]
pub struct Vocab {
    words: Vec<String>,
    chars: Vec<char>,
    word_index: HashMap<String, usize>,
    char_index: HashMap<char, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    words: Vec<String>,
    chars: Vec<char>,
}

impl From<VocabRepr> for Vocab {
    fn from(r: VocabRepr) -> Self {
        Vocab::from_parts(r.words, r.chars)
    }
}

impl From<Vocab> for VocabRepr {
    fn from(v: Vocab) -> Self {
        VocabRepr {
            words: v.words,
            chars: v.chars,
        }
    }
}

impl Vocab {
    /// `chars` excludes the unknown-character slot.
    pub fn from_parts(words: Vec<String>, chars: Vec<char>) -> Self {
        let word_index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        let char_index = chars.iter().enumerate().map(|(i, &c)| (c, i + 1)).collect();
        Self {
            words,
            chars,
            word_index,
            char_index,
        }
    }

    /// Words from the embedding table, characters from the training mentions
    /// in order of first appearance.
    pub fn build(table: &EmbeddingTable, training: &[TypedExample]) -> Self {
        let mut chars = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for ex in training {
            for c in ex.mention_chars() {
                if seen.insert(c) {
                    chars.push(c);
                }
            }
        }
        Self::from_parts(table.tokens().to_vec(), chars)
    }

    pub fn num_words(&self) -> usize {
        self.words.len()
    }

    /// Character table rows, including the unknown slot.
    pub fn num_chars(&self) -> usize {
        self.chars.len() + 1
    }

    pub fn word(&self, token: &str) -> usize {
        self.word_index
            .get(token)
            .or_else(|| self.word_index.get(&token.to_lowercase()))
            .copied()
            .unwrap_or(OOV)
    }

    pub fn char(&self, c: char) -> usize {
        self.char_index.get(&c).copied().unwrap_or(0)
    }

    pub fn encode(&self, ex: &TypedExample) -> EncodedExample {
        EncodedExample {
            mention: ex.mention.iter().map(|t| self.word(t)).collect(),
            chars: ex.mention_chars().into_iter().map(|c| self.char(c)).collect(),
            context: ex.context_tokens().into_iter().map(|t| self.word(t)).collect(),
            span: ex.span(),
            labels: ex.labels.clone(),
        }
    }
}

/// Shuffled mini-batches of example indices; the last one may be short.
pub fn batches<R: Rng + ?Sized>(n: usize, batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    Main,
    Crowd,
}

/// Passes made in one epoch: one over the main split, then `crowd_cycles`
/// over the crowdsourced split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochSchedule {
    pub main_passes: usize,
    pub crowd_cycles: usize,
}

impl Default for EpochSchedule {
    fn default() -> Self {
        Self {
            main_passes: 1,
            crowd_cycles: 5,
        }
    }
}

impl EpochSchedule {
    pub fn passes(&self, has_crowd: bool) -> Vec<Split> {
        let mut out = vec![Split::Main; self.main_passes];
        if has_crowd {
            out.extend(std::iter::repeat_n(Split::Crowd, self.crowd_cycles));
        }
        out
    }
}

/// Freshly initialised model parameters for `config`.
pub fn init_parameters(config: &ModelConfig, seed: u64) -> ParamStore {
    crate::model::init_params(config, seed).0
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::model::ComponentSpaceConfig;
    use crate::params::Manifold;
    use crate::testutil::rng;

    fn example(m: &[&str], labels: Vec<usize>) -> TypedExample {
        TypedExample {
            mention: m.iter().map(|s| s.to_string()).collect(),
            left: vec!["in".into()],
            right: vec![".".into()],
            labels,
        }
    }

    #[test]
    fn vocabulary_encoding() {
        let table = EmbeddingTable::read("in 0.1 0.1\nparis 0.2 0.0\n. 0.0 0.0\n".as_bytes(), EmbeddingSpace::Poincare, 1.0).unwrap();
        let v = Vocab::build(&table, &[example(&["Paris"], vec![0])]);
        assert_eq!(v.num_chars(), 6);
        let e = v.encode(&example(&["Paris", "Texas"], vec![1]));
        assert_eq!(e.mention, vec![1, OOV]);
        assert_eq!(e.context, vec![0, 1, OOV, 2]);
        assert_eq!(e.span, (1, 3));
        assert_eq!(e.chars[0], 1);
        assert_eq!(e.chars[6], 0); // 'T' never seen
        let json = serde_json::to_string(&v).unwrap();
        assert_eq!(serde_json::from_str::<Vocab>(&json).unwrap(), v);
    }

    #[test]
    fn schedule() {
        let s = EpochSchedule::default();
        assert_eq!(s.passes(true).len(), 6);
        assert_eq!(s.passes(false), vec![Split::Main]);
        let plain = EpochSchedule {
            main_passes: 1,
            crowd_cycles: 0,
        };
        assert_eq!(plain.passes(true), vec![Split::Main]);
    }

    fn config() -> ModelConfig {
        ModelConfig {
            d_m: 6,
            d_c: 20,
            d_s: 3,
            word_dim: 4,
            num_classes: 5,
            vocab_size: 0,
            char_vocab_size: 12,
            mention_positions: 4,
            max_relative: 5,
            dropout_input: 0.0,
            dropout_concat: 0.0,
            spaces: ComponentSpaceConfig::default(),
            stability: Default::default(),
        }
    }

    #[test]
    fn initialisation() {
        let a = init_parameters(&config(), 3);
        assert_eq!(a, init_parameters(&config(), 3));
        assert_ne!(a, init_parameters(&config(), 4));
        let bound = (1e-4 * 20f64.sqrt()).tanh();
        let chars = a.get(a.find("chars").unwrap());
        for row in chars.data.chunks(20) {
            assert!(crate::backend::norm(row) <= bound);
        }
        for (_, p) in a.iter() {
            if p.manifold == Manifold::Ball && p.rows == 1 && p.name != "words.oov" {
                assert!(p.data.iter().all(|&v| v == 0.0), "{}", p.name);
            }
        }
    }

    proptest! {
        #[test]
        fn batches_cover_every_example_once(n in 0usize..200, size in 1usize..50, seed in any::<u64>()) {
            let b = batches(n, size, &mut rng(seed));
            let mut all: Vec<usize> = b.iter().flatten().copied().collect();
            all.sort();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            prop_assert!(b.iter().all(|x| x.len() <= size && !x.is_empty()));
        }

        #[test]
        fn batch_labels_stay_in_range(labels in proptest::collection::vec(proptest::collection::vec(0usize..7, 1..4), 1..40)) {
            let inv = LabelInventory::new((0..7).map(|i| (format!("l{i}"), Granularity::Fine))).unwrap();
            let table = EmbeddingTable::read("x 0.1\n".as_bytes(), EmbeddingSpace::Euclidean, 1.0).unwrap();
            let examples: Vec<TypedExample> = labels.iter().map(|l| example(&["x"], l.clone())).collect();
            let mut buf = Vec::new();
            write_examples(&mut buf, &examples, &inv).unwrap();
            let loaded = read_examples(buf.as_slice(), &inv, Strictness::Strict).unwrap().examples;
            let vocab = Vocab::build(&table, &loaded);
            for batch in batches(loaded.len(), 8, &mut rng(1)) {
                for &i in &batch {
                    prop_assert!(vocab.encode(&loaded[i]).labels.iter().all(|&l| l < inv.len()));
                }
            }
        }
    }
}
