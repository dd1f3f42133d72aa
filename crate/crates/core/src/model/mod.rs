//! The entity-typing classifier.
//!
//! A mention is encoded from its words (feed-forward layer, then attention)
//! and its characters (RNN, then the midpoint of the states); the context
//! from a bidirectional GRU followed by attention. The three vectors are
//! merged by a three-input [`Concat`] and scored by an [`Mlr`].
//!
//! Each of the four components (encoder, attention, concat, MLR) runs in
//! the space chosen by [`ComponentSpaceConfig`]; values are carried between
//! spaces with `log₀`/`exp₀` where neighbouring components disagree.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backend::{Eval, Matrix, Ops, Unary};
use crate::error::{Error, Result};
use crate::geometry::{kernel, StabilityConfig};
use crate::layers::{self, Attention, BiGru, Concat, Linear, Mlr, RnnCell, SpaceTag};
use crate::params::{Bind, Bound, ParamId, ParamStore};

/// Word id standing for any token outside the embedding table.
pub const OOV: usize = usize::MAX;

/// Space of each ablation component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ComponentSpaceConfig {
    pub encoder: SpaceTag,
    pub attention: SpaceTag,
    pub concat: SpaceTag,
    pub mlr: SpaceTag,
}

impl ComponentSpaceConfig {
    pub fn uniform(space: SpaceTag) -> Self {
        Self {
            encoder: space,
            attention: space,
            concat: space,
            mlr: space,
        }
    }

    /// All sixteen combinations, hyperbolic-first in each field.
    pub fn all() -> Vec<Self> {
        let mut out = Vec::with_capacity(16);
        for encoder in SpaceTag::ALL {
            for attention in SpaceTag::ALL {
                for concat in SpaceTag::ALL {
                    for mlr in SpaceTag::ALL {
                        out.push(Self {
                            encoder,
                            attention,
                            concat,
                            mlr,
                        });
                    }
                }
            }
        }
        out
    }

    /// Applies one `component=space` assignment.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::InvalidArgument(format!("expected component=space, got `{assignment}`")))?;
        let space: SpaceTag = value.parse()?;
        match key.trim() {
            "encoder" => self.encoder = space,
            "attention" => self.attention = space,
            "concat" => self.concat = space,
            "mlr" => self.mlr = space,
            other => return Err(Error::InvalidArgument(format!("unknown component `{other}`"))),
        }
        Ok(())
    }

    /// Manifold crossings made while classifying one example: each of the
    /// three streams crosses at the encoder/attention and attention/concat
    /// boundaries, and the merged vector at the concat/MLR boundary.
    pub fn expected_crossings(&self) -> usize {
        3 * usize::from(self.encoder != self.attention)
            + 3 * usize::from(self.attention != self.concat)
            + usize::from(self.concat != self.mlr)
    }
}

impl Default for ComponentSpaceConfig {
    fn default() -> Self {
        Self::uniform(SpaceTag::Hyperbolic)
    }
}

impl fmt::Display for ComponentSpaceConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "encoder={},attention={},concat={},mlr={}",
            self.encoder, self.attention, self.concat, self.mlr
        )
    }
}

impl FromStr for ComponentSpaceConfig {
    type Err = Error;

    /// Either a single space or a comma-separated list of assignments.
    fn from_str(s: &str) -> Result<Self> {
        if let Ok(space) = s.parse::<SpaceTag>() {
            return Ok(Self::uniform(space));
        }
        let mut cfg = Self::default();
        for part in s.split(',').filter(|p| !p.trim().is_empty()) {
            cfg.set(part)?;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_m: usize,
    pub d_c: usize,
    pub d_s: usize,
    /// Dimension of the (frozen) word embeddings.
    pub word_dim: usize,
    pub num_classes: usize,
    pub vocab_size: usize,
    pub char_vocab_size: usize,
    /// Rows of the mention position table; later tokens share the last row.
    pub mention_positions: usize,
    /// Context offsets from the mention are clipped to `±max_relative`.
    pub max_relative: usize,
    pub dropout_input: f64,
    pub dropout_concat: f64,
    pub spaces: ComponentSpaceConfig,
    pub stability: StabilityConfig,
}

impl ModelConfig {
    /// Classifier dimension `m = d_M + d_C + 2 d_S`.
    pub fn classifier_dim(&self) -> usize {
        self.d_m + self.d_c + 2 * self.d_s
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        for (name, v) in [
            ("d_m", self.d_m),
            ("d_c", self.d_c),
            ("d_s", self.d_s),
            ("word_dim", self.word_dim),
            ("num_classes", self.num_classes),
            ("char_vocab_size", self.char_vocab_size),
            ("mention_positions", self.mention_positions),
        ] {
            if v == 0 {
                problems.push(format!("{name} must be positive"));
            }
        }
        for (name, p) in [("dropout_input", self.dropout_input), ("dropout_concat", self.dropout_concat)] {
            if !(0.0..1.0).contains(&p) {
                problems.push(format!("{name} must lie in [0, 1), got {p}"));
            }
        }
        if let Err(e) = self.stability.validate() {
            problems.push(e.to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }
}

/// A typed mention with every token mapped to an id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedExample {
    /// Word ids of the mention span ([`OOV`] for unknown words).
    pub mention: Vec<usize>,
    pub chars: Vec<usize>,
    /// Word ids of the whole sentence, mention included.
    pub context: Vec<usize>,
    /// The mention occupies `context[span.0..span.1]`.
    pub span: (usize, usize),
    pub labels: Vec<usize>,
}

/// Layer handles of a [`Model`].
#[derive(Debug, Clone, PartialEq)]
pub struct Components {
    pub oov: ParamId,
    pub chars: ParamId,
    pub mention_ffnn: Linear,
    pub mention_attention: Attention,
    pub char_rnn: RnnCell,
    pub context_gru: BiGru,
    pub context_attention: Attention,
    pub concat: Concat,
    pub mlr: Mlr,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    /// Frozen word embeddings, already expressed in the encoder's space.
    pub words: Matrix,
    pub components: Components,
}

/// Result of one forward pass.
pub struct Forward<O: Ops> {
    pub logits: O::V,
    /// Output of the concatenation, in the concat component's space.
    pub text: O::V,
    pub crossings: usize,
}

/// Randomness used by dropout during training.
pub struct Dropout<'a, R: Rng> {
    pub rng: &'a mut R,
}

impl Model {
    /// Builds a model with freshly initialised parameters. `words` must hold
    /// `vocab_size` rows of `word_dim` values in the encoder's space.
    pub fn new(config: ModelConfig, words: Matrix, seed: u64) -> Result<Self> {
        config.validate()?;
        if words.rows() != config.vocab_size || (words.rows() > 0 && words.cols() != config.word_dim) {
            return Err(Error::InvalidArgument(format!(
                "word table is {}x{}, config expects {}x{}",
                words.rows(),
                words.cols(),
                config.vocab_size,
                config.word_dim
            )));
        }
        let (params, components) = init_params(&config, seed);
        Ok(Self {
            config,
            params,
            words,
            components,
        })
    }

    /// Rebuilds the layer handles for `config` around existing values.
    pub fn from_parts(config: ModelConfig, words: Matrix, params: ParamStore) -> Result<Self> {
        let mut model = Self::new(config, words, 0)?;
        model.params.load_values(&params)?;
        Ok(model)
    }

    fn word<O: Ops>(&self, o: &O, p: &Bound<O>, id: usize) -> O::V {
        if id < self.words.rows() {
            o.vector(self.words.row(id))
        } else {
            p.vec(o, self.components.oov)
        }
    }

    fn words_of<O: Ops, R: Rng>(&self, o: &O, p: &Bound<O>, ids: &[usize], drop: &mut Option<Dropout<'_, R>>) -> Vec<O::V> {
        let rate = self.config.dropout_input;
        ids.iter()
            .map(|&id| {
                let dropped = match drop.as_mut() {
                    Some(d) => rate > 0.0 && d.rng.gen::<f64>() < rate,
                    None => false,
                };
                if dropped {
                    o.zeros(self.config.word_dim)
                } else {
                    self.word(o, p, id)
                }
            })
            .collect()
    }

    /// Forward pass; `drop` enables dropout.
    pub fn forward<O: Ops, R: Rng>(
        &self,
        o: &O,
        p: &Bound<O>,
        ex: &EncodedExample,
        mut drop: Option<Dropout<'_, R>>,
    ) -> Result<Forward<O>> {
        let c = &self.components;
        let sp = self.config.spaces;
        if ex.mention.is_empty() || ex.chars.is_empty() || ex.context.is_empty() {
            return Err(Error::InvalidArgument("empty mention or context".into()));
        }
        if ex.span.0 >= ex.span.1 || ex.span.1 > ex.context.len() {
            return Err(Error::InvalidArgument(format!(
                "mention span {:?} outside a context of {} tokens",
                ex.span,
                ex.context.len()
            )));
        }
        let mut crossings = 0;
        let mut cross = |xs: Vec<O::V>, from: SpaceTag, to: SpaceTag| -> Vec<O::V> {
            if from != to {
                crossings += 1;
            }
            xs.iter().map(|x| layers::convert(o, x, from, to)).collect()
        };

        // mention words
        let words = self.words_of(o, p, &ex.mention, &mut drop);
        let tokens = words
            .iter()
            .map(|w| c.mention_ffnn.forward(o, p, w))
            .collect::<Result<Vec<_>>>()?;
        let tokens = cross(tokens, sp.encoder, sp.attention);
        let cap = self.config.mention_positions - 1;
        let positions: Vec<usize> = (0..tokens.len()).map(|i| i.min(cap)).collect();
        let mention = c.mention_attention.forward_at(o, p, &tokens, &positions, None)?.output;

        // mention characters
        let chars: Vec<O::V> = ex
            .chars
            .iter()
            .map(|&id| {
                if id >= self.config.char_vocab_size {
                    return Err(Error::InvalidArgument(format!("char id {id} outside the table")));
                }
                Ok(p.row(o, c.chars, id))
            })
            .collect::<Result<_>>()?;
        let states = c.char_rnn.run(o, p, &chars)?;
        let states = cross(states, sp.encoder, sp.attention);
        let char_repr = uniform_pool(o, sp.attention, &states)?;

        // context
        let words = self.words_of(o, p, &ex.context, &mut drop);
        let states = c.context_gru.forward(o, p, &words)?;
        let states = cross(states, sp.encoder, sp.attention);
        let positions: Vec<usize> = (0..states.len())
            .map(|i| relative_position(i, ex.span, self.config.max_relative))
            .collect();
        let context = c.context_attention.forward_at(o, p, &states, &positions, None)?.output;

        let parts: Vec<O::V> = [mention, char_repr, context]
            .into_iter()
            .flat_map(|x| cross(vec![x], sp.attention, sp.concat))
            .collect();
        let mut text = c.concat.forward(o, p, &parts)?;
        if let Some(d) = drop.as_mut() {
            let rate = self.config.dropout_concat;
            if rate > 0.0 {
                let keep = layers::keep_mask(d.rng, o.dim(&text), rate);
                text = layers::dropout(o, sp.concat, &text, &keep, rate)?;
            }
        }
        let x = cross(vec![text.clone()], sp.concat, sp.mlr).pop().expect("one vector");
        let logits = c.mlr.logits(o, p, &x)?;
        Ok(Forward {
            logits,
            text,
            crossings,
        })
    }

    /// Logits of one example, without dropout.
    pub fn classify(&self, ex: &EncodedExample) -> Result<Vec<f64>> {
        let o = self.eval();
        let p = self.params.bind(&o);
        Ok(self.forward::<_, ChaCha8Rng>(&o, &p, ex, None)?.logits)
    }

    pub fn predict(&self, ex: &EncodedExample) -> Result<Vec<usize>> {
        Ok(layers::multilabel_predict(&self.classify(ex)?))
    }

    /// Size of the merged representation: its distance from the origin for a
    /// hyperbolic concat, its Euclidean norm otherwise.
    pub fn text_vector_norm(&self, ex: &EncodedExample) -> Result<f64> {
        let o = self.eval();
        let p = self.params.bind(&o);
        let f = self.forward::<_, ChaCha8Rng>(&o, &p, ex, None)?;
        Ok(text_norm(&o, self.config.spaces.concat, &f.text))
    }

    pub fn eval(&self) -> Eval {
        Eval::new(self.config.stability)
    }

    /// Binds the parameters to a backend.
    pub fn bind<O: Bind>(&self, o: &O) -> Bound<O> {
        self.params.bind(o)
    }
}

pub fn text_norm(o: &Eval, space: SpaceTag, x: &Vec<f64>) -> f64 {
    match space {
        SpaceTag::Hyperbolic => kernel::distance_from_origin(o, x),
        SpaceTag::Euclidean => o.norm(x),
    }
}

/// Midpoint with equal weights, or the mean in Euclidean space.
fn uniform_pool<O: Ops>(o: &O, space: SpaceTag, xs: &[O::V]) -> Result<O::V> {
    match space {
        SpaceTag::Hyperbolic => {
            let w: Vec<O::S> = xs.iter().map(|_| o.lit(1.0)).collect();
            kernel::mobius_midpoint(o, xs, &w)
        }
        SpaceTag::Euclidean => {
            let mut acc = xs[0].clone();
            for x in &xs[1..] {
                acc = o.vadd(&acc, x);
            }
            Ok(o.scale_by(&acc, 1.0 / xs.len() as f64))
        }
    }
}

/// Row of the context position table for token `i`: its signed offset from
/// the mention span (zero inside it), clipped to `±max_rel`, shifted by
/// `max_rel`.
pub fn relative_position(i: usize, span: (usize, usize), max_rel: usize) -> usize {
    let offset: i64 = if i < span.0 {
        i as i64 - span.0 as i64
    } else if i >= span.1 {
        i as i64 - span.1 as i64 + 1
    } else {
        0
    };
    let m = max_rel as i64;
    (offset.clamp(-m, m) + m) as usize
}

pub(crate) fn init_params(cfg: &ModelConfig, seed: u64) -> (ParamStore, Components) {
    let rng = &mut ChaCha8Rng::seed_from_u64(seed);
    let sp = cfg.spaces;
    let mut store = ParamStore::new();
    let oov = layers::add_point_table(&mut store, rng, sp.encoder, "words.oov".into(), 1, cfg.word_dim);
    let chars = layers::add_point_table(&mut store, rng, sp.encoder, "chars".into(), cfg.char_vocab_size, cfg.d_c);
    let mention_ffnn = Linear::new(
        &mut store,
        rng,
        "mention.ffnn",
        sp.encoder,
        cfg.word_dim,
        cfg.d_m,
        Some(Unary::Tanh),
    );
    let mention_attention = Attention::new(&mut store, rng, "mention.attention", sp.attention, cfg.d_m, cfg.mention_positions);
    let char_rnn = RnnCell::new(&mut store, rng, "chars.rnn", sp.encoder, cfg.d_c, cfg.d_c, None);
    let context_gru = BiGru::new(&mut store, rng, "context.gru", sp.encoder, cfg.word_dim, cfg.d_s);
    let context_attention = Attention::new(
        &mut store,
        rng,
        "context.attention",
        sp.attention,
        2 * cfg.d_s,
        2 * cfg.max_relative + 1,
    );
    let m = cfg.classifier_dim();
    let concat = Concat::new(&mut store, rng, "concat", sp.concat, &[cfg.d_m, cfg.d_c, 2 * cfg.d_s], m);
    let mlr = Mlr::new(&mut store, rng, "mlr", sp.mlr, m, cfg.num_classes);
    (
        store,
        Components {
            oov,
            chars,
            mention_ffnn,
            mention_attention,
            char_rnn,
            context_gru,
            context_attention,
            concat,
            mlr,
        },
    )
}

#[cfg(test)]
mod tests;
