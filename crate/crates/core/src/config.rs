//! Run configuration: a flat `key = value` file with named size presets.
//!
//! Lines starting with `#` are comments. `preset` is applied before the
//! other keys regardless of where it appears, so explicit keys override the
//! preset's sizes.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::EmbeddingSpace;
use crate::error::{Error, Result};
use crate::geometry::StabilityConfig;
use crate::layers::SpaceTag;
use crate::model::{ComponentSpaceConfig, ModelConfig};
use crate::optim::AdamConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Base,
    Large,
    XLarge,
}

impl Preset {
    /// `(d_M, d_C, d_S)`.
    pub fn dims(self) -> (usize, usize, usize) {
        match self {
            Preset::Base => (40, 20, 20),
            Preset::Large => (100, 50, 50),
            Preset::XLarge => (200, 100, 100),
        }
    }

    pub fn batch_size(self) -> usize {
        match self {
            Preset::Base => 900,
            Preset::Large => 350,
            Preset::XLarge => 160,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Preset::Base => "base",
            Preset::Large => "large",
            Preset::XLarge => "xlarge",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "base" => Ok(Preset::Base),
            "large" => Ok(Preset::Large),
            "xlarge" => Ok(Preset::XLarge),
            other => Err(Error::InvalidArgument(format!("unknown preset `{other}` (base, large, xlarge)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub preset: Preset,
    pub d_m: usize,
    pub d_c: usize,
    pub d_s: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub crowd_cycles: usize,
    pub dropout_input: f64,
    pub dropout_concat: f64,
    pub mention_nonlinearity: String,
    pub context_nonlinearity: String,
    pub adam: AdamConfig,
    pub spaces: ComponentSpaceConfig,
    pub mention_positions: usize,
    pub max_relative: usize,
    pub embedding_space: EmbeddingSpace,
    /// Tangent-space scale applied to Euclidean embeddings fed to a
    /// hyperbolic encoder.
    pub embedding_rescale: f64,
    pub stability: StabilityConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::preset(Preset::Base)
    }
}

pub const KEYS: &[&str] = &[
    "preset",
    "d_m",
    "d_c",
    "d_s",
    "batch_size",
    "epochs",
    "crowd_cycles",
    "dropout_input",
    "dropout_concat",
    "mention_nonlinearity",
    "context_nonlinearity",
    "lr",
    "weight_decay",
    "max_grad_norm",
    "beta1",
    "beta2",
    "adam_eps",
    "space",
    "space.encoder",
    "space.attention",
    "space.concat",
    "space.mlr",
    "mention_positions",
    "max_relative",
    "embedding_space",
    "embedding_rescale",
    "eps_boundary",
    "eps_zero",
    "tanh_clip",
    "atanh_clip",
];

fn num<T: FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
    value.parse().map_err(|_| format!("{key}: cannot parse `{value}`"))
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        let (d_m, d_c, d_s) = preset.dims();
        Self {
            preset,
            d_m,
            d_c,
            d_s,
            batch_size: preset.batch_size(),
            epochs: 40,
            crowd_cycles: 5,
            dropout_input: 0.2,
            dropout_concat: 0.1,
            mention_nonlinearity: "tanh".into(),
            context_nonlinearity: "tanh".into(),
            adam: AdamConfig::default(),
            spaces: ComponentSpaceConfig::default(),
            mention_positions: 10,
            max_relative: 50,
            embedding_space: EmbeddingSpace::Poincare,
            embedding_rescale: 1.0,
            stability: StabilityConfig::default(),
        }
    }

    /// Switches to `preset`, resetting the sizes and batch size it governs.
    pub fn apply_preset(&mut self, preset: Preset) {
        let (d_m, d_c, d_s) = preset.dims();
        self.preset = preset;
        self.d_m = d_m;
        self.d_c = d_c;
        self.d_s = d_s;
        self.batch_size = preset.batch_size();
    }

    fn set_inner(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let v = value.trim();
        match key {
            "preset" => self.apply_preset(v.parse().map_err(|e: Error| e.to_string())?),
            "d_m" => self.d_m = num(key, v)?,
            "d_c" => self.d_c = num(key, v)?,
            "d_s" => self.d_s = num(key, v)?,
            "batch_size" => self.batch_size = num(key, v)?,
            "epochs" => self.epochs = num(key, v)?,
            "crowd_cycles" => self.crowd_cycles = num(key, v)?,
            "dropout_input" => self.dropout_input = num(key, v)?,
            "dropout_concat" => self.dropout_concat = num(key, v)?,
            "mention_nonlinearity" => self.mention_nonlinearity = v.to_ascii_lowercase(),
            "context_nonlinearity" => self.context_nonlinearity = v.to_ascii_lowercase(),
            "lr" => self.adam.lr = num(key, v)?,
            "weight_decay" => self.adam.weight_decay = num(key, v)?,
            "max_grad_norm" => self.adam.max_grad_norm = num(key, v)?,
            "beta1" => self.adam.beta1 = num(key, v)?,
            "beta2" => self.adam.beta2 = num(key, v)?,
            "adam_eps" => self.adam.eps = num(key, v)?,
            "space" => self.spaces = ComponentSpaceConfig::uniform(v.parse::<SpaceTag>().map_err(|e| e.to_string())?),
            "space.encoder" | "space.attention" | "space.concat" | "space.mlr" => {
                self.spaces.set(&format!("{}={v}", &key[6..])).map_err(|e| e.to_string())?
            }
            "mention_positions" => self.mention_positions = num(key, v)?,
            "max_relative" => self.max_relative = num(key, v)?,
            "embedding_space" => self.embedding_space = v.parse().map_err(|e: Error| e.to_string())?,
            "embedding_rescale" => self.embedding_rescale = num(key, v)?,
            "eps_boundary" => self.stability.eps_boundary = num(key, v)?,
            "eps_zero" => self.stability.eps_zero = num(key, v)?,
            "tanh_clip" => self.stability.tanh_clip = num(key, v)?,
            "atanh_clip" => self.stability.atanh_clip = num(key, v)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Sets a single key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        self.set_inner(key.trim(), value).map_err(|e| Error::Config(vec![e]))
    }

    /// Parses a config file over the base preset. Every problem found,
    /// syntactic or semantic, is reported together.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut problems = Vec::new();
        let mut entries = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                problems.push(format!("line {}: expected `key = value`", i + 1));
                continue;
            };
            let k = k.trim();
            if !seen.insert(k.to_string()) {
                problems.push(format!("line {}: duplicate key `{k}`", i + 1));
                continue;
            }
            entries.push((i + 1, k.to_string(), v.trim().to_string()));
        }
        entries.sort_by_key(|(_, k, _)| k != "preset");
        for (line, k, v) in entries {
            if let Err(e) = cfg.set_inner(&k, &v) {
                problems.push(format!("line {line}: {e}"));
            }
        }
        if let Err(Error::Config(more)) = cfg.validate() {
            problems.extend(more);
        }
        if problems.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::Config(problems))
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let mut p = Vec::new();
        for (name, v) in [
            ("d_m", self.d_m),
            ("d_c", self.d_c),
            ("d_s", self.d_s),
            ("batch_size", self.batch_size),
            ("mention_positions", self.mention_positions),
        ] {
            if v == 0 {
                p.push(format!("{name} must be positive"));
            }
        }
        for (name, v) in [("dropout_input", self.dropout_input), ("dropout_concat", self.dropout_concat)] {
            if !(0.0..1.0).contains(&v) {
                p.push(format!("{name} must lie in [0, 1), got {v}"));
            }
        }
        for (name, v) in [("mention_nonlinearity", &self.mention_nonlinearity), ("context_nonlinearity", &self.context_nonlinearity)] {
            if v != "tanh" {
                p.push(format!("{name}: only `tanh` is supported, got `{v}`"));
            }
        }
        let a = &self.adam;
        if !(a.lr > 0.0 && a.lr.is_finite()) {
            p.push(format!("lr must be positive, got {}", a.lr));
        }
        if !(a.weight_decay >= 0.0) {
            p.push(format!("weight_decay must be non-negative, got {}", a.weight_decay));
        }
        if a.max_grad_norm.is_nan() {
            p.push("max_grad_norm is NaN".into());
        }
        for (name, b) in [("beta1", a.beta1), ("beta2", a.beta2)] {
            if !(0.0..1.0).contains(&b) {
                p.push(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if !(a.eps > 0.0) {
            p.push(format!("adam_eps must be positive, got {}", a.eps));
        }
        if !(self.embedding_rescale > 0.0 && self.embedding_rescale.is_finite()) {
            p.push(format!("embedding_rescale must be positive, got {}", self.embedding_rescale));
        }
        if let Err(e) = self.stability.validate() {
            p.push(e.to_string());
        }
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p))
        }
    }

    pub fn model_config(&self, word_dim: usize, num_classes: usize, vocab_size: usize, char_vocab_size: usize) -> ModelConfig {
        ModelConfig {
            d_m: self.d_m,
            d_c: self.d_c,
            d_s: self.d_s,
            word_dim,
            num_classes,
            vocab_size,
            char_vocab_size,
            mention_positions: self.mention_positions,
            max_relative: self.max_relative,
            dropout_input: self.dropout_input,
            dropout_concat: self.dropout_concat,
            spaces: self.spaces,
            stability: self.stability,
        }
    }

    /// Serialises every key; [`RunConfig::parse`] reads it back unchanged.
    pub fn to_text(&self) -> String {
        let s = &self.spaces;
        let a = &self.adam;
        let st = &self.stability;
        let rows: Vec<(&str, String)> = vec![
            ("preset", self.preset.to_string()),
            ("d_m", self.d_m.to_string()),
            ("d_c", self.d_c.to_string()),
            ("d_s", self.d_s.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("epochs", self.epochs.to_string()),
            ("crowd_cycles", self.crowd_cycles.to_string()),
            ("dropout_input", self.dropout_input.to_string()),
            ("dropout_concat", self.dropout_concat.to_string()),
            ("mention_nonlinearity", self.mention_nonlinearity.clone()),
            ("context_nonlinearity", self.context_nonlinearity.clone()),
            ("lr", a.lr.to_string()),
            ("weight_decay", a.weight_decay.to_string()),
            ("max_grad_norm", a.max_grad_norm.to_string()),
            ("beta1", a.beta1.to_string()),
            ("beta2", a.beta2.to_string()),
            ("adam_eps", a.eps.to_string()),
            ("space.encoder", s.encoder.to_string()),
            ("space.attention", s.attention.to_string()),
            ("space.concat", s.concat.to_string()),
            ("space.mlr", s.mlr.to_string()),
            ("mention_positions", self.mention_positions.to_string()),
            ("max_relative", self.max_relative.to_string()),
            ("embedding_space", self.embedding_space.to_string()),
            ("embedding_rescale", self.embedding_rescale.to_string()),
            ("eps_boundary", st.eps_boundary.to_string()),
            ("eps_zero", st.eps_zero.to_string()),
            ("tanh_clip", st.tanh_clip.to_string()),
            ("atanh_clip", st.atanh_clip.to_string()),
        ];
        rows.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}
