use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::LabelInventory;
use crate::error::{Error, Result};

/// A mention in its sentence with its gold types (label ids).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypedExample {
    pub mention: Vec<String>,
    pub left: Vec<String>,
    pub right: Vec<String>,
    pub labels: Vec<usize>,
}

impl TypedExample {
    /// Whole sentence: left context, mention, right context.
    pub fn context_tokens(&self) -> Vec<&str> {
        self.left
            .iter()
            .chain(&self.mention)
            .chain(&self.right)
            .map(String::as_str)
            .collect()
    }

    /// Position of the mention in [`Self::context_tokens`].
    pub fn span(&self) -> (usize, usize) {
        (self.left.len(), self.left.len() + self.mention.len())
    }

    /// Characters of the mention, tokens joined by single spaces.
    pub fn mention_chars(&self) -> Vec<char> {
        self.mention.join(" ").chars().collect()
    }
}

/// What to do with records that parse but cannot be used.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strictness {
    /// Fail on the first such record.
    Strict,
    /// Skip it and report a diagnostic.
    Lenient,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LoadedExamples {
    pub examples: Vec<TypedExample>,
    pub skipped: Vec<Diagnostic>,
}

const MENTION_KEYS: [&str; 2] = ["mention_span", "mention"];
const LEFT_KEYS: [&str; 2] = ["left_context", "left_context_token"];
const RIGHT_KEYS: [&str; 2] = ["right_context", "right_context_token"];
const LABEL_KEYS: [&str; 2] = ["labels", "y_str"];

fn field<'a>(obj: &'a serde_json::Map<String, Value>, keys: &[&str]) -> Option<&'a Value> {
    keys.iter().find_map(|k| obj.get(*k))
}

/// A string is split on whitespace; a list must hold strings.
fn tokens(v: &Value, line: usize, name: &str) -> Result<Vec<String>> {
    match v {
        Value::String(s) => Ok(s.split_whitespace().map(str::to_string).collect()),
        Value::Array(items) => items
            .iter()
            .map(|t| match t {
                Value::String(s) => Ok(s.clone()),
                other => Err(Error::parse(line, name, format!("expected a string token, found {other}"))),
            })
            .collect(),
        Value::Null => Ok(Vec::new()),
        other => Err(Error::parse(line, name, format!("expected a string or a list of strings, found {other}"))),
    }
}

/// Parses one record. `Ok(Err(_))` is a well-formed record that must be
/// rejected (empty mention, no labels, unknown label).
fn parse_record(text: &str, line: usize, inventory: &LabelInventory) -> Result<std::result::Result<TypedExample, String>> {
    let value: Value =
        serde_json::from_str(text).map_err(|e| Error::parse(line, "record", format!("not a JSON object: {e}")))?;
    let Value::Object(obj) = value else {
        return Err(Error::parse(line, "record", "not a JSON object"));
    };
    let get = |keys: &[&str], name: &str, required: bool| -> Result<Vec<String>> {
        match field(&obj, keys) {
            Some(v) => tokens(v, line, name),
            None if required => Err(Error::parse(line, name, "missing")),
            None => Ok(Vec::new()),
        }
    };
    let mention = get(&MENTION_KEYS, "mention_span", true)?;
    let left = get(&LEFT_KEYS, "left_context", false)?;
    let right = get(&RIGHT_KEYS, "right_context", false)?;
    let labels = get(&LABEL_KEYS, "labels", true)?;
    if mention.is_empty() {
        return Ok(Err("empty mention".into()));
    }
    if labels.is_empty() {
        return Ok(Err("no labels".into()));
    }
    let mut ids = Vec::with_capacity(labels.len());
    for l in &labels {
        match inventory.id(l) {
            Some(id) if !ids.contains(&id) => ids.push(id),
            Some(_) => {}
            None => return Ok(Err(format!("label `{l}` is not in the inventory"))),
        }
    }
    Ok(Ok(TypedExample {
        mention,
        left,
        right,
        labels: ids,
    }))
}

/// Reads one JSON record per line. Blank lines are ignored.
pub fn read_examples(reader: impl BufRead, inventory: &LabelInventory, mode: Strictness) -> Result<LoadedExamples> {
    let mut out = LoadedExamples::default();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let n = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        match parse_record(&line, n, inventory)? {
            Ok(ex) => out.examples.push(ex),
            Err(message) => match mode {
                Strictness::Strict => return Err(Error::parse(n, "record", message)),
                Strictness::Lenient => out.skipped.push(Diagnostic { line: n, message }),
            },
        }
    }
    Ok(out)
}

pub fn load_examples(path: impl AsRef<Path>, inventory: &LabelInventory, mode: Strictness) -> Result<LoadedExamples> {
    let file = std::fs::File::open(path)?;
    read_examples(BufReader::new(file), inventory, mode)
}

/// Writes records in the format read by [`read_examples`].
pub fn write_examples(mut w: impl Write, examples: &[TypedExample], inventory: &LabelInventory) -> Result<()> {
    for ex in examples {
        let record = serde_json::json!({
            "mention_span": ex.mention,
            "left_context": ex.left,
            "right_context": ex.right,
            "labels": ex.labels.iter().map(|&l| inventory.name(l)).collect::<Vec<_>>(),
        });
        writeln!(w, "{record}")?;
    }
    Ok(())
}
