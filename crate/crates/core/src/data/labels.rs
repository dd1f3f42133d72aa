use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Coarse,
    Fine,
    Ultra,
}

impl Granularity {
    pub const ALL: [Granularity; 3] = [Granularity::Coarse, Granularity::Fine, Granularity::Ultra];

    pub fn as_str(self) -> &'static str {
        match self {
            Granularity::Coarse => "coarse",
            Granularity::Fine => "fine",
            Granularity::Ultra => "ultra",
        }
    }
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Granularity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "coarse" | "general" => Ok(Granularity::Coarse),
            "fine" => Ok(Granularity::Fine),
            "ultra" | "ultra-fine" | "ultrafine" | "finer" => Ok(Granularity::Ultra),
            other => Err(Error::InvalidArgument(format!("unknown granularity `{other}`"))),
        }
    }
}

/// Ordered label set with a granularity per label. Ids are dense in `0..K`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Entries", into = "Entries")]
pub struct LabelInventory {
    labels: Vec<String>,
    granularity: Vec<Granularity>,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct Entries(Vec<(String, Granularity)>);

impl TryFrom<Entries> for LabelInventory {
    type Error = Error;

    fn try_from(e: Entries) -> Result<Self> {
        Self::new(e.0)
    }
}

impl From<LabelInventory> for Entries {
    fn from(inv: LabelInventory) -> Self {
        Entries(inv.labels.into_iter().zip(inv.granularity).collect())
    }
}

impl LabelInventory {
    pub fn new<I, S>(entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Granularity)>,
        S: Into<String>,
    {
        let mut inv = Self {
            labels: Vec::new(),
            granularity: Vec::new(),
            index: HashMap::new(),
        };
        for (label, g) in entries {
            let label = label.into();
            if label.is_empty() || label.chars().any(char::is_whitespace) {
                return Err(Error::InvalidArgument(format!("label `{label}` is empty or has whitespace")));
            }
            if inv.index.insert(label.clone(), inv.labels.len()).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate label `{label}`")));
            }
            inv.labels.push(label);
            inv.granularity.push(g);
        }
        Ok(inv)
    }

    /// Parses `label<TAB>granularity` lines; blank lines and `#` comments
    /// are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = line.split_whitespace();
            let (Some(label), Some(g), None) = (fields.next(), fields.next(), fields.next()) else {
                return Err(Error::parse(i + 1, "label", "expected `label<TAB>granularity`"));
            };
            let g = g.parse().map_err(|e: Error| Error::parse(i + 1, "granularity", e.to_string()))?;
            entries.push((label.to_string(), g));
        }
        Self::new(entries)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        self.labels
            .iter()
            .zip(&self.granularity)
            .map(|(l, g)| format!("{l}\t{g}\n"))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn id(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.labels[id]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn granularity(&self, id: usize) -> Granularity {
        self.granularity[id]
    }

    pub fn granularities(&self) -> &[Granularity] {
        &self.granularity
    }

    /// Label ids of one granularity, ascending.
    pub fn partition(&self, g: Granularity) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.granularity[i] == g).collect()
    }
}
