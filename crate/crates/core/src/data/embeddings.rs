use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backend::{norm, Eval, Matrix};
use crate::error::{Error, Result};
use crate::geometry::{kernel, StabilityConfig};
use crate::layers::SpaceTag;

/// Geometry the stored vectors were trained in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingSpace {
    Poincare,
    Euclidean,
}

impl fmt::Display for EmbeddingSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EmbeddingSpace::Poincare => "poincare",
            EmbeddingSpace::Euclidean => "euclidean",
        })
    }
}

impl FromStr for EmbeddingSpace {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "poincare" | "poincaré" | "hyperbolic" => Ok(EmbeddingSpace::Poincare),
            "euclidean" => Ok(EmbeddingSpace::Euclidean),
            other => Err(Error::InvalidArgument(format!("unknown embedding space `{other}`"))),
        }
    }
}

/// Frozen word vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    dim: usize,
    vectors: Vec<f64>,
    pub space: EmbeddingSpace,
    /// Tangent-space factor applied to Euclidean vectors before `exp₀`.
    pub rescale: f64,
}

impl EmbeddingTable {
    pub fn new(entries: Vec<(String, Vec<f64>)>, space: EmbeddingSpace, rescale: f64) -> Result<Self> {
        if !(rescale.is_finite() && rescale > 0.0) {
            return Err(Error::InvalidArgument(format!("rescale must be positive, got {rescale}")));
        }
        let dim = entries.first().map_or(0, |(_, v)| v.len());
        let mut table = Self {
            tokens: Vec::with_capacity(entries.len()),
            index: HashMap::with_capacity(entries.len()),
            dim,
            vectors: Vec::with_capacity(entries.len() * dim),
            space,
            rescale,
        };
        for (i, (token, v)) in entries.into_iter().enumerate() {
            let line = i + 1;
            if v.len() != dim || dim == 0 {
                return Err(Error::parse(line, "vector", format!("expected {dim} values, found {}", v.len())));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::parse(line, "vector", "non-finite value"));
            }
            if space == EmbeddingSpace::Poincare && norm(&v) >= 1.0 {
                return Err(Error::parse(line, "vector", format!("norm {} is outside the unit ball", norm(&v))));
            }
            if table.index.insert(token.clone(), table.tokens.len()).is_some() {
                return Err(Error::parse(line, "token", format!("duplicate token `{token}`")));
            }
            table.tokens.push(token);
            table.vectors.extend(v);
        }
        Ok(table)
    }

    /// Parses whitespace-separated `token v₁ … vₙ` lines.
    pub fn read(reader: impl BufRead, space: EmbeddingSpace, rescale: f64) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let mut parts = line.split_whitespace();
            let Some(token) = parts.next() else { continue };
            let v = parts
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::parse(i + 1, "vector", e.to_string()))?;
            if let Some((_, first)) = entries.first() {
                let first: &Vec<f64> = first;
                if v.len() != first.len() {
                    return Err(Error::parse(i + 1, "vector", format!("expected {} values, found {}", first.len(), v.len())));
                }
            }
            entries.push((token.to_string(), v));
        }
        Self::new(entries, space, rescale)
    }

    pub fn write(&self, mut w: impl Write) -> Result<()> {
        for (i, t) in self.tokens.iter().enumerate() {
            write!(w, "{t}")?;
            for v in self.vector(i) {
                write!(w, " {v:?}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn vector(&self, id: usize) -> &[f64] {
        &self.vectors[id * self.dim..(id + 1) * self.dim]
    }

    /// Exact match first, then the lower-cased token.
    pub fn id(&self, token: &str) -> Option<usize> {
        self.index
            .get(token)
            .or_else(|| self.index.get(&token.to_lowercase()))
            .copied()
    }

    /// The vectors as consumed by an encoder in `space`: Poincaré vectors
    /// are used as they are (or through `log₀` by a Euclidean encoder);
    /// Euclidean vectors are rescaled and mapped with `exp₀` for a
    /// hyperbolic encoder.
    pub fn prepare(&self, space: SpaceTag, stability: StabilityConfig) -> Matrix {
        let o = Eval::new(stability);
        let rows: Vec<Vec<f64>> = (0..self.len())
            .map(|i| {
                let v = self.vector(i).to_vec();
                match (self.space, space) {
                    (EmbeddingSpace::Poincare, SpaceTag::Hyperbolic) => kernel::project(&o, &v),
                    (EmbeddingSpace::Poincare, SpaceTag::Euclidean) => kernel::log0(&o, &v),
                    (EmbeddingSpace::Euclidean, SpaceTag::Hyperbolic) => {
                        kernel::exp0(&o, &v.iter().map(|x| x * self.rescale).collect())
                    }
                    (EmbeddingSpace::Euclidean, SpaceTag::Euclidean) => v,
                }
            })
            .collect();
        if rows.is_empty() {
            Matrix::zeros(0, self.dim)
        } else {
            Matrix::from_rows(&rows)
        }
    }
}

pub fn load_embeddings(path: impl AsRef<Path>, space: EmbeddingSpace, rescale: f64) -> Result<EmbeddingTable> {
    let file = std::fs::File::open(path)?;
    EmbeddingTable::read(BufReader::new(file), space, rescale)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TEXT: &str = "the 0.1 0.2\nParis -0.5 0.3\ncity 0.0 0.7\n";

    #[test]
    fn parses_and_looks_up() {
        let t = EmbeddingTable::read(TEXT.as_bytes(), EmbeddingSpace::Poincare, 1.0).unwrap();
        assert_eq!((t.len(), t.dim()), (3, 2));
        assert_eq!(t.id("Paris"), Some(1));
        assert_eq!(t.id("The"), Some(0));
        assert_eq!(t.id("london"), None);
        assert_eq!(t.vector(2), &[0.0, 0.7]);
    }

    #[test]
    fn rejects_bad_tables() {
        let e = EmbeddingTable::read("a 0.1 0.2\nb 0.3\n".as_bytes(), EmbeddingSpace::Euclidean, 1.0).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 2, .. }));
        let e = EmbeddingTable::read("a 0.8 0.6\n".as_bytes(), EmbeddingSpace::Poincare, 1.0).unwrap_err();
        assert!(e.to_string().contains("unit ball"));
        assert!(EmbeddingTable::read("a 0.8 0.6\n".as_bytes(), EmbeddingSpace::Euclidean, 1.0).is_ok());
        assert!(EmbeddingTable::read("a 0.1 x\n".as_bytes(), EmbeddingSpace::Euclidean, 1.0).is_err());
    }

    #[test]
    fn preparation_per_space() {
        let stab = StabilityConfig::default();
        let o = Eval::new(stab);
        let p = EmbeddingTable::read(TEXT.as_bytes(), EmbeddingSpace::Poincare, 1.0).unwrap();
        assert_eq!(p.prepare(SpaceTag::Hyperbolic, stab).row(1), &[-0.5, 0.3]);
        let log = p.prepare(SpaceTag::Euclidean, stab);
        assert_eq!(log.row(1), kernel::log0(&o, &vec![-0.5, 0.3]).as_slice());

        let e = EmbeddingTable::read("w 3.0 -4.0\n".as_bytes(), EmbeddingSpace::Euclidean, 0.01).unwrap();
        let h = e.prepare(SpaceTag::Hyperbolic, stab);
        assert_eq!(h.row(0), kernel::exp0(&o, &vec![0.03, -0.04]).as_slice());
        assert_eq!(e.prepare(SpaceTag::Euclidean, stab).row(0), &[3.0, -4.0]);
    }

    #[test]
    fn round_trip() {
        let t = EmbeddingTable::read("a 0.1 -0.30000000000000004\nb 1e-300 0.5\n".as_bytes(), EmbeddingSpace::Poincare, 1.0)
            .unwrap();
        let mut buf = Vec::new();
        t.write(&mut buf).unwrap();
        let back = EmbeddingTable::read(buf.as_slice(), EmbeddingSpace::Poincare, 1.0).unwrap();
        assert_eq!(back, t);
    }
}
