//! Phrase -> unit vector tables (vocabulary and sentence embeddings).
//!
//! File format: a `dims=<n>` header line, then one `phrase<TAB>v1,v2,...`
//! record per line.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub const NORM_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct TextEmbeddingTable {
    dims: usize,
    phrases: Vec<String>,
    vectors: Vec<f32>,
    index: HashMap<String, usize>,
}

impl TextEmbeddingTable {
    pub fn new(dims: usize) -> Self {
        TextEmbeddingTable {
            dims,
            phrases: Vec::new(),
            vectors: Vec::new(),
            index: HashMap::new(),
        }
    }

    /// Adds a phrase. The vector must already be unit length.
    pub fn insert(&mut self, phrase: impl Into<String>, vector: &[f32]) -> Result<()> {
        let phrase = phrase.into();
        if vector.len() != self.dims {
            return Err(Error::DimMismatch {
                expected: self.dims,
                actual: vector.len(),
                context: "text table vector",
            });
        }
        if phrase.is_empty() || phrase.contains(['\t', '\n', '\r']) {
            return Err(Error::InvalidArgument(format!(
                "phrase {phrase:?} is empty or contains a tab or line break"
            )));
        }
        let norm = l2(vector);
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::InvalidArgument(format!(
                "vector for {phrase:?} has norm {norm}, expected 1"
            )));
        }
        if self.index.contains_key(&phrase) {
            return Err(Error::InvalidArgument(format!("duplicate phrase {phrase:?}")));
        }
        self.index.insert(phrase.clone(), self.phrases.len());
        self.phrases.push(phrase);
        self.vectors.extend_from_slice(vector);
        Ok(())
    }

    /// Like [`insert`](Self::insert) but normalizes the vector first.
    pub fn insert_normalized(&mut self, phrase: impl Into<String>, vector: &[f32]) -> Result<()> {
        let norm = l2(vector);
        if norm == 0.0 {
            return Err(Error::InvalidArgument("zero vector".into()));
        }
        let unit: Vec<f32> = vector.iter().map(|v| (*v as f64 / norm) as f32).collect();
        self.insert(phrase, &unit)
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.phrases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phrases.is_empty()
    }

    pub fn phrase(&self, i: usize) -> &str {
        &self.phrases[i]
    }

    pub fn vector(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dims..(i + 1) * self.dims]
    }

    pub fn get(&self, phrase: &str) -> Option<&[f32]> {
        self.index.get(phrase).map(|&i| self.vector(i))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f32])> + '_ {
        (0..self.len()).map(move |i| (self.phrase(i), self.vector(i)))
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let perr = |line: usize, reason: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            reason,
        };
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| perr(1, "missing dims header".into()))?;
        let dims: usize = header
            .strip_prefix("dims=")
            .and_then(|n| n.trim().parse().ok())
            .ok_or_else(|| perr(1, format!("expected dims=<n>, found {header:?}")))?;
        let mut table = TextEmbeddingTable::new(dims);
        for (i, line) in lines {
            if line.is_empty() {
                continue;
            }
            let (phrase, values) = line
                .split_once('\t')
                .ok_or_else(|| perr(i + 1, "missing tab separator".into()))?;
            let vector = values
                .split(',')
                .map(|v| v.trim().parse::<f32>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| perr(i + 1, e.to_string()))?;
            table
                .insert(phrase, &vector)
                .map_err(|e| perr(i + 1, e.to_string()))?;
        }
        Ok(table)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("dims={}\n", self.dims);
        for (phrase, v) in self.iter() {
            out.push_str(phrase);
            out.push('\t');
            for (j, x) in v.iter().enumerate() {
                if j > 0 {
                    out.push(',');
                }
                // Debug formatting of f32 is the shortest exact round-trip form.
                let _ = write!(out, "{x:?}");
            }
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

pub(crate) fn l2(v: &[f32]) -> f64 {
    v.iter().map(|x| (*x as f64) * (*x as f64)).sum::<f64>().sqrt()
}

/// Cosine similarity computed in f64.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
    let na = l2(a);
    let nb = l2(b);
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_roundtrip() {
        let text = "dims=2\ndog\t1,0\ncat\t0.6,0.8\n";
        let t = TextEmbeddingTable::parse(text, Path::new("v.tsv")).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.get("cat").unwrap(), &[0.6, 0.8]);
        let again = TextEmbeddingTable::parse(&t.to_text(), Path::new("v.tsv")).unwrap();
        assert_eq!(again, t);
    }

    #[test]
    fn rejects_non_unit_and_bad_dims() {
        let p = Path::new("v.tsv");
        assert!(TextEmbeddingTable::parse("dims=2\ndog\t1,1\n", p).is_err());
        assert!(TextEmbeddingTable::parse("dims=3\ndog\t1,0\n", p).is_err());
        assert!(TextEmbeddingTable::parse("dog\t1,0\n", p).is_err());
        let err = TextEmbeddingTable::parse("dims=2\ndog\t1,0\ndog\t0,1\n", p).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }));
    }

    #[test]
    fn cosine_basics() {
        assert!((cosine(&[1.0, 0.0], &[2.0, 0.0]) - 1.0).abs() < 1e-12);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 3.0]), 0.0);
        assert_eq!(cosine(&[0.0, 0.0], &[0.0, 3.0]), 0.0);
    }
}
