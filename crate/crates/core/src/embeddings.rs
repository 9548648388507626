//! Embedding sources, either pretrained word/subword vector tables or a
//! deterministic hashed fallback, and how a run combines them into one
//! word representation.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Name of the trainable character-level source.
pub const CHAR_SOURCE: &str = "char";
/// Marker BPEmb-style vocabularies put in front of word-initial pieces.
pub const WORD_START: char = '▁';

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VectorKind {
    Word,
    Subword,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub name: String,
    pub dim: usize,
    pub kind: VectorKind,
    vectors: HashMap<String, Vec<f64>>,
    max_key_chars: usize,
}

impl EmbeddingTable {
    pub fn new(name: impl Into<String>, dim: usize, kind: VectorKind) -> Self {
        EmbeddingTable {
            name: name.into(),
            dim,
            kind,
            vectors: HashMap::new(),
            max_key_chars: 0,
        }
    }

    /// Inserts a vector; returns whether the key was already present.
    pub fn insert(&mut self, key: impl Into<String>, vector: Vec<f64>) -> Result<bool> {
        if vector.len() != self.dim {
            return Err(Error::Dimension(format!(
                "{}: vector of {} dims, table has {}",
                self.name,
                vector.len(),
                self.dim
            )));
        }
        let key = key.into();
        self.max_key_chars = self.max_key_chars.max(key.chars().count());
        Ok(self.vectors.insert(key, vector).is_some())
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, key: &str) -> Option<&[f64]> {
        self.vectors.get(key).map(Vec::as_slice)
    }

    /// Order-independent digest of the table contents.
    pub fn checksum(&self) -> [u8; 32] {
        let mut keys: Vec<&String> = self.vectors.keys().collect();
        keys.sort();
        let mut h = Sha256::new();
        for k in keys {
            h.update(k.as_bytes());
            for x in &self.vectors[k] {
                h.update(x.to_le_bytes());
            }
        }
        h.finalize().into()
    }
}

/// Reads a text vector file: one `key v1 … v_dim` entry per line, with an
/// optional `count dim` header line.
pub fn load_vectors(
    path: &Path,
    expected_dim: usize,
    name: &str,
    kind: VectorKind,
) -> Result<EmbeddingTable> {
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_vectors(&content, expected_dim, name, kind, &path.display().to_string())
}

pub fn parse_vectors(
    content: &str,
    expected_dim: usize,
    name: &str,
    kind: VectorKind,
    location: &str,
) -> Result<EmbeddingTable> {
    let mut table = EmbeddingTable::new(name, expected_dim, kind);
    for (i, line) in content.lines().enumerate() {
        let loc = || format!("{location}:{}", i + 1);
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(' ').collect();
        if i == 0 && fields.len() == 2 && fields.iter().all(|f| f.parse::<usize>().is_ok()) {
            let dim: usize = fields[1].parse().unwrap();
            if dim != expected_dim {
                return Err(Error::parse(
                    loc(),
                    format!("header declares {dim} dims, expected {expected_dim}"),
                ));
            }
            continue;
        }
        if fields.len() != expected_dim + 1 {
            return Err(Error::parse(
                loc(),
                format!("{} values, expected {expected_dim}", fields.len() - 1),
            ));
        }
        let mut vector = Vec::with_capacity(expected_dim);
        for f in &fields[1..] {
            vector.push(
                f.parse::<f64>()
                    .map_err(|_| Error::parse(loc(), format!("unparsable value `{f}`")))?,
            );
        }
        if table.insert(fields[0], vector)? {
            warn!("{}: duplicate key `{}`, keeping the later vector", loc(), fields[0]);
        }
    }
    Ok(table)
}

/// Stored vector for `word`, else for its lowercase form, else zeros.
pub fn lookup_word(table: &EmbeddingTable, word: &str) -> Vec<f64> {
    table
        .get(word)
        .or_else(|| table.get(&word.to_lowercase()))
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|| vec![0.0; table.dim])
}

/// Greedy longest-match segmentation against the table's own keys.
/// Characters no key covers become `None` pieces.
pub fn segment_subwords<'a>(table: &'a EmbeddingTable, word: &str) -> Vec<Option<&'a [f64]>> {
    let chars: Vec<char> = word.chars().collect();
    let mut pieces = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let longest = (i + 1..=chars.len().min(i + table.max_key_chars))
            .rev()
            .find_map(|j| {
                let piece: String = chars[i..j].iter().collect();
                if i == 0 {
                    let marked = format!("{WORD_START}{piece}");
                    if let Some(v) = table.get(&marked) {
                        return Some((j, v));
                    }
                }
                table.get(&piece).map(|v| (j, v))
            });
        match longest {
            Some((j, v)) => {
                pieces.push(Some(v));
                i = j;
            }
            None => {
                pieces.push(None);
                i += 1;
            }
        }
    }
    pieces
}

/// Mean of the known piece vectors; zeros when nothing is covered.
pub fn lookup_subword(table: &EmbeddingTable, word: &str) -> Vec<f64> {
    let pieces = segment_subwords(table, word);
    let known: Vec<&[f64]> = pieces.into_iter().flatten().collect();
    let mut out = vec![0.0; table.dim];
    if known.is_empty() {
        return out;
    }
    for v in &known {
        for (o, x) in out.iter_mut().zip(v.iter()) {
            *o += x;
        }
    }
    let n = known.len() as f64;
    out.iter_mut().for_each(|o| *o /= n);
    out
}

/// Unit-norm vector derived from a hash of `(seed, source, key)`.
pub fn hashed_vector(seed: u64, source: &str, key: &str, dim: usize) -> Vec<f64> {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(source.as_bytes());
    h.update([0u8]);
    h.update(key.as_bytes());
    let digest: [u8; 32] = h.finalize().into();
    let mut rng = ChaCha8Rng::from_seed(digest);
    let mut v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

/// Where a frozen source's vectors come from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceLocation {
    File(PathBuf),
    Fallback { seed: u64 },
}

/// Registry entry for a frozen (pretrained) source.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub name: String,
    pub dim: usize,
    pub kind: VectorKind,
    pub location: SourceLocation,
}

impl SourceSpec {
    pub fn open(&self) -> Result<EmbeddingSource> {
        match &self.location {
            SourceLocation::File(path) => {
                if !path.exists() {
                    return Err(Error::Config(format!(
                        "embedding source `{}`: file {} not found",
                        self.name,
                        path.display()
                    )));
                }
                Ok(EmbeddingSource::Table(load_vectors(path, self.dim, &self.name, self.kind)?))
            }
            SourceLocation::Fallback { seed } => Ok(EmbeddingSource::Fallback {
                name: self.name.clone(),
                dim: self.dim,
                seed: *seed,
            }),
        }
    }
}

/// An opened frozen source.
#[derive(Debug, Clone, PartialEq)]
pub enum EmbeddingSource {
    Table(EmbeddingTable),
    Fallback { name: String, dim: usize, seed: u64 },
}

impl EmbeddingSource {
    pub fn dim(&self) -> usize {
        match self {
            EmbeddingSource::Table(t) => t.dim,
            EmbeddingSource::Fallback { dim, .. } => *dim,
        }
    }

    pub fn vector(&self, word: &str) -> Vec<f64> {
        match self {
            EmbeddingSource::Table(t) => match t.kind {
                VectorKind::Word => lookup_word(t, word),
                VectorKind::Subword => lookup_subword(t, word),
            },
            EmbeddingSource::Fallback { name, dim, seed } => hashed_vector(*seed, name, word, *dim),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Combine {
    Concat,
    Attention,
}

/// Which sources a run uses and how they become one vector per token.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepresentationSpec {
    pub sources: Vec<String>,
    pub combine: Combine,
    pub include_features_in_input: bool,
}

impl RepresentationSpec {
    /// Whether the model needs the word-feature vector at all.
    pub fn uses_features(&self) -> bool {
        self.include_features_in_input || self.combine == Combine::Attention
    }

    /// Representation size fed to the sentence encoder.
    pub fn output_dim(&self, dim_of: impl Fn(&str) -> usize, feature_dim: usize) -> usize {
        match self.combine {
            Combine::Concat => {
                let base: usize = self.sources.iter().map(|s| dim_of(s)).sum();
                base + if self.include_features_in_input { feature_dim } else { 0 }
            }
            Combine::Attention => self.sources.iter().map(|s| dim_of(s)).max().unwrap_or(0),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_with_and_without_header() {
        let t = parse_vectors("a 1 2 3\nb 4 5 6\n", 3, "t", VectorKind::Word, "x").unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.get("b"), Some(&[4.0, 5.0, 6.0][..]));
        let t = parse_vectors("2 3\na 1 2 3\nb 4 5 6\n", 3, "t", VectorKind::Word, "x").unwrap();
        assert_eq!(t.len(), 2);
        let err = parse_vectors("a 1 2 3\nb 4 5\n", 3, "t", VectorKind::Word, "x").unwrap_err();
        assert!(err.to_string().contains("x:2"), "{err}");
        assert!(parse_vectors("a 1 z 3\n", 3, "t", VectorKind::Word, "x").is_err());
        assert!(parse_vectors("2 4\na 1 2 3\n", 3, "t", VectorKind::Word, "x").is_err());
    }

    #[test]
    fn duplicate_keys_keep_last() {
        let t = parse_vectors("a 1\na 2\n", 1, "t", VectorKind::Word, "x").unwrap();
        assert_eq!(t.get("a"), Some(&[2.0][..]));
    }

    #[test]
    fn word_lookup_fallbacks() {
        let mut t = EmbeddingTable::new("ft", 2, VectorKind::Word);
        t.insert("glucosa", vec![1.0, 2.0]).unwrap();
        assert_eq!(lookup_word(&t, "glucosa"), vec![1.0, 2.0]);
        assert_eq!(lookup_word(&t, "Glucosa"), vec![1.0, 2.0]);
        assert_eq!(lookup_word(&t, "insulina"), vec![0.0, 0.0]);
        let before = t.checksum();
        let _ = lookup_word(&t, "x");
        assert_eq!(t.checksum(), before);
    }

    #[test]
    fn subword_lookup_averages_greedy_pieces() {
        let mut t = EmbeddingTable::new("bpe", 2, VectorKind::Subword);
        t.insert("ab", vec![1.0, 1.0]).unwrap();
        t.insert("c", vec![3.0, 3.0]).unwrap();
        t.insert("a", vec![9.0, 9.0]).unwrap();
        assert_eq!(lookup_subword(&t, "ab"), vec![1.0, 1.0]);
        assert_eq!(lookup_subword(&t, "abc"), vec![2.0, 2.0]);
        assert_eq!(lookup_subword(&t, "zz"), vec![0.0, 0.0]);
        // an uncovered character is skipped, not averaged in
        assert_eq!(lookup_subword(&t, "abzc"), vec![2.0, 2.0]);
    }

    #[test]
    fn subword_prefers_word_start_pieces() {
        let mut t = EmbeddingTable::new("bpe", 1, VectorKind::Subword);
        t.insert("▁glu", vec![4.0]).unwrap();
        t.insert("glu", vec![0.0]).unwrap();
        t.insert("cosa", vec![2.0]).unwrap();
        assert_eq!(lookup_subword(&t, "glucosa"), vec![3.0]);
    }

    #[test]
    fn hashed_vectors_are_unit_norm_and_stable() {
        let a = hashed_vector(13, "ft", "glucosa", 100);
        let b = hashed_vector(13, "ft", "glucosa", 100);
        assert_eq!(a, b);
        assert!((a.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
        assert_ne!(a, hashed_vector(13, "ft_domain", "glucosa", 100));
        assert_ne!(a, hashed_vector(14, "ft", "glucosa", 100));
    }

    #[test]
    fn representation_dims() {
        let dims = |s: &str| match s {
            "char" => 50,
            "bpe" => 300,
            _ => 100,
        };
        let s1 = RepresentationSpec {
            sources: vec!["char".into(), "ft".into(), "bpe".into()],
            combine: Combine::Concat,
            include_features_in_input: false,
        };
        assert_eq!(s1.output_dim(dims, 50), 450);
        let mut s3 = s1.clone();
        s3.sources.insert(2, "ft_domain".into());
        s3.include_features_in_input = true;
        assert_eq!(s3.output_dim(dims, 50), 600);
        s3.combine = Combine::Attention;
        assert_eq!(s3.output_dim(dims, 50), 300);
    }

    #[test]
    fn missing_source_file_is_config_error() {
        let spec = SourceSpec {
            name: "ft".into(),
            dim: 3,
            kind: VectorKind::Word,
            location: SourceLocation::File("/nonexistent/vectors.vec".into()),
        };
        assert!(matches!(spec.open(), Err(Error::Config(_))));
    }
}
