//! Text units, entity spans and the BIO label scheme.
//!
//! Offsets everywhere are character offsets (Unicode scalar values) into the
//! owning document's text, half-open `[start, end)`.

mod bio;
mod standoff;
mod tokenize;
mod tsv;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use bio::{decode_bio, encode_bio, encode_bio_lenient};
pub use standoff::{
    load_standoff, load_standoff_dir, parse_ann, read_ann_file, write_ann, write_ann_file,
};
pub use tokenize::{repair_merged_token, repair_sentence, sentences_from_text, tokenize_line};
pub use tsv::{read_corpus_tsv, write_corpus_tsv, TsvDocument};

/// Label id into a [`LabelCatalog`].
pub type LabelId = usize;

/// The four entity classes of the pharmacological NER task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EntityType {
    #[serde(rename = "PROTEINAS")]
    Proteinas,
    #[serde(rename = "NORMALIZABLES")]
    Normalizables,
    #[serde(rename = "NO_NORMALIZABLES")]
    NoNormalizables,
    #[serde(rename = "UNCLEAR")]
    Unclear,
}

impl EntityType {
    /// All types, in priority order (used to break annotation ties).
    pub const ALL: [EntityType; 4] = [
        EntityType::Proteinas,
        EntityType::Normalizables,
        EntityType::NoNormalizables,
        EntityType::Unclear,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EntityType::Proteinas => "PROTEINAS",
            EntityType::Normalizables => "NORMALIZABLES",
            EntityType::NoNormalizables => "NO_NORMALIZABLES",
            EntityType::Unclear => "UNCLEAR",
        }
    }

    /// Lower value wins overlap ties.
    pub fn priority(self) -> usize {
        self as usize
    }
}

impl fmt::Display for EntityType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EntityType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "PROTEINAS" => Ok(EntityType::Proteinas),
            "NORMALIZABLES" => Ok(EntityType::Normalizables),
            "NO_NORMALIZABLES" => Ok(EntityType::NoNormalizables),
            "UNCLEAR" => Ok(EntityType::Unclear),
            other => Err(Error::InvalidArgument(format!("unknown entity type `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub surface: String,
    pub start: usize,
    pub end: usize,
    pub pos: Option<String>,
}

impl Token {
    pub fn new(surface: impl Into<String>, start: usize, end: usize) -> Self {
        Token {
            surface: surface.into(),
            start,
            end,
            pos: None,
        }
    }

    pub fn with_pos(mut self, pos: impl Into<String>) -> Self {
        self.pos = Some(pos.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub doc_id: String,
    pub tokens: Vec<Token>,
}

impl Sentence {
    pub fn new(doc_id: impl Into<String>, tokens: Vec<Token>) -> Self {
        Sentence {
            doc_id: doc_id.into(),
            tokens,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Character range covered by the sentence, if it has tokens.
    pub fn extent(&self) -> Option<(usize, usize)> {
        Some((self.tokens.first()?.start, self.tokens.last()?.end))
    }

    /// Text of tokens `first..=last`, with inter-token gaps rendered as spaces.
    pub fn text_between(&self, first: usize, last: usize) -> String {
        let mut out = String::new();
        for i in first..=last {
            if i > first {
                let gap = self.tokens[i].start.saturating_sub(self.tokens[i - 1].end);
                out.extend(std::iter::repeat(' ').take(gap));
            }
            out.push_str(&self.tokens[i].surface);
        }
        out
    }

    /// Checks that offsets are valid, strictly increasing and non-overlapping.
    pub fn validate(&self) -> Result<()> {
        let mut prev_end = 0;
        for (i, tok) in self.tokens.iter().enumerate() {
            if tok.surface.is_empty() || tok.end <= tok.start {
                return Err(Error::Alignment {
                    start: tok.start,
                    end: tok.end,
                    message: "is not a valid token".into(),
                });
            }
            if i > 0 && tok.start < prev_end {
                return Err(Error::Alignment {
                    start: tok.start,
                    end: tok.end,
                    message: "overlaps the preceding token".into(),
                });
            }
            prev_end = tok.end;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
}

impl Document {
    /// Text slice over character offsets `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> Option<&str> {
        char_slice(&self.text, start, end)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EntitySpan {
    pub start: usize,
    pub end: usize,
    pub etype: EntityType,
    pub text: String,
}

impl EntitySpan {
    pub fn new(start: usize, end: usize, etype: EntityType, text: impl Into<String>) -> Self {
        EntitySpan {
            start,
            end,
            etype,
            text: text.into(),
        }
    }

    /// Identity used for matching: offsets and type, not text.
    pub fn key(&self) -> (usize, usize, EntityType) {
        (self.start, self.end, self.etype)
    }

    pub fn overlaps(&self, other: &EntitySpan) -> bool {
        self.start < other.end && other.start < self.end
    }
}

/// A span as it appears in a standoff file, with its annotation id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Annotation {
    pub id: String,
    pub span: EntitySpan,
}

/// A sentence paired with one label per token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledSentence {
    pub sentence: Sentence,
    pub labels: Vec<LabelId>,
}

/// How a label id is interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelKind {
    Outside,
    Begin(EntityType),
    Inside(EntityType),
}

/// `O` followed by `B-t`, `I-t` for every entity type `t`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "CatalogRepr", into = "CatalogRepr")]
pub struct LabelCatalog {
    types: Vec<EntityType>,
    labels: Vec<String>,
    index: BTreeMap<String, LabelId>,
}

#[derive(Serialize, Deserialize)]
struct CatalogRepr {
    types: Vec<EntityType>,
}

impl From<CatalogRepr> for LabelCatalog {
    fn from(r: CatalogRepr) -> Self {
        LabelCatalog::new(&r.types)
    }
}

impl From<LabelCatalog> for CatalogRepr {
    fn from(c: LabelCatalog) -> Self {
        CatalogRepr { types: c.types }
    }
}

impl LabelCatalog {
    pub fn new(types: &[EntityType]) -> Self {
        let mut labels = vec!["O".to_string()];
        for t in types {
            labels.push(format!("B-{t}"));
            labels.push(format!("I-{t}"));
        }
        let index = labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.clone(), i))
            .collect();
        LabelCatalog {
            types: types.to_vec(),
            labels,
            index,
        }
    }

    /// The nine-label catalog over all four task types.
    pub fn task() -> Self {
        LabelCatalog::new(&EntityType::ALL)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn types(&self) -> &[EntityType] {
        &self.types
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn id(&self, label: &str) -> Option<LabelId> {
        self.index.get(label).copied()
    }

    pub fn label(&self, id: LabelId) -> &str {
        &self.labels[id]
    }

    pub fn outside(&self) -> LabelId {
        0
    }

    fn type_slot(&self, etype: EntityType) -> Option<usize> {
        self.types.iter().position(|&t| t == etype)
    }

    pub fn begin(&self, etype: EntityType) -> Option<LabelId> {
        self.type_slot(etype).map(|k| 1 + 2 * k)
    }

    pub fn inside(&self, etype: EntityType) -> Option<LabelId> {
        self.type_slot(etype).map(|k| 2 + 2 * k)
    }

    pub fn kind(&self, id: LabelId) -> LabelKind {
        if id == 0 {
            return LabelKind::Outside;
        }
        let t = self.types[(id - 1) / 2];
        if id % 2 == 1 {
            LabelKind::Begin(t)
        } else {
            LabelKind::Inside(t)
        }
    }
}

pub(crate) fn char_slice(text: &str, start: usize, end: usize) -> Option<&str> {
    if end < start {
        return None;
    }
    let mut iter = text.char_indices().map(|(b, _)| b).chain(std::iter::once(text.len()));
    let b_start = iter.nth(start)?;
    let b_end = if end == start {
        b_start
    } else {
        iter.nth(end - start - 1)?
    };
    Some(&text[b_start..b_end])
}
