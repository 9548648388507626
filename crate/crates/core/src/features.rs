//! Word features: POS tag id, length bin, frequency bin and word shape.
//!
//! On the model side the POS id becomes a 20-dim learned embedding and the
//! three bins become 10-dim one-hot blocks, 50 dimensions in total.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{Sentence, Token};
use crate::error::{Error, Result};

pub const POS_DIM: usize = 20;
pub const BINS: usize = 10;
/// Size of the realized feature vector.
pub const FEATURE_DIM: usize = POS_DIM + 3 * BINS;

/// Relative-frequency ladder in percent; a word lands in the first bin whose
/// threshold it exceeds, or in the last bin.
pub const FREQUENCY_THRESHOLDS: [f64; 9] = [1.0, 0.5, 0.1, 0.05, 0.01, 0.005, 0.001, 0.0005, 0.0001];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ShapeClass {
    Uppercase = 0,
    Lowercase = 1,
    Capitalized = 2,
    Numeric = 3,
    MostlyNumeric = 4,
    Punctuation = 5,
    MostlyPunctuation = 6,
    Letters = 7,
    Alphanumeric = 8,
    Other = 9,
}

impl ShapeClass {
    pub const ALL: [ShapeClass; 10] = [
        ShapeClass::Uppercase,
        ShapeClass::Lowercase,
        ShapeClass::Capitalized,
        ShapeClass::Numeric,
        ShapeClass::MostlyNumeric,
        ShapeClass::Punctuation,
        ShapeClass::MostlyPunctuation,
        ShapeClass::Letters,
        ShapeClass::Alphanumeric,
        ShapeClass::Other,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Whether this class's predicate holds for `word`, independent of order.
    pub fn matches(self, word: &str) -> bool {
        let chars: Vec<char> = word.chars().collect();
        let n = chars.len();
        if n == 0 {
            return false;
        }
        let letters_only = chars.iter().all(|c| c.is_alphabetic());
        let digits = chars.iter().filter(|c| c.is_numeric()).count();
        let punct = chars.iter().filter(|&&c| is_punctuation(c)).count();
        match self {
            ShapeClass::Uppercase => letters_only && chars.iter().all(|c| !c.is_lowercase()),
            ShapeClass::Lowercase => letters_only && chars.iter().all(|c| !c.is_uppercase()),
            ShapeClass::Capitalized => letters_only && chars[0].is_uppercase(),
            ShapeClass::Numeric => digits == n,
            ShapeClass::MostlyNumeric => 2 * digits > n,
            ShapeClass::Punctuation => punct == n,
            ShapeClass::MostlyPunctuation => 2 * punct > n,
            ShapeClass::Letters => letters_only,
            ShapeClass::Alphanumeric => chars.iter().all(|c| c.is_alphanumeric()),
            ShapeClass::Other => true,
        }
    }
}

fn is_punctuation(c: char) -> bool {
    !c.is_alphanumeric() && !c.is_whitespace()
}

/// First matching shape predicate, in the fixed listing order.
pub fn shape_class(word: &str) -> Result<ShapeClass> {
    if word.is_empty() {
        return Err(Error::InvalidArgument("shape of an empty word".into()));
    }
    Ok(ShapeClass::ALL
        .into_iter()
        .find(|c| c.matches(word))
        .unwrap_or(ShapeClass::Other))
}

/// `min(chars, 10) - 1`.
pub fn length_bin(word: &str) -> Result<usize> {
    let n = word.chars().count();
    if n == 0 {
        return Err(Error::InvalidArgument("length of an empty word".into()));
    }
    Ok(n.min(BINS) - 1)
}

/// Word counts over the clean training corpus, frozen before training.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrequencyTable {
    counts: BTreeMap<String, u64>,
    total: u64,
}

impl FrequencyTable {
    pub fn from_sentences<'a>(sentences: impl IntoIterator<Item = &'a Sentence>) -> Self {
        let mut table = FrequencyTable::default();
        for s in sentences {
            for t in &s.tokens {
                table.add(&t.surface, 1);
            }
        }
        table
    }

    pub fn add(&mut self, word: &str, count: u64) {
        *self.counts.entry(word.to_string()).or_default() += count;
        self.total += count;
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn count(&self, word: &str) -> u64 {
        self.counts.get(word).copied().unwrap_or(0)
    }

    /// Relative frequency in `[0, 1]`.
    pub fn relative(&self, word: &str) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.count(word) as f64 / self.total as f64
        }
    }

    pub fn to_tsv(&self) -> String {
        let mut out = format!("#total\t{}\n", self.total);
        for (w, c) in &self.counts {
            let _ = writeln!(out, "{w}\t{c}");
        }
        out
    }

    pub fn from_tsv(content: &str) -> Result<Self> {
        let mut table = FrequencyTable::default();
        let mut declared = None;
        for (i, line) in content.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let loc = || format!("frequency table:{}", i + 1);
            let (key, value) = line
                .rsplit_once('\t')
                .ok_or_else(|| Error::parse(loc(), "expected `word<TAB>count`"))?;
            let value: u64 = value
                .parse()
                .map_err(|_| Error::parse(loc(), format!("bad count `{value}`")))?;
            if key == "#total" {
                declared = Some(value);
            } else {
                table.add(key, value);
            }
        }
        if let Some(d) = declared {
            if d != table.total {
                return Err(Error::parse(
                    "frequency table",
                    format!("#total {d} disagrees with summed counts {}", table.total),
                ));
            }
        }
        Ok(table)
    }
}

pub fn frequency_bin(word: &str, table: &FrequencyTable) -> usize {
    frequency_bin_of(table.relative(word))
}

/// Bin for a relative frequency in `[0, 1]`.
pub fn frequency_bin_of(relative: f64) -> usize {
    let percent = relative * 100.0;
    FREQUENCY_THRESHOLDS
        .iter()
        .position(|&t| percent > t)
        .unwrap_or(BINS - 1)
}

/// POS tag vocabulary; id 0 is reserved for unknown or absent tags.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct PosVocab {
    tags: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl From<Vec<String>> for PosVocab {
    fn from(tags: Vec<String>) -> Self {
        PosVocab::from_tags(tags)
    }
}

impl From<PosVocab> for Vec<String> {
    fn from(v: PosVocab) -> Self {
        v.tags
    }
}

pub const UNK_POS: &str = "<UNK>";

impl Default for PosVocab {
    fn default() -> Self {
        PosVocab::from_tags(std::iter::empty::<String>())
    }
}

impl PosVocab {
    pub fn from_tags<S: Into<String>>(tags: impl IntoIterator<Item = S>) -> Self {
        let mut all = vec![UNK_POS.to_string()];
        for t in tags {
            let t = t.into();
            if !all.contains(&t) {
                all.push(t);
            }
        }
        let index = all.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        PosVocab { tags: all, index }
    }

    /// Sorted tag set of the given sentences.
    pub fn from_sentences<'a>(sentences: impl IntoIterator<Item = &'a Sentence>) -> Self {
        let set: std::collections::BTreeSet<&str> = sentences
            .into_iter()
            .flat_map(|s| s.tokens.iter().filter_map(|t| t.pos.as_deref()))
            .collect();
        PosVocab::from_tags(set)
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }

    pub fn id(&self, tag: Option<&str>) -> usize {
        tag.and_then(|t| self.index.get(t).copied()).unwrap_or(0)
    }

    pub fn to_lines(&self) -> String {
        self.tags.iter().skip(1).map(|t| format!("{t}\n")).collect()
    }

    pub fn from_lines(content: &str) -> Self {
        PosVocab::from_tags(content.lines().filter(|l| !l.is_empty()).map(str::to_string))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordFeatures {
    pub pos_id: usize,
    pub length_bin: usize,
    pub freq_bin: usize,
    pub shape_class: usize,
}

impl WordFeatures {
    /// The 30 one-hot dimensions (length, frequency, shape) of the realized
    /// vector; the POS embedding is learned and lives on the model side.
    pub fn one_hots(&self) -> [f64; 3 * BINS] {
        let mut v = [0.0; 3 * BINS];
        v[self.length_bin] = 1.0;
        v[BINS + self.freq_bin] = 1.0;
        v[2 * BINS + self.shape_class] = 1.0;
        v
    }
}

pub fn featurize(token: &Token, table: &FrequencyTable, pos_vocab: &PosVocab) -> Result<WordFeatures> {
    Ok(WordFeatures {
        pos_id: pos_vocab.id(token.pos.as_deref()),
        length_bin: length_bin(&token.surface)?,
        freq_bin: frequency_bin(&token.surface, table),
        shape_class: shape_class(&token.surface)?.index(),
    })
}

const DETERMINERS: &[&str] = &[
    "el", "la", "los", "las", "un", "una", "unos", "unas", "lo", "este", "esta", "estos", "estas",
    "ese", "esa", "su", "sus", "al", "del",
];
const PREPOSITIONS: &[&str] = &[
    "a", "ante", "bajo", "con", "contra", "de", "desde", "durante", "en", "entre", "hacia",
    "hasta", "mediante", "para", "por", "según", "sin", "sobre", "tras",
];
const CONJUNCTIONS: &[&str] = &["y", "e", "o", "u", "ni", "pero", "sino", "que", "aunque", "si"];
const PRONOUNS: &[&str] = &["se", "le", "les", "me", "nos", "él", "ella", "ellos", "ellas", "yo"];

/// Crude suffix-based Spanish POS guess used when the input has no tags.
pub fn heuristic_pos(word: &str) -> &'static str {
    let lower = word.to_lowercase();
    let first = word.chars().next().unwrap_or(' ');
    if word.chars().all(is_punctuation) {
        "PUNCT"
    } else if word.chars().any(|c| c.is_numeric())
        && word.chars().all(|c| c.is_numeric() || ",.".contains(c))
    {
        "NUM"
    } else if DETERMINERS.contains(&lower.as_str()) {
        "DET"
    } else if PREPOSITIONS.contains(&lower.as_str()) {
        "ADP"
    } else if CONJUNCTIONS.contains(&lower.as_str()) {
        "CONJ"
    } else if PRONOUNS.contains(&lower.as_str()) {
        "PRON"
    } else if lower.ends_with("mente") {
        "ADV"
    } else if ["ando", "endo", "ado", "ada", "ido", "ida", "ar", "er", "ir", "aba", "ó"]
        .iter()
        .any(|s| lower.ends_with(s))
    {
        "VERB"
    } else if ["oso", "osa", "ico", "ica", "ble", "ivo", "iva", "al", "ar"]
        .iter()
        .any(|s| lower.ends_with(s))
    {
        "ADJ"
    } else if first.is_uppercase() {
        "PROPN"
    } else {
        "NOUN"
    }
}

/// Fills absent POS tags with [`heuristic_pos`]; returns whether any tag was
/// filled in.
pub fn fill_missing_pos(sentences: &mut [Sentence]) -> bool {
    let mut used = false;
    for s in sentences {
        for t in &mut s.tokens {
            if t.pos.is_none() {
                t.pos = Some(heuristic_pos(&t.surface).to_string());
                used = true;
            }
        }
    }
    used
}
