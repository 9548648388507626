//! Distant supervision: gazetteers, automatic annotation, label-confusion
//! estimation and the noisy-data sampling schedule.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use log::warn;
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{
    decode_bio, tokenize_line, EntityType, LabelCatalog, LabelId, LabelKind, LabeledSentence, Sentence,
};
use crate::error::{Error, Result};

/// Smoothing added to every confusion count before row normalization.
pub const CONFUSION_EPSILON: f64 = 1e-6;

/// Minimum number of training mentions for an UNCLEAR or NO_NORMALIZABLES
/// surface to enter the gazetteer.
pub const MIN_TRAIN_MENTIONS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchMode {
    CaseInsensitive,
    Strict,
}

impl MatchMode {
    pub fn of(etype: EntityType) -> Self {
        match etype {
            EntityType::Proteinas => MatchMode::CaseInsensitive,
            _ => MatchMode::Strict,
        }
    }

    fn normalize(self, word: &str) -> String {
        match self {
            MatchMode::CaseInsensitive => word.to_lowercase(),
            MatchMode::Strict => word.to_string(),
        }
    }
}

/// Surface forms per entity type, each stored as a token sequence.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Gazetteer {
    entries: BTreeMap<EntityType, BTreeSet<Vec<String>>>,
}

impl Gazetteer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a surface form, tokenized like corpus text. Returns false for
    /// surfaces with no tokens.
    pub fn insert(&mut self, etype: EntityType, surface: &str) -> bool {
        let tokens: Vec<String> = tokenize_line(surface, 0).into_iter().map(|t| t.surface).collect();
        self.insert_tokens(etype, tokens)
    }

    pub fn insert_tokens(&mut self, etype: EntityType, tokens: Vec<String>) -> bool {
        if tokens.is_empty() {
            return false;
        }
        self.entries.entry(etype).or_default().insert(tokens);
        true
    }

    pub fn mode(&self, etype: EntityType) -> MatchMode {
        MatchMode::of(etype)
    }

    pub fn len(&self) -> usize {
        self.entries.values().map(BTreeSet::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, etype: EntityType, tokens: &[&str]) -> bool {
        self.entries
            .get(&etype)
            .is_some_and(|set| set.iter().any(|e| e.iter().map(String::as_str).eq(tokens.iter().copied())))
    }

    pub fn entries(&self, etype: EntityType) -> impl Iterator<Item = &Vec<String>> {
        self.entries.get(&etype).into_iter().flatten()
    }

    /// Parses `TYPE<TAB>surface` lines; blank lines and `#` comments are
    /// skipped.
    pub fn parse(content: &str, location: &str) -> Result<Self> {
        let mut gaz = Gazetteer::new();
        for (n, line) in content.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let at = format!("{location}:{}", n + 1);
            let (tag, surface) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(&at, "expected TYPE<TAB>surface"))?;
            let etype: EntityType = tag
                .trim()
                .parse()
                .map_err(|_| Error::parse(&at, format!("unknown entity type `{tag}`")))?;
            if !gaz.insert(etype, surface) {
                return Err(Error::parse(&at, "empty surface form"));
            }
        }
        Ok(gaz)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (etype, set) in &self.entries {
            for tokens in set {
                let _ = writeln!(out, "{etype}\t{}", tokens.join(" "));
            }
        }
        out
    }
}

/// File entries plus UNCLEAR and NO_NORMALIZABLES mentions seen at least
/// [`MIN_TRAIN_MENTIONS`] times in the training corpus.
pub fn build_gazetteer(files: &Gazetteer, train: &[LabeledSentence], catalog: &LabelCatalog) -> Gazetteer {
    let mut gaz = files.clone();
    let mut counts: BTreeMap<(EntityType, Vec<String>), usize> = BTreeMap::new();
    for ls in train {
        for span in decode_bio(&ls.labels, &ls.sentence, catalog) {
            if !matches!(span.etype, EntityType::Unclear | EntityType::NoNormalizables) {
                continue;
            }
            let tokens: Vec<String> = ls
                .sentence
                .tokens
                .iter()
                .filter(|t| t.start >= span.start && t.end <= span.end)
                .map(|t| t.surface.clone())
                .collect();
            *counts.entry((span.etype, tokens)).or_default() += 1;
        }
    }
    for ((etype, tokens), n) in counts {
        if n >= MIN_TRAIN_MENTIONS {
            gaz.insert_tokens(etype, tokens);
        }
    }
    gaz
}

struct MatchIndex<'a> {
    /// First normalized token → (type, entry).
    by_first: HashMap<(EntityType, String), Vec<&'a Vec<String>>>,
}

impl<'a> MatchIndex<'a> {
    fn new(gaz: &'a Gazetteer) -> Self {
        let mut by_first: HashMap<(EntityType, String), Vec<&Vec<String>>> = HashMap::new();
        for (&etype, set) in &gaz.entries {
            let mode = MatchMode::of(etype);
            for entry in set {
                by_first.entry((etype, mode.normalize(&entry[0]))).or_default().push(entry);
            }
        }
        MatchIndex { by_first }
    }
}

/// Gazetteer matches in one sentence after overlap resolution, as
/// `(first token, token count, type)`, sorted by position.
pub fn find_matches(sentence: &Sentence, gaz: &Gazetteer) -> Vec<(usize, usize, EntityType)> {
    let index = MatchIndex::new(gaz);
    matches_with(sentence, &index)
}

fn matches_with(sentence: &Sentence, index: &MatchIndex) -> Vec<(usize, usize, EntityType)> {
    let words: Vec<&str> = sentence.tokens.iter().map(|t| t.surface.as_str()).collect();
    let mut candidates = Vec::new();
    for etype in EntityType::ALL {
        let mode = MatchMode::of(etype);
        let normalized: Vec<String> = words.iter().map(|w| mode.normalize(w)).collect();
        for start in 0..words.len() {
            let Some(entries) = index.by_first.get(&(etype, normalized[start].clone())) else {
                continue;
            };
            for entry in entries {
                let len = entry.len();
                if start + len <= words.len()
                    && entry
                        .iter()
                        .zip(&normalized[start..start + len])
                        .all(|(e, w)| mode.normalize(e) == *w)
                {
                    candidates.push((start, len, etype));
                }
            }
        }
    }
    candidates.sort_by_key(|&(start, len, etype)| (std::cmp::Reverse(len), etype.priority(), start));
    candidates.dedup();
    let mut taken = vec![false; words.len()];
    let mut accepted = Vec::new();
    for (start, len, etype) in candidates {
        if taken[start..start + len].iter().any(|&t| t) {
            continue;
        }
        taken[start..start + len].iter_mut().for_each(|t| *t = true);
        accepted.push((start, len, etype));
    }
    accepted.sort();
    accepted
}

/// Labels every sentence by gazetteer matching: longest match wins, then
/// type priority, then the leftmost candidate.
pub fn annotate(sentences: &[Sentence], gaz: &Gazetteer, catalog: &LabelCatalog) -> Vec<Vec<LabelId>> {
    let index = MatchIndex::new(gaz);
    sentences
        .iter()
        .map(|s| {
            let mut labels = vec![catalog.outside(); s.len()];
            for (start, len, etype) in matches_with(s, &index) {
                let (Some(b), Some(i)) = (catalog.begin(etype), catalog.inside(etype)) else {
                    continue;
                };
                labels[start] = b;
                for l in &mut labels[start + 1..start + len] {
                    *l = i;
                }
            }
            labels
        })
        .collect()
}

/// Token counts of (clean label, noisy label) pairs and their smoothed
/// row-normalized probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionMatrix {
    pub counts: Array2<u64>,
    pub probs: Array2<f64>,
}

impl ConfusionMatrix {
    pub fn from_counts(counts: Array2<u64>) -> Self {
        let mut probs = counts.mapv(|c| c as f64 + CONFUSION_EPSILON);
        for mut row in probs.rows_mut() {
            let total = row.sum();
            row.mapv_inplace(|p| p / total);
        }
        ConfusionMatrix { counts, probs }
    }

    pub fn labels(&self) -> usize {
        self.counts.nrows()
    }

    /// Counts as TSV with a label header row and a label first column.
    pub fn to_tsv(&self, catalog: &LabelCatalog) -> String {
        let mut out = String::from("clean\\noisy");
        for l in catalog.labels() {
            let _ = write!(out, "\t{l}");
        }
        out.push('\n');
        for (i, row) in self.counts.rows().into_iter().enumerate() {
            out.push_str(catalog.label(i));
            for c in row {
                let _ = write!(out, "\t{c}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_tsv(content: &str, catalog: &LabelCatalog, location: &str) -> Result<Self> {
        let n = catalog.len();
        let mut lines = content.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<&str> = lines
            .next()
            .ok_or_else(|| Error::parse(location, "empty confusion matrix"))?
            .split('\t')
            .skip(1)
            .collect();
        if header != catalog.labels() {
            return Err(Error::parse(
                format!("{location}:1"),
                "header labels do not match the label catalog",
            ));
        }
        let mut counts = Array2::zeros((n, n));
        let mut rows = 0;
        for (k, line) in lines.enumerate() {
            let at = format!("{location}:{}", k + 2);
            let fields: Vec<&str> = line.split('\t').collect();
            if k >= n || fields.len() != n + 1 || fields[0] != catalog.label(k) {
                return Err(Error::parse(&at, "row does not match the label catalog"));
            }
            for (j, f) in fields[1..].iter().enumerate() {
                counts[[k, j]] = f
                    .trim()
                    .parse()
                    .map_err(|_| Error::parse(&at, format!("bad count `{f}`")))?;
            }
            rows += 1;
        }
        if rows != n {
            return Err(Error::parse(location, format!("expected {n} rows, found {rows}")));
        }
        Ok(ConfusionMatrix::from_counts(counts))
    }
}

pub fn estimate_confusion(clean: &[Vec<LabelId>], noisy: &[Vec<LabelId>], labels: usize) -> Result<ConfusionMatrix> {
    if clean.len() != noisy.len() {
        return Err(Error::InvalidArgument(format!(
            "{} clean sequences but {} noisy sequences",
            clean.len(),
            noisy.len()
        )));
    }
    let mut counts = Array2::zeros((labels, labels));
    for (k, (c, n)) in clean.iter().zip(noisy).enumerate() {
        if c.len() != n.len() {
            return Err(Error::InvalidArgument(format!(
                "sequence {k}: {} clean labels but {} noisy labels",
                c.len(),
                n.len()
            )));
        }
        for (&i, &j) in c.iter().zip(n) {
            if i >= labels || j >= labels {
                return Err(Error::InvalidArgument(format!("sequence {k}: label id out of range")));
            }
            counts[[i, j]] += 1;
        }
    }
    Ok(ConfusionMatrix::from_counts(counts))
}

/// Number of noisy sentences drawn per epoch: starts at `initial_size` and
/// keeps `retain_percent` of the previous epoch's size (rounded down), but
/// never drops below `floor`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseSchedule {
    pub initial_size: usize,
    pub retain_percent: usize,
    pub floor: usize,
}

impl NoiseSchedule {
    pub fn new(initial_size: usize) -> Self {
        NoiseSchedule {
            initial_size,
            retain_percent: 95,
            floor: 100,
        }
    }
}

pub fn schedule_size(epoch: usize, sched: &NoiseSchedule) -> usize {
    let mut size = sched.initial_size;
    if size <= sched.floor {
        return size;
    }
    for _ in 0..epoch {
        size = (size * sched.retain_percent / 100).max(sched.floor);
        if size == sched.floor {
            break;
        }
    }
    size
}

/// A uniform sample without replacement, shuffled afresh for each epoch and
/// fully determined by `(seed, epoch)`.
pub fn sample_noisy<T: Clone>(corpus: &[T], size: usize, seed: u64, epoch: usize) -> Vec<T> {
    if size > corpus.len() {
        warn!("requested {size} noisy sentences from a corpus of {}; using all", corpus.len());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut rng);
    order.truncate(size);
    order.into_iter().map(|i| corpus[i].clone()).collect()
}

/// True when no `I-t` label follows anything but `B-t` or `I-t`.
pub fn is_valid_bio(labels: &[LabelId], catalog: &LabelCatalog) -> bool {
    let mut prev = LabelKind::Outside;
    for &l in labels {
        let kind = catalog.kind(l);
        if let LabelKind::Inside(t) = kind {
            match prev {
                LabelKind::Begin(u) | LabelKind::Inside(u) if u == t => {}
                _ => return false,
            }
        }
        prev = kind;
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Token;
    use proptest::prelude::*;

    fn sentence(words: &[&str]) -> Sentence {
        let mut tokens = Vec::new();
        let mut at = 0;
        for w in words {
            let n = w.chars().count();
            tokens.push(Token::new(*w, at, at + n));
            at += n + 1;
        }
        Sentence::new("d", tokens)
    }

    fn labels_of(s: &Sentence, gaz: &Gazetteer) -> Vec<String> {
        let cat = LabelCatalog::task();
        annotate(std::slice::from_ref(s), gaz, &cat)[0]
            .iter()
            .map(|&l| cat.label(l).to_string())
            .collect()
    }

    #[test]
    fn proteinas_ignores_case_others_do_not() {
        let gaz = Gazetteer::parse("PROTEINAS\ttiroglobulina\nNORMALIZABLES\tGlucosa\n", "g").unwrap();
        assert_eq!(gaz.mode(EntityType::Proteinas), MatchMode::CaseInsensitive);
        assert_eq!(gaz.mode(EntityType::Unclear), MatchMode::Strict);
        let s = sentence(&["La", "Tiroglobulina", "y", "glucosa", "Glucosa"]);
        assert_eq!(labels_of(&s, &gaz), ["O", "B-PROTEINAS", "O", "O", "B-NORMALIZABLES"]);
    }

    #[test]
    fn longest_match_then_priority_then_leftmost() {
        let gaz = Gazetteer::parse(
            "NORMALIZABLES\tfactor\nNORMALIZABLES\tfactor VIII\nUNCLEAR\tVIII de\nPROTEINAS\tde\nUNCLEAR\tsangre\nNO_NORMALIZABLES\tsangre\n",
            "g",
        )
        .unwrap();
        let s = sentence(&["factor", "VIII", "de", "sangre"]);
        assert_eq!(
            labels_of(&s, &gaz),
            ["B-NORMALIZABLES", "I-NORMALIZABLES", "B-PROTEINAS", "B-NO_NORMALIZABLES"]
        );
        let gaz = Gazetteer::parse("UNCLEAR\ta b\nUNCLEAR\tb c\n", "g").unwrap();
        assert_eq!(labels_of(&sentence(&["a", "b", "c"]), &gaz), ["B-UNCLEAR", "I-UNCLEAR", "O"]);
    }

    #[test]
    fn matches_whole_tokens_only() {
        let gaz = Gazetteer::parse("NORMALIZABLES\tsodio\n", "g").unwrap();
        assert_eq!(labels_of(&sentence(&["cloruro", "sodico", "sodio"]), &gaz), ["O", "O", "B-NORMALIZABLES"]);
    }

    #[test]
    fn gazetteer_parse_errors() {
        assert!(Gazetteer::parse("PROTEINA\tx\n", "g").is_err());
        assert!(Gazetteer::parse("PROTEINAS x\n", "g").is_err());
        assert!(Gazetteer::parse("PROTEINAS\t  \n", "g").is_err());
        let g = Gazetteer::parse("# comment\n\nUNCLEAR\tfactor VIII\n", "g").unwrap();
        assert!(g.contains(EntityType::Unclear, &["factor", "VIII"]));
        assert_eq!(Gazetteer::parse(&g.to_tsv(), "g").unwrap(), g);
    }

    #[test]
    fn training_mentions_need_two_occurrences() {
        let cat = LabelCatalog::task();
        let u_b = cat.begin(EntityType::Unclear).unwrap();
        let n_b = cat.begin(EntityType::NoNormalizables).unwrap();
        let p_b = cat.begin(EntityType::Proteinas).unwrap();
        let ls = |w: &[&str], l: Vec<usize>| LabeledSentence {
            sentence: sentence(w),
            labels: l,
        };
        let train = vec![
            ls(&["x", "once"], vec![0, u_b]),
            ls(&["twice"], vec![u_b]),
            ls(&["twice", "nn"], vec![u_b, n_b]),
            ls(&["nn", "prot"], vec![n_b, p_b]),
            ls(&["prot"], vec![p_b]),
        ];
        let files = Gazetteer::parse("UNCLEAR\tguia\n", "g").unwrap();
        let gaz = build_gazetteer(&files, &train, &cat);
        assert!(!gaz.contains(EntityType::Unclear, &["once"]));
        assert!(gaz.contains(EntityType::Unclear, &["twice"]));
        assert!(gaz.contains(EntityType::Unclear, &["guia"]));
        assert!(gaz.contains(EntityType::NoNormalizables, &["nn"]));
        assert!(!gaz.contains(EntityType::Proteinas, &["prot"]));
    }

    #[test]
    fn confusion_hand_counts() {
        // clean [O, O, B-X], noisy [O, B-X, B-X] over a one-type catalog.
        let cm = estimate_confusion(&[vec![0, 0, 1]], &[vec![0, 1, 1]], 3).unwrap();
        assert_eq!(cm.counts.row(0).to_vec(), vec![1, 1, 0]);
        assert_eq!(cm.counts.row(1).to_vec(), vec![0, 1, 0]);
        assert_eq!(cm.counts.row(2).to_vec(), vec![0, 0, 0]);
        for row in cm.probs.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-9);
        }
        assert!(cm.probs.row(2).iter().all(|p| (p - 1.0 / 3.0).abs() < 1e-12));
        let identity = estimate_confusion(&[vec![0, 1, 2, 0]], &[vec![0, 1, 2, 0]], 3).unwrap();
        for i in 0..3 {
            assert!(identity.probs[[i, i]] > 1.0 - 1e-5);
        }
        assert!(estimate_confusion(&[vec![0]], &[vec![0, 1]], 3).is_err());
        assert!(estimate_confusion(&[vec![0]], &[], 3).is_err());
    }

    #[test]
    fn confusion_tsv_round_trip() {
        let cat = LabelCatalog::task();
        let mut counts = Array2::zeros((9, 9));
        counts[[0, 0]] = 40;
        counts[[1, 0]] = 3;
        counts[[1, 1]] = 7;
        let cm = ConfusionMatrix::from_counts(counts);
        let tsv = cm.to_tsv(&cat);
        assert!(tsv.starts_with("clean\\noisy\tO\tB-PROTEINAS"));
        assert_eq!(ConfusionMatrix::from_tsv(&tsv, &cat, "c").unwrap(), cm);
        assert!(ConfusionMatrix::from_tsv(&tsv.replace("\t40", "\tx"), &cat, "c").is_err());
    }

    #[test]
    fn schedule_examples() {
        let s = NoiseSchedule::new(1000);
        assert_eq!(schedule_size(0, &s), 1000);
        assert_eq!(schedule_size(1, &s), 950);
        assert_eq!(schedule_size(2, &s), 902);
        let small = NoiseSchedule::new(100);
        assert!((0..50).all(|e| schedule_size(e, &small) == 100));
        let tiny = NoiseSchedule::new(40);
        assert!((0..50).all(|e| schedule_size(e, &tiny) == 40));
    }

    #[test]
    fn sampling_is_deterministic_per_epoch() {
        let corpus: Vec<usize> = (0..1000).collect();
        let a = sample_noisy(&corpus, 1000, 5, 0);
        let mut sorted = a.clone();
        sorted.sort();
        assert_eq!(sorted, corpus);
        assert_eq!(a, sample_noisy(&corpus, 1000, 5, 0));
        assert_ne!(a, sample_noisy(&corpus, 1000, 5, 1));
        assert_eq!(sample_noisy(&corpus, 10, 5, 3).len(), 10);
        assert_eq!(sample_noisy(&corpus[..3], 10, 5, 3).len(), 3);
    }

    proptest! {
        #[test]
        fn schedule_is_monotone_and_bounded(initial in 0usize..5000, epochs in 1usize..80) {
            let s = NoiseSchedule::new(initial);
            let mut prev = schedule_size(0, &s);
            for e in 1..epochs {
                let cur = schedule_size(e, &s);
                prop_assert!(cur <= prev);
                prop_assert!(cur >= initial.min(100));
                prev = cur;
            }
        }

        #[test]
        fn annotation_is_valid_bio(words in prop::collection::vec(prop::sample::select(vec!["a", "b", "A", "c", "d"]), 0..12)) {
            let gaz = Gazetteer::parse("PROTEINAS\ta b\nUNCLEAR\tb\nNORMALIZABLES\tc d a\nNO_NORMALIZABLES\td\n", "g").unwrap();
            let cat = LabelCatalog::task();
            let s = sentence(&words);
            let labels = annotate(std::slice::from_ref(&s), &gaz, &cat).remove(0);
            prop_assert!(is_valid_bio(&labels, &cat));
            for span in decode_bio(&labels, &s, &cat) {
                let toks: Vec<&str> = s.tokens.iter()
                    .filter(|t| t.start >= span.start && t.end <= span.end)
                    .map(|t| t.surface.as_str()).collect();
                let mode = MatchMode::of(span.etype);
                let hit = gaz.entries(span.etype).any(|e| e.len() == toks.len()
                    && e.iter().zip(&toks).all(|(a, b)| mode.normalize(a) == mode.normalize(b)));
                prop_assert!(hit);
            }
        }

        #[test]
        fn confusion_rows_sum_to_counts(seqs in prop::collection::vec(prop::collection::vec((0usize..5, 0usize..5), 0..8), 0..6)) {
            let clean: Vec<Vec<usize>> = seqs.iter().map(|s| s.iter().map(|p| p.0).collect()).collect();
            let noisy: Vec<Vec<usize>> = seqs.iter().map(|s| s.iter().map(|p| p.1).collect()).collect();
            let cm = estimate_confusion(&clean, &noisy, 5).unwrap();
            for i in 0..5 {
                let n = clean.iter().flatten().filter(|&&c| c == i).count() as u64;
                prop_assert_eq!(cm.counts.row(i).sum(), n);
                prop_assert!((cm.probs.row(i).sum() - 1.0).abs() < 1e-9);
            }
        }
    }
}
