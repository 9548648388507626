//! Loading training, development and noisy corpora from disk.

use std::fs;
use std::path::Path;

use crate::corpus::{
    encode_bio_lenient, load_standoff_dir, read_corpus_tsv, sentences_from_text, Document, LabelCatalog,
    LabeledSentence, Sentence,
};
use crate::distant::{annotate, build_gazetteer, estimate_confusion, ConfusionMatrix, Gazetteer};
use crate::error::{Error, Result};
use crate::features::fill_missing_pos;

use super::config::{ConfigFile, RunConfig};
use super::{NoisyData, TrainData};

fn is_tsv(path: &Path) -> bool {
    path.extension().is_some_and(|x| x == "tsv")
}

/// Sentences of standoff documents, labeled from their annotations.
/// Spans that do not align with tokens are dropped with a warning.
pub fn label_documents(docs: &[(Document, Vec<crate::corpus::Annotation>)], catalog: &LabelCatalog) -> Vec<LabeledSentence> {
    let mut out = Vec::new();
    for (doc, anns) in docs {
        let spans: Vec<_> = anns.iter().map(|a| a.span.clone()).collect();
        for sentence in sentences_from_text(doc) {
            let (labels, _) = encode_bio_lenient(&sentence, &spans, catalog);
            out.push(LabeledSentence { sentence, labels });
        }
    }
    out
}

/// A standoff directory or a corpus TSV file.
pub fn load_labeled(path: &Path, catalog: &LabelCatalog) -> Result<Vec<LabeledSentence>> {
    if path.is_dir() {
        Ok(label_documents(&load_standoff_dir(path)?, catalog))
    } else if is_tsv(path) {
        let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let docs = read_corpus_tsv(&content, catalog, &path.display().to_string())?;
        Ok(docs.into_iter().flat_map(|d| d.sentences).collect())
    } else if path.exists() {
        Err(Error::Config(format!(
            "{}: expected a standoff directory or a .tsv corpus",
            path.display()
        )))
    } else {
        Err(Error::io(path, std::io::Error::from(std::io::ErrorKind::NotFound)))
    }
}

/// Plain text (one sentence per line) or a corpus TSV; plain text is
/// labeled with `gazetteer`.
pub fn load_noisy(path: &Path, gazetteer: Option<&Gazetteer>, catalog: &LabelCatalog) -> Result<Vec<LabeledSentence>> {
    if is_tsv(path) {
        return load_labeled(path, catalog);
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let gaz = gazetteer.ok_or_else(|| {
        Error::Config(format!("{}: plain-text noisy corpus needs a gazetteer", path.display()))
    })?;
    let doc = Document {
        id: path.file_stem().map_or_else(|| "noisy".into(), |s| s.to_string_lossy().into_owned()),
        text,
    };
    let sentences = sentences_from_text(&doc);
    let labels = annotate(&sentences, gaz, catalog);
    Ok(sentences
        .into_iter()
        .zip(labels)
        .map(|(sentence, labels)| LabeledSentence { sentence, labels })
        .collect())
}

pub fn load_gazetteer(path: &Path) -> Result<Gazetteer> {
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Gazetteer::parse(&content, &path.display().to_string())
}

/// Confusion of gazetteer labels against the gold labels of `train`.
pub fn confusion_from_gazetteer(files: &Gazetteer, train: &[LabeledSentence], catalog: &LabelCatalog) -> Result<ConfusionMatrix> {
    let gaz = build_gazetteer(files, train, catalog);
    let sentences: Vec<Sentence> = train.iter().map(|l| l.sentence.clone()).collect();
    let noisy = annotate(&sentences, &gaz, catalog);
    let clean: Vec<Vec<usize>> = train.iter().map(|l| l.labels.clone()).collect();
    estimate_confusion(&clean, &noisy, catalog.len())
}

fn fill_pos(sets: &mut [&mut Vec<LabeledSentence>]) -> bool {
    let mut used = false;
    for set in sets.iter_mut() {
        for ls in set.iter_mut() {
            used |= fill_missing_pos(std::slice::from_mut(&mut ls.sentence));
        }
    }
    used
}

/// Everything `train` needs, as described by a config file.
pub fn prepare_training(cfg: &ConfigFile, run: &RunConfig, catalog: &LabelCatalog) -> Result<TrainData> {
    let need = |p: &Option<std::path::PathBuf>, key: &str| {
        p.clone().ok_or_else(|| Error::Config(format!("config lacks `{key}`")))
    };
    let mut train = load_labeled(&need(&cfg.train_dir, "train_dir")?, catalog)?;
    let mut dev = load_labeled(&need(&cfg.dev_dir, "dev_dir")?, catalog)?;
    let mut noisy = None;
    if run.use_noisy {
        let files = match &cfg.gazetteer {
            Some(p) => Some(load_gazetteer(p)?),
            None => None,
        };
        let gaz = files.as_ref().map(|f| build_gazetteer(f, &train, catalog));
        let sentences = load_noisy(&need(&cfg.noisy_corpus, "noisy_corpus")?, gaz.as_ref(), catalog)?;
        let confusion = match (&cfg.confusion, &files) {
            (Some(p), _) => {
                let content = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                ConfusionMatrix::from_tsv(&content, catalog, &p.display().to_string())?
            }
            (None, Some(f)) => confusion_from_gazetteer(f, &train, catalog)?,
            (None, None) => {
                return Err(Error::Config(format!(
                    "run {} needs `confusion` or `gazetteer` to initialize the noisy channel",
                    run.run_id
                )))
            }
        };
        noisy = Some(NoisyData { sentences, confusion });
    } else if cfg.noisy_corpus.is_some() {
        log::info!("run {} does not use noisy data; ignoring `noisy_corpus`", run.run_id);
    }
    let mut sets: Vec<&mut Vec<LabeledSentence>> = vec![&mut train, &mut dev];
    let mut noisy_sentences = noisy.as_mut().map(|n| &mut n.sentences);
    if let Some(n) = noisy_sentences.as_deref_mut() {
        sets.push(n);
    }
    let pos_heuristic = fill_pos(&mut sets);
    Ok(TrainData {
        train,
        dev,
        noisy,
        pos_heuristic,
    })
}
