#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nlnde::corpus::{write_ann_file, Annotation, Document};
use nlnde::synthetic::{self, SyntheticConfig};

pub fn nlnde(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nlnde"))
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub fn write_standoff(dir: &Path, docs: &[(Document, Vec<Annotation>)]) {
    fs::create_dir_all(dir).unwrap();
    for (doc, anns) in docs {
        fs::write(dir.join(format!("{}.txt", doc.id)), &doc.text).unwrap();
        write_ann_file(&dir.join(format!("{}.ann", doc.id)), anns).unwrap();
    }
}

/// Synthetic train/dev standoff directories and a gazetteer under `root`.
pub struct Fixture {
    pub train: PathBuf,
    pub dev: PathBuf,
    pub gazetteer: PathBuf,
}

pub fn fixture(root: &Path, train_sentences: usize, dev_sentences: usize) -> Fixture {
    let train = synthetic::generate(&SyntheticConfig {
        sentences: train_sentences,
        seed: 1,
        ..SyntheticConfig::default()
    });
    let dev = synthetic::generate(&SyntheticConfig {
        sentences: dev_sentences,
        seed: 2,
        ..SyntheticConfig::default()
    });
    let fx = Fixture {
        train: root.join("train"),
        dev: root.join("dev"),
        gazetteer: root.join("gazetteer.tsv"),
    };
    write_standoff(&fx.train, &train.documents);
    write_standoff(&fx.dev, &dev.documents);
    fs::write(&fx.gazetteer, synthetic::gazetteer().to_tsv()).unwrap();
    fx
}

/// A small-dimension config over fallback vectors.
pub fn small_config(root: &Path, fx: &Fixture, run: &str, max_epochs: usize, output: &Path) -> PathBuf {
    let text = format!(
        "run = {run}\n\
         train_dir = {}\n\
         dev_dir = {}\n\
         gazetteer = {}\n\
         noisy_corpus = {}\n\
         sources.ft = fallback\n\
         sources.ft_domain = fallback\n\
         sources.bpe = fallback\n\
         sources.ft.dim = 16\n\
         sources.ft_domain.dim = 16\n\
         sources.bpe.dim = 16\n\
         hidden = 16\n\
         char_hidden = 4\n\
         attention_hidden = 8\n\
         max_epochs = {max_epochs}\n\
         output = {}\n",
        fx.train.display(),
        fx.dev.display(),
        fx.gazetteer.display(),
        fx.dev.join("doc0000.txt").display(),
        output.display()
    );
    let path = root.join(format!("{run}.cfg"));
    fs::write(&path, text).unwrap();
    path
}
