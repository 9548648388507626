use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use nlnde::corpus::{
    load_standoff_dir, parse_ann, sentences_from_text, write_ann_file, write_corpus_tsv, Document, EntitySpan, EntityType, LabelCatalog, LabeledSentence, TsvDocument,
};
use nlnde::embeddings::SourceLocation;
use nlnde::distant::{annotate, build_gazetteer};
use nlnde::eval::{entity_f1, report};
use nlnde::features::fill_missing_pos;
use nlnde::model::{load_model, save_model, Lexicon};
use nlnde::trainer::data::{confusion_from_gazetteer, load_gazetteer, load_labeled, prepare_training};
use nlnde::trainer::{predict_documents, train, ConfigFile, RunConfig, RunId, DEFAULT_SEED};
use nlnde::Error;

#[derive(Parser)]
#[command(name = "nlnde", version, about = "Biomedical NER with multi-embedding attention and noisy-channel training")]
struct Cli {
    /// Seed for all randomness [default: 13, or `seed` from the config file]
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a tagger; writes model.bin, report.tsv and report.json
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Run preset, overriding `run` in the config
        #[arg(long)]
        run: Option<RunId>,
        /// Output directory, overriding `output` in the config
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Tag every .txt file of a directory and write .ann files
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Fail unless the model was trained with this preset
        #[arg(long)]
        run: Option<RunId>,
    },
    /// Score predicted .ann files against gold standoff documents
    Eval {
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        /// Entity types to leave out of the score
        #[arg(long, value_delimiter = ',')]
        exclude: Vec<EntityType>,
        /// Also write the scores as JSON
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Label raw text with a gazetteer and write a corpus TSV
    Annotate {
        #[arg(long)]
        gazetteer: PathBuf,
        /// Plain-text file (one sentence per line) or directory of .txt files
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Gold training data whose repeated UNCLEAR / NO_NORMALIZABLES
        /// mentions extend the gazetteer
        #[arg(long)]
        train: Option<PathBuf>,
    },
    /// Estimate the gazetteer's label confusion on gold data
    Confusion {
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        gazetteer: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write per-token attention weights of an attention model
    Attention {
        #[arg(long)]
        model: PathBuf,
        /// Plain-text file, one sentence per line
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

enum Failure {
    Usage(String),
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e)
    }
}

type CliResult = Result<(), Failure>;

fn write(path: &Path, content: &str) -> Result<(), Error> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    fs::write(path, content).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn create_dir(dir: &Path) -> Result<(), Error> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn read_text(path: &Path) -> Result<String, Error> {
    fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Documents from a .txt file or every .txt file of a directory.
fn text_documents(input: &Path) -> Result<Vec<Document>, Error> {
    if input.is_dir() {
        Ok(load_standoff_dir(input)?.into_iter().map(|(d, _)| d).collect())
    } else {
        let id = input
            .file_stem()
            .map_or_else(|| "input".into(), |s| s.to_string_lossy().into_owned());
        Ok(vec![Document {
            id,
            text: read_text(input)?,
        }])
    }
}

fn cmd_train(seed: Option<u64>, config: &Path, run: Option<RunId>, output: Option<PathBuf>) -> CliResult {
    let cfg = ConfigFile::load(config)?;
    let mut rc: RunConfig = cfg.run_config(run)?;
    rc.seed = seed.or(cfg.seed).unwrap_or(DEFAULT_SEED);
    let output = output
        .or_else(|| cfg.output.clone())
        .ok_or_else(|| Failure::Usage("no output directory (`output` in the config or --output)".into()))?;
    let mut sources = cfg.source_specs(&rc)?;
    for src in &mut sources {
        if let SourceLocation::Fallback { seed } = &mut src.location {
            *seed = rc.seed;
        }
    }
    let catalog = LabelCatalog::task();
    let data = prepare_training(&cfg, &rc, &catalog)?;
    log::info!(
        "run {}: {} train, {} dev, {} noisy sentences",
        rc.run_id,
        data.train.len(),
        data.dev.len(),
        data.noisy.as_ref().map_or(0, |n| n.sentences.len())
    );
    let (model, rep) = train(&rc, sources, &data)?;
    create_dir(&output)?;
    save_model(&model, &output.join("model.bin"))?;
    write(&output.join("report.tsv"), &rep.to_tsv())?;
    write(&output.join("report.json"), &rep.to_json())?;
    println!(
        "run {} seed {}: best dev F1 {:.1} at epoch {} ({} epochs, {:?})",
        rep.run,
        rep.seed,
        100.0 * rep.best_dev_f1,
        rep.best_epoch,
        rep.stopped_after,
        rep.stop_reason
    );
    Ok(())
}

fn cmd_predict(model: &Path, input: &Path, out: &Path, run: Option<RunId>) -> CliResult {
    let tagger = load_model(model)?;
    if let Some(r) = run {
        tagger.check_spec(&RunConfig::preset(r).representation)?;
    }
    let docs = text_documents(input)?;
    let mut lexicon = Lexicon::open(&tagger)?;
    let annotations = predict_documents(&tagger, &mut lexicon, &docs)?;
    create_dir(out)?;
    for (doc, anns) in docs.iter().zip(&annotations) {
        write_ann_file(&out.join(format!("{}.ann", doc.id)), anns)?;
    }
    println!(
        "wrote {} entities for {} documents to {}",
        annotations.iter().map(Vec::len).sum::<usize>(),
        docs.len(),
        out.display()
    );
    Ok(())
}

fn cmd_eval(gold: &Path, pred: &Path, exclude: &[EntityType], json: Option<PathBuf>) -> CliResult {
    if !pred.is_dir() {
        return Err(Error::Config(format!("{}: prediction directory not found", pred.display())).into());
    }
    let docs = load_standoff_dir(gold)?;
    let mut gold_spans = Vec::new();
    let mut pred_spans = Vec::new();
    for (doc, anns) in &docs {
        gold_spans.push(anns.iter().map(|a| a.span.clone()).collect::<Vec<EntitySpan>>());
        let path = pred.join(format!("{}.ann", doc.id));
        let predicted = if path.exists() {
            parse_ann(&read_text(&path)?, Some(doc), &path.display().to_string())?
        } else {
            log::warn!("no prediction for document {}", doc.id);
            Vec::new()
        };
        pred_spans.push(predicted.into_iter().map(|a| a.span).collect());
    }
    let result = entity_f1(&gold_spans, &pred_spans, exclude)?;
    print!("{}", report(&result));
    if let Some(path) = json {
        write(&path, &result.to_json())?;
    }
    Ok(())
}

fn cmd_annotate(gazetteer: &Path, input: &Path, out: &Path, train_data: Option<PathBuf>) -> CliResult {
    let catalog = LabelCatalog::task();
    let files = load_gazetteer(gazetteer)?;
    let gaz = match train_data {
        Some(p) => build_gazetteer(&files, &load_labeled(&p, &catalog)?, &catalog),
        None => files,
    };
    let mut tsv_docs = Vec::new();
    for doc in text_documents(input)? {
        let sentences = sentences_from_text(&doc);
        let labels = annotate(&sentences, &gaz, &catalog);
        tsv_docs.push(TsvDocument {
            id: doc.id,
            sentences: sentences
                .into_iter()
                .zip(labels)
                .map(|(sentence, labels)| LabeledSentence { sentence, labels })
                .collect(),
        });
    }
    write(out, &write_corpus_tsv(&tsv_docs, &catalog))?;
    Ok(())
}

fn cmd_confusion(gold: &Path, gazetteer: &Path, out: &Path) -> CliResult {
    let catalog = LabelCatalog::task();
    let train_data = load_labeled(gold, &catalog)?;
    let files = load_gazetteer(gazetteer)?;
    let cm = confusion_from_gazetteer(&files, &train_data, &catalog)?;
    write(out, &cm.to_tsv(&catalog))?;
    Ok(())
}

fn cmd_attention(model: &Path, input: &Path, out: &Path) -> CliResult {
    let tagger = load_model(model)?;
    if !tagger.uses_attention() {
        return Err(Failure::Usage(format!(
            "{} does not combine embeddings with attention (only S4/S5 models do)",
            model.display()
        )));
    }
    let mut sentences = Vec::new();
    for doc in text_documents(input)? {
        sentences.extend(sentences_from_text(&doc));
    }
    if tagger.pos_heuristic {
        fill_missing_pos(&mut sentences);
    }
    let mut lexicon = Lexicon::open(&tagger)?;
    let weights = tagger.attention_weights(&sentences, &mut lexicon)?;
    let mut tsv = String::from("token");
    for name in &tagger.spec.sources {
        tsv.push_str(&format!("\tw_{name}"));
    }
    tsv.push('\n');
    for (s, rows) in sentences.iter().zip(&weights) {
        for (tok, w) in s.tokens.iter().zip(rows) {
            tsv.push_str(&tok.surface);
            for x in w {
                tsv.push_str(&format!("\t{x}"));
            }
            tsv.push('\n');
        }
    }
    write(out, &tsv)?;
    Ok(())
}

fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Train { config, run, output } => cmd_train(cli.seed, &config, run, output),
        Command::Predict { model, input, out, run } => cmd_predict(&model, &input, &out, run),
        Command::Eval {
            gold,
            pred,
            exclude,
            json,
        } => cmd_eval(&gold, &pred, &exclude, json),
        Command::Annotate {
            gazetteer,
            input,
            out,
            train,
        } => cmd_annotate(&gazetteer, &input, &out, train),
        Command::Confusion { gold, gazetteer, out } => cmd_confusion(&gold, &gazetteer, &out),
        Command::Attention { model, input, out } => cmd_attention(&model, &input, &out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("NLNDE_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
