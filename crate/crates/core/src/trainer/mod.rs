//! Training: alternating clean (CRF) and noisy (channel) epochs with NADAM,
//! gradient clipping and early stopping on development F1.

pub mod config;
pub mod data;
pub mod optim;

use std::fmt::Write as _;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{Graph, Tensor};
use crate::corpus::{decode_bio, Annotation, Document, EntitySpan, LabelCatalog, LabeledSentence, Sentence};
use crate::distant::{sample_noisy, schedule_size, ConfusionMatrix, NoiseSchedule};
use crate::embeddings::SourceSpec;
use crate::error::{Error, Result};
use crate::eval::entity_f1;
use crate::features::fill_missing_pos;
use crate::model::{Lexicon, Tagger, TaggerVocab};

pub use config::{fallback_sources, standard_source, ConfigFile, RunConfig, RunId, DEFAULT_SEED};
pub use optim::{nadam_step, Moments, Nadam, NadamConfig};

/// Distantly labeled sentences and the confusion estimate that initializes
/// the channel.
#[derive(Debug, Clone)]
pub struct NoisyData {
    pub sentences: Vec<LabeledSentence>,
    pub confusion: ConfusionMatrix,
}

#[derive(Debug, Clone)]
pub struct TrainData {
    pub train: Vec<LabeledSentence>,
    pub dev: Vec<LabeledSentence>,
    pub noisy: Option<NoisyData>,
    /// Whether POS tags were filled in by the heuristic tagger.
    pub pos_heuristic: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    /// Zero-based; the noisy sample size is `schedule_size(epoch)`.
    pub epoch: usize,
    pub clean_loss: f64,
    pub noisy_loss: Option<f64>,
    pub noisy_size: Option<usize>,
    pub dev_precision: f64,
    pub dev_recall: f64,
    pub dev_f1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    EarlyStop,
    MaxEpochs,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    pub run: RunId,
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_dev_f1: f64,
    pub stop_reason: StopReason,
    pub stopped_after: usize,
}

impl TrainReport {
    /// One line per epoch.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("epoch\tclean_loss\tnoisy_loss\tnoisy_size\tdev_p\tdev_r\tdev_f1\n");
        for e in &self.epochs {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                e.epoch,
                e.clean_loss,
                e.noisy_loss.map_or("-".into(), |v| v.to_string()),
                e.noisy_size.map_or("-".into(), |v| v.to_string()),
                e.dev_precision,
                e.dev_recall,
                e.dev_f1
            );
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data serializes")
    }
}

/// Length-bucketed batches in random order: sentences are shuffled, stably
/// sorted by length, cut into chunks, and the chunks shuffled.
pub fn bucket_batches(lengths: &[usize], batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..lengths.len()).filter(|&i| lengths[i] > 0).collect();
    order.shuffle(rng);
    order.sort_by_key(|&i| lengths[i]);
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect();
    batches.shuffle(rng);
    batches
}

enum Pass {
    Clean,
    Noisy,
}

struct Trainer<'a> {
    run: &'a RunConfig,
    tagger: Tagger,
    lexicon: Lexicon,
    optimizer: Nadam,
    rng: ChaCha8Rng,
}

impl Trainer<'_> {
    /// One pass over `data`; returns the mean per-sentence loss.
    fn pass(&mut self, data: &[&LabeledSentence], kind: Pass) -> Result<f64> {
        let lengths: Vec<usize> = data.iter().map(|l| l.sentence.len()).collect();
        let batches = bucket_batches(&lengths, self.run.batch_size, &mut self.rng);
        let mut total = 0.0;
        let mut count = 0;
        for batch in batches {
            let sentences: Vec<&Sentence> = batch.iter().map(|&i| &data[i].sentence).collect();
            let labels: Vec<&[usize]> = batch.iter().map(|&i| data[i].labels.as_slice()).collect();
            let (loss, mut grads) = {
                let mut g = Graph::new(&self.tagger.store);
                let fwd = self.tagger.forward(&mut g, &sentences, &mut self.lexicon, Some(&mut self.rng))?;
                let loss = match kind {
                    Pass::Clean => self.tagger.clean_loss(&mut g, &fwd, &labels)?,
                    Pass::Noisy => self.tagger.noisy_loss(&mut g, &fwd, &labels)?,
                };
                let value = g.scalar(loss);
                if !value.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "batch loss {value} (first document {})",
                        sentences[0].doc_id
                    )));
                }
                (value, g.backward(loss))
            };
            let layers = &self.tagger.layers;
            match kind {
                Pass::Clean => {
                    grads.remove(layers.channel.logits);
                    layers.head.params().iter().for_each(|&p| grads.remove(p));
                }
                Pass::Noisy => layers.crf.params().iter().for_each(|&p| grads.remove(p)),
            }
            grads.clip_global_norm(self.run.clip_norm);
            self.optimizer.step(&mut self.tagger.store, &grads)?;
            total += loss * batch.len() as f64;
            count += batch.len();
        }
        Ok(if count == 0 { 0.0 } else { total / count as f64 })
    }

    fn snapshot(&self) -> Vec<Tensor> {
        self.tagger.store.iter().map(|(_, p)| p.value.clone()).collect()
    }
}

/// Entity-level scores of `tagger` on labeled sentences (each sentence is
/// scored as its own document).
pub fn evaluate(
    tagger: &Tagger,
    lexicon: &mut Lexicon,
    data: &[LabeledSentence],
    exclude: &[crate::corpus::EntityType],
) -> Result<crate::eval::EvalResult> {
    let sentences: Vec<Sentence> = data.iter().map(|l| l.sentence.clone()).collect();
    let pred = tagger.predict_spans(&sentences, lexicon)?;
    let gold: Vec<Vec<EntitySpan>> = data
        .iter()
        .map(|l| decode_bio(&l.labels, &l.sentence, &tagger.catalog))
        .collect();
    entity_f1(&gold, &pred, exclude)
}

/// Trains a tagger for `run`. The returned model holds the parameters of
/// the epoch with the best development F1.
pub fn train(run: &RunConfig, sources: Vec<SourceSpec>, data: &TrainData) -> Result<(Tagger, TrainReport)> {
    let catalog = LabelCatalog::task();
    let train: Vec<&LabeledSentence> = data.train.iter().filter(|l| !l.sentence.is_empty()).collect();
    if train.is_empty() || data.dev.is_empty() {
        return Err(Error::Config("training and development data must be non-empty".into()));
    }
    match (&data.noisy, run.use_noisy) {
        (Some(_), false) => {
            return Err(Error::Config(format!("run {} does not train on noisy data", run.run_id)));
        }
        (None, true) => return Err(Error::Config(format!("run {} needs a noisy corpus", run.run_id))),
        _ => {}
    }
    let clean_sentences: Vec<Sentence> = train.iter().map(|l| l.sentence.clone()).collect();
    let mut tagger = Tagger::new(
        run.representation.clone(),
        run.dims,
        catalog,
        sources,
        TaggerVocab::from_sentences(&clean_sentences),
        run.seed,
    )?;
    tagger.pos_heuristic = data.pos_heuristic;
    let noisy: Vec<&LabeledSentence> = match &data.noisy {
        Some(n) => {
            tagger.set_channel(&n.confusion)?;
            n.sentences.iter().filter(|l| !l.sentence.is_empty()).collect()
        }
        None => Vec::new(),
    };
    let schedule = NoiseSchedule::new(noisy.len());
    let lexicon = Lexicon::open(&tagger)?;
    let mut rng = ChaCha8Rng::seed_from_u64(run.seed);
    rng.set_stream(0x7261_696e);
    let mut t = Trainer {
        run,
        tagger,
        lexicon,
        optimizer: Nadam::new(run.optimizer),
        rng,
    };

    let mut epochs = Vec::new();
    let mut best: Option<(usize, f64, Vec<Tensor>)> = None;
    let mut since_best = 0;
    let mut stop_reason = StopReason::MaxEpochs;
    for epoch in 0..run.max_epochs {
        let clean_loss = t.pass(&train, Pass::Clean)?;
        let (noisy_loss, noisy_size) = if run.use_noisy {
            let size = schedule_size(epoch, &schedule);
            let sample = sample_noisy(&noisy, size, run.seed, epoch);
            (Some(t.pass(&sample, Pass::Noisy)?), Some(size))
        } else {
            (None, None)
        };
        let dev = evaluate(&t.tagger, &mut t.lexicon, &data.dev, &run.exclude)?;
        let record = EpochRecord {
            epoch,
            clean_loss,
            noisy_loss,
            noisy_size,
            dev_precision: dev.precision(),
            dev_recall: dev.recall(),
            dev_f1: dev.f1(),
        };
        info!(
            "epoch {epoch}: clean loss {clean_loss:.4}{} dev F1 {:.4}",
            noisy_loss.map_or(String::new(), |l| format!(", noisy loss {l:.4} ({} sentences),", noisy_size.unwrap_or(0))),
            record.dev_f1
        );
        epochs.push(record);
        if best.as_ref().is_none_or(|b| dev.f1() > b.1) {
            best = Some((epoch, dev.f1(), t.snapshot()));
            since_best = 0;
        } else {
            since_best += 1;
            debug!("no improvement for {since_best} epoch(s)");
            if since_best >= run.patience {
                stop_reason = StopReason::EarlyStop;
                break;
            }
        }
    }
    let stopped_after = epochs.len();
    let (best_epoch, best_dev_f1, params) = best.ok_or_else(|| Error::Config("max_epochs must be at least 1".into()))?;
    let ids: Vec<_> = t.tagger.store.ids().collect();
    for (id, value) in ids.into_iter().zip(params) {
        *t.tagger.store.get_mut(id) = value;
    }
    let report = TrainReport {
        run: run.run_id,
        seed: run.seed,
        epochs,
        best_epoch,
        best_dev_f1,
        stop_reason,
        stopped_after,
    };
    Ok((t.tagger, report))
}

/// Tags raw documents (one sentence per line) and returns standoff
/// annotations numbered `T1`, `T2`, … per document.
pub fn predict_documents(tagger: &Tagger, lexicon: &mut Lexicon, docs: &[Document]) -> Result<Vec<Vec<Annotation>>> {
    let mut out = Vec::with_capacity(docs.len());
    for doc in docs {
        let mut sentences = crate::corpus::sentences_from_text(doc);
        if tagger.pos_heuristic {
            fill_missing_pos(&mut sentences);
        }
        let spans = tagger.predict_spans(&sentences, lexicon)?;
        out.push(
            spans
                .into_iter()
                .flatten()
                .enumerate()
                .map(|(i, mut span)| {
                    if let Some(text) = doc.slice(span.start, span.end) {
                        span.text = text.to_string();
                    }
                    Annotation {
                        id: format!("T{}", i + 1),
                        span,
                    }
                })
                .collect(),
        );
    }
    Ok(out)
}
