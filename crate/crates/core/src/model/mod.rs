//! The BiLSTM-CRF tagger with multi-source word representations and a
//! noisy-channel output path for distantly labeled data.

pub mod attention;
pub mod channel;
pub mod crf;
pub mod io;
pub mod rnn;

use std::collections::{BTreeSet, HashMap};

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{init_uniform, Graph, ParamId, ParamStore, Tensor, Var};
use crate::corpus::{decode_bio, EntitySpan, LabelCatalog, LabelId, Sentence};
use crate::distant::ConfusionMatrix;
use crate::embeddings::{Combine, EmbeddingSource, RepresentationSpec, SourceSpec, CHAR_SOURCE};
use crate::error::{Error, Result};
use crate::features::{featurize, FrequencyTable, PosVocab, BINS};

pub use attention::{attention_select, AttentionParams};
pub use channel::{
    dropout, dropout_mask, init_channel, noisy_channel_forward, softmax_head, NoisyChannel, SoftmaxHead,
    CHANNEL_EPSILON,
};
pub use crf::{
    crf_nll, crf_nll_node, init_transitions, log_partition, path_score, viterbi_decode, CrfLayer, CrfSequence,
};
pub use io::{load_model, save_model};
pub use rnn::{bilstm_encode, BiLstm, Lstm};

/// Layer sizes of the tagger.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaggerDims {
    pub char_embedding: usize,
    /// Per direction; the character representation is twice this.
    pub char_hidden: usize,
    pub pos_embedding: usize,
    /// Sentence encoder size per direction.
    pub hidden: usize,
    pub attention_hidden: usize,
    pub dropout: f64,
}

impl Default for TaggerDims {
    fn default() -> Self {
        TaggerDims {
            char_embedding: 50,
            char_hidden: 25,
            pos_embedding: 20,
            hidden: 256,
            attention_hidden: 128,
            dropout: 0.5,
        }
    }
}

impl TaggerDims {
    pub fn feature_dim(&self) -> usize {
        self.pos_embedding + 3 * BINS
    }
}

/// Character vocabulary; id 0 stands for unseen characters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub struct CharVocab {
    chars: Vec<char>,
    index: HashMap<char, usize>,
}

impl From<String> for CharVocab {
    fn from(s: String) -> Self {
        CharVocab::from_chars(s.chars())
    }
}

impl From<CharVocab> for String {
    fn from(v: CharVocab) -> Self {
        v.chars.into_iter().collect()
    }
}

impl CharVocab {
    pub fn from_chars(chars: impl IntoIterator<Item = char>) -> Self {
        let set: BTreeSet<char> = chars.into_iter().collect();
        let chars: Vec<char> = set.into_iter().collect();
        let index = chars.iter().enumerate().map(|(i, &c)| (c, i + 1)).collect();
        CharVocab { chars, index }
    }

    pub fn from_sentences<'a>(sentences: impl IntoIterator<Item = &'a Sentence>) -> Self {
        CharVocab::from_chars(
            sentences
                .into_iter()
                .flat_map(|s| s.tokens.iter().flat_map(|t| t.surface.chars())),
        )
    }

    /// Number of ids including the unknown-character id.
    pub fn len(&self) -> usize {
        self.chars.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, c: char) -> usize {
        self.index.get(&c).copied().unwrap_or(0)
    }
}

/// Vocabularies derived from the clean training corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct TaggerVocab {
    pub chars: CharVocab,
    pub pos: PosVocab,
    pub frequencies: FrequencyTable,
}

impl TaggerVocab {
    pub fn from_sentences(sentences: &[Sentence]) -> Self {
        TaggerVocab {
            chars: CharVocab::from_sentences(sentences),
            pos: PosVocab::from_sentences(sentences),
            frequencies: FrequencyTable::from_sentences(sentences),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TaggerLayers {
    pub char_embedding: ParamId,
    pub char_encoder: BiLstm,
    pub pos_embedding: Option<ParamId>,
    pub attention: Option<AttentionParams>,
    pub encoder: BiLstm,
    pub crf: CrfLayer,
    pub head: SoftmaxHead,
    pub channel: NoisyChannel,
}

pub struct Tagger {
    pub spec: RepresentationSpec,
    pub dims: TaggerDims,
    pub catalog: LabelCatalog,
    pub vocab: TaggerVocab,
    /// Frozen sources, in the order they appear in `spec`.
    pub sources: Vec<SourceSpec>,
    pub seed: u64,
    /// Whether POS tags were guessed by the built-in heuristic.
    pub pos_heuristic: bool,
    pub store: ParamStore,
    pub layers: TaggerLayers,
}

/// Cached frozen-source vectors for the words seen so far.
pub struct Lexicon {
    sources: Vec<EmbeddingSource>,
    cache: Vec<HashMap<String, Vec<f64>>>,
}

impl Lexicon {
    /// Opens every frozen source the tagger was built with.
    pub fn open(tagger: &Tagger) -> Result<Self> {
        let sources = tagger.sources.iter().map(SourceSpec::open).collect::<Result<Vec<_>>>()?;
        Ok(Lexicon::from_sources(sources))
    }

    pub fn from_sources(sources: Vec<EmbeddingSource>) -> Self {
        let cache = sources.iter().map(|_| HashMap::new()).collect();
        Lexicon { sources, cache }
    }

    pub fn sources(&self) -> &[EmbeddingSource] {
        &self.sources
    }

    fn vector(&mut self, source: usize, word: &str) -> &[f64] {
        let src = &self.sources[source];
        self.cache[source]
            .entry(word.to_string())
            .or_insert_with(|| src.vector(word))
    }
}

/// Time-major padded batch shape: row `t * batch + b` is position `t` of
/// sentence `b`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchLayout {
    pub batch: usize,
    pub steps: usize,
    pub lengths: Vec<usize>,
}

impl BatchLayout {
    pub fn new(lengths: Vec<usize>) -> Self {
        BatchLayout {
            batch: lengths.len(),
            steps: lengths.iter().copied().max().unwrap_or(0),
            lengths,
        }
    }

    pub fn row(&self, t: usize, b: usize) -> usize {
        t * self.batch + b
    }

    pub fn rows(&self) -> usize {
        self.steps * self.batch
    }

    /// Rows holding sentence `b`, in token order.
    pub fn rows_of(&self, b: usize) -> Vec<usize> {
        (0..self.lengths[b]).map(|t| self.row(t, b)).collect()
    }

    pub fn masks(&self) -> Vec<Vec<f64>> {
        (0..self.steps)
            .map(|t| self.lengths.iter().map(|&n| if t < n { 1.0 } else { 0.0 }).collect())
            .collect()
    }
}

/// Tape handles produced by one forward pass.
pub struct Forward {
    pub layout: BatchLayout,
    /// Input to the sentence encoder, after dropout.
    pub representation: Var,
    /// Encoder states, `rows × 2·hidden`.
    pub hidden: Var,
    /// Attention weights, `rows × sources`, for attention runs.
    pub attention: Option<Var>,
}

fn identity_channel(labels: usize) -> Tensor {
    Array2::<f64>::eye(labels).mapv(|p| (p + CHANNEL_EPSILON).ln())
}

impl Tagger {
    pub fn new(
        spec: RepresentationSpec,
        dims: TaggerDims,
        catalog: LabelCatalog,
        sources: Vec<SourceSpec>,
        vocab: TaggerVocab,
        seed: u64,
    ) -> Result<Self> {
        if spec.sources.is_empty() {
            return Err(Error::Config("representation has no sources".into()));
        }
        let mut seen = BTreeSet::new();
        for name in &spec.sources {
            if !seen.insert(name) {
                return Err(Error::Config(format!("source `{name}` listed twice")));
            }
        }
        let mut ordered = Vec::new();
        for name in spec.sources.iter().filter(|n| n.as_str() != CHAR_SOURCE) {
            let src = sources
                .iter()
                .find(|s| &s.name == name)
                .ok_or_else(|| Error::Config(format!("no registry entry for source `{name}`")))?;
            if src.dim == 0 {
                return Err(Error::Config(format!("source `{name}` has dimension 0")));
            }
            ordered.push(src.clone());
        }
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = build_layers(&mut store, &mut rng, &spec, &dims, &catalog, &ordered, &vocab);
        Ok(Tagger {
            spec,
            dims,
            catalog,
            vocab,
            sources: ordered,
            seed,
            pos_heuristic: false,
            store,
            layers,
        })
    }

    pub fn source_dim(&self, name: &str) -> usize {
        source_dim(&self.dims, &self.sources, name)
    }

    /// Size of the per-token vector fed to the sentence encoder.
    pub fn representation_dim(&self) -> usize {
        self.spec
            .output_dim(|s| self.source_dim(s), self.dims.feature_dim())
    }

    pub fn uses_attention(&self) -> bool {
        self.spec.combine == Combine::Attention
    }

    /// Loads estimated corruption probabilities into the channel.
    pub fn set_channel(&mut self, confusion: &ConfusionMatrix) -> Result<()> {
        let logits = init_channel(confusion, self.catalog.len())?;
        *self.store.get_mut(self.layers.channel.logits) = logits;
        Ok(())
    }

    /// Errors unless the model was built for `expected`.
    pub fn check_spec(&self, expected: &RepresentationSpec) -> Result<()> {
        if &self.spec == expected {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "model representation {:?} does not match the configured run {:?}",
                self.spec, expected
            )))
        }
    }

    /// Parameters trained on clean data (everything but head and channel).
    pub fn clean_params(&self) -> Vec<ParamId> {
        let l = &self.layers;
        let mut p = vec![l.char_embedding];
        p.extend(l.char_encoder.params());
        p.extend(l.pos_embedding);
        if let Some(a) = &l.attention {
            p.extend(a.params());
        }
        p.extend(l.encoder.params());
        p.extend(l.crf.params());
        p
    }

    /// Character-level representation of one word.
    pub fn encode_chars(&self, word: &str) -> Result<Vec<f64>> {
        if word.is_empty() {
            return Err(Error::InvalidArgument("cannot encode an empty word".into()));
        }
        let mut g = Graph::new(&self.store);
        let v = self.char_representations(&mut g, &[word]);
        Ok(g.value(v).row(0).to_vec())
    }

    fn char_representations(&self, g: &mut Graph, words: &[&str]) -> Var {
        let ids: Vec<Vec<usize>> = words
            .iter()
            .map(|w| w.chars().map(|c| self.vocab.chars.id(c)).collect())
            .collect();
        let layout = BatchLayout::new(ids.iter().map(Vec::len).collect());
        let mut rows = vec![0; layout.rows()];
        for (u, word) in ids.iter().enumerate() {
            for (c, &id) in word.iter().enumerate() {
                rows[layout.row(c, u)] = id;
            }
        }
        let table = g.param(self.layers.char_embedding);
        let inputs = g.gather_rows(table, rows);
        let masks = layout.masks();
        let enc = &self.layers.char_encoder;
        let (_, fwd) = enc.forward.run(g, inputs, layout.batch, &masks, false);
        let (_, bwd) = enc.backward.run(g, inputs, layout.batch, &masks, true);
        g.concat_cols(&[fwd, bwd])
    }

    /// Builds representations and encoder states for a batch of non-empty
    /// sentences. Dropout is applied when `dropout_rng` is given.
    pub fn forward(
        &self,
        g: &mut Graph,
        sentences: &[&Sentence],
        lexicon: &mut Lexicon,
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Forward> {
        if sentences.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        if let Some(s) = sentences.iter().find(|s| s.is_empty()) {
            return Err(Error::InvalidArgument(format!("empty sentence in document {}", s.doc_id)));
        }
        let layout = BatchLayout::new(sentences.iter().map(|s| s.len()).collect());
        let n_rows = layout.rows();

        let mut words: Vec<&str> = Vec::new();
        let mut word_index: HashMap<&str, usize> = HashMap::new();
        let mut row_word = vec![0; n_rows];
        for (b, s) in sentences.iter().enumerate() {
            for (t, tok) in s.tokens.iter().enumerate() {
                let next = words.len();
                let id = *word_index.entry(tok.surface.as_str()).or_insert(next);
                if id == next {
                    words.push(&tok.surface);
                }
                row_word[layout.row(t, b)] = id;
            }
        }

        let mut parts = Vec::with_capacity(self.spec.sources.len());
        let mut frozen = 0;
        for name in &self.spec.sources {
            if name == CHAR_SOURCE {
                let per_word = self.char_representations(g, &words);
                parts.push(g.gather_rows(per_word, row_word.clone()));
            } else {
                let dim = self.sources[frozen].dim;
                let mut m = Array2::zeros((n_rows, dim));
                for (b, s) in sentences.iter().enumerate() {
                    for (t, tok) in s.tokens.iter().enumerate() {
                        let v = lexicon.vector(frozen, &tok.surface);
                        if v.len() != dim {
                            return Err(Error::Dimension(format!(
                                "source `{name}` produced {} dims, expected {dim}",
                                v.len()
                            )));
                        }
                        m.row_mut(layout.row(t, b))
                            .assign(&ndarray::ArrayView1::from(v));
                    }
                }
                parts.push(g.constant(m));
                frozen += 1;
            }
        }

        let features = match self.layers.pos_embedding {
            Some(pos_table) => {
                let mut pos_rows = vec![0; n_rows];
                let mut one_hots = Array2::zeros((n_rows, 3 * BINS));
                for (b, s) in sentences.iter().enumerate() {
                    for (t, tok) in s.tokens.iter().enumerate() {
                        let r = layout.row(t, b);
                        let f = featurize(tok, &self.vocab.frequencies, &self.vocab.pos)?;
                        pos_rows[r] = f.pos_id;
                        one_hots.row_mut(r).assign(&ndarray::ArrayView1::from(&f.one_hots()[..]));
                    }
                }
                let table = g.param(pos_table);
                let pos = g.gather_rows(table, pos_rows);
                let rest = g.constant(one_hots);
                Some(g.concat_cols(&[pos, rest]))
            }
            None => None,
        };

        let (mut representation, attention) = match (&self.layers.attention, self.spec.combine) {
            (Some(att), Combine::Attention) => {
                let f = features.expect("attention runs always build features");
                let (out, weights) = att.attend(g, &parts, f);
                (out, Some(weights))
            }
            _ => {
                if self.spec.include_features_in_input {
                    parts.extend(features);
                }
                (g.concat_cols(&parts), None)
            }
        };

        if let Some(rng) = dropout_rng {
            if self.dims.dropout > 0.0 {
                let cols = g.value(representation).ncols();
                let mask = dropout_mask(rng, n_rows, cols, self.dims.dropout);
                representation = g.mul_const(representation, mask);
            }
        }

        let (hidden, _, _) = self
            .layers
            .encoder
            .run(g, representation, layout.batch, &layout.masks());
        Ok(Forward {
            layout,
            representation,
            hidden,
            attention,
        })
    }

    fn check_labels(&self, fwd: &Forward, labels: &[&[LabelId]]) -> Result<()> {
        if labels.len() != fwd.layout.batch {
            return Err(Error::InvalidArgument(format!(
                "{} label sequences for a batch of {}",
                labels.len(),
                fwd.layout.batch
            )));
        }
        for (b, l) in labels.iter().enumerate() {
            if l.len() != fwd.layout.lengths[b] {
                return Err(Error::InvalidArgument(format!(
                    "sentence {b}: {} labels for {} tokens",
                    l.len(),
                    fwd.layout.lengths[b]
                )));
            }
            if let Some(&bad) = l.iter().find(|&&x| x >= self.catalog.len()) {
                return Err(Error::InvalidArgument(format!("label id {bad} out of range")));
            }
        }
        Ok(())
    }

    /// CRF negative log-likelihood of the gold sequences, averaged over the
    /// sentences of the batch.
    pub fn clean_loss(&self, g: &mut Graph, fwd: &Forward, gold: &[&[LabelId]]) -> Result<Var> {
        self.check_labels(fwd, gold)?;
        let emissions = self.layers.crf.emissions(g, fwd.hidden);
        let transitions = g.param(self.layers.crf.transitions);
        let sequences = gold
            .iter()
            .enumerate()
            .map(|(b, l)| crf::CrfSequence {
                rows: fwd.layout.rows_of(b),
                gold: l.to_vec(),
            })
            .collect();
        let total = crf::crf_nll_node(g, emissions, transitions, sequences)?;
        Ok(g.scale(total, 1.0 / fwd.layout.batch as f64))
    }

    fn token_distribution(&self, g: &mut Graph, fwd: &Forward, labels: &[&[LabelId]]) -> Result<(Var, Vec<(usize, usize)>)> {
        self.check_labels(fwd, labels)?;
        let mut rows = Vec::new();
        let mut picks = Vec::new();
        for (b, l) in labels.iter().enumerate() {
            for (r, &label) in fwd.layout.rows_of(b).into_iter().zip(l.iter()) {
                picks.push((rows.len(), label));
                rows.push(r);
            }
        }
        let hidden = g.gather_rows(fwd.hidden, rows);
        Ok((self.layers.head.probabilities(g, hidden), picks))
    }

    /// Token-level cross-entropy of noisy labels under the channel output,
    /// averaged over the sentences of the batch.
    pub fn noisy_loss(&self, g: &mut Graph, fwd: &Forward, noisy: &[&[LabelId]]) -> Result<Var> {
        let (clean, picks) = self.token_distribution(g, fwd, noisy)?;
        let observed = self.layers.channel.apply(g, clean);
        let total = g.neg_log_pick(observed, picks);
        Ok(g.scale(total, 1.0 / fwd.layout.batch as f64))
    }

    /// Token-level cross-entropy under the softmax head alone.
    pub fn head_loss(&self, g: &mut Graph, fwd: &Forward, labels: &[&[LabelId]]) -> Result<Var> {
        let (clean, picks) = self.token_distribution(g, fwd, labels)?;
        let total = g.neg_log_pick(clean, picks);
        Ok(g.scale(total, 1.0 / fwd.layout.batch as f64))
    }

    /// Viterbi label sequences; empty sentences get empty sequences.
    pub fn predict_labels(&self, sentences: &[Sentence], lexicon: &mut Lexicon) -> Result<Vec<Vec<LabelId>>> {
        let mut out = vec![Vec::new(); sentences.len()];
        let transitions = self.store.get(self.layers.crf.transitions);
        for chunk in inference_batches(sentences) {
            let batch: Vec<&Sentence> = chunk.iter().map(|&i| &sentences[i]).collect();
            let mut g = Graph::new(&self.store);
            let fwd = self.forward(&mut g, &batch, lexicon, None)?;
            let emissions = self.layers.crf.emissions(&mut g, fwd.hidden);
            let em = g.value(emissions);
            for (b, &i) in chunk.iter().enumerate() {
                let rows = em.select(ndarray::Axis(0), &fwd.layout.rows_of(b));
                out[i] = viterbi_decode(&rows, transitions).0;
            }
        }
        Ok(out)
    }

    pub fn predict_spans(&self, sentences: &[Sentence], lexicon: &mut Lexicon) -> Result<Vec<Vec<EntitySpan>>> {
        let labels = self.predict_labels(sentences, lexicon)?;
        Ok(sentences
            .iter()
            .zip(&labels)
            .map(|(s, l)| decode_bio(l, s, &self.catalog))
            .collect())
    }

    /// Per-token attention weights over the sources, in source order.
    pub fn attention_weights(&self, sentences: &[Sentence], lexicon: &mut Lexicon) -> Result<Vec<Vec<Vec<f64>>>> {
        if !self.uses_attention() {
            return Err(Error::Config("model does not combine sources with attention".into()));
        }
        let mut out = vec![Vec::new(); sentences.len()];
        for chunk in inference_batches(sentences) {
            let batch: Vec<&Sentence> = chunk.iter().map(|&i| &sentences[i]).collect();
            let mut g = Graph::new(&self.store);
            let fwd = self.forward(&mut g, &batch, lexicon, None)?;
            let weights = g.value(fwd.attention.expect("attention run"));
            for (b, &i) in chunk.iter().enumerate() {
                out[i] = fwd
                    .layout
                    .rows_of(b)
                    .into_iter()
                    .map(|r| weights.row(r).to_vec())
                    .collect();
            }
        }
        Ok(out)
    }
}

/// Indices of non-empty sentences grouped into length-sorted batches.
fn inference_batches(sentences: &[Sentence]) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..sentences.len()).filter(|&i| !sentences[i].is_empty()).collect();
    order.sort_by_key(|&i| (sentences[i].len(), i));
    order.chunks(32).map(<[usize]>::to_vec).collect()
}

fn source_dim(dims: &TaggerDims, sources: &[SourceSpec], name: &str) -> usize {
    if name == CHAR_SOURCE {
        2 * dims.char_hidden
    } else {
        sources.iter().find(|s| s.name == name).map_or(0, |s| s.dim)
    }
}

pub(crate) fn build_layers(
    store: &mut ParamStore,
    rng: &mut ChaCha8Rng,
    spec: &RepresentationSpec,
    dims: &TaggerDims,
    catalog: &LabelCatalog,
    sources: &[SourceSpec],
    vocab: &TaggerVocab,
) -> TaggerLayers {
    let char_embedding = store.add(
        "char.embedding",
        init_uniform(rng, vocab.chars.len(), dims.char_embedding, dims.char_embedding),
    );
    let char_encoder = BiLstm::new(store, rng, "char.lstm", dims.char_embedding, dims.char_hidden);
    let pos_embedding = spec.uses_features().then(|| {
        store.add(
            "features.pos",
            init_uniform(rng, vocab.pos.len(), dims.pos_embedding, dims.pos_embedding),
        )
    });
    let attention = (spec.combine == Combine::Attention).then(|| {
        let named: Vec<(&str, usize)> = spec
            .sources
            .iter()
            .map(|n| (n.as_str(), source_dim(dims, sources, n)))
            .collect();
        AttentionParams::new(store, rng, &named, dims.feature_dim(), dims.attention_hidden)
    });
    let input = spec.output_dim(|s| source_dim(dims, sources, s), dims.feature_dim());
    let encoder = BiLstm::new(store, rng, "encoder", input, dims.hidden);
    let labels = catalog.len();
    let crf = CrfLayer::new(store, rng, 2 * dims.hidden, labels);
    let head = SoftmaxHead::new(store, rng, 2 * dims.hidden, labels);
    let channel = NoisyChannel::new(store, identity_channel(labels));
    TaggerLayers {
        char_embedding,
        char_encoder,
        pos_embedding,
        attention,
        encoder,
        crf,
        head,
        channel,
    }
}

#[cfg(test)]
mod tests;
