use super::*;
use crate::autodiff::check_gradients;
use crate::corpus::Token;
use crate::embeddings::{SourceLocation, VectorKind};

fn sentence(words: &[&str]) -> Sentence {
    let mut tokens = Vec::new();
    let mut at = 0;
    for (i, w) in words.iter().enumerate() {
        let n = w.chars().count();
        let tag = if i % 2 == 0 { "NC" } else { "SP" };
        tokens.push(Token::new(*w, at, at + n).with_pos(tag));
        at += n + 1;
    }
    Sentence::new("d", tokens)
}

fn fallback(name: &str, dim: usize) -> SourceSpec {
    SourceSpec {
        name: name.into(),
        dim,
        kind: VectorKind::Word,
        location: SourceLocation::Fallback { seed: 3 },
    }
}

fn toy_dims() -> TaggerDims {
    TaggerDims {
        char_embedding: 4,
        char_hidden: 3,
        pos_embedding: 3,
        hidden: 4,
        attention_hidden: 3,
        dropout: 0.5,
    }
}

fn toy(combine: Combine, features: bool) -> Tagger {
    let train = vec![sentence(&["La", "tiroglobulina", "sérica"]), sentence(&["de", "TSH", "3,5"])];
    let spec = RepresentationSpec {
        sources: vec!["char".into(), "ft".into(), "bpe".into()],
        combine,
        include_features_in_input: features,
    };
    let sources = vec![fallback("ft", 5), fallback("bpe", 7)];
    Tagger::new(spec, toy_dims(), LabelCatalog::task(), sources, TaggerVocab::from_sentences(&train), 11).unwrap()
}

fn grad_check(tagger: &mut Tagger, noisy: bool) {
    let s = sentence(&["La", "TSH", "sérica"]);
    let labels: Vec<usize> = vec![0, 1, 2];
    let mut lex = Lexicon::open(tagger).unwrap();
    let vectors: Vec<Vec<Vec<f64>>> = (0..lex.sources().len())
        .map(|k| s.tokens.iter().map(|t| lex.vector(k, &t.surface).to_vec()).collect())
        .collect();
    assert_eq!(vectors.len(), 2);
    let params: Vec<ParamId> = tagger.store.ids().collect();
    let t: &Tagger = &*tagger;
    let layers = t.layers.clone();
    let spec = t.spec.clone();
    let dims = t.dims;
    let vocab = t.vocab.clone();
    let sources = t.sources.clone();
    let catalog = t.catalog.clone();
    let mut store = std::mem::take(&mut tagger.store);
    let report = check_gradients(&mut store, &params, 1e-4, 40, |g| {
        let shadow = Tagger {
            spec: spec.clone(),
            dims,
            catalog: catalog.clone(),
            vocab: vocab.clone(),
            sources: sources.clone(),
            seed: 0,
            pos_heuristic: false,
            store: ParamStore::new(),
            layers: layers.clone(),
        };
        let mut lex = Lexicon::from_sources(
            sources.iter().map(|s| s.open().unwrap()).collect(),
        );
        let fwd = shadow.forward(g, &[&s], &mut lex, None).unwrap();
        if noisy {
            shadow.noisy_loss(g, &fwd, &[&labels]).unwrap()
        } else {
            shadow.clean_loss(g, &fwd, &[&labels]).unwrap()
        }
    });
    tagger.store = store;
    let mut touched = 0;
    for r in &report {
        if r.checked > 0 {
            touched += 1;
        }
        assert!(r.max_rel_error < 1e-4, "{}: {}", r.name, r.max_rel_error);
    }
    assert!(touched > 0);
}

#[test]
fn clean_loss_gradients_with_attention() {
    grad_check(&mut toy(Combine::Attention, false), false);
}

#[test]
fn clean_loss_gradients_with_concat_and_features() {
    grad_check(&mut toy(Combine::Concat, true), false);
}

#[test]
fn channel_loss_gradients() {
    let mut t = toy(Combine::Attention, false);
    let confusion = crate::distant::ConfusionMatrix::from_counts(Array2::from_shape_fn((9, 9), |(i, j)| {
        if i == j { 20 } else { (i + 2 * j) as u64 % 3 }
    }));
    t.set_channel(&confusion).unwrap();
    grad_check(&mut t, true);
}

#[test]
fn representation_sizes() {
    assert_eq!(toy(Combine::Concat, false).representation_dim(), 6 + 5 + 7);
    assert_eq!(toy(Combine::Concat, true).representation_dim(), 6 + 5 + 7 + 33);
    assert_eq!(toy(Combine::Attention, false).representation_dim(), 7);
    let t = toy(Combine::Attention, false);
    let mut lex = Lexicon::open(&t).unwrap();
    let s = sentence(&["a", "b"]);
    let mut g = Graph::new(&t.store);
    let fwd = t.forward(&mut g, &[&s], &mut lex, None).unwrap();
    assert_eq!(g.value(fwd.representation).dim(), (2, 7));
    assert_eq!(g.value(fwd.hidden).dim(), (2, 8));
}

#[test]
fn padding_does_not_change_predictions() {
    let t = toy(Combine::Attention, false);
    let mut lex = Lexicon::open(&t).unwrap();
    let short = sentence(&["TSH"]);
    let long = sentence(&["La", "tiroglobulina", "sérica", "de", "x"]);
    let emissions = |batch: &[&Sentence], lex: &mut Lexicon, b: usize| {
        let mut g = Graph::new(&t.store);
        let fwd = t.forward(&mut g, batch, lex, None).unwrap();
        let em = t.layers.crf.emissions(&mut g, fwd.hidden);
        g.value(em).select(ndarray::Axis(0), &fwd.layout.rows_of(b))
    };
    let alone = emissions(&[&short], &mut lex, 0);
    let padded = emissions(&[&long, &short], &mut lex, 1);
    for (a, b) in alone.iter().zip(padded.iter()) {
        assert!((a - b).abs() < 1e-12);
    }
    let sentences = vec![long.clone(), Sentence::new("d", vec![]), short.clone()];
    let labels = t.predict_labels(&sentences, &mut lex).unwrap();
    assert_eq!(labels[0].len(), 5);
    assert!(labels[1].is_empty());
    assert_eq!(labels[2], t.predict_labels(&[short], &mut lex).unwrap()[0]);
}

#[test]
fn attention_weights_are_distributions() {
    let t = toy(Combine::Attention, false);
    let mut lex = Lexicon::open(&t).unwrap();
    let w = t
        .attention_weights(&[sentence(&["La", "TSH"]), sentence(&["x"])], &mut lex)
        .unwrap();
    assert_eq!(w[0].len(), 2);
    for row in w.iter().flatten() {
        assert_eq!(row.len(), 3);
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
    let c = toy(Combine::Concat, false);
    assert!(c.attention_weights(&[sentence(&["x"])], &mut Lexicon::open(&c).unwrap()).is_err());
}

#[test]
fn char_encoding_shape_and_determinism() {
    let t = toy(Combine::Concat, false);
    let a = t.encode_chars("tiroglobulina").unwrap();
    assert_eq!(a.len(), 6);
    assert_eq!(a, toy(Combine::Concat, false).encode_chars("tiroglobulina").unwrap());
    assert!(t.encode_chars("").is_err());
    let full = Tagger::new(
        RepresentationSpec {
            sources: vec!["char".into()],
            combine: Combine::Concat,
            include_features_in_input: false,
        },
        TaggerDims::default(),
        LabelCatalog::task(),
        vec![],
        TaggerVocab::from_sentences(&[sentence(&["abc"])]),
        1,
    )
    .unwrap();
    assert_eq!(full.encode_chars("ñandú").unwrap().len(), 50);
}

#[test]
fn rejects_unregistered_sources() {
    let spec = RepresentationSpec {
        sources: vec!["char".into(), "ft".into()],
        combine: Combine::Concat,
        include_features_in_input: false,
    };
    let vocab = TaggerVocab::from_sentences(&[]);
    assert!(Tagger::new(spec.clone(), toy_dims(), LabelCatalog::task(), vec![], vocab.clone(), 1).is_err());
    let dup = RepresentationSpec {
        sources: vec!["ft".into(), "ft".into()],
        ..spec
    };
    assert!(Tagger::new(dup, toy_dims(), LabelCatalog::task(), vec![fallback("ft", 3)], vocab, 1).is_err());
}

#[test]
fn model_file_round_trip_and_corruption() {
    let mut t = toy(Combine::Attention, false);
    t.pos_heuristic = true;
    let bytes = io::to_bytes(&t).unwrap();
    let back = io::from_bytes(&bytes).unwrap();
    assert_eq!(back.spec, t.spec);
    assert_eq!(back.vocab, t.vocab);
    assert!(back.pos_heuristic);
    for ((_, a), (_, b)) in t.store.iter().zip(back.store.iter()) {
        assert_eq!(a.name, b.name);
        assert!(a.value.iter().zip(b.value.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    assert_eq!(io::to_bytes(&back).unwrap(), bytes);

    let mut corrupt = bytes.clone();
    let mid = corrupt.len() / 2;
    corrupt[mid] ^= 0x40;
    assert!(matches!(io::from_bytes(&corrupt), Err(Error::ModelFormat(m)) if m.contains("checksum")));
    assert!(io::from_bytes(&bytes[..bytes.len() - 9]).is_err());
    let mut version = bytes.clone();
    version[8] = 9;
    assert!(matches!(io::from_bytes(&version), Err(Error::ModelFormat(m)) if m.contains("version")));
    assert!(io::from_bytes(b"garbage").is_err());

    let concat = toy(Combine::Concat, false);
    assert!(back.check_spec(&concat.spec).is_err());
    assert!(back.check_spec(&t.spec).is_ok());
}
