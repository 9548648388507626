use log::warn;

use super::{EntitySpan, LabelCatalog, LabelId, LabelKind, Sentence};
use crate::error::{Error, Result};

/// Token index range `[first, last]` covered by `span`, if its boundaries
/// coincide with token boundaries.
fn token_range(sentence: &Sentence, span: &EntitySpan) -> Result<(usize, usize)> {
    let misaligned = |message: &str| Error::Alignment {
        start: span.start,
        end: span.end,
        message: message.to_string(),
    };
    if span.end <= span.start {
        return Err(misaligned("is empty"));
    }
    let first = sentence
        .tokens
        .iter()
        .position(|t| t.start == span.start)
        .ok_or_else(|| misaligned("starts inside a token or outside the sentence"))?;
    let last = sentence
        .tokens
        .iter()
        .position(|t| t.end == span.end)
        .ok_or_else(|| misaligned("ends inside a token or outside the sentence"))?;
    if last < first {
        return Err(misaligned("ends before it starts"));
    }
    Ok((first, last))
}

fn spans_in_sentence<'a>(
    sentence: &Sentence,
    spans: &'a [EntitySpan],
) -> impl Iterator<Item = &'a EntitySpan> {
    let (lo, hi) = sentence.extent().unwrap_or((0, 0));
    spans
        .iter()
        .filter(move |s| s.start < hi && s.end > lo)
}

/// BIO-encodes the spans overlapping `sentence`.
///
/// Spans must be non-overlapping and aligned to token boundaries.
pub fn encode_bio(
    sentence: &Sentence,
    spans: &[EntitySpan],
    catalog: &LabelCatalog,
) -> Result<Vec<LabelId>> {
    let mut relevant: Vec<&EntitySpan> = spans_in_sentence(sentence, spans).collect();
    relevant.sort_by_key(|s| (s.start, s.end));
    for pair in relevant.windows(2) {
        if pair[0].overlaps(pair[1]) {
            return Err(Error::OverlappingSpans {
                first_start: pair[0].start,
                first_end: pair[0].end,
                second_start: pair[1].start,
                second_end: pair[1].end,
            });
        }
    }
    let mut labels = vec![catalog.outside(); sentence.len()];
    for span in relevant {
        let (first, last) = token_range(sentence, span)?;
        write_span(&mut labels, first, last, span, catalog)?;
    }
    Ok(labels)
}

fn write_span(
    labels: &mut [LabelId],
    first: usize,
    last: usize,
    span: &EntitySpan,
    catalog: &LabelCatalog,
) -> Result<()> {
    let (b, i) = catalog
        .begin(span.etype)
        .zip(catalog.inside(span.etype))
        .ok_or_else(|| {
            Error::InvalidArgument(format!("type {} not in label catalog", span.etype))
        })?;
    labels[first] = b;
    for l in &mut labels[first + 1..=last] {
        *l = i;
    }
    Ok(())
}

/// Like [`encode_bio`], but drops spans that are misaligned or overlap an
/// earlier span instead of failing. Dropped spans are returned and logged.
pub fn encode_bio_lenient(
    sentence: &Sentence,
    spans: &[EntitySpan],
    catalog: &LabelCatalog,
) -> (Vec<LabelId>, Vec<EntitySpan>) {
    let mut relevant: Vec<&EntitySpan> = spans_in_sentence(sentence, spans).collect();
    relevant.sort_by_key(|s| (s.start, s.end));
    let mut labels = vec![catalog.outside(); sentence.len()];
    let mut dropped = Vec::new();
    let mut taken_until = 0usize;
    for span in relevant {
        let outcome = if span.start < taken_until {
            Err(Error::Alignment {
                start: span.start,
                end: span.end,
                message: "overlaps another span".into(),
            })
        } else {
            token_range(sentence, span)
                .and_then(|(f, l)| write_span(&mut labels, f, l, span, catalog))
        };
        match outcome {
            Ok(()) => taken_until = span.end,
            Err(e) => {
                warn!("{}: dropping span: {e}", sentence.doc_id);
                dropped.push(span.clone());
            }
        }
    }
    (labels, dropped)
}

/// Converts a label sequence back to character-offset spans.
///
/// Orphan `I-t` labels open a new span, as does `I-u` after a `t` run.
pub fn decode_bio(
    labels: &[LabelId],
    sentence: &Sentence,
    catalog: &LabelCatalog,
) -> Vec<EntitySpan> {
    let mut spans = Vec::new();
    let mut open: Option<(usize, super::EntityType)> = None;
    let n = labels.len().min(sentence.len());
    let close = |open: Option<(usize, super::EntityType)>, last: usize, spans: &mut Vec<EntitySpan>| {
        if let Some((first, etype)) = open {
            spans.push(EntitySpan::new(
                sentence.tokens[first].start,
                sentence.tokens[last].end,
                etype,
                sentence.text_between(first, last),
            ));
        }
    };
    for (pos, &label) in labels.iter().take(n).enumerate() {
        let kind = if label < catalog.len() {
            catalog.kind(label)
        } else {
            LabelKind::Outside
        };
        match kind {
            LabelKind::Outside => {
                if pos > 0 {
                    close(open.take(), pos - 1, &mut spans);
                }
            }
            LabelKind::Begin(t) => {
                if pos > 0 {
                    close(open.take(), pos - 1, &mut spans);
                }
                open = Some((pos, t));
            }
            LabelKind::Inside(t) => match open {
                Some((_, cur)) if cur == t => {}
                _ => {
                    if pos > 0 {
                        close(open.take(), pos - 1, &mut spans);
                    }
                    open = Some((pos, t));
                }
            },
        }
    }
    if n > 0 {
        close(open, n - 1, &mut spans);
    }
    spans
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{EntityType, Token};
    use proptest::prelude::*;

    fn sentence(words: &[&str]) -> Sentence {
        let mut tokens = Vec::new();
        let mut pos = 0;
        for w in words {
            let n = w.chars().count();
            tokens.push(Token::new(*w, pos, pos + n));
            pos += n + 1;
        }
        Sentence::new("d", tokens)
    }

    fn span_over(s: &Sentence, first: usize, last: usize, t: EntityType) -> EntitySpan {
        EntitySpan::new(
            s.tokens[first].start,
            s.tokens[last].end,
            t,
            s.text_between(first, last),
        )
    }

    #[test]
    fn encode_basic() {
        let c = LabelCatalog::task();
        let s = sentence(&["niveles", "de", "factor", "VIII"]);
        let spans = vec![span_over(&s, 2, 3, EntityType::Proteinas)];
        let labels = encode_bio(&s, &spans, &c).unwrap();
        let names: Vec<&str> = labels.iter().map(|&l| c.label(l)).collect();
        assert_eq!(names, ["O", "O", "B-PROTEINAS", "I-PROTEINAS"]);
        assert_eq!(encode_bio(&s, &[], &c).unwrap(), vec![0; 4]);
    }

    #[test]
    fn encode_rejects_overlap_and_misalignment() {
        let c = LabelCatalog::task();
        let s = sentence(&["a", "bb", "cc"]);
        let a = span_over(&s, 0, 1, EntityType::Unclear);
        let b = span_over(&s, 1, 2, EntityType::Unclear);
        assert!(matches!(
            encode_bio(&s, &[a, b], &c),
            Err(Error::OverlappingSpans { .. })
        ));
        let inside = EntitySpan::new(3, 4, EntityType::Unclear, "b");
        assert!(matches!(
            encode_bio(&s, &[inside.clone()], &c),
            Err(Error::Alignment { start: 3, end: 4, .. })
        ));
        let (labels, dropped) = encode_bio_lenient(&s, &[inside], &c);
        assert_eq!(labels, vec![0; 3]);
        assert_eq!(dropped.len(), 1);
    }

    #[test]
    fn decode_examples() {
        let c = LabelCatalog::new(&[EntityType::Proteinas, EntityType::Unclear]);
        let bx = c.begin(EntityType::Proteinas).unwrap();
        let ix = c.inside(EntityType::Proteinas).unwrap();
        let iy = c.inside(EntityType::Unclear).unwrap();
        let s = sentence(&["aa", "bb", "cc"]);

        let spans = decode_bio(&[bx, ix, 0], &s, &c);
        assert_eq!(spans, vec![span_over(&s, 0, 1, EntityType::Proteinas)]);

        let spans = decode_bio(&[ix, 0], &sentence(&["aa", "bb"]), &c);
        assert_eq!(spans.len(), 1);
        assert_eq!((spans[0].start, spans[0].end), (0, 2));

        let s2 = sentence(&["aa", "bb"]);
        let spans = decode_bio(&[bx, iy], &s2, &c);
        assert_eq!(
            spans,
            vec![
                span_over(&s2, 0, 0, EntityType::Proteinas),
                span_over(&s2, 1, 1, EntityType::Unclear)
            ]
        );
    }

    fn arb_case() -> impl Strategy<Value = (Vec<usize>, Vec<(usize, usize, usize)>)> {
        // word lengths, then non-overlapping (first, len, type) triples
        (1usize..12).prop_flat_map(|n| {
            (
                proptest::collection::vec(1usize..6, n),
                proptest::collection::vec((0usize..3, 1usize..4, 0usize..4), 0..n),
            )
        })
        .prop_map(|(lens, raw)| {
            let n = lens.len();
            let mut spans = Vec::new();
            let mut cursor = 0;
            for (gap, len, t) in raw {
                let first = cursor + gap;
                if first >= n {
                    break;
                }
                let last = (first + len - 1).min(n - 1);
                spans.push((first, last, t));
                cursor = last + 1;
            }
            (lens, spans)
        })
    }

    proptest! {
        #[test]
        fn round_trip((lens, raw) in arb_case()) {
            let c = LabelCatalog::task();
            let words: Vec<String> = lens.iter().map(|&l| "x".repeat(l)).collect();
            let refs: Vec<&str> = words.iter().map(String::as_str).collect();
            let s = sentence(&refs);
            let spans: Vec<EntitySpan> = raw
                .iter()
                .map(|&(f, l, t)| span_over(&s, f, l, EntityType::ALL[t]))
                .collect();
            let labels = encode_bio(&s, &spans, &c).unwrap();
            prop_assert_eq!(decode_bio(&labels, &s, &c), spans);
        }

        #[test]
        fn decode_is_total(labels in proptest::collection::vec(0usize..9, 1..15)) {
            let c = LabelCatalog::task();
            let words: Vec<String> = (0..labels.len()).map(|i| format!("w{i}")).collect();
            let refs: Vec<&str> = words.iter().map(String::as_str).collect();
            let s = sentence(&refs);
            let spans = decode_bio(&labels, &s, &c);
            for w in spans.windows(2) {
                prop_assert!(w[0].end <= w[1].start);
            }
            for sp in &spans {
                prop_assert!(sp.start < sp.end);
            }
        }
    }
}
