//! Prepared-corpus TSV: `surface<TAB>start<TAB>end<TAB>pos<TAB>label`, one
//! token per line, blank line between sentences, `#doc <id>` headers.
//! An absent POS tag is written as `_`.

use super::{LabelCatalog, LabeledSentence, Sentence, Token};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TsvDocument {
    pub id: String,
    pub sentences: Vec<LabeledSentence>,
}

pub fn read_corpus_tsv(
    content: &str,
    catalog: &LabelCatalog,
    location: &str,
) -> Result<Vec<TsvDocument>> {
    let mut docs: Vec<TsvDocument> = Vec::new();
    let mut tokens: Vec<Token> = Vec::new();
    let mut labels = Vec::new();

    fn flush(docs: &mut Vec<TsvDocument>, tokens: &mut Vec<Token>, labels: &mut Vec<usize>) {
        if tokens.is_empty() {
            return;
        }
        if docs.is_empty() {
            docs.push(TsvDocument {
                id: "doc".into(),
                sentences: Vec::new(),
            });
        }
        let doc = docs.last_mut().unwrap();
        doc.sentences.push(LabeledSentence {
            sentence: Sentence::new(doc.id.clone(), std::mem::take(tokens)),
            labels: std::mem::take(labels),
        });
    }

    for (lineno, raw) in content.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        let loc = || format!("{location}:{}", lineno + 1);
        if line.trim().is_empty() {
            flush(&mut docs, &mut tokens, &mut labels);
            continue;
        }
        if let Some(id) = line.strip_prefix("#doc") {
            flush(&mut docs, &mut tokens, &mut labels);
            docs.push(TsvDocument {
                id: id.trim().to_string(),
                sentences: Vec::new(),
            });
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 5 {
            return Err(Error::parse(loc(), format!("expected 5 columns, got {}", cols.len())));
        }
        let num = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::parse(loc(), format!("bad offset `{s}`")))
        };
        let (start, end) = (num(cols[1])?, num(cols[2])?);
        if cols[0].is_empty() || end <= start {
            return Err(Error::parse(loc(), "empty token or non-increasing offsets"));
        }
        if let Some(prev) = tokens.last() {
            if start < prev.end {
                return Err(Error::parse(loc(), "token overlaps the preceding token"));
            }
        }
        let label = catalog
            .id(cols[4])
            .ok_or_else(|| Error::parse(loc(), format!("unknown label `{}`", cols[4])))?;
        let mut tok = Token::new(cols[0], start, end);
        if cols[3] != "_" && !cols[3].is_empty() {
            tok.pos = Some(cols[3].to_string());
        }
        tokens.push(tok);
        labels.push(label);
    }
    flush(&mut docs, &mut tokens, &mut labels);
    Ok(docs)
}

pub fn write_corpus_tsv(docs: &[TsvDocument], catalog: &LabelCatalog) -> String {
    let mut out = String::new();
    for doc in docs {
        out.push_str(&format!("#doc {}\n", doc.id));
        for s in &doc.sentences {
            for (tok, &label) in s.sentence.tokens.iter().zip(&s.labels) {
                out.push_str(&format!(
                    "{}\t{}\t{}\t{}\t{}\n",
                    tok.surface,
                    tok.start,
                    tok.end,
                    tok.pos.as_deref().unwrap_or("_"),
                    catalog.label(label)
                ));
            }
            out.push('\n');
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "#doc a\nLa\t0\t2\tDA\tO\nglucosa\t3\t10\tNC\tB-NORMALIZABLES\n\n#doc b\nTSH\t0\t3\t_\tB-PROTEINAS\n\n";

    #[test]
    fn reads_and_writes() {
        let c = LabelCatalog::task();
        let docs = read_corpus_tsv(SAMPLE, &c, "t").unwrap();
        assert_eq!(docs.len(), 2);
        assert_eq!(docs[0].sentences[0].labels, vec![0, 3]);
        assert_eq!(docs[1].sentences[0].sentence.tokens[0].pos, None);
        assert_eq!(write_corpus_tsv(&docs, &c), SAMPLE);
    }

    #[test]
    fn rejects_bad_rows() {
        let c = LabelCatalog::task();
        assert!(read_corpus_tsv("a\t0\t1\tX\n", &c, "t").is_err());
        assert!(read_corpus_tsv("a\t0\t1\tX\tB-DRUG\n", &c, "t").is_err());
        assert!(read_corpus_tsv("a\t2\t1\tX\tO\n", &c, "t").is_err());
    }
}
