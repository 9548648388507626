//! Fallback tokenizer and repair of tokenizer-merged multi-word tokens.

use super::{char_slice, Document, Sentence, Token};
use crate::error::{Error, Result};

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric()
}

/// Whitespace tokenization with leading/trailing punctuation split off.
/// Inner punctuation (`CAM5.2`, `alfa-1`) stays inside the token.
pub fn tokenize_line(line: &str, base: usize) -> Vec<Token> {
    let chars: Vec<char> = line.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if chars[i].is_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        while i < chars.len() && !chars[i].is_whitespace() {
            i += 1;
        }
        let end = i;
        let mut lo = start;
        while lo < end && !is_word_char(chars[lo]) {
            lo += 1;
        }
        let mut hi = end;
        while hi > lo && !is_word_char(chars[hi - 1]) {
            hi -= 1;
        }
        for p in start..lo {
            tokens.push(Token::new(chars[p].to_string(), base + p, base + p + 1));
        }
        if hi > lo {
            let surface: String = chars[lo..hi].iter().collect();
            tokens.push(Token::new(surface, base + lo, base + hi));
        }
        for p in hi.max(lo)..end {
            tokens.push(Token::new(chars[p].to_string(), base + p, base + p + 1));
        }
    }
    tokens
}

/// One sentence per non-blank line of the document text.
pub fn sentences_from_text(doc: &Document) -> Vec<Sentence> {
    let mut out = Vec::new();
    let mut base = 0;
    for line in doc.text.split('\n') {
        let tokens = tokenize_line(line, base);
        if !tokens.is_empty() {
            out.push(Sentence::new(doc.id.clone(), tokens));
        }
        base += line.chars().count() + 1;
    }
    out
}

/// Splits a token the tokenizer glued together with underscores, when the
/// underscores are not in the source text. Pieces are located left to right
/// inside the original `[start, end)`.
pub fn repair_merged_token(token: &Token, source: &str) -> Result<Vec<Token>> {
    let slice = char_slice(source, token.start, token.end).ok_or_else(|| Error::Alignment {
        start: token.start,
        end: token.end,
        message: "is outside the source text".into(),
    })?;
    if !token.surface.contains('_') || slice.contains('_') {
        return Ok(vec![token.clone()]);
    }
    let slice_chars: Vec<char> = slice.chars().collect();
    let mut cursor = 0;
    let mut out = Vec::new();
    for piece in token.surface.split('_').filter(|p| !p.is_empty()) {
        let piece_chars: Vec<char> = piece.chars().collect();
        let found = (cursor..=slice_chars.len().saturating_sub(piece_chars.len()))
            .find(|&k| slice_chars[k..].starts_with(&piece_chars))
            .ok_or_else(|| Error::Alignment {
                start: token.start,
                end: token.end,
                message: format!("piece `{piece}` of `{}` not found in source", token.surface),
            })?;
        let start = token.start + found;
        let end = start + piece_chars.len();
        out.push(Token {
            surface: piece.to_string(),
            start,
            end,
            pos: token.pos.clone(),
        });
        cursor = found + piece_chars.len();
    }
    if out.is_empty() {
        return Err(Error::Alignment {
            start: token.start,
            end: token.end,
            message: format!("token `{}` has no pieces", token.surface),
        });
    }
    Ok(out)
}

/// Applies [`repair_merged_token`] to every token of `sentence`.
pub fn repair_sentence(sentence: &Sentence, source: &str) -> Result<Sentence> {
    let mut tokens = Vec::with_capacity(sentence.len());
    for t in &sentence.tokens {
        tokens.extend(repair_merged_token(t, source)?);
    }
    Ok(Sentence::new(sentence.doc_id.clone(), tokens))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn surfaces(tokens: &[Token]) -> Vec<(&str, usize, usize)> {
        tokens.iter().map(|t| (t.surface.as_str(), t.start, t.end)).collect()
    }

    #[test]
    fn splits_merged_token() {
        let source = "estadio xx pT3 pN1 M0";
        let tok = Token::new("pT3_pN1", 11, 18);
        let out = repair_merged_token(&tok, source).unwrap();
        assert_eq!(surfaces(&out), [("pT3", 11, 14), ("pN1", 15, 18)]);

        let source = "Tratado según lo descrito";
        let tok = Token::new("según_lo_descrito", 8, 25);
        let out = repair_merged_token(&tok, source).unwrap();
        assert_eq!(surfaces(&out), [("según", 8, 13), ("lo", 14, 16), ("descrito", 17, 25)]);
    }

    #[test]
    fn leaves_plain_tokens_alone() {
        let tok = Token::new("alfa-1", 0, 6);
        assert_eq!(repair_merged_token(&tok, "alfa-1").unwrap(), vec![tok]);
        let tok = Token::new("a_b", 0, 3);
        assert_eq!(repair_merged_token(&tok, "a_b").unwrap(), vec![tok]);
    }

    #[test]
    fn unlocatable_piece_is_an_error() {
        let tok = Token::new("foo_bar", 0, 7);
        assert!(repair_merged_token(&tok, "foo baz").is_err());
    }

    #[test]
    fn fallback_tokenizer() {
        let toks = tokenize_line("(TSH) CAM5.2, alfa-1.", 0);
        let got: Vec<&str> = toks.iter().map(|t| t.surface.as_str()).collect();
        assert_eq!(got, ["(", "TSH", ")", "CAM5.2", ",", "alfa-1", "."]);
        let doc = Document {
            id: "x".into(),
            text: "Una línea.\n\nOtra más".into(),
        };
        let sents = sentences_from_text(&doc);
        assert_eq!(sents.len(), 2);
        assert_eq!(sents[1].tokens[0].start, 12);
        for s in &sents {
            s.validate().unwrap();
            for t in &s.tokens {
                assert_eq!(char_slice(&doc.text, t.start, t.end), Some(t.surface.as_str()));
            }
        }
    }

    proptest! {
        #[test]
        fn repair_preserves_content(words in proptest::collection::vec("[a-zñ0-9]{1,6}", 1..5),
                                    seps in proptest::collection::vec(" {1,2}", 4)) {
            let mut source = String::from("xx ");
            let start = source.chars().count();
            for (i, w) in words.iter().enumerate() {
                if i > 0 { source.push_str(&seps[i - 1]); }
                source.push_str(w);
            }
            let end = source.chars().count();
            let tok = Token::new(words.join("_"), start, end);
            let out = repair_merged_token(&tok, &source).unwrap();
            let joined: String = out.iter().map(|t| t.surface.as_str()).collect();
            prop_assert_eq!(joined, words.concat());
            for t in &out {
                prop_assert!(t.start >= start && t.end <= end);
                prop_assert_eq!(char_slice(&source, t.start, t.end), Some(t.surface.as_str()));
            }
        }
    }
}
