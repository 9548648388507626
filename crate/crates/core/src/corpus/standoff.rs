//! Brat-style standoff files: a `.txt` document beside an `.ann` file of
//! `T<id>\t<TYPE> <start> <end>\t<text>` lines.

use std::fs;
use std::path::{Path, PathBuf};

use super::{Annotation, Document, EntitySpan, EntityType};
use crate::error::{Error, Result};

/// Parses `.ann` content. With `doc`, every span is checked against the text.
pub fn parse_ann(content: &str, doc: Option<&Document>, location: &str) -> Result<Vec<Annotation>> {
    let mut out = Vec::new();
    for (lineno, line) in content.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let loc = || format!("{location}:{}", lineno + 1);
        let mut fields = line.splitn(3, '\t');
        let (id, middle, text) = match (fields.next(), fields.next(), fields.next()) {
            (Some(id), Some(m), Some(t)) => (id, m, t),
            _ => return Err(Error::parse(loc(), "expected three tab-separated fields")),
        };
        if !id.starts_with('T') {
            return Err(Error::parse(loc(), format!("unsupported annotation id `{id}`")));
        }
        let parts: Vec<&str> = middle.split(' ').collect();
        if parts.len() != 3 {
            return Err(Error::parse(loc(), format!("expected `TYPE START END`, got `{middle}`")));
        }
        let etype: EntityType = parts[0].parse().map_err(|_| Error::Annotation {
            id: id.to_string(),
            message: format!("unknown entity type `{}`", parts[0]),
        })?;
        let parse_offset = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::parse(loc(), format!("bad offset `{s}`")))
        };
        let start = parse_offset(parts[1])?;
        let end = parse_offset(parts[2])?;
        if end <= start {
            return Err(Error::Annotation {
                id: id.to_string(),
                message: format!("end {end} is not after start {start}"),
            });
        }
        if let Some(doc) = doc {
            match doc.slice(start, end) {
                None => {
                    return Err(Error::Annotation {
                        id: id.to_string(),
                        message: format!("offsets [{start}, {end}) out of bounds"),
                    })
                }
                Some(slice) if slice != text => {
                    return Err(Error::Annotation {
                        id: id.to_string(),
                        message: format!("text `{text}` does not match source `{slice}`"),
                    })
                }
                Some(_) => {}
            }
        }
        out.push(Annotation {
            id: id.to_string(),
            span: EntitySpan::new(start, end, etype, text),
        });
    }
    Ok(out)
}

pub fn load_standoff(text_file: &Path, ann_file: &Path) -> Result<(Document, Vec<Annotation>)> {
    let text = fs::read_to_string(text_file).map_err(|e| Error::io(text_file, e))?;
    let content = fs::read_to_string(ann_file).map_err(|e| Error::io(ann_file, e))?;
    let id = text_file
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let doc = Document { id, text };
    let anns = parse_ann(&content, Some(&doc), &ann_file.display().to_string())?;
    Ok((doc, anns))
}

/// Reads an `.ann` file without a text to validate against.
pub fn read_ann_file(path: &Path) -> Result<Vec<Annotation>> {
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_ann(&content, None, &path.display().to_string())
}

pub fn write_ann(annotations: &[Annotation]) -> String {
    let mut out = String::new();
    for a in annotations {
        out.push_str(&format!(
            "{}\t{} {} {}\t{}\n",
            a.id, a.span.etype, a.span.start, a.span.end, a.span.text
        ));
    }
    out
}

pub fn write_ann_file(path: &Path, annotations: &[Annotation]) -> Result<()> {
    fs::write(path, write_ann(annotations)).map_err(|e| Error::io(path, e))
}

/// `.txt` files of `dir`, sorted by name.
pub(crate) fn text_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|x| x == "txt") {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Loads every `<doc>.txt` / `<doc>.ann` pair in `dir`. A document without
/// an `.ann` file has no annotations.
pub fn load_standoff_dir(dir: &Path) -> Result<Vec<(Document, Vec<Annotation>)>> {
    let mut out = Vec::new();
    for txt in text_files(dir)? {
        let ann = txt.with_extension("ann");
        if ann.exists() {
            out.push(load_standoff(&txt, &ann)?);
        } else {
            let text = fs::read_to_string(&txt).map_err(|e| Error::io(&txt, e))?;
            let id = txt.file_stem().unwrap().to_string_lossy().into_owned();
            out.push((Document { id, text }, Vec::new()));
        }
    }
    Ok(out)
}
