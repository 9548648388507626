//! Model files: magic, format version, JSON metadata, parameter blobs in
//! declaration order, trailing CRC32 over everything before it.
//!
//! ```text
//! b"NLNDEMDL" | u32 version | u64 len | metadata JSON
//! u32 count | (u64 n | n × f64)* | u32 crc32
//! ```
//! All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{build_layers, CharVocab, Tagger, TaggerDims, TaggerVocab};
use crate::autodiff::ParamStore;
use crate::corpus::LabelCatalog;
use crate::embeddings::{RepresentationSpec, SourceSpec};
use crate::error::{Error, Result};
use crate::features::{FrequencyTable, PosVocab};

pub const MAGIC: &[u8; 8] = b"NLNDEMDL";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ParamShape {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Metadata {
    spec: RepresentationSpec,
    dims: TaggerDims,
    catalog: LabelCatalog,
    chars: CharVocab,
    pos: PosVocab,
    frequencies: FrequencyTable,
    sources: Vec<SourceSpec>,
    seed: u64,
    pos_heuristic: bool,
    params: Vec<ParamShape>,
}

pub fn to_bytes(tagger: &Tagger) -> Result<Vec<u8>> {
    let meta = Metadata {
        spec: tagger.spec.clone(),
        dims: tagger.dims,
        catalog: tagger.catalog.clone(),
        chars: tagger.vocab.chars.clone(),
        pos: tagger.vocab.pos.clone(),
        frequencies: tagger.vocab.frequencies.clone(),
        sources: tagger.sources.clone(),
        seed: tagger.seed,
        pos_heuristic: tagger.pos_heuristic,
        params: tagger
            .store
            .iter()
            .map(|(_, p)| ParamShape {
                name: p.name.clone(),
                rows: p.value.nrows(),
                cols: p.value.ncols(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&meta).map_err(|e| Error::ModelFormat(format!("metadata: {e}")))?;
    let mut out = Vec::with_capacity(json.len() + 8 * tagger.store.total_size() + 64);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(tagger.store.len() as u32).to_le_bytes());
    for (_, p) in tagger.store.iter() {
        out.extend_from_slice(&(p.value.len() as u64).to_le_bytes());
        for v in p.value.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::ModelFormat("truncated model file".into()))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<Tagger> {
    if bytes.len() < MAGIC.len() + 4 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::ModelFormat("not a model file (bad magic)".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::ModelFormat(format!(
            "unsupported format version {version} (expected {FORMAT_VERSION})"
        )));
    }
    if bytes.len() < 16 {
        return Err(Error::ModelFormat("truncated model file".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    if crc32fast::hash(body) != stored {
        return Err(Error::ModelFormat("checksum mismatch (file corrupted or truncated)".into()));
    }
    let mut r = Reader { bytes: body, at: 12 };
    let json_len = usize::try_from(r.u64()?).map_err(|_| Error::ModelFormat("bad metadata length".into()))?;
    let meta: Metadata = serde_json::from_slice(r.take(json_len)?)
        .map_err(|e| Error::ModelFormat(format!("metadata: {e}")))?;

    let vocab = TaggerVocab {
        chars: meta.chars,
        pos: meta.pos,
        frequencies: meta.frequencies,
    };
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(meta.seed);
    let layers = build_layers(&mut store, &mut rng, &meta.spec, &meta.dims, &meta.catalog, &meta.sources, &vocab);

    let count = r.u32()? as usize;
    if count != store.len() || count != meta.params.len() {
        return Err(Error::ModelFormat(format!(
            "file has {count} parameters, model structure needs {}",
            store.len()
        )));
    }
    let ids: Vec<_> = store.ids().collect();
    for (id, shape) in ids.into_iter().zip(&meta.params) {
        let expected = store.get(id).raw_dim();
        if store.name(id) != shape.name || expected != ndarray::Dim([shape.rows, shape.cols]) {
            return Err(Error::ModelFormat(format!(
                "parameter `{}` {}x{} does not match structure `{}` {:?}",
                shape.name,
                shape.rows,
                shape.cols,
                store.name(id),
                expected
            )));
        }
        let n = r.u64()? as usize;
        if n != shape.rows * shape.cols {
            return Err(Error::ModelFormat(format!("parameter `{}` has {n} values", shape.name)));
        }
        let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::ModelFormat("bad length".into()))?)?;
        let target = store.get_mut(id);
        for (dst, chunk) in target.iter_mut().zip(raw.chunks_exact(8)) {
            *dst = f64::from_le_bytes(chunk.try_into().unwrap());
        }
    }
    if r.at != body.len() {
        return Err(Error::ModelFormat("trailing bytes after parameters".into()));
    }
    Ok(Tagger {
        spec: meta.spec,
        dims: meta.dims,
        catalog: meta.catalog,
        vocab,
        sources: meta.sources,
        seed: meta.seed,
        pos_heuristic: meta.pos_heuristic,
        store,
        layers,
    })
}

pub fn save_model(tagger: &Tagger, path: &Path) -> Result<()> {
    let bytes = to_bytes(tagger)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<Tagger> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
