//! Run presets S1–S5 and the flat `key = value` run configuration file.
//!
//! Recognized keys:
//!
//! | key | meaning |
//! |-----|---------|
//! | `run` | preset, `S1` … `S5` |
//! | `train_dir`, `dev_dir` | standoff directories or corpus TSV files |
//! | `noisy_corpus` | plain text (one sentence per line) or corpus TSV |
//! | `gazetteer` | gazetteer TSV used to label plain-text noisy data |
//! | `confusion` | confusion-count TSV; estimated from `train_dir` if absent |
//! | `sources.<name>` | vector file path, or `fallback` |
//! | `sources.<name>.dim`, `sources.<name>.kind` | override the standard size / `word` or `subword` |
//! | `seed`, `max_epochs`, `patience` | training control |
//! | `output` | directory receiving `model.bin` and the report |
//! | `exclude` | comma-separated entity types ignored by the dev metric |
//! | `batch_size`, `dropout`, `hidden`, `char_hidden`, `attention_hidden` | size overrides |
//!
//! Relative paths are resolved against the directory of the config file.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::optim::NadamConfig;
use crate::corpus::EntityType;
use crate::embeddings::{Combine, RepresentationSpec, SourceLocation, SourceSpec, VectorKind, CHAR_SOURCE};
use crate::error::{Error, Result};
use crate::model::TaggerDims;

pub const DEFAULT_SEED: u64 = 13;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RunId {
    S1,
    S2,
    S3,
    S4,
    S5,
}

impl fmt::Display for RunId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for RunId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "S1" => Ok(RunId::S1),
            "S2" => Ok(RunId::S2),
            "S3" => Ok(RunId::S3),
            "S4" => Ok(RunId::S4),
            "S5" => Ok(RunId::S5),
            _ => Err(Error::Config(format!("unknown run `{s}` (expected S1..S5)"))),
        }
    }
}

/// Standard size and granularity of the named frozen sources.
pub fn standard_source(name: &str) -> Option<(usize, VectorKind)> {
    match name {
        "ft" => Some((100, VectorKind::Word)),
        "ft_domain" => Some((100, VectorKind::Word)),
        "bpe" => Some((300, VectorKind::Subword)),
        _ => None,
    }
}

/// Hashed stand-ins for the three frozen sources.
pub fn fallback_sources(seed: u64) -> Vec<SourceSpec> {
    ["ft", "ft_domain", "bpe"]
        .iter()
        .map(|&name| {
            let (dim, kind) = standard_source(name).expect("standard source");
            SourceSpec {
                name: name.into(),
                dim,
                kind,
                location: SourceLocation::Fallback { seed },
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub run_id: RunId,
    pub representation: RepresentationSpec,
    pub use_noisy: bool,
    pub batch_size: usize,
    pub dims: TaggerDims,
    pub seed: u64,
    pub max_epochs: usize,
    pub patience: usize,
    pub clip_norm: f64,
    pub optimizer: NadamConfig,
    /// Entity types ignored by the development metric.
    pub exclude: Vec<EntityType>,
}

impl RunConfig {
    pub fn preset(run_id: RunId) -> Self {
        let s1 = vec![CHAR_SOURCE.to_string(), "ft".into(), "bpe".into()];
        let s2 = vec![CHAR_SOURCE.to_string(), "ft".into(), "ft_domain".into(), "bpe".into()];
        let (sources, combine, features, noisy) = match run_id {
            RunId::S1 => (s1, Combine::Concat, false, false),
            RunId::S2 => (s2, Combine::Concat, false, false),
            RunId::S3 => (s2, Combine::Concat, true, true),
            RunId::S4 => (s2, Combine::Attention, false, false),
            RunId::S5 => (s2, Combine::Attention, false, true),
        };
        RunConfig {
            run_id,
            representation: RepresentationSpec {
                sources,
                combine,
                include_features_in_input: features,
            },
            use_noisy: noisy,
            batch_size: 32,
            dims: TaggerDims::default(),
            seed: DEFAULT_SEED,
            max_epochs: 100,
            patience: 5,
            clip_norm: 5.0,
            optimizer: NadamConfig::default(),
            exclude: Vec::new(),
        }
    }
}

/// Parsed run configuration file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConfigFile {
    pub run: Option<RunId>,
    pub train_dir: Option<PathBuf>,
    pub dev_dir: Option<PathBuf>,
    pub noisy_corpus: Option<PathBuf>,
    pub gazetteer: Option<PathBuf>,
    pub confusion: Option<PathBuf>,
    pub sources: BTreeMap<String, SourceSpec>,
    pub seed: Option<u64>,
    pub max_epochs: Option<usize>,
    pub patience: Option<usize>,
    pub output: Option<PathBuf>,
    pub exclude: Vec<EntityType>,
    pub batch_size: Option<usize>,
    pub dropout: Option<f64>,
    pub hidden: Option<usize>,
    pub char_hidden: Option<usize>,
    pub attention_hidden: Option<usize>,
}

fn number<T: FromStr>(key: &str, value: &str, at: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{at}: `{key}` expects a number, got `{value}`")))
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        ConfigFile::parse(&content, base, &path.display().to_string())
    }

    pub fn parse(content: &str, base: &Path, location: &str) -> Result<Self> {
        let mut cfg = ConfigFile::default();
        let mut overrides: BTreeMap<String, (Option<usize>, Option<VectorKind>)> = BTreeMap::new();
        let resolve = |v: &str| {
            let p = PathBuf::from(v);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        };
        for (n, raw) in content.lines().enumerate() {
            let at = format!("{location}:{}", n + 1);
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("{at}: expected `key = value`")))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "run" => cfg.run = Some(value.parse()?),
                "train_dir" => cfg.train_dir = Some(resolve(value)),
                "dev_dir" => cfg.dev_dir = Some(resolve(value)),
                "noisy_corpus" => cfg.noisy_corpus = Some(resolve(value)),
                "gazetteer" => cfg.gazetteer = Some(resolve(value)),
                "confusion" => cfg.confusion = Some(resolve(value)),
                "output" => cfg.output = Some(resolve(value)),
                "seed" => cfg.seed = Some(number(key, value, &at)?),
                "max_epochs" => cfg.max_epochs = Some(number(key, value, &at)?),
                "patience" => cfg.patience = Some(number(key, value, &at)?),
                "batch_size" => cfg.batch_size = Some(number(key, value, &at)?),
                "dropout" => cfg.dropout = Some(number(key, value, &at)?),
                "hidden" => cfg.hidden = Some(number(key, value, &at)?),
                "char_hidden" => cfg.char_hidden = Some(number(key, value, &at)?),
                "attention_hidden" => cfg.attention_hidden = Some(number(key, value, &at)?),
                "exclude" => {
                    cfg.exclude = value
                        .split(',')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(|s| s.parse().map_err(|e: Error| Error::Config(format!("{at}: {e}"))))
                        .collect::<Result<_>>()?
                }
                _ => {
                    let Some(rest) = key.strip_prefix("sources.") else {
                        return Err(Error::Config(format!("{at}: unknown key `{key}`")));
                    };
                    match rest.split_once('.') {
                        None => {
                            let location = if value == "fallback" {
                                SourceLocation::Fallback { seed: 0 }
                            } else {
                                SourceLocation::File(resolve(value))
                            };
                            let (dim, kind) = standard_source(rest).unwrap_or((0, VectorKind::Word));
                            cfg.sources.insert(
                                rest.to_string(),
                                SourceSpec {
                                    name: rest.to_string(),
                                    dim,
                                    kind,
                                    location,
                                },
                            );
                        }
                        Some((name, "dim")) => {
                            overrides.entry(name.to_string()).or_default().0 = Some(number(key, value, &at)?)
                        }
                        Some((name, "kind")) => {
                            let kind = match value {
                                "word" => VectorKind::Word,
                                "subword" => VectorKind::Subword,
                                _ => return Err(Error::Config(format!("{at}: kind must be `word` or `subword`"))),
                            };
                            overrides.entry(name.to_string()).or_default().1 = Some(kind)
                        }
                        Some(_) => return Err(Error::Config(format!("{at}: unknown key `{key}`"))),
                    }
                }
            }
        }
        for (name, (dim, kind)) in overrides {
            let src = cfg
                .sources
                .get_mut(&name)
                .ok_or_else(|| Error::Config(format!("{location}: override for undeclared source `{name}`")))?;
            if let Some(d) = dim {
                src.dim = d;
            }
            if let Some(k) = kind {
                src.kind = k;
            }
        }
        let seed = cfg.seed.unwrap_or(DEFAULT_SEED);
        for src in cfg.sources.values_mut() {
            if let SourceLocation::Fallback { seed: s } = &mut src.location {
                *s = seed;
            }
            if src.dim == 0 {
                return Err(Error::Config(format!(
                    "{location}: source `{}` needs `sources.{}.dim`",
                    src.name, src.name
                )));
            }
        }
        Ok(cfg)
    }

    /// Preset for `run` (or the file's own `run`) with the file's overrides.
    pub fn run_config(&self, run: Option<RunId>) -> Result<RunConfig> {
        let id = run
            .or(self.run)
            .ok_or_else(|| Error::Config("no run preset given (`run = S1..S5` or --run)".into()))?;
        let mut rc = RunConfig::preset(id);
        if let Some(s) = self.seed {
            rc.seed = s;
        }
        if let Some(v) = self.max_epochs {
            rc.max_epochs = v;
        }
        if let Some(v) = self.patience {
            rc.patience = v;
        }
        if let Some(v) = self.batch_size {
            if v == 0 {
                return Err(Error::Config("batch_size must be positive".into()));
            }
            rc.batch_size = v;
        }
        if let Some(v) = self.dropout {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("dropout {v} outside [0, 1)")));
            }
            rc.dims.dropout = v;
        }
        if let Some(v) = self.hidden {
            rc.dims.hidden = v;
        }
        if let Some(v) = self.char_hidden {
            rc.dims.char_hidden = v;
        }
        if let Some(v) = self.attention_hidden {
            rc.dims.attention_hidden = v;
        }
        rc.exclude = self.exclude.clone();
        Ok(rc)
    }

    /// Registry entries for the frozen sources `run` needs; sources not
    /// declared in the file are an error.
    pub fn source_specs(&self, run: &RunConfig) -> Result<Vec<SourceSpec>> {
        run.representation
            .sources
            .iter()
            .filter(|n| n.as_str() != CHAR_SOURCE)
            .map(|n| {
                self.sources
                    .get(n)
                    .cloned()
                    .ok_or_else(|| Error::Config(format!("run {} needs `sources.{n}`", run.run_id)))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_follow_run_definitions() {
        let s1 = RunConfig::preset(RunId::S1);
        assert_eq!(s1.representation.sources, ["char", "ft", "bpe"]);
        assert!(!s1.use_noisy);
        let s3 = RunConfig::preset(RunId::S3);
        assert!(s3.representation.include_features_in_input && s3.use_noisy);
        assert_eq!(s3.representation.combine, Combine::Concat);
        let s4 = RunConfig::preset(RunId::S4);
        assert_eq!(s4.representation.combine, Combine::Attention);
        assert!(!s4.representation.include_features_in_input && !s4.use_noisy);
        let s5 = RunConfig::preset(RunId::S5);
        assert_eq!(s5.representation, s4.representation);
        assert!(s5.use_noisy);
        assert_eq!((s5.batch_size, s5.dims.dropout, s5.max_epochs, s5.patience), (32, 0.5, 100, 5));
        assert_eq!("s2".parse::<RunId>().unwrap(), RunId::S2);
        assert!("S6".parse::<RunId>().is_err());
    }

    #[test]
    fn parses_config_file() {
        let text = "\
# experiment
run = S4
train_dir = data/train
dev_dir = /abs/dev
sources.ft = vectors/ft.vec
sources.ft_domain = fallback
sources.bpe = fallback
sources.extra = x.vec
sources.extra.dim = 7
seed = 99
max_epochs = 3
exclude = NO_NORMALIZABLES
";
        let cfg = ConfigFile::parse(text, Path::new("/base"), "cfg").unwrap();
        assert_eq!(cfg.run, Some(RunId::S4));
        assert_eq!(cfg.train_dir.as_deref(), Some(Path::new("/base/data/train")));
        assert_eq!(cfg.dev_dir.as_deref(), Some(Path::new("/abs/dev")));
        assert_eq!(cfg.sources["ft"].location, SourceLocation::File("/base/vectors/ft.vec".into()));
        assert_eq!(cfg.sources["bpe"].location, SourceLocation::Fallback { seed: 99 });
        assert_eq!(cfg.sources["bpe"].kind, VectorKind::Subword);
        assert_eq!(cfg.sources["extra"].dim, 7);
        let rc = cfg.run_config(None).unwrap();
        assert_eq!((rc.seed, rc.max_epochs, rc.patience), (99, 3, 5));
        assert_eq!(rc.exclude, vec![EntityType::NoNormalizables]);
        assert_eq!(cfg.run_config(Some(RunId::S1)).unwrap().run_id, RunId::S1);
        assert_eq!(cfg.source_specs(&rc).unwrap().len(), 3);
    }

    #[test]
    fn rejects_bad_configs() {
        let p = Path::new(".");
        assert!(ConfigFile::parse("colour = blue\n", p, "c").is_err());
        assert!(ConfigFile::parse("run S1\n", p, "c").is_err());
        assert!(ConfigFile::parse("seed = many\n", p, "c").is_err());
        assert!(ConfigFile::parse("sources.other = x.vec\n", p, "c").is_err());
        assert!(ConfigFile::parse("sources.ft.dim = 3\n", p, "c").is_err());
        assert!(ConfigFile::parse("exclude = FOO\n", p, "c").is_err());
        let cfg = ConfigFile::parse("sources.ft = fallback\n", p, "c").unwrap();
        assert!(cfg.run_config(None).is_err());
        assert!(cfg.source_specs(&RunConfig::preset(RunId::S1)).is_err());
    }
}
