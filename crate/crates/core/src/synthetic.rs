//! Generated Spanish-like clinical sentences with planted entities, for
//! tests and end-to-end checks that cannot rely on the real task data.
//!
//! Entity tokens never occur outside entities, and no token is shared
//! between entity types, so a perfect tagger exists.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Annotation, Document, EntitySpan, EntityType, LabelCatalog, LabelId, LabelKind, LabeledSentence, Sentence, Token};
use crate::distant::Gazetteer;
use crate::features::heuristic_pos;

const CONTEXT: &[&str] = &[
    "el", "la", "los", "las", "un", "una", "de", "del", "en", "con", "sin", "por", "para", "y", "o", "que",
    "se", "su", "sus", "al", "tras", "sobre", "entre", "durante", "paciente", "varón", "mujer", "años",
    "edad", "antecedentes", "ingreso", "hospital", "servicio", "urgencias", "consulta", "dolor", "fiebre",
    "tos", "disnea", "astenia", "pérdida", "peso", "analítica", "muestra", "sangre", "orina", "suero",
    "valores", "niveles", "elevados", "normales", "bajos", "positivo", "negativo", "resultado", "estudio",
    "biopsia", "tumor", "lesión", "masa", "nódulo", "hígado", "riñón", "pulmón", "tiroides", "mama",
    "colon", "estómago", "tratamiento", "dosis", "diaria", "semanas", "meses", "días", "mejoría",
    "evolución", "favorable", "control", "seguimiento", "alta", "presenta", "muestra", "refiere", "niega",
    "inicia", "recibe", "mantiene", "suspende", "realiza", "detecta", "observa", "confirma", "descarta",
    "aumento", "descenso", "cifras", "técnica", "inmunohistoquímica", "tinción", "expresión", "intensa",
    "débil", "difusa", "focal", "células", "tejido", "cirugía", "intervención", "quirúrgica", "exploración",
    "física", "ecografía", "abdominal", "tomografía", "hallazgos", "compatibles", "diagnóstico", "clínico",
    "cuadro", "previo", "actual", "mg", "ml", "cada", "horas", "vía", "oral", "intravenosa", "síntomas",
];

const PROTEINAS: &[&str] = &[
    "tiroglobulina", "insulina", "albúmina", "ferritina", "calcitonina", "hemoglobina", "TSH", "PSA",
    "CEA", "vimentina", "desmina", "actina", "miosina", "Ki-67", "HER2", "citoqueratina AE1",
    "factor VIII", "proteína S100", "receptor HER1", "cromogranina A",
];

const NORMALIZABLES: &[&str] = &[
    "paracetamol", "ibuprofeno", "glucosa", "sodio", "potasio", "calcio", "metformina", "amoxicilina",
    "cisplatino", "doxorrubicina", "prednisona", "heparina", "omeprazol", "warfarina", "creatinina",
    "bilirrubina", "magnesio", "ácido fólico", "ácido acetilsalicílico", "carbonato cálcico",
];

const NO_NORMALIZABLES: &[&str] = &[
    "antiinflamatorios", "corticoides", "antibióticos", "diuréticos", "anticoagulantes", "analgésicos",
    "inmunosupresores", "antihipertensivos", "opioides", "antieméticos", "betabloqueantes",
    "antifúngicos", "antivirales", "antipsicóticos", "contraste yodado", "sales biliares",
];

const UNCLEAR: &[&str] = &[
    "marcadores tumorales", "perfil lipídico", "enzimas hepáticas", "hormonas tiroideas",
    "gammaglobulinas", "autoanticuerpos", "electrolitos", "oligoelementos", "vitaminas",
    "transaminasas", "reactantes", "inmunoglobulinas",
];

/// Surface forms planted for `etype`.
pub fn entity_surfaces(etype: EntityType) -> &'static [&'static str] {
    match etype {
        EntityType::Proteinas => PROTEINAS,
        EntityType::Normalizables => NORMALIZABLES,
        EntityType::NoNormalizables => NO_NORMALIZABLES,
        EntityType::Unclear => UNCLEAR,
    }
}

pub fn context_words() -> &'static [&'static str] {
    CONTEXT
}

/// Every planted surface, under its own type.
pub fn gazetteer() -> Gazetteer {
    let mut g = Gazetteer::new();
    for t in EntityType::ALL {
        for s in entity_surfaces(t) {
            g.insert(t, s);
        }
    }
    g
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticConfig {
    pub sentences: usize,
    pub seed: u64,
    pub min_context: usize,
    pub max_context: usize,
    /// Entities planted per sentence are drawn from `0..=max_entities`.
    pub max_entities: usize,
    /// Randomly upper- or capitalize PROTEINAS mentions.
    pub vary_protein_case: bool,
    pub sentences_per_document: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            sentences: 800,
            seed: 1,
            min_context: 4,
            max_context: 9,
            max_entities: 2,
            vary_protein_case: false,
            sentences_per_document: 20,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub documents: Vec<(Document, Vec<Annotation>)>,
    /// The same sentences with BIO labels, in document order.
    pub sentences: Vec<LabeledSentence>,
}

fn recase(word: &str, rng: &mut ChaCha8Rng) -> String {
    match rng.gen_range(0..3) {
        0 => word.to_string(),
        1 => word.to_uppercase(),
        _ => {
            let mut c = word.chars();
            c.next()
                .map(|f| f.to_uppercase().chain(c.flat_map(char::to_lowercase)).collect())
                .unwrap_or_default()
        }
    }
}

pub fn generate(cfg: &SyntheticConfig) -> SyntheticCorpus {
    let catalog = LabelCatalog::task();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut documents = Vec::new();
    let mut sentences = Vec::new();
    let per_doc = cfg.sentences_per_document.max(1);
    for d in 0..cfg.sentences.div_ceil(per_doc) {
        let id = format!("doc{d:04}");
        let mut text = String::new();
        let mut offset = 0;
        let mut annotations = Vec::new();
        for _ in 0..per_doc.min(cfg.sentences - d * per_doc) {
            let n_context = rng.gen_range(cfg.min_context..=cfg.max_context);
            let mut pieces: Vec<(Vec<String>, Option<EntityType>)> = (0..n_context)
                .map(|_| (vec![CONTEXT.choose(&mut rng).unwrap().to_string()], None))
                .collect();
            for _ in 0..rng.gen_range(0..=cfg.max_entities) {
                let etype = *EntityType::ALL.choose(&mut rng).unwrap();
                let surface = entity_surfaces(etype).choose(&mut rng).unwrap();
                let words = surface
                    .split(' ')
                    .map(|w| {
                        if cfg.vary_protein_case && etype == EntityType::Proteinas {
                            recase(w, &mut rng)
                        } else {
                            w.to_string()
                        }
                    })
                    .collect();
                let at = rng.gen_range(0..=pieces.len());
                pieces.insert(at, (words, Some(etype)));
            }
            pieces.push((vec![".".to_string()], None));

            let mut tokens = Vec::new();
            let mut labels = Vec::new();
            for (words, etype) in &pieces {
                for (k, w) in words.iter().enumerate() {
                    if !tokens.is_empty() {
                        text.push(' ');
                        offset += 1;
                    }
                    let start = offset;
                    let n = w.chars().count();
                    tokens.push(Token::new(w.clone(), start, start + n).with_pos(heuristic_pos(w)));
                    text.push_str(w);
                    offset += n;
                    labels.push(match (etype, k) {
                        (None, _) => catalog.outside(),
                        (Some(t), 0) => catalog.begin(*t).unwrap(),
                        (Some(t), _) => catalog.inside(*t).unwrap(),
                    });
                }
                if let Some(t) = etype {
                    let first = tokens.len() - words.len();
                    let start = tokens[first].start;
                    annotations.push(Annotation {
                        id: format!("T{}", annotations.len() + 1),
                        span: EntitySpan::new(start, offset, *t, words.join(" ")),
                    });
                }
            }
            text.push('\n');
            offset += 1;
            sentences.push(LabeledSentence {
                sentence: Sentence::new(id.clone(), tokens),
                labels,
            });
        }
        documents.push((Document { id, text }, annotations));
    }
    SyntheticCorpus { documents, sentences }
}

/// Row-stochastic corruption matrix: each entity label survives with
/// probability `1 - rate`; two thirds of the corrupted mass goes to `O`,
/// the rest to the same-position label of the next type. `O` is kept.
pub fn noise_matrix(catalog: &LabelCatalog, rate: f64) -> Array2<f64> {
    let n = catalog.len();
    let types = catalog.types();
    let mut m = Array2::zeros((n, n));
    m[[0, 0]] = 1.0;
    for i in 1..n {
        let (t, begin) = match catalog.kind(i) {
            LabelKind::Begin(t) => (t, true),
            LabelKind::Inside(t) => (t, false),
            LabelKind::Outside => unreachable!(),
        };
        let k = types.iter().position(|&x| x == t).unwrap();
        let other = types[(k + 1) % types.len()];
        let j = if begin { catalog.begin(other) } else { catalog.inside(other) }.unwrap();
        m[[i, i]] = 1.0 - rate;
        m[[i, 0]] += rate * 2.0 / 3.0;
        m[[i, j]] += rate / 3.0;
    }
    m
}

/// Draws a noisy label for every token from the row of its clean label.
pub fn corrupt(labels: &[Vec<LabelId>], matrix: &Array2<f64>, rng: &mut impl Rng) -> Vec<Vec<LabelId>> {
    labels
        .iter()
        .map(|seq| {
            seq.iter()
                .map(|&l| {
                    let u: f64 = rng.gen();
                    let mut acc = 0.0;
                    for (j, p) in matrix.row(l).iter().enumerate() {
                        acc += p;
                        if u < acc {
                            return j;
                        }
                    }
                    l
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{decode_bio, encode_bio};
    use std::collections::BTreeSet;

    #[test]
    fn vocabulary_size_and_disjointness() {
        let mut entity_words = BTreeSet::new();
        for t in EntityType::ALL {
            let own: BTreeSet<&str> = entity_surfaces(t).iter().flat_map(|s| s.split(' ')).collect();
            assert!(entity_words.is_disjoint(&own), "{t} shares a word with another type");
            entity_words.extend(own);
        }
        let context: BTreeSet<&str> = CONTEXT.iter().copied().collect();
        assert!(context.is_disjoint(&entity_words));
        let total = context.len() + entity_words.len();
        assert!((180..=260).contains(&total), "{total}");
    }

    #[test]
    fn documents_and_labels_agree() {
        let corpus = generate(&SyntheticConfig {
            sentences: 45,
            ..Default::default()
        });
        assert_eq!(corpus.sentences.len(), 45);
        assert_eq!(corpus.documents.len(), 3);
        let cat = LabelCatalog::task();
        let mut k = 0;
        for (doc, anns) in &corpus.documents {
            let spans: Vec<EntitySpan> = anns.iter().map(|a| a.span.clone()).collect();
            for a in anns {
                assert_eq!(doc.slice(a.span.start, a.span.end).unwrap(), a.span.text);
            }
            let in_doc = corpus.sentences.iter().filter(|s| s.sentence.doc_id == doc.id);
            let mut decoded = Vec::new();
            for ls in in_doc {
                for t in &ls.sentence.tokens {
                    assert_eq!(doc.slice(t.start, t.end).unwrap(), t.surface);
                }
                assert_eq!(encode_bio(&ls.sentence, &spans, &cat).unwrap(), ls.labels);
                decoded.extend(decode_bio(&ls.labels, &ls.sentence, &cat));
                k += 1;
            }
            assert_eq!(decoded, spans);
        }
        assert_eq!(k, 45);
    }

    #[test]
    fn generation_is_seeded() {
        let a = generate(&SyntheticConfig { sentences: 10, ..Default::default() });
        let b = generate(&SyntheticConfig { sentences: 10, ..Default::default() });
        let c = generate(&SyntheticConfig { sentences: 10, seed: 2, ..Default::default() });
        assert_eq!(a.sentences, b.sentences);
        assert_ne!(a.sentences, c.sentences);
    }

    #[test]
    fn corruption_follows_the_matrix() {
        let cat = LabelCatalog::task();
        let m = noise_matrix(&cat, 0.3);
        for row in m.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
        let clean = vec![vec![1usize; 20_000]];
        let noisy = corrupt(&clean, &m, &mut ChaCha8Rng::seed_from_u64(3));
        let kept = noisy[0].iter().filter(|&&l| l == 1).count() as f64 / 20_000.0;
        assert!((kept - 0.7).abs() < 0.02, "{kept}");
        assert!(noisy[0].iter().all(|&l| l == 1 || l == 0 || l == 3));
    }
}
