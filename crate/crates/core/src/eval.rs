//! Entity-level precision, recall and F1 with exact span-and-type matching.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::Serialize;

use crate::corpus::{EntitySpan, EntityType};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl Counts {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    fn add(&mut self, other: Counts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EvalResult {
    pub overall: Counts,
    pub per_type: BTreeMap<EntityType, Counts>,
}

impl EvalResult {
    pub fn precision(&self) -> f64 {
        self.overall.precision()
    }

    pub fn recall(&self) -> f64 {
        self.overall.recall()
    }

    pub fn f1(&self) -> f64 {
        self.overall.f1()
    }

    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Row {
            #[serde(flatten)]
            counts: Counts,
            precision: f64,
            recall: f64,
            f1: f64,
        }
        let row = |c: &Counts| Row {
            counts: *c,
            precision: c.precision(),
            recall: c.recall(),
            f1: c.f1(),
        };
        #[derive(Serialize)]
        struct Json {
            overall: Row,
            per_type: BTreeMap<String, Row>,
        }
        let json = Json {
            overall: row(&self.overall),
            per_type: self.per_type.iter().map(|(t, c)| (t.to_string(), row(c))).collect(),
        };
        serde_json::to_string_pretty(&json).expect("plain data serializes")
    }
}

type Key = (usize, usize, EntityType);

fn unique_keys(spans: &[EntitySpan], doc: usize) -> Result<BTreeSet<Key>> {
    let keys: BTreeSet<Key> = spans.iter().map(EntitySpan::key).collect();
    let ordered: Vec<&Key> = keys.iter().collect();
    let mut reach: Option<&Key> = None;
    for k in ordered {
        if let Some(prev) = reach {
            if k.0 < prev.1 {
                log::debug!("document {doc}: overlapping spans");
                return Err(Error::OverlappingSpans {
                    first_start: prev.0,
                    first_end: prev.1,
                    second_start: k.0,
                    second_end: k.1,
                });
            }
        }
        if reach.is_none_or(|p| k.1 > p.1) {
            reach = Some(k);
        }
    }
    Ok(keys)
}

/// Scores predictions against gold spans, document by document. Identical
/// duplicate spans count once; spans of `exclude` types are ignored.
pub fn entity_f1(gold: &[Vec<EntitySpan>], pred: &[Vec<EntitySpan>], exclude: &[EntityType]) -> Result<EvalResult> {
    if gold.len() != pred.len() {
        return Err(Error::InvalidArgument(format!(
            "{} gold documents but {} predicted documents",
            gold.len(),
            pred.len()
        )));
    }
    let mut result = EvalResult::default();
    for t in EntityType::ALL.into_iter().filter(|t| !exclude.contains(t)) {
        result.per_type.insert(t, Counts::default());
    }
    for (doc, (g, p)) in gold.iter().zip(pred).enumerate() {
        let keep = |k: &Key| !exclude.contains(&k.2);
        let g: BTreeSet<Key> = unique_keys(g, doc)?.into_iter().filter(keep).collect();
        let p: BTreeSet<Key> = unique_keys(p, doc)?.into_iter().filter(keep).collect();
        for k in &p {
            let c = result.per_type.entry(k.2).or_default();
            if g.contains(k) {
                c.tp += 1;
            } else {
                c.fp += 1;
            }
        }
        for k in g.difference(&p) {
            result.per_type.entry(k.2).or_default().fn_ += 1;
        }
    }
    for c in result.per_type.values() {
        result.overall.add(*c);
    }
    Ok(result)
}

/// `P / R / F1` as percentages with one decimal.
pub fn format_prf(c: &Counts) -> String {
    format!(
        "{:.1} / {:.1} / {:.1}",
        100.0 * c.precision(),
        100.0 * c.recall(),
        100.0 * c.f1()
    )
}

pub fn report(result: &EvalResult) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<18} {:>6} {:>6} {:>6}   P / R / F1", "", "TP", "FP", "FN");
    let mut row = |name: &str, c: &Counts| {
        let _ = writeln!(out, "{name:<18} {:>6} {:>6} {:>6}   {}", c.tp, c.fp, c.fn_, format_prf(c));
    };
    row("overall", &result.overall);
    for (t, c) in &result.per_type {
        row(t.as_str(), c);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn span(start: usize, end: usize, t: EntityType) -> EntitySpan {
        EntitySpan::new(start, end, t, "x")
    }

    const P: EntityType = EntityType::Proteinas;
    const N: EntityType = EntityType::Normalizables;

    #[test]
    fn basic_counts() {
        let gold = vec![vec![span(0, 3, P), span(5, 8, P)]];
        let pred = vec![vec![span(0, 3, P), span(10, 12, N)]];
        let r = entity_f1(&gold, &pred, &[]).unwrap();
        assert_eq!(r.overall, Counts { tp: 1, fp: 1, fn_: 1 });
        assert_eq!((r.precision(), r.recall(), r.f1()), (0.5, 0.5, 0.5));
    }

    #[test]
    fn wrong_type_is_fp_and_fn() {
        let r = entity_f1(&[vec![span(0, 3, P)]], &[vec![span(0, 3, N)]], &[]).unwrap();
        assert_eq!(r.overall, Counts { tp: 0, fp: 1, fn_: 1 });
        assert_eq!(r.per_type[&P].fn_, 1);
        assert_eq!(r.per_type[&N].fp, 1);
    }

    #[test]
    fn exclusion_drops_both_sides() {
        let nn = EntityType::NoNormalizables;
        let gold = vec![vec![span(0, 3, nn), span(4, 6, P)]];
        let pred = vec![vec![span(4, 6, P)]];
        let r = entity_f1(&gold, &pred, &[nn]).unwrap();
        assert_eq!(r.overall, Counts { tp: 1, fp: 0, fn_: 0 });
        assert!(!r.per_type.contains_key(&nn));
        assert_eq!(entity_f1(&gold, &pred, &[]).unwrap().overall.fn_, 1);
    }

    #[test]
    fn duplicates_collapse_and_overlaps_fail() {
        let r = entity_f1(&[vec![span(0, 3, P)]], &[vec![span(0, 3, P), span(0, 3, P)]], &[]).unwrap();
        assert_eq!(r.overall, Counts { tp: 1, fp: 0, fn_: 0 });
        assert!(entity_f1(&[vec![]], &[vec![span(0, 3, P), span(2, 5, N)]], &[]).is_err());
        assert!(entity_f1(&[vec![span(0, 9, P), span(2, 5, N)]], &[vec![]], &[]).is_err());
        assert!(entity_f1(&[vec![]], &[], &[]).is_err());
    }

    #[test]
    fn report_formatting() {
        // P = 78587 / 88300 = 0.890, R = 78587 / 89000 = 0.883
        let c = Counts { tp: 78587, fp: 9713, fn_: 10413 };
        assert_eq!(format_prf(&c), "89.0 / 88.3 / 88.6");
        let empty = entity_f1(&[vec![span(0, 1, P)]], &[vec![]], &[]).unwrap();
        assert!(report(&empty).contains("0.0 / 0.0 / 0.0"));
        let all = entity_f1(&[vec![span(0, 1, P)]], &[vec![span(0, 1, P)]], &[]).unwrap();
        assert!(report(&all).lines().nth(1).unwrap().ends_with("100.0 / 100.0 / 100.0"));
        assert!(all.to_json().contains("\"f1\": 1.0"));
    }

    fn spans_strategy() -> impl Strategy<Value = Vec<EntitySpan>> {
        prop::collection::vec((0usize..4, 1usize..3, 0usize..4), 0..6).prop_map(|cells| {
            let mut at = 0;
            cells
                .into_iter()
                .map(|(gap, len, t)| {
                    let s = span(at + gap, at + gap + len, EntityType::ALL[t]);
                    at += gap + len;
                    s
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn swapping_sides_swaps_p_and_r(g in spans_strategy(), p in spans_strategy()) {
            let a = entity_f1(&[g.clone()], &[p.clone()], &[]).unwrap();
            let b = entity_f1(&[p], &[g], &[]).unwrap();
            prop_assert_eq!(a.precision(), b.recall());
            prop_assert_eq!(a.recall(), b.precision());
        }

        #[test]
        fn reordering_is_irrelevant(g in spans_strategy(), p in spans_strategy(), h in spans_strategy()) {
            let a = entity_f1(&[g.clone(), h.clone()], &[p.clone(), h.clone()], &[]).unwrap();
            let mut gr = g.clone(); gr.reverse();
            let mut pr = p.clone(); pr.reverse();
            let b = entity_f1(&[h.clone(), gr], &[h, pr], &[]).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn f1_extremes(g in spans_strategy(), p in spans_strategy()) {
            let r = entity_f1(&[g.clone()], &[p.clone()], &[]).unwrap();
            if r.overall.tp == 0 { prop_assert_eq!(r.f1(), 0.0); }
            let gs: BTreeSet<Key> = g.iter().map(EntitySpan::key).collect();
            let ps: BTreeSet<Key> = p.iter().map(EntitySpan::key).collect();
            prop_assert_eq!(r.f1() == 1.0, gs == ps && !gs.is_empty());
        }
    }
}
