//! Template-driven failure-case sets: misleading syntactic similarity (F1),
//! named entities (F2) and polar questions (F3). F4 sets come from
//! [`convert_quality_threads`](super::convert_quality_threads).
//!
//! Templates use `{slot}` placeholders filled from the bank's filler lists;
//! `{slot#2}`, `{slot#3}`, ... draw further values distinct from `{slot}`.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::records::{Record, TupleRecord};
use super::tokenizer::words;
use super::DataError;

pub const DISTRACTORS: usize = 7;
const BUILTIN_BANK: &str = include_str!("../../assets/failure_templates.json");
const F1_MIN_DISTRACTOR_OVERLAP: f64 = 0.6;
const POLARITY: [&str; 2] = ["yes", "no"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FailureKind {
    F1,
    F2,
    F3,
    F4,
}

impl FailureKind {
    pub const ALL: [FailureKind; 4] = [
        FailureKind::F1,
        FailureKind::F2,
        FailureKind::F3,
        FailureKind::F4,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FailureKind::F1 => "f1",
            FailureKind::F2 => "f2",
            FailureKind::F3 => "f3",
            FailureKind::F4 => "f4",
        }
    }
}

impl fmt::Display for FailureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FailureKind {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                DataError::InvalidArgument(format!(
                    "unknown failure kind {s:?}; expected f1, f2, f3 or f4"
                ))
            })
    }
}

/// A query with one gold passage and seven distractors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub kind: FailureKind,
    pub query: String,
    pub gold: String,
    pub distractors: Vec<String>,
}

impl Record for FailureRecord {
    fn validate(&self) -> Result<(), String> {
        if self.query.trim().is_empty() || self.gold.trim().is_empty() {
            return Err("query and gold must be non-empty".into());
        }
        if self.distractors.len() != DISTRACTORS {
            return Err(format!(
                "expected {DISTRACTORS} distractors, got {}",
                self.distractors.len()
            ));
        }
        Ok(())
    }
}

impl FailureRecord {
    pub fn from_tuple(kind: FailureKind, t: &TupleRecord) -> Self {
        Self {
            kind,
            query: t.q.clone(),
            gold: t.p.clone(),
            distractors: t.negs.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub query: String,
    pub gold: Vec<String>,
    pub distractors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplateBank {
    pub fillers: BTreeMap<String, Vec<String>>,
    pub f1: Vec<Scenario>,
    pub f2: Vec<Scenario>,
    pub f3: Vec<Scenario>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct Slot {
    name: String,
    copy: usize,
}

fn parse_template(t: &str) -> Result<Vec<Result<String, Slot>>, String> {
    let mut parts = Vec::new();
    let mut rest = t;
    while let Some(open) = rest.find('{') {
        if open > 0 {
            parts.push(Ok(rest[..open].to_string()));
        }
        let close = rest[open..]
            .find('}')
            .ok_or_else(|| format!("unclosed brace in {t:?}"))?
            + open;
        let inner = &rest[open + 1..close];
        let (name, copy) = match inner.split_once('#') {
            Some((n, c)) => (
                n,
                c.parse::<usize>()
                    .ok()
                    .filter(|&c| c >= 1)
                    .ok_or_else(|| format!("bad slot copy in {{{inner}}}"))?,
            ),
            None => (inner, 1),
        };
        if name.is_empty() || name.contains('{') {
            return Err(format!("bad slot {{{inner}}} in {t:?}"));
        }
        parts.push(Err(Slot {
            name: name.to_string(),
            copy,
        }));
        rest = &rest[close + 1..];
    }
    if rest.contains('}') {
        return Err(format!("stray closing brace in {t:?}"));
    }
    if !rest.is_empty() {
        parts.push(Ok(rest.to_string()));
    }
    Ok(parts)
}

impl TemplateBank {
    pub fn builtin() -> Self {
        Self::from_json(BUILTIN_BANK).expect("shipped template bank is valid")
    }

    /// Parses and validates a bank: every slot must name a filler list with
    /// enough distinct values and every scenario needs a gold template and at
    /// least seven distractor templates.
    pub fn from_json(json: &str) -> Result<Self, DataError> {
        let bank: TemplateBank =
            serde_json::from_str(json).map_err(|e| DataError::Template(e.to_string()))?;
        bank.validate()?;
        Ok(bank)
    }

    fn validate(&self) -> Result<(), DataError> {
        let err = |m: String| Err(DataError::Template(m));
        for (kind, list) in [("f1", &self.f1), ("f2", &self.f2), ("f3", &self.f3)] {
            if list.is_empty() {
                return err(format!("{kind} has no scenarios"));
            }
            for s in list {
                if s.gold.is_empty() || s.distractors.len() < DISTRACTORS {
                    return err(format!(
                        "{kind} scenario {:?} needs a gold template and {DISTRACTORS} distractors",
                        s.query
                    ));
                }
                for t in std::iter::once(&s.query)
                    .chain(&s.gold)
                    .chain(&s.distractors)
                {
                    for part in parse_template(t).map_err(DataError::Template)? {
                        if let Err(slot) = part {
                            let n = self
                                .fillers
                                .get(&slot.name)
                                .map_or(0, |v| v.iter().collect::<HashSet<_>>().len());
                            if slot.copy > n {
                                return err(format!(
                                    "slot {{{}#{}}} needs {} distinct fillers, bank has {n}",
                                    slot.name, slot.copy, slot.copy
                                ));
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn scenarios(&self, kind: FailureKind) -> &[Scenario] {
        match kind {
            FailureKind::F1 => &self.f1,
            FailureKind::F2 => &self.f2,
            FailureKind::F3 => &self.f3,
            FailureKind::F4 => &[],
        }
    }

    /// All words the bank can produce.
    pub fn words(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .fillers
            .values()
            .flatten()
            .flat_map(|w| words(w))
            .collect();
        for s in self.f1.iter().chain(&self.f2).chain(&self.f3) {
            for t in std::iter::once(&s.query)
                .chain(&s.gold)
                .chain(&s.distractors)
            {
                for text in parse_template(t).unwrap_or_default().into_iter().flatten() {
                    out.extend(words(&text));
                }
            }
        }
        out.sort();
        out.dedup();
        out
    }
}

struct Filler<'a> {
    bank: &'a TemplateBank,
    chosen: BTreeMap<Slot, String>,
}

impl Filler<'_> {
    fn fill(&mut self, template: &str, rng: &mut impl Rng) -> String {
        let mut out = String::new();
        for part in parse_template(template).expect("validated bank") {
            match part {
                Ok(text) => out.push_str(&text),
                Err(slot) => {
                    if !self.chosen.contains_key(&slot) {
                        let taken: HashSet<&String> = self
                            .chosen
                            .iter()
                            .filter(|(s, _)| s.name == slot.name)
                            .map(|(_, v)| v)
                            .collect();
                        let mut options: Vec<&String> = self.bank.fillers[&slot.name]
                            .iter()
                            .filter(|v| !taken.contains(v))
                            .collect();
                        options.sort();
                        options.dedup();
                        let v = (*options.choose(rng).expect("validated filler count")).clone();
                        self.chosen.insert(slot.clone(), v);
                    }
                    out.push_str(&self.chosen[&slot]);
                }
            }
        }
        out
    }
}

/// Fraction of the query's word tokens that also occur as words of `text`.
pub fn word_overlap(query: &str, text: &str) -> f64 {
    let q: Vec<String> = words(query).collect();
    if q.is_empty() {
        return 0.0;
    }
    let t: HashSet<String> = words(text).collect();
    q.iter().filter(|w| t.contains(*w)).count() as f64 / q.len() as f64
}

fn has_polarity(text: &str) -> bool {
    words(text).any(|w| POLARITY.contains(&w.as_str()))
}

fn check_postconditions(r: &FailureRecord) -> Result<(), DataError> {
    let fail = |m: &str| {
        Err(DataError::Template(format!(
            "{} record {:?}: {m}",
            r.kind, r.query
        )))
    };
    let mut all: Vec<&String> = std::iter::once(&r.gold).chain(&r.distractors).collect();
    all.sort();
    all.dedup();
    if all.len() != DISTRACTORS + 1 {
        return fail("candidates are not distinct");
    }
    match r.kind {
        FailureKind::F1 => {
            let gold = word_overlap(&r.query, &r.gold);
            let overlaps: Vec<f64> = r
                .distractors
                .iter()
                .map(|d| word_overlap(&r.query, d))
                .collect();
            let mean = overlaps.iter().sum::<f64>() / overlaps.len() as f64;
            if mean <= gold {
                return fail("distractors do not overlap the query more than the gold");
            }
            if overlaps.iter().any(|&o| o < F1_MIN_DISTRACTOR_OVERLAP) {
                return fail("a distractor shares under 60% of the query words");
            }
        }
        FailureKind::F3 => {
            if !has_polarity(&r.gold) {
                return fail("gold has no explicit yes/no");
            }
            if r.distractors.iter().any(|d| has_polarity(d)) {
                return fail("a distractor answers the polar question");
            }
        }
        _ => {}
    }
    Ok(())
}

/// Generates `n` records of an F1–F3 kind; deterministic for a given rng state.
pub fn gen_failure_case(
    kind: FailureKind,
    n: usize,
    bank: &TemplateBank,
    rng: &mut impl Rng,
) -> Result<Vec<FailureRecord>, DataError> {
    if kind == FailureKind::F4 {
        return Err(DataError::InvalidArgument(
            "f4 sets are converted from quality threads, not generated".into(),
        ));
    }
    let scenarios = bank.scenarios(kind);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let s = scenarios.choose(rng).expect("validated bank");
        let mut filler = Filler {
            bank,
            chosen: BTreeMap::new(),
        };
        let query = filler.fill(&s.query, rng);
        let gold = filler.fill(s.gold.choose(rng).expect("validated bank"), rng);
        let mut picks: Vec<&String> = s.distractors.iter().collect();
        picks.shuffle(rng);
        let distractors = picks[..DISTRACTORS]
            .iter()
            .map(|t| filler.fill(t, rng))
            .collect();
        let rec = FailureRecord {
            kind,
            query,
            gold,
            distractors,
        };
        check_postconditions(&rec)?;
        out.push(rec);
    }
    Ok(out)
}
