//! Intent accuracy, joint goal accuracy, slot F1 and per-domain reports.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{domain_of, normalize_value, SlotValue, StateFrame};
use crate::error::{Error, Result};
use crate::schema::{ElementTable, DONTCARE};

/// A frame in table-independent form: keys are `service/slot`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NamedFrame {
    pub intent: Option<String>,
    pub slots: BTreeMap<String, NamedValue>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NamedValue {
    pub value: String,
    pub categorical: bool,
}

impl NamedFrame {
    pub fn from_frame(frame: &StateFrame, table: &ElementTable) -> Self {
        let name = |i: usize| {
            table
                .get(i)
                .map(|e| format!("{}/{}", table.services()[e.service], e.name))
                .unwrap_or_else(|| format!("?{i}"))
        };
        let slots = frame
            .slots
            .iter()
            .map(|(&s, v)| {
                let categorical = table.get(s).is_some_and(|e| e.is_categorical);
                let value = match v {
                    SlotValue::Categorical(i) => table.get(*i).map(|e| e.name.clone()).unwrap_or_default(),
                    SlotValue::Text(t) => t.clone(),
                };
                (name(s), NamedValue { value, categorical })
            })
            .collect();
        NamedFrame {
            intent: frame.intent.map(name),
            slots,
        }
    }

    pub fn slot(mut self, key: &str, value: &str, categorical: bool) -> Self {
        self.slots.insert(
            key.to_string(),
            NamedValue {
                value: value.to_string(),
                categorical,
            },
        );
        self
    }

    pub fn with_intent(mut self, intent: &str) -> Self {
        self.intent = Some(intent.to_string());
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum MatchMode {
    Exact,
    Fuzzy(f64),
}

impl MatchMode {
    pub fn label(self) -> String {
        match self {
            MatchMode::Exact => "exact".into(),
            MatchMode::Fuzzy(t) => format!("fuzzy@{t}"),
        }
    }
}

fn collapse(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// `1 - edit_distance / max_len` over lowercased, whitespace-collapsed text.
pub fn fuzzy_score(a: &str, b: &str) -> f64 {
    let (a, b) = (collapse(a), collapse(b));
    let len = a.chars().count().max(b.chars().count());
    if len == 0 {
        return 1.0;
    }
    1.0 - strsim::levenshtein(&a, &b) as f64 / len as f64
}

fn value_matches(pred: &NamedValue, gold: &NamedValue, mode: MatchMode) -> bool {
    if gold.categorical || pred.categorical {
        return pred.categorical == gold.categorical && pred.value == gold.value;
    }
    let (p, g) = (normalize_value(&pred.value), normalize_value(&gold.value));
    if p == DONTCARE || g == DONTCARE {
        return p == g;
    }
    match mode {
        MatchMode::Exact => p == g,
        MatchMode::Fuzzy(t) => fuzzy_score(&p, &g) >= t,
    }
}

/// Whether every gold slot is matched and nothing extra was predicted.
pub fn turn_correct(pred: &NamedFrame, gold: &NamedFrame, mode: MatchMode) -> bool {
    pred.slots.len() == gold.slots.len()
        && gold
            .slots
            .iter()
            .all(|(k, g)| pred.slots.get(k).is_some_and(|p| value_matches(p, g, mode)))
}

fn check_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Invalid(format!("{a} predictions for {b} gold turns")));
    }
    Ok(())
}

fn rate(hits: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}

pub fn intent_accuracy(pred: &[NamedFrame], gold: &[NamedFrame]) -> Result<f64> {
    check_len(pred.len(), gold.len())?;
    let hits = pred.par_iter().zip(gold).filter(|(p, g)| p.intent == g.intent).count();
    Ok(rate(hits, gold.len()))
}

pub fn joint_goal_accuracy(pred: &[NamedFrame], gold: &[NamedFrame], mode: MatchMode) -> Result<f64> {
    check_len(pred.len(), gold.len())?;
    let hits = pred.par_iter().zip(gold).filter(|(p, g)| turn_correct(p, g, mode)).count();
    Ok(rate(hits, gold.len()))
}

/// Joint goal accuracy restricted to categorical (`true`) or
/// non-categorical slots.
pub fn joint_goal_accuracy_kind(pred: &[NamedFrame], gold: &[NamedFrame], mode: MatchMode, categorical: bool) -> Result<f64> {
    check_len(pred.len(), gold.len())?;
    let keep = |f: &NamedFrame| NamedFrame {
        intent: None,
        slots: f.slots.iter().filter(|(_, v)| v.categorical == categorical).map(|(k, v)| (k.clone(), v.clone())).collect(),
    };
    let hits = pred
        .par_iter()
        .zip(gold)
        .filter(|(p, g)| turn_correct(&keep(p), &keep(g), mode))
        .count();
    Ok(rate(hits, gold.len()))
}

/// Labeled spans `(start, end_exclusive, label)` of a BIO sequence. An `I-`
/// tag that does not continue a span of the same label opens a new one.
pub fn bio_spans(labels: &[String]) -> Vec<(usize, usize, String)> {
    let mut out = Vec::new();
    let mut open: Option<(usize, String)> = None;
    for (i, l) in labels.iter().enumerate() {
        let (tag, name) = match l.split_once('-') {
            Some((t, n)) if t == "B" || t == "I" => (t, n),
            _ => ("O", ""),
        };
        let continues = tag == "I" && open.as_ref().is_some_and(|(_, n)| n == name);
        if !continues {
            if let Some((s, n)) = open.take() {
                out.push((s, i, n));
            }
            if tag != "O" {
                open = Some((i, name.to_string()));
            }
        }
    }
    if let Some((s, n)) = open {
        out.push((s, labels.len(), n));
    }
    out
}

/// Span-level F1 over sentences; 0 when precision or recall is undefined.
pub fn slot_f1(pred: &[Vec<String>], gold: &[Vec<String>]) -> Result<f64> {
    check_len(pred.len(), gold.len())?;
    let mut tp = 0usize;
    let mut np = 0usize;
    let mut ng = 0usize;
    for (i, (p, g)) in pred.iter().zip(gold).enumerate() {
        if p.len() != g.len() {
            return Err(Error::Invalid(format!(
                "sentence {i}: {} predicted labels for {} tokens",
                p.len(),
                g.len()
            )));
        }
        let ps: BTreeSet<_> = bio_spans(p).into_iter().collect();
        let gs: BTreeSet<_> = bio_spans(g).into_iter().collect();
        tp += ps.intersection(&gs).count();
        np += ps.len();
        ng += gs.len();
    }
    if tp == 0 || np == 0 || ng == 0 {
        return Ok(0.0);
    }
    let (p, r) = (tp as f64 / np as f64, tp as f64 / ng as f64);
    Ok(2.0 * p * r / (p + r))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DomainTag {
    Seen,
    Partial,
    Unseen,
}

impl DomainTag {
    pub fn marker(self) -> &'static str {
        match self {
            DomainTag::Seen => "",
            DomainTag::Partial => "+",
            DomainTag::Unseen => "*",
        }
    }
}

/// One evaluated turn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TurnResult {
    pub id: String,
    /// Services of the dialogue the turn belongs to.
    pub services: Vec<String>,
    pub gold: NamedFrame,
    pub pred: NamedFrame,
    pub malformed: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainRow {
    pub domain: String,
    pub tag: DomainTag,
    pub turns: usize,
    pub joint_goal_accuracy: f64,
    pub intent_accuracy: f64,
}

/// Domain label of a turn: its distinct service domains joined by `+`.
pub fn turn_domain(services: &[String]) -> Result<String> {
    let ds: BTreeSet<&str> = services.iter().map(|s| domain_of(s)).filter(|d| !d.is_empty()).collect();
    if ds.is_empty() {
        return Err(Error::Invalid("turn has no service tag".into()));
    }
    Ok(ds.into_iter().collect::<Vec<_>>().join("+"))
}

pub fn per_domain_report(results: &[TurnResult], training_services: &BTreeSet<String>, mode: MatchMode) -> Result<Vec<DomainRow>> {
    let mut groups: BTreeMap<String, (Vec<&TurnResult>, BTreeSet<&str>)> = BTreeMap::new();
    for r in results {
        let d = turn_domain(&r.services).map_err(|_| Error::Invalid(format!("turn {} has no service tag", r.id)))?;
        let e = groups.entry(d).or_default();
        e.0.push(r);
        e.1.extend(r.services.iter().map(String::as_str));
    }
    groups
        .into_iter()
        .map(|(domain, (turns, services))| {
            let seen = services.iter().filter(|s| training_services.contains(**s)).count();
            let tag = if seen == services.len() {
                DomainTag::Seen
            } else if seen == 0 {
                DomainTag::Unseen
            } else {
                DomainTag::Partial
            };
            let pred: Vec<_> = turns.iter().map(|t| t.pred.clone()).collect();
            let gold: Vec<_> = turns.iter().map(|t| t.gold.clone()).collect();
            Ok(DomainRow {
                domain,
                tag,
                turns: turns.len(),
                joint_goal_accuracy: joint_goal_accuracy(&pred, &gold, mode)?,
                intent_accuracy: intent_accuracy(&pred, &gold)?,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoricalSplit {
    pub categorical: f64,
    pub non_categorical: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: String,
    pub turns: usize,
    pub intent_accuracy: f64,
    pub joint_goal_accuracy: f64,
    pub joint_goal_accuracy_exact: f64,
    pub slot_f1: Option<f64>,
    pub malformed: usize,
    pub per_domain: Vec<DomainRow>,
    pub categorical_split: Option<CategoricalSplit>,
}

#[derive(Clone, Debug, Default)]
pub struct ReportOptions {
    pub per_domain: bool,
    pub split_categorical: bool,
    pub training_services: BTreeSet<String>,
}

/// Predicted and gold label sequences.
pub type LabelSeqs<'a> = (&'a [Vec<String>], &'a [Vec<String>]);

impl EvalReport {
    pub fn build(
        results: &[TurnResult],
        labels: Option<LabelSeqs<'_>>,
        mode: MatchMode,
        opts: &ReportOptions,
    ) -> Result<Self> {
        let pred: Vec<_> = results.iter().map(|r| r.pred.clone()).collect();
        let gold: Vec<_> = results.iter().map(|r| r.gold.clone()).collect();
        let categorical_split = if opts.split_categorical {
            Some(CategoricalSplit {
                categorical: joint_goal_accuracy_kind(&pred, &gold, mode, true)?,
                non_categorical: joint_goal_accuracy_kind(&pred, &gold, mode, false)?,
            })
        } else {
            None
        };
        Ok(EvalReport {
            mode: mode.label(),
            turns: results.len(),
            intent_accuracy: intent_accuracy(&pred, &gold)?,
            joint_goal_accuracy: joint_goal_accuracy(&pred, &gold, mode)?,
            joint_goal_accuracy_exact: joint_goal_accuracy(&pred, &gold, MatchMode::Exact)?,
            slot_f1: labels.map(|(p, g)| slot_f1(p, g)).transpose()?,
            malformed: results.iter().map(|r| r.malformed).sum(),
            per_domain: if opts.per_domain {
                per_domain_report(results, &opts.training_services, mode)?
            } else {
                Vec::new()
            },
            categorical_split,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(format!("eval report: {e}")))
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "turns {}  match {}  malformed {}", self.turns, self.mode, self.malformed);
        let _ = writeln!(s, "{:<22} {:>8}", "metric", "value");
        let _ = writeln!(s, "{:<22} {:>8.4}", "joint goal accuracy", self.joint_goal_accuracy);
        let _ = writeln!(s, "{:<22} {:>8.4}", "joint GA (exact)", self.joint_goal_accuracy_exact);
        let _ = writeln!(s, "{:<22} {:>8.4}", "intent accuracy", self.intent_accuracy);
        if let Some(f1) = self.slot_f1 {
            let _ = writeln!(s, "{:<22} {:>8.4}", "slot F1", f1);
        }
        if let Some(c) = &self.categorical_split {
            let _ = writeln!(s, "\n{:<22} {:>8}", "slot type", "joint GA");
            let _ = writeln!(s, "{:<22} {:>8.4}", "categorical", c.categorical);
            let _ = writeln!(s, "{:<22} {:>8.4}", "non-categorical", c.non_categorical);
        }
        if !self.per_domain.is_empty() {
            let _ = writeln!(s, "\n{:<22} {:>6} {:>9} {:>9}", "domain", "turns", "joint GA", "intent");
            for r in &self.per_domain {
                let name = format!("{}{}", r.domain, r.tag.marker());
                let _ = writeln!(
                    s,
                    "{:<22} {:>6} {:>9.4} {:>9.4}",
                    name, r.turns, r.joint_goal_accuracy, r.intent_accuracy
                );
            }
            let _ = writeln!(s, "(* unseen in training, + partially seen)");
        }
        s
    }
}
