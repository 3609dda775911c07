use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::encoder_input::{align_value_span, EncoderInput};
use super::tokenize::{is_reserved, normalize_value};
use crate::error::{Error, Result};
use crate::schema::{ElementKind, ElementTable};

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SlotValue {
    /// Table index of a categorical value element.
    Categorical(usize),
    /// Normalized free text.
    Text(String),
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateFrame {
    pub intent: Option<usize>,
    /// Slot element index to value, in table order.
    pub slots: BTreeMap<usize, SlotValue>,
}

impl StateFrame {
    pub fn is_empty(&self) -> bool {
        self.intent.is_none() && self.slots.is_empty()
    }

    /// Check element kinds and categorical membership against `table`.
    pub fn validate(&self, table: &ElementTable) -> Result<()> {
        if let Some(i) = self.intent {
            if !table.is_kind(i, ElementKind::Intent) {
                return Err(Error::Invalid(format!("element {i} is not an intent")));
            }
        }
        for (&s, v) in &self.slots {
            let Some(slot) = table.get(s).filter(|e| e.kind == ElementKind::Slot) else {
                return Err(Error::Invalid(format!("element {s} is not a slot")));
            };
            match v {
                SlotValue::Categorical(c) => {
                    if !slot.is_categorical || !table.values_of(s).contains(c) {
                        return Err(Error::Invalid(format!(
                            "value {c} is not listed for slot {}",
                            table.display(s)
                        )));
                    }
                }
                SlotValue::Text(t) => {
                    if slot.is_categorical || t.is_empty() {
                        return Err(Error::Invalid(format!(
                            "free-text value {t:?} on slot {}",
                            table.display(s)
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Readable `{intent; slot=value, ...}` form.
    pub fn render(&self, table: &ElementTable) -> String {
        let mut parts = Vec::new();
        parts.push(self.intent.map_or("NONE".to_string(), |i| table.display(i)));
        for (&s, v) in &self.slots {
            let value = match v {
                SlotValue::Categorical(c) => table.get(*c).map_or("?".into(), |e| e.name.clone()),
                SlotValue::Text(t) => format!("{t:?}"),
            };
            parts.push(format!("{}={value}", table.display(s)));
        }
        parts.join("; ")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Marker {
    Bos,
    Eos,
    PairSep,
    ValueEnd,
}

impl Marker {
    pub const ALL: [Marker; 4] = [Marker::Bos, Marker::Eos, Marker::PairSep, Marker::ValueEnd];
    pub const COUNT: usize = 4;

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Pointer {
    Marker(Marker),
    Schema(usize),
    Token(usize),
}

impl Pointer {
    /// Position in the candidate list `markers ++ schema elements ++ tokens`.
    pub fn candidate(self, num_elements: usize) -> usize {
        match self {
            Pointer::Marker(m) => m.index(),
            Pointer::Schema(i) => Marker::COUNT + i,
            Pointer::Token(i) => Marker::COUNT + num_elements + i,
        }
    }

    pub fn from_candidate(c: usize, num_elements: usize, num_tokens: usize) -> Option<Pointer> {
        if c < Marker::COUNT {
            Some(Pointer::Marker(Marker::ALL[c]))
        } else if c < Marker::COUNT + num_elements {
            Some(Pointer::Schema(c - Marker::COUNT))
        } else if c < Marker::COUNT + num_elements + num_tokens {
            Some(Pointer::Token(c - Marker::COUNT - num_elements))
        } else {
            None
        }
    }
}

impl fmt::Display for Pointer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Pointer::Marker(m) => write!(f, "{m:?}"),
            Pointer::Schema(i) => write!(f, "#e{i}"),
            Pointer::Token(i) => write!(f, "#t{i}"),
        }
    }
}

pub type PointerSequence = Vec<Pointer>;

pub fn candidate_count(num_elements: usize, num_tokens: usize) -> usize {
    Marker::COUNT + num_elements + num_tokens
}

/// What [`linearize_state`] does with a free-text value it cannot find in
/// the encoder input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unalignable {
    Error,
    /// Leave the pair out of the sequence.
    Omit,
}

/// Target pointer sequence for `frame`. Slot pairs follow table order.
pub fn linearize_state(
    frame: &StateFrame,
    input: &EncoderInput,
    table: &ElementTable,
    on_unalignable: Unalignable,
) -> Result<PointerSequence> {
    let mut seq = vec![Pointer::Marker(Marker::Bos)];
    if let Some(i) = frame.intent {
        seq.push(Pointer::Schema(i));
    }
    for (&slot, value) in &frame.slots {
        match value {
            SlotValue::Categorical(v) => {
                seq.extend([Pointer::Schema(slot), Pointer::Schema(*v)]);
            }
            SlotValue::Text(text) => match align_value_span(text, input) {
                Some(span) => {
                    seq.push(Pointer::Schema(slot));
                    seq.extend(span.map(Pointer::Token));
                    seq.push(Pointer::Marker(Marker::ValueEnd));
                }
                None if on_unalignable == Unalignable::Omit => continue,
                None => {
                    return Err(Error::Unalignable {
                        slot: table.display(slot),
                        value: text.clone(),
                    })
                }
            },
        }
        seq.push(Pointer::Marker(Marker::PairSep));
    }
    seq.push(Pointer::Marker(Marker::Eos));
    Ok(seq)
}

/// Whether `seq` matches the target grammar exactly.
pub fn is_well_formed(seq: &[Pointer], input: &EncoderInput, table: &ElementTable) -> bool {
    let (_, bad) = delinearize(seq, input, table);
    bad == 0
}

enum St {
    Start,
    Open,
    Pairs,
    NeedValue(usize),
    Span { slot: usize, start: usize, end: usize },
    NeedSep(usize, SlotValue),
    Done,
}

/// Best-effort parse of a decoded sequence. Items that break the grammar are
/// skipped and counted; a later assignment to the same slot wins.
pub fn delinearize(seq: &[Pointer], input: &EncoderInput, table: &ElementTable) -> (StateFrame, usize) {
    let m = table.len();
    let n = input.len();
    let mut frame = StateFrame::default();
    let mut bad = 0usize;
    let mut st = St::Start;

    let span_value = |start: usize, end: usize| -> Option<SlotValue> {
        let text = normalize_value(&input.tokens[start..end].join(" "));
        (!text.is_empty()).then_some(SlotValue::Text(text))
    };

    for &p in seq {
        let valid = match p {
            Pointer::Schema(i) => i < m,
            Pointer::Token(i) => i < n && !is_reserved(&input.tokens[i]),
            Pointer::Marker(_) => true,
        };
        if !valid {
            bad += 1;
            continue;
        }
        st = match (st, p) {
            (St::Done, _) => {
                bad += 1;
                St::Done
            }
            (St::Start, Pointer::Marker(Marker::Bos)) => St::Open,
            (St::Start, other) => {
                // missing BOS: count it, then read the item as if it had been there
                bad += 1;
                step_open(&mut frame, &mut bad, table, other, true)
            }
            (St::Open, other) => step_open(&mut frame, &mut bad, table, other, true),
            (St::Pairs, other) => step_open(&mut frame, &mut bad, table, other, false),
            (St::NeedValue(slot), p) => {
                let cat = table.get(slot).is_some_and(|e| e.is_categorical);
                match p {
                    Pointer::Schema(v) if cat && table.values_of(slot).contains(&v) => {
                        St::NeedSep(slot, SlotValue::Categorical(v))
                    }
                    Pointer::Token(t) if !cat => St::Span { slot, start: t, end: t + 1 },
                    Pointer::Marker(Marker::Eos) => {
                        bad += 1;
                        St::Done
                    }
                    Pointer::Schema(s) if table.is_kind(s, ElementKind::Slot) => {
                        bad += 1;
                        St::NeedValue(s)
                    }
                    _ => {
                        bad += 1;
                        St::NeedValue(slot)
                    }
                }
            }
            (St::Span { slot, start, end }, p) => match p {
                Pointer::Token(t) if t == end => St::Span { slot, start, end: end + 1 },
                Pointer::Marker(Marker::ValueEnd) => match span_value(start, end) {
                    Some(v) => St::NeedSep(slot, v),
                    None => {
                        bad += 1;
                        St::Pairs
                    }
                },
                Pointer::Marker(Marker::PairSep) => {
                    bad += 1;
                    if let Some(v) = span_value(start, end) {
                        frame.slots.insert(slot, v);
                    }
                    St::Pairs
                }
                Pointer::Marker(Marker::Eos) => {
                    bad += 1;
                    if let Some(v) = span_value(start, end) {
                        frame.slots.insert(slot, v);
                    }
                    St::Done
                }
                _ => {
                    bad += 1;
                    St::Span { slot, start, end }
                }
            },
            (St::NeedSep(slot, v), p) => match p {
                Pointer::Marker(Marker::PairSep) => {
                    frame.slots.insert(slot, v);
                    St::Pairs
                }
                Pointer::Marker(Marker::Eos) => {
                    bad += 1;
                    frame.slots.insert(slot, v);
                    St::Done
                }
                Pointer::Schema(s) if table.is_kind(s, ElementKind::Slot) => {
                    bad += 1;
                    frame.slots.insert(slot, v);
                    St::NeedValue(s)
                }
                _ => {
                    bad += 1;
                    St::NeedSep(slot, v)
                }
            },
        };
    }
    match st {
        St::Done => {}
        St::NeedSep(slot, v) => {
            bad += 1;
            frame.slots.insert(slot, v);
        }
        St::Span { slot, start, end } => {
            bad += 1;
            if let Some(v) = span_value(start, end) {
                frame.slots.insert(slot, v);
            }
        }
        _ => bad += 1,
    }
    (frame, bad)
}

fn step_open(frame: &mut StateFrame, bad: &mut usize, table: &ElementTable, p: Pointer, intent_ok: bool) -> St {
    match p {
        Pointer::Schema(i) if table.is_kind(i, ElementKind::Intent) => {
            if intent_ok && frame.intent.is_none() {
                frame.intent = Some(i);
            } else {
                *bad += 1;
            }
            St::Pairs
        }
        Pointer::Schema(s) if table.is_kind(s, ElementKind::Slot) => St::NeedValue(s),
        Pointer::Marker(Marker::Eos) => St::Done,
        _ => {
            *bad += 1;
            if intent_ok {
                St::Open
            } else {
                St::Pairs
            }
        }
    }
}
