//! Dialogue files in the SGD layout and their conversion into training
//! examples.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::encoder_input::{build_encoder_input, EncoderInput};
use super::state::{linearize_state, PointerSequence, SlotValue, StateFrame, Unalignable};
use super::tokenize::normalize_value;
use crate::error::{Error, Result};
use crate::schema::{load_schema_file, serialize_schema, ElementTable, Schema};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Speaker {
    #[serde(rename = "USER")]
    User,
    #[serde(rename = "SYSTEM")]
    System,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotSpan {
    pub slot: String,
    pub start: usize,
    pub exclusive_end: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueState {
    pub active_intent: String,
    #[serde(default)]
    pub requested_slots: Vec<String>,
    #[serde(default)]
    pub slot_values: BTreeMap<String, Vec<String>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Frame {
    pub service: String,
    #[serde(default)]
    pub slots: Vec<SlotSpan>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<DialogueState>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Speaker,
    pub utterance: String,
    #[serde(default)]
    pub frames: Vec<Frame>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dialogue {
    pub dialogue_id: String,
    pub services: Vec<String>,
    pub turns: Vec<Turn>,
}

pub const NONE_INTENT: &str = "NONE";

/// Parse one dialogues file (a JSON list of dialogues).
pub fn parse_dialogues(contents: &str) -> Result<Vec<Dialogue>> {
    let dialogues: Vec<Dialogue> = serde_json::from_str(contents).map_err(|e| Error::Parse {
        path: format!("line {} column {}", e.line(), e.column()),
        msg: e.to_string(),
    })?;
    for d in &dialogues {
        for (ti, t) in d.turns.iter().enumerate() {
            let chars = t.utterance.chars().count();
            for f in &t.frames {
                for s in &f.slots {
                    if s.start > s.exclusive_end || s.exclusive_end > chars {
                        return Err(Error::Data {
                            example: format!("{}:{ti}", d.dialogue_id),
                            msg: format!("span {}..{} of slot {} outside utterance", s.start, s.exclusive_end, s.slot),
                        });
                    }
                }
            }
        }
    }
    Ok(dialogues)
}

/// A schema file plus its dialogues, as found in one SGD split directory.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Split {
    pub schemas: Vec<Schema>,
    pub dialogues: Vec<Dialogue>,
}

impl Split {
    pub fn schema(&self, service: &str) -> Option<&Schema> {
        self.schemas.iter().find(|s| s.service_name == service)
    }

    pub fn num_turns(&self) -> usize {
        self.dialogues.iter().map(|d| d.turns.len()).sum()
    }
}

/// Read `schema.json` and every `dialogues_*.json` (in name order) from `dir`.
pub fn load_split(dir: &Path) -> Result<Split> {
    let schemas = load_schema_file(&dir.join("schema.json"))?;
    let mut files: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("dialogues_") && n.ends_with(".json"))
        })
        .collect();
    files.sort();
    let mut dialogues = Vec::new();
    for f in files {
        let text = fs::read_to_string(&f).map_err(|e| Error::io(&f, e))?;
        dialogues.extend(parse_dialogues(&text).map_err(|e| match e {
            Error::Parse { path, msg } => Error::Parse {
                path: format!("{}: {path}", f.display()),
                msg,
            },
            other => other,
        })?);
    }
    Ok(Split { schemas, dialogues })
}

/// Write `schema.json` and dialogue files of at most `per_file` dialogues.
pub fn write_split(dir: &Path, split: &Split, per_file: usize) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let p = dir.join("schema.json");
    fs::write(&p, serialize_schema(&split.schemas)).map_err(|e| Error::io(&p, e))?;
    for (i, chunk) in split.dialogues.chunks(per_file.max(1)).enumerate() {
        let p = dir.join(format!("dialogues_{:03}.json", i + 1));
        let text = serde_json::to_string_pretty(chunk).expect("dialogues serialize");
        fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}

/// Domain of a service: the name up to the first underscore (`Homes_1` is
/// in domain `Homes`).
pub fn domain_of(service: &str) -> &str {
    service.split('_').next().unwrap_or(service)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnalignableMode {
    Skip,
    Keep,
}

#[derive(Clone, Debug)]
pub struct PrepareConfig {
    pub max_len: usize,
    pub dontcare: bool,
    pub unalignable: UnalignableMode,
    /// Drop dialogue history from the encoder input.
    pub single_turn: bool,
}

impl Default for PrepareConfig {
    fn default() -> Self {
        PrepareConfig {
            max_len: 96,
            dontcare: false,
            unalignable: UnalignableMode::Skip,
            single_turn: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct DialogueExample {
    /// `dialogue_id:turn_index`.
    pub id: String,
    pub dialogue_id: String,
    pub turn_index: usize,
    /// Index into [`Prepared::tables`].
    pub table: usize,
    pub input: EncoderInput,
    pub frame: StateFrame,
    pub target: PointerSequence,
    /// Some gold value could not be written as pointers; `target` omits it.
    pub flagged: bool,
}

#[derive(Clone, Debug)]
pub struct Prepared {
    pub tables: Vec<ElementTable>,
    /// Service list each table was built from.
    pub table_services: Vec<Vec<String>>,
    pub examples: Vec<DialogueExample>,
    pub skipped: usize,
}

impl Prepared {
    pub fn table_of(&self, ex: &DialogueExample) -> &ElementTable {
        &self.tables[ex.table]
    }
}

/// One example per USER turn. The gold frame carries each service's most
/// recent state forward; the intent comes from the first frame of the turn
/// with an active intent.
pub fn prepare_examples(split: &Split, cfg: &PrepareConfig) -> Result<Prepared> {
    let mut tables = Vec::new();
    let mut table_services: Vec<Vec<String>> = Vec::new();
    let mut table_ids: HashMap<Vec<String>, usize> = HashMap::new();
    let mut examples = Vec::new();
    let mut skipped = 0;

    for d in &split.dialogues {
        let tid = match table_ids.get(&d.services) {
            Some(&t) => t,
            None => {
                let schemas = d
                    .services
                    .iter()
                    .map(|s| {
                        split.schema(s).ok_or_else(|| Error::Data {
                            example: d.dialogue_id.clone(),
                            msg: format!("service {s} is not in the schema file"),
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                tables.push(ElementTable::build(&schemas, cfg.dontcare));
                table_services.push(d.services.clone());
                table_ids.insert(d.services.clone(), tables.len() - 1);
                tables.len() - 1
            }
        };
        let table = &tables[tid];
        let mut carried: BTreeMap<usize, (String, BTreeMap<String, Vec<String>>)> = BTreeMap::new();

        for (ti, turn) in d.turns.iter().enumerate() {
            if turn.speaker != Speaker::User {
                continue;
            }
            let id = format!("{}:{ti}", d.dialogue_id);
            let mut intent = None;
            for f in &turn.frames {
                let Some(state) = &f.state else { continue };
                let svc = d.services.iter().position(|s| *s == f.service).ok_or_else(|| Error::Data {
                    example: id.clone(),
                    msg: format!("frame for service {} not listed by the dialogue", f.service),
                })?;
                if intent.is_none() && state.active_intent != NONE_INTENT {
                    intent = Some(table.intent(&f.service, &state.active_intent).ok_or_else(|| Error::Data {
                        example: id.clone(),
                        msg: format!("unknown intent {}", state.active_intent),
                    })?);
                }
                carried.insert(svc, (f.service.clone(), state.slot_values.clone()));
            }

            let mut frame = StateFrame { intent, ..Default::default() };
            let mut flagged = false;
            for (service, values) in carried.values() {
                for (slot_name, vals) in values {
                    let slot = table.slot(service, slot_name).ok_or_else(|| Error::Data {
                        example: id.clone(),
                        msg: format!("unknown slot {service}.{slot_name}"),
                    })?;
                    let Some(raw) = vals.first() else { continue };
                    let categorical = table.get(slot).is_some_and(|e| e.is_categorical);
                    let value = if categorical {
                        table.find_value(slot, raw).map(SlotValue::Categorical)
                    } else {
                        let t = normalize_value(raw);
                        (!t.is_empty()).then_some(SlotValue::Text(t))
                    };
                    match value {
                        Some(v) => {
                            frame.slots.insert(slot, v);
                        }
                        None => flagged = true,
                    }
                }
            }

            let history: Vec<&str> = if cfg.single_turn {
                Vec::new()
            } else {
                d.turns[..ti].iter().map(|t| t.utterance.as_str()).collect()
            };
            let input = match build_encoder_input(&turn.utterance, &history, cfg.max_len) {
                Ok(i) => i,
                Err(Error::Invalid(_)) | Err(Error::Truncation { .. }) => {
                    skipped += 1;
                    continue;
                }
                Err(e) => return Err(e),
            };
            let target = match linearize_state(&frame, &input, table, Unalignable::Error) {
                Ok(t) if !flagged => t,
                Ok(_) | Err(Error::Unalignable { .. }) => {
                    if cfg.unalignable == UnalignableMode::Skip {
                        skipped += 1;
                        continue;
                    }
                    flagged = true;
                    linearize_state(&frame, &input, table, Unalignable::Omit)?
                }
                Err(e) => return Err(e),
            };
            examples.push(DialogueExample {
                id,
                dialogue_id: d.dialogue_id.clone(),
                turn_index: ti,
                table: tid,
                input,
                frame,
                target,
                flagged,
            });
        }
    }
    Ok(Prepared {
        tables,
        table_services,
        examples,
        skipped,
    })
}
