//! Service schemas, the flat element table and per-element description pairs.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::corpus::tokenize::{normalize_value, tokenize};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Intent {
    pub name: String,
    pub description: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slot {
    pub name: String,
    pub description: String,
    pub is_categorical: bool,
    pub possible_values: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub service_name: String,
    pub description: String,
    pub intents: Vec<Intent>,
    pub slots: Vec<Slot>,
}

impl Schema {
    pub fn validate(&self) -> Result<()> {
        let svc = &self.service_name;
        let mut seen = HashSet::new();
        for i in &self.intents {
            if !seen.insert(i.name.as_str()) {
                return Err(Error::Validation(format!("service {svc}: duplicate intent {}", i.name)));
            }
        }
        let mut seen = HashSet::new();
        for s in &self.slots {
            if !seen.insert(s.name.as_str()) {
                return Err(Error::Validation(format!("service {svc}: duplicate slot {}", s.name)));
            }
            if s.is_categorical && s.possible_values.is_empty() {
                return Err(Error::Validation(format!(
                    "service {svc}: categorical slot {} has no possible values",
                    s.name
                )));
            }
            if !s.is_categorical && !s.possible_values.is_empty() {
                return Err(Error::Validation(format!(
                    "service {svc}: non-categorical slot {} lists possible values",
                    s.name
                )));
            }
        }
        Ok(())
    }

    pub fn slot(&self, name: &str) -> Option<&Slot> {
        self.slots.iter().find(|s| s.name == name)
    }
}

fn field<'a>(obj: &'a Value, key: &str, path: &str) -> Result<&'a Value> {
    obj.get(key).ok_or_else(|| Error::Parse {
        path: format!("{path}.{key}"),
        msg: "missing required field".into(),
    })
}

fn string(obj: &Value, key: &str, path: &str) -> Result<String> {
    field(obj, key, path)?
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| Error::Parse {
            path: format!("{path}.{key}"),
            msg: "expected a string".into(),
        })
}

fn array<'a>(obj: &'a Value, key: &str, path: &str) -> Result<&'a Vec<Value>> {
    field(obj, key, path)?.as_array().ok_or_else(|| Error::Parse {
        path: format!("{path}.{key}"),
        msg: "expected an array".into(),
    })
}

/// Parse a JSON list of services in the SGD schema layout. Unknown fields are
/// ignored; every service is validated.
pub fn parse_schema(contents: &str) -> Result<Vec<Schema>> {
    let root: Value = serde_json::from_str(contents).map_err(|e| Error::Parse {
        path: "$".into(),
        msg: e.to_string(),
    })?;
    let services = root.as_array().ok_or_else(|| Error::Parse {
        path: "$".into(),
        msg: "expected a list of services".into(),
    })?;
    let mut out = Vec::with_capacity(services.len());
    for (si, svc) in services.iter().enumerate() {
        let p = format!("$[{si}]");
        let mut intents = Vec::new();
        for (ii, it) in array(svc, "intents", &p)?.iter().enumerate() {
            let ip = format!("{p}.intents[{ii}]");
            intents.push(Intent {
                name: string(it, "name", &ip)?,
                description: string(it, "description", &ip)?,
            });
        }
        let mut slots = Vec::new();
        for (k, sl) in array(svc, "slots", &p)?.iter().enumerate() {
            let sp = format!("{p}.slots[{k}]");
            let is_categorical = field(sl, "is_categorical", &sp)?.as_bool().ok_or_else(|| Error::Parse {
                path: format!("{sp}.is_categorical"),
                msg: "expected a boolean".into(),
            })?;
            let possible_values = array(sl, "possible_values", &sp)?
                .iter()
                .enumerate()
                .map(|(vi, v)| {
                    v.as_str().map(str::to_string).ok_or_else(|| Error::Parse {
                        path: format!("{sp}.possible_values[{vi}]"),
                        msg: "expected a string".into(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            slots.push(Slot {
                name: string(sl, "name", &sp)?,
                description: string(sl, "description", &sp)?,
                is_categorical,
                possible_values,
            });
        }
        let schema = Schema {
            service_name: string(svc, "service_name", &p)?,
            description: string(svc, "description", &p)?,
            intents,
            slots,
        };
        schema.validate()?;
        out.push(schema);
    }
    Ok(out)
}

pub fn load_schema_file(path: &Path) -> Result<Vec<Schema>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_schema(&text)
}

pub fn serialize_schema(schemas: &[Schema]) -> String {
    serde_json::to_string_pretty(schemas).expect("schemas serialize")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ElementKind {
    Intent,
    Slot,
    Value,
}

/// The two token sequences that describe one schema element.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DescriptionPair {
    pub first: Vec<String>,
    pub second: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Element {
    pub kind: ElementKind,
    /// Position of the owning service in the table's service list.
    pub service: usize,
    /// Table index of the owning slot (values only).
    pub slot: Option<usize>,
    pub name: String,
    pub is_categorical: bool,
    pub pair: DescriptionPair,
}

pub const DONTCARE: &str = "dontcare";

/// Intent: (service description, intent description); slot: (service
/// description, slot description); value: (slot description, value).
pub fn description_pair(kind: ElementKind, service_desc: &str, own_desc: &str) -> DescriptionPair {
    let _ = kind;
    DescriptionPair {
        first: tokenize(service_desc),
        second: tokenize(own_desc),
    }
}

/// Every intent, slot and categorical value of a list of services, densely
/// indexed. Each service contributes a contiguous block: its intents, then its
/// slots, then the values of its categorical slots grouped by slot.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ElementTable {
    services: Vec<String>,
    elements: Vec<Element>,
    counts: [usize; 3],
    by_key: HashMap<(usize, ElementKind, String), usize>,
    values_of: HashMap<usize, Vec<usize>>,
}

impl ElementTable {
    pub fn build(schemas: &[&Schema], dontcare: bool) -> Self {
        let mut elements = Vec::new();
        let mut counts = [0usize; 3];
        for (si, schema) in schemas.iter().enumerate() {
            for it in &schema.intents {
                elements.push(Element {
                    kind: ElementKind::Intent,
                    service: si,
                    slot: None,
                    name: it.name.clone(),
                    is_categorical: false,
                    pair: description_pair(ElementKind::Intent, &schema.description, &it.description),
                });
                counts[0] += 1;
            }
            let slot_base = elements.len();
            for sl in &schema.slots {
                elements.push(Element {
                    kind: ElementKind::Slot,
                    service: si,
                    slot: None,
                    name: sl.name.clone(),
                    is_categorical: sl.is_categorical,
                    pair: description_pair(ElementKind::Slot, &schema.description, &sl.description),
                });
                counts[1] += 1;
            }
            for (k, sl) in schema.slots.iter().enumerate() {
                if !sl.is_categorical {
                    continue;
                }
                let mut values: Vec<&str> = sl.possible_values.iter().map(String::as_str).collect();
                if dontcare && !values.contains(&DONTCARE) {
                    values.push(DONTCARE);
                }
                for v in values {
                    elements.push(Element {
                        kind: ElementKind::Value,
                        service: si,
                        slot: Some(slot_base + k),
                        name: v.to_string(),
                        is_categorical: true,
                        pair: description_pair(ElementKind::Value, &sl.description, v),
                    });
                    counts[2] += 1;
                }
            }
        }
        let mut by_key = HashMap::new();
        let mut values_of: HashMap<usize, Vec<usize>> = HashMap::new();
        for (i, e) in elements.iter().enumerate() {
            match e.slot {
                Some(s) => values_of.entry(s).or_default().push(i),
                None => {
                    by_key.insert((e.service, e.kind, e.name.clone()), i);
                }
            }
        }
        ElementTable {
            services: schemas.iter().map(|s| s.service_name.clone()).collect(),
            elements,
            counts,
            by_key,
            values_of,
        }
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn num_intents(&self) -> usize {
        self.counts[0]
    }

    pub fn num_slots(&self) -> usize {
        self.counts[1]
    }

    pub fn num_values(&self) -> usize {
        self.counts[2]
    }

    pub fn services(&self) -> &[String] {
        &self.services
    }

    pub fn get(&self, idx: usize) -> Option<&Element> {
        self.elements.get(idx)
    }

    pub fn elements(&self) -> &[Element] {
        &self.elements
    }

    pub fn service_index(&self, name: &str) -> Option<usize> {
        self.services.iter().position(|s| s == name)
    }

    pub fn intent(&self, service: &str, name: &str) -> Option<usize> {
        let si = self.service_index(service)?;
        self.by_key.get(&(si, ElementKind::Intent, name.to_string())).copied()
    }

    pub fn slot(&self, service: &str, name: &str) -> Option<usize> {
        let si = self.service_index(service)?;
        self.by_key.get(&(si, ElementKind::Slot, name.to_string())).copied()
    }

    /// Value elements of a categorical slot, in table order.
    pub fn values_of(&self, slot: usize) -> &[usize] {
        self.values_of.get(&slot).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Categorical value of `slot` whose normalized name equals the
    /// normalized `text`.
    pub fn find_value(&self, slot: usize, text: &str) -> Option<usize> {
        let want = normalize_value(text);
        self.values_of(slot)
            .iter()
            .copied()
            .find(|&v| normalize_value(&self.elements[v].name) == want)
    }

    pub fn is_kind(&self, idx: usize, kind: ElementKind) -> bool {
        self.elements.get(idx).is_some_and(|e| e.kind == kind)
    }

    /// Stable symbolic identity `service/kind/name` (values add their slot).
    pub fn key(&self, idx: usize) -> String {
        let e = &self.elements[idx];
        let svc = &self.services[e.service];
        match e.kind {
            ElementKind::Intent => format!("{svc}/intent/{}", e.name),
            ElementKind::Slot => format!("{svc}/slot/{}", e.name),
            ElementKind::Value => {
                let slot = &self.elements[e.slot.expect("value has slot")].name;
                format!("{svc}/value/{slot}/{}", e.name)
            }
        }
    }

    /// Human-readable name, e.g. `Homes.area` or `Homes.area=campbell`.
    pub fn display(&self, idx: usize) -> String {
        let e = &self.elements[idx];
        match e.slot {
            Some(s) => format!("{}={}", self.display(s), e.name),
            None => format!("{}.{}", self.services[e.service], e.name),
        }
    }
}
