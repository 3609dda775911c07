//! Seeded generator of small schema-guided corpora in the SGD layout.
//!
//! Every domain is assembled from a few shared slot archetypes (city, day,
//! time, count, price range, kind), so a domain held out of training still
//! resembles the training domains in its descriptions and phrasing.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::sgd::{Dialogue, DialogueState, Frame, SlotSpan, Speaker, Split, Turn};
use crate::error::{Error, Result};
use crate::schema::{Intent, Schema, Slot};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Arch {
    City,
    Day,
    Time,
    Count,
    Price,
    Kind,
}

struct SlotTpl {
    name: &'static str,
    desc: &'static str,
    arch: Arch,
    /// Counted noun for counts; value list for kinds.
    unit: &'static str,
    kinds: &'static [&'static str],
}

struct IntentTpl {
    name: &'static str,
    desc: &'static str,
    phrases: &'static [&'static str],
}

struct DomainTpl {
    key: &'static str,
    service: &'static str,
    desc: &'static str,
    thing: &'static str,
    intents: [IntentTpl; 2],
    slots: &'static [SlotTpl],
}

const fn slot(name: &'static str, desc: &'static str, arch: Arch) -> SlotTpl {
    SlotTpl {
        name,
        desc,
        arch,
        unit: "",
        kinds: &[],
    }
}

const fn count(name: &'static str, desc: &'static str, unit: &'static str) -> SlotTpl {
    SlotTpl {
        name,
        desc,
        arch: Arch::Count,
        unit,
        kinds: &[],
    }
}

const fn kind(name: &'static str, desc: &'static str, kinds: &'static [&'static str]) -> SlotTpl {
    SlotTpl {
        name,
        desc,
        arch: Arch::Kind,
        unit: "",
        kinds,
    }
}

const DOMAINS: &[DomainTpl] = &[
    DomainTpl {
        key: "homes",
        service: "Homes_1",
        desc: "Service for finding a home to rent and scheduling visits",
        thing: "home",
        intents: [
            IntentTpl {
                name: "FindHome",
                desc: "Search for a home to rent",
                phrases: &["find a home to rent", "search for a place to rent", "look for a home"],
            },
            IntentTpl {
                name: "ScheduleVisit",
                desc: "Schedule a visit to the home",
                phrases: &["schedule a visit", "visit the home", "book a visit"],
            },
        ],
        slots: &[
            slot("area", "City where the home is located", Arch::City),
            slot("visit_date", "Date of the visit to the home", Arch::Day),
            count("number_of_beds", "Number of bedrooms in the home", "bedrooms"),
            kind("property_type", "Type of the home", &["apartment", "house", "condo"]),
        ],
    },
    DomainTpl {
        key: "hotels",
        service: "Hotels_1",
        desc: "Service for searching and reserving hotels",
        thing: "hotel",
        intents: [
            IntentTpl {
                name: "SearchHotel",
                desc: "Search for a hotel",
                phrases: &["find a hotel", "search for a hotel", "look for a place to stay"],
            },
            IntentTpl {
                name: "ReserveHotel",
                desc: "Reserve a room at the hotel",
                phrases: &["reserve a room", "book a room", "book the hotel"],
            },
        ],
        slots: &[
            slot("location", "City where the hotel is located", Arch::City),
            slot("check_in_date", "Date of check in at the hotel", Arch::Day),
            count("number_of_rooms", "Number of rooms to reserve", "rooms"),
            slot("price_range", "Price range of the hotel", Arch::Price),
            kind("hotel_type", "Type of the hotel", &["guesthouse", "hostel", "resort"]),
        ],
    },
    DomainTpl {
        key: "restaurants",
        service: "Restaurants_1",
        desc: "Service for finding and reserving restaurants",
        thing: "restaurant",
        intents: [
            IntentTpl {
                name: "FindRestaurant",
                desc: "Search for a restaurant",
                phrases: &["find a restaurant", "search for a restaurant", "look for a place to eat"],
            },
            IntentTpl {
                name: "ReserveRestaurant",
                desc: "Reserve a table at the restaurant",
                phrases: &["reserve a table", "book a table", "book the restaurant"],
            },
        ],
        slots: &[
            slot("city", "City where the restaurant is located", Arch::City),
            slot("date", "Date of the reservation at the restaurant", Arch::Day),
            slot("time", "Time of the reservation", Arch::Time),
            count("party_size", "Number of people in the party", "people"),
            slot("price_range", "Price range of the restaurant", Arch::Price),
            kind("cuisine", "Type of food served", &["italian", "mexican", "chinese"]),
        ],
    },
    DomainTpl {
        key: "events",
        service: "Events_1",
        desc: "Service for finding events and buying tickets",
        thing: "event",
        intents: [
            IntentTpl {
                name: "FindEvents",
                desc: "Search for an event",
                phrases: &["find an event", "search for something to do", "look for an event"],
            },
            IntentTpl {
                name: "BuyTickets",
                desc: "Buy tickets for the event",
                phrases: &["buy tickets", "book tickets", "get tickets"],
            },
        ],
        slots: &[
            slot("city", "City where the event is happening", Arch::City),
            slot("date", "Date of the event", Arch::Day),
            slot("time", "Start time of the event", Arch::Time),
            count("number_of_tickets", "Number of tickets to buy", "tickets"),
            kind("category", "Type of the event", &["music", "sports", "theater"]),
        ],
    },
    DomainTpl {
        key: "rentalcars",
        service: "RentalCars_1",
        desc: "Service for renting cars",
        thing: "car",
        intents: [
            IntentTpl {
                name: "GetCars",
                desc: "Search for a rental car",
                phrases: &["find a rental car", "search for a car", "look for a car to rent"],
            },
            IntentTpl {
                name: "ReserveCar",
                desc: "Reserve the rental car",
                phrases: &["reserve the car", "book the car", "book a car"],
            },
        ],
        slots: &[
            slot("pickup_city", "City where the car is picked up", Arch::City),
            slot("pickup_date", "Date of the car pickup", Arch::Day),
            slot("pickup_time", "Time of the car pickup", Arch::Time),
            kind("car_type", "Type of the car", &["compact", "suv", "sedan"]),
        ],
    },
];

const CITIES: &[&str] = &[
    "San Jose", "Campbell", "Fremont", "Sunnyvale", "Oakland", "Berkeley", "Los Angeles", "San Diego",
    "New York", "Seattle", "Portland", "Chicago", "Boston", "Denver", "Austin", "Palo Alto", "Santa Rosa",
    "Sacramento",
];
const DAYS: &[&str] = &[
    "Monday", "Tuesday", "Wednesday", "Thursday", "Friday", "Saturday", "Sunday", "tomorrow", "today",
    "March 3rd", "next Friday", "the 14th",
];
const TIMES: &[&str] = &["6 pm", "7 pm", "noon", "10 am", "8:30 pm", "11 am", "5:15 pm", "9 am"];
const COUNTS: &[&str] = &["1", "2", "3", "4"];
const PRICES: &[&str] = &["cheap", "moderate", "expensive"];

pub fn domain_names() -> Vec<&'static str> {
    DOMAINS.iter().map(|d| d.key).collect()
}

impl SlotTpl {
    fn values(&self) -> &'static [&'static str] {
        match self.arch {
            Arch::City => CITIES,
            Arch::Day => DAYS,
            Arch::Time => TIMES,
            Arch::Count => COUNTS,
            Arch::Price => PRICES,
            Arch::Kind => self.kinds,
        }
    }

    fn categorical(&self) -> bool {
        matches!(self.arch, Arch::Count | Arch::Price | Arch::Kind)
    }

    fn clauses(&self) -> &'static [&'static str] {
        match self.arch {
            Arch::City => &["in {v}", "located in {v}", "somewhere in {v}", "around {v}"],
            Arch::Day => &["on {v}", "for {v}", "on {v} if possible"],
            Arch::Time => &["at {v}", "around {v}", "starting at {v}"],
            Arch::Count => &["with {v} {u}", "for {v} {u}", "{v} {u}"],
            Arch::Price => &["something {v}", "in the {v} price range", "that is {v}"],
            Arch::Kind => &["a {v} {t}", "of the {v} kind", "preferably {v}"],
        }
    }

    fn question(&self, thing: &str) -> String {
        match self.arch {
            Arch::City => "which city are you interested in ?".into(),
            Arch::Day => "what date works for you ?".into(),
            Arch::Time => "what time do you prefer ?".into(),
            Arch::Count => format!("how many {} ?", self.unit),
            Arch::Price => "what price range do you want ?".into(),
            Arch::Kind => format!("what type of {thing} do you want ?"),
        }
    }
}

fn schema_of(d: &DomainTpl) -> Schema {
    Schema {
        service_name: d.service.into(),
        description: d.desc.into(),
        intents: d
            .intents
            .iter()
            .map(|i| Intent {
                name: i.name.into(),
                description: i.desc.into(),
            })
            .collect(),
        slots: d
            .slots
            .iter()
            .map(|s| Slot {
                name: s.name.into(),
                description: s.desc.into(),
                is_categorical: s.categorical(),
                possible_values: if s.categorical() {
                    s.values().iter().map(|v| v.to_string()).collect()
                } else {
                    Vec::new()
                },
            })
            .collect(),
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SynthSpec {
    pub domains: Vec<String>,
    /// Domains that appear only in the test split.
    pub unseen: Vec<String>,
    pub train_dialogues: usize,
    pub dev_dialogues: usize,
    pub test_dialogues: usize,
    /// Mean number of turns (both speakers) per dialogue.
    pub avg_turns: usize,
    /// Turn counts are drawn uniformly from `avg_turns ± turn_spread`.
    pub turn_spread: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            domains: vec!["homes".into(), "hotels".into(), "restaurants".into()],
            unseen: vec!["restaurants".into()],
            train_dialogues: 200,
            dev_dialogues: 40,
            test_dialogues: 60,
            avg_turns: 6,
            turn_spread: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SynthCorpus {
    pub train: Split,
    pub dev: Split,
    pub test: Split,
}

/// Utterance under construction; records character spans of inserted values.
struct Utt {
    text: String,
    chars: usize,
    spans: Vec<SlotSpan>,
}

impl Utt {
    fn new() -> Self {
        Utt {
            text: String::new(),
            chars: 0,
            spans: Vec::new(),
        }
    }

    fn push(&mut self, s: &str) {
        if !self.text.is_empty() && !s.is_empty() {
            self.text.push(' ');
            self.chars += 1;
        }
        self.text.push_str(s);
        self.chars += s.chars().count();
    }

    /// Append a template with `{v}` replaced by `value`, recording its span.
    fn push_clause(&mut self, tpl: &str, value: &str, slot: &str, unit: &str, thing: &str, record: bool) {
        let tpl = tpl.replace("{u}", unit).replace("{t}", thing);
        let (before, after) = tpl.split_once("{v}").expect("template has a value");
        self.push(before.trim_end());
        if !self.text.is_empty() {
            self.text.push(' ');
            self.chars += 1;
        }
        let start = self.chars;
        self.text.push_str(value);
        self.chars += value.chars().count();
        if record {
            self.spans.push(SlotSpan {
                slot: slot.into(),
                start,
                exclusive_end: self.chars,
            });
        }
        let after = after.trim();
        if !after.is_empty() {
            self.push(after);
        }
    }
}

fn validate(spec: &SynthSpec) -> Result<Vec<&'static DomainTpl>> {
    if spec.domains.is_empty() {
        return Err(Error::Config("synthetic spec names no domains".into()));
    }
    let mut out = Vec::new();
    for name in &spec.domains {
        let d = DOMAINS
            .iter()
            .find(|d| d.key == name.as_str())
            .ok_or_else(|| Error::Config(format!("unknown synthetic domain {name:?}; known: {:?}", domain_names())))?;
        if out.iter().any(|o: &&DomainTpl| o.key == d.key) {
            return Err(Error::Config(format!("domain {name:?} listed twice")));
        }
        out.push(d);
    }
    for u in &spec.unseen {
        if !spec.domains.contains(u) {
            return Err(Error::Config(format!("unseen domain {u:?} is not among the domains")));
        }
    }
    if spec.unseen.len() == spec.domains.len() {
        return Err(Error::Config("every domain is marked unseen".into()));
    }
    if spec.avg_turns == 0 {
        return Err(Error::Config("avg_turns must be at least 1".into()));
    }
    Ok(out)
}

/// Generate train, dev and test splits. Train and dev use only seen domains;
/// test cycles through all domains.
pub fn synth_corpus(spec: &SynthSpec, seed: u64) -> Result<SynthCorpus> {
    let domains = validate(spec)?;
    let seen: Vec<&DomainTpl> = domains
        .iter()
        .copied()
        .filter(|d| !spec.unseen.iter().any(|u| u == d.key))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let make = |prefix: usize, n: usize, pool: &[&DomainTpl], rng: &mut ChaCha8Rng| -> Split {
        let dialogues = (0..n)
            .map(|i| dialogue(pool[i % pool.len()], format!("{prefix}_{i:05}"), spec, rng))
            .collect();
        let schemas = pool.iter().map(|d| schema_of(d)).collect();
        Split { schemas, dialogues }
    };
    let train = make(1, spec.train_dialogues, &seen, &mut rng);
    let dev = make(2, spec.dev_dialogues, &seen, &mut rng);
    let test = make(3, spec.test_dialogues, &domains, &mut rng);
    Ok(SynthCorpus { train, dev, test })
}

fn dialogue(d: &DomainTpl, id: String, spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Dialogue {
    let lo = spec.avg_turns.saturating_sub(spec.turn_spread).max(1);
    let hi = spec.avg_turns + spec.turn_spread;
    let max_user = d.slots.len();
    let total = rng.gen_range(lo..=hi).min(2 * max_user);
    let user_turns = total.div_ceil(2);

    // slots informed per user turn: at least one each, at most two
    let mut order: Vec<usize> = (0..d.slots.len()).collect();
    order.shuffle(rng);
    let single = total == 1;
    let mut plan: Vec<Vec<usize>> = Vec::new();
    let mut next = 0;
    for u in 0..user_turns {
        let remaining_turns = user_turns - u - 1;
        let available = order.len() - next - remaining_turns;
        let cap = if single { 3 } else { 2 };
        let k = if available >= 2 && rng.gen_bool(if single { 0.5 } else { 0.35 }) {
            rng.gen_range(2..=cap.min(available))
        } else {
            1
        };
        plan.push(order[next..next + k].to_vec());
        next += k;
    }
    let switch_at = (user_turns >= 2 && rng.gen_bool(0.4)).then(|| rng.gen_range(1..user_turns));

    let mut turns = Vec::new();
    let mut state: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut values: BTreeMap<usize, &str> = BTreeMap::new();
    for (u, slots) in plan.iter().enumerate() {
        let intent = if switch_at.is_some_and(|s| u >= s) { 1 } else { 0 };
        let mut utt = Utt::new();
        if u == 0 {
            utt.push(["i want to", "i would like to", "can you help me", "please"].choose(rng).unwrap());
            utt.push(d.intents[0].phrases.choose(rng).unwrap());
        } else if switch_at == Some(u) {
            utt.push(["great .", "sounds good .", "ok ."].choose(rng).unwrap());
            utt.push(["now i want to", "i would like to", "please"].choose(rng).unwrap());
            utt.push(d.intents[1].phrases.choose(rng).unwrap());
        } else {
            utt.push(["yes ,", "ok ,", "i prefer", "make it", ""].choose(rng).unwrap());
        }
        for (k, &si) in slots.iter().enumerate() {
            let s = &d.slots[si];
            if k > 0 {
                utt.push(["and", ","].choose(rng).unwrap());
            }
            let v = *s.values().choose(rng).unwrap();
            let tpl = s.clauses().choose(rng).unwrap();
            utt.push_clause(tpl, v, s.name, s.unit, d.thing, !s.categorical());
            state.insert(s.name.into(), vec![v.into()]);
            values.insert(si, v);
        }
        utt.push([".", "please .", "?"].choose(rng).unwrap());
        turns.push(Turn {
            speaker: Speaker::User,
            utterance: utt.text,
            frames: vec![Frame {
                service: d.service.into(),
                slots: utt.spans,
                state: Some(DialogueState {
                    active_intent: d.intents[intent].name.into(),
                    requested_slots: Vec::new(),
                    slot_values: state.clone(),
                }),
            }],
        });
        if turns.len() >= total {
            break;
        }
        let mut sys = Utt::new();
        match plan.get(u + 1) {
            Some(next_slots) if rng.gen_bool(0.6) => sys.push(&d.slots[next_slots[0]].question(d.thing)),
            _ => {
                sys.push(&format!("i found {} options", rng.gen_range(2..9)));
                let city = values.iter().find(|(&si, _)| d.slots[si].arch == Arch::City);
                if let Some((&si, v)) = city {
                    sys.push_clause("in {v}", v, d.slots[si].name, "", d.thing, true);
                }
                sys.push(". anything else ?");
            }
        }
        turns.push(Turn {
            speaker: Speaker::System,
            utterance: sys.text,
            frames: vec![Frame {
                service: d.service.into(),
                slots: sys.spans,
                state: None,
            }],
        });
    }
    Dialogue {
        dialogue_id: id,
        services: vec![d.service.into()],
        turns,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::sgd::{prepare_examples, PrepareConfig};

    #[test]
    fn same_seed_same_corpus() {
        let spec = SynthSpec::default();
        assert_eq!(synth_corpus(&spec, 7).unwrap(), synth_corpus(&spec, 7).unwrap());
        assert_ne!(synth_corpus(&spec, 7).unwrap(), synth_corpus(&spec, 8).unwrap());
    }

    #[test]
    fn unseen_domain_absent_from_training() {
        let c = synth_corpus(&SynthSpec::default(), 3).unwrap();
        assert!(c.train.dialogues.iter().all(|d| d.services[0] != "Restaurants_1"));
        assert!(c.train.schemas.iter().all(|s| s.service_name != "Restaurants_1"));
        assert!(c.test.dialogues.iter().any(|d| d.services[0] == "Restaurants_1"));
    }

    #[test]
    fn mean_turns_near_average() {
        let c = synth_corpus(&SynthSpec::default(), 11).unwrap();
        let mean = c.train.num_turns() as f64 / c.train.dialogues.len() as f64;
        assert!((mean - 6.0).abs() <= 0.6, "{mean}");
    }

    #[test]
    fn spans_point_at_values() {
        let c = synth_corpus(&SynthSpec::default(), 5).unwrap();
        for d in &c.train.dialogues {
            for t in &d.turns {
                let chars: Vec<char> = t.utterance.chars().collect();
                for f in &t.frames {
                    for s in &f.slots {
                        let text: String = chars[s.start..s.exclusive_end].iter().collect();
                        assert!(!text.is_empty());
                        if let Some(st) = &f.state {
                            assert_eq!(st.slot_values[&s.slot][0], text);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn generated_examples_align() {
        let c = synth_corpus(&SynthSpec::default(), 9).unwrap();
        let p = prepare_examples(&c.train, &PrepareConfig::default()).unwrap();
        assert!(p.examples.len() >= 500, "{}", p.examples.len());
        assert!(p.skipped * 20 <= p.examples.len(), "skipped {}", p.skipped);
    }

    #[test]
    fn bad_specs_are_config_errors() {
        let mut s = SynthSpec::default();
        s.domains.push("spaceships".into());
        assert!(matches!(synth_corpus(&s, 1), Err(Error::Config(_))));
        let s = SynthSpec {
            unseen: vec!["homes".into(), "hotels".into(), "restaurants".into()],
            ..SynthSpec::default()
        };
        assert!(matches!(synth_corpus(&s, 1), Err(Error::Config(_))));
    }
}
