use std::collections::HashMap;

use pointer_dst::corpus::{build_encoder_input, linearize_state, EncoderInput, Pointer, SlotValue, StateFrame, Unalignable, Vocab};
use pointer_dst::encoders::{EncoderKind, SchemaCache};
use pointer_dst::model::{KeySpace, Model, ModelConfig, OutItem, Variant};
use pointer_dst::schema::{parse_schema, ElementTable, Schema};
use pointer_dst::tensor::{grad_check, Graph, Mode, ParamStore};

fn schemas() -> Vec<Schema> {
    parse_schema(include_str!("data/schema_fixture.json")).unwrap()
}

fn tiny_config() -> ModelConfig {
    ModelConfig {
        hidden: 8,
        layers: 1,
        heads: 2,
        max_len: 24,
        dropout: 0.0,
        beam_size: 3,
        decode_max_len: 12,
        ..ModelConfig::default()
    }
}

struct Fixture {
    table: ElementTable,
    input: EncoderInput,
    frame: StateFrame,
    target: Vec<Pointer>,
    vocab: Vocab,
    keys: KeySpace,
}

fn fixture() -> Fixture {
    let s = schemas();
    let table = ElementTable::build(&[&s[0]], false);
    let input = build_encoder_input("find a home in berkeley with laundry", &["which city ?"], 12).unwrap();
    let mut frame = StateFrame {
        intent: table.intent("Homes", "FindHomeByArea"),
        ..Default::default()
    };
    frame.slots.insert(table.slot("Homes", "area").unwrap(), SlotValue::Text("berkeley".into()));
    let laundry = table.slot("Homes", "in_unit_laundry").unwrap();
    frame.slots.insert(laundry, SlotValue::Categorical(table.find_value(laundry, "True").unwrap()));
    let target = linearize_state(&frame, &input, &table, Unalignable::Error).unwrap();
    let mut words: Vec<&str> = input.tokens.iter().map(String::as_str).collect();
    for e in table.elements() {
        words.extend(e.pair.first.iter().map(String::as_str));
        words.extend(e.pair.second.iter().map(String::as_str));
    }
    let vocab = Vocab::build(words);
    let keys = KeySpace::from_tables([&table]);
    Fixture {
        table,
        input,
        frame,
        target,
        vocab,
        keys,
    }
}

fn build(variant: Variant, f: &Fixture) -> (Model, ParamStore<f64>) {
    let mut cfg = tiny_config();
    variant.apply(&mut cfg);
    let mut store = ParamStore::new();
    let m = Model::build(cfg, f.vocab.clone(), f.keys.clone(), &mut store, 11).unwrap();
    (m, store)
}

#[test]
fn full_loss_gradients_match_finite_differences() {
    let f = fixture();
    assert!(f.input.len() <= 12 && f.table.len() <= 10);
    for v in Variant::ALL {
        let (model, store) = build(v, &f);
        let report = grad_check(
            &store,
            |g| {
                let schema = if model.seqlabel.is_some() {
                    None
                } else {
                    Some(model.table_reps(g, &f.table, &mut HashMap::new())?)
                };
                model.example_loss(g, &f.input, &f.table, &f.target, &f.frame, schema.as_ref())
            },
            1e-5,
            400,
            3,
        )
        .unwrap();
        assert!(
            report.max_rel_error < 1e-4,
            "{}: {:?} worst {:?}",
            v.name(),
            report.max_rel_error,
            report.worst
        );
    }
}

#[test]
fn every_parameter_group_receives_gradient() {
    let f = fixture();
    let (model, store) = build(Variant::Token, &f);
    let mut g = Graph::new(&store, Mode::Train, 1);
    let schema = model.table_reps(&mut g, &f.table, &mut HashMap::new()).unwrap();
    let loss = model
        .example_loss(&mut g, &f.input, &f.table, &f.target, &f.frame, Some(&schema))
        .unwrap();
    g.backward(loss).unwrap();
    let mut grads = pointer_dst::tensor::Gradients::zeros_like(&store);
    g.accumulate_param_grads(&mut grads);
    for prefix in ["utt.", "sch.", "att.", "dec."] {
        let touched = store
            .ids()
            .filter(|&id| store.name(id).starts_with(prefix))
            .any(|id| grads.max_abs(id) > 0.0);
        assert!(touched, "{prefix} got no gradient");
    }
}

#[test]
fn schema_rows_are_permutation_equivariant_and_identical_for_identical_pairs() {
    let f = fixture();
    let (model, store) = build(Variant::Overall, &f);
    let enc = model.sch.as_ref().unwrap();
    let pairs: Vec<_> = f.table.elements().iter().map(|e| &e.pair).collect();
    let mut rev = pairs.clone();
    rev.reverse();
    let mut g = Graph::new(&store, Mode::Eval, 0);
    let (e1, _) = enc.encode_pairs(&mut g, &f.vocab, &pairs, false, 256).unwrap();
    let (e2, _) = enc.encode_pairs(&mut g, &f.vocab, &rev, false, 256).unwrap();
    // chunking must not change the result either
    let (e3, _) = enc.encode_pairs(&mut g, &f.vocab, &pairs, false, 1).unwrap();
    let (a, b, c) = (g.value(e1), g.value(e2), g.value(e3));
    let m = pairs.len();
    assert_eq!(a.shape(), [m, 8]);
    for i in 0..m {
        for k in 0..8 {
            assert!((a.get(i, k) - b.get(m - 1 - i, k)).abs() < 1e-12);
            assert!((a.get(i, k) - c.get(i, k)).abs() < 1e-12);
        }
    }
    let (d, _) = enc.encode_pairs(&mut g, &f.vocab, &[pairs[0], pairs[0]], false, 256).unwrap();
    let d = g.value(d);
    assert_eq!(d.row(0), d.row(1));
}

#[test]
fn encoders_are_deterministic_and_shaped() {
    let f = fixture();
    for kind in [EncoderKind::SelfAttention, EncoderKind::BiLstm] {
        let cfg = ModelConfig {
            encoder_kind: kind,
            ..tiny_config()
        };
        let mut store = ParamStore::<f64>::new();
        let model = Model::build(cfg, f.vocab.clone(), f.keys.clone(), &mut store, 5).unwrap();
        let mut g = Graph::new(&store, Mode::Eval, 0);
        let d1 = model.utt.encode_utterance(&mut g, &f.vocab, &f.input).unwrap();
        let d2 = model.utt.encode_utterance(&mut g, &f.vocab, &f.input).unwrap();
        assert_eq!(g.shape(d1), [f.input.len(), 8]);
        assert_eq!(g.value(d1), g.value(d2));
    }
}

#[test]
fn schema_cache_reuses_and_invalidates() {
    let f = fixture();
    let (model, mut store) = build(Variant::Overall, &f);
    let mut cache = SchemaCache::new();
    let p1 = model.predict(&store, &mut cache, &f.input, &f.table).unwrap();
    let p2 = model.predict(&store, &mut cache, &f.input, &f.table).unwrap();
    assert_eq!(cache.encode_calls(), 1);
    assert_eq!(p1, p2);
    let key = cache_key(&f.table);
    assert!(cache.get(&key, &store).unwrap().is_some());
    let id = store.ids().next().unwrap();
    store.get_mut(id).data_mut()[0] += 0.5;
    assert!(cache.get(&key, &store).is_err());
    model.predict(&store, &mut cache, &f.input, &f.table).unwrap();
    assert_eq!(cache.encode_calls(), 2);
}

fn cache_key(table: &ElementTable) -> String {
    format!("{}#{}", table.services()[0], table.len())
}

#[test]
fn unseen_schema_decodes_to_valid_pointers() {
    let f = fixture();
    let (model, store) = build(Variant::Overall, &f);
    let s = schemas();
    let hotels = ElementTable::build(&[&s[1]], false);
    let input = build_encoder_input("a hostel in paris please", &[], 12).unwrap();
    let mut cache = SchemaCache::new();
    let p = model.predict(&store, &mut cache, &input, &hotels).unwrap();
    for ptr in &p.pointers {
        match *ptr {
            Pointer::Schema(i) => assert!(i < hotels.len()),
            Pointer::Token(t) => assert!(t < input.len()),
            Pointer::Marker(_) => {}
        }
    }
}

#[test]
fn constrained_decoding_is_well_formed() {
    let f = fixture();
    let mut cfg = tiny_config();
    cfg.constrained = true;
    let mut store = ParamStore::<f64>::new();
    let model = Model::build(cfg, f.vocab.clone(), f.keys.clone(), &mut store, 9).unwrap();
    let p = model.predict(&store, &mut SchemaCache::new(), &f.input, &f.table).unwrap();
    assert!(pointer_dst::corpus::is_well_formed(&p.pointers, &f.input, &f.table), "{:?}", p.pointers);
    assert_eq!(p.malformed, 0);
}

#[test]
fn seqlabel_labels_cover_every_token() {
    let f = fixture();
    let (model, store) = build(Variant::SeqLabel, &f);
    let single = build_encoder_input("find a home in berkeley with laundry", &[], 12).unwrap();
    let p = model.predict(&store, &mut SchemaCache::new(), &single, &f.table).unwrap();
    assert_eq!(p.labels.unwrap().len(), single.len() - 2);
    let (gold, intent) = model.seqlabel_targets(&single, &f.frame, &f.table);
    assert_eq!(gold.len(), single.len() - 2);
    assert!(intent > 0);
    let names: Vec<String> = gold.iter().map(|&l| model.label_name(l)).collect();
    assert_eq!(names[4], "B-Homes/slot/area");
    let frame = model.frame_from_labels(&single, &f.table, &names, intent);
    assert_eq!(frame.intent, f.frame.intent);
    assert_eq!(
        frame.slots.get(&f.table.slot("Homes", "area").unwrap()),
        Some(&SlotValue::Text("berkeley".into()))
    );
}

#[test]
fn vocabulary_output_maps_back_to_pointers() {
    let f = fixture();
    let (model, _) = build(Variant::WoPointer, &f);
    let ids = model.target_ids(&f.target, &f.input, &f.table).unwrap();
    let back = model.ids_to_pointers(&ids[1..], &f.input, &f.table);
    assert_eq!(&back[..], &f.target[1..]);
    let word = model.out_id(OutItem::Word(f.vocab.id("paris")));
    let mapped = model.ids_to_pointers(&[word], &f.input, &f.table);
    assert!(matches!(mapped[0], Pointer::Schema(i) if i >= f.table.len()));
}

#[test]
fn variant_names_round_trip_and_configs_validate() {
    for v in Variant::ALL {
        assert_eq!(Variant::parse(v.name()).unwrap(), v);
        let mut cfg = ModelConfig::default();
        v.apply(&mut cfg);
        cfg.validate().unwrap();
    }
    assert!(Variant::parse("bogus").is_err());
    let cfg = ModelConfig {
        seqlabel: true,
        ..ModelConfig::default()
    };
    assert!(cfg.validate().is_err());
}

#[test]
fn f32_and_f64_stores_agree() {
    let f = fixture();
    let (model, store) = build(Variant::Overall, &f);
    let s32 = store.cast::<f32>();
    let loss = |mut g: Graph<'_, f64>| {
        let schema = model.table_reps(&mut g, &f.table, &mut HashMap::new()).unwrap();
        let l = model.example_loss(&mut g, &f.input, &f.table, &f.target, &f.frame, Some(&schema)).unwrap();
        g.value(l).item()
    };
    let a = loss(Graph::new(&store, Mode::Eval, 0));
    let mut g = Graph::new(&s32, Mode::Eval, 0);
    let schema = model.table_reps(&mut g, &f.table, &mut HashMap::new()).unwrap();
    let l = model.example_loss(&mut g, &f.input, &f.table, &f.target, &f.frame, Some(&schema)).unwrap();
    let b = g.value(l).item() as f64;
    assert!((a - b).abs() < 1e-4 * a.abs().max(1.0));
}
