use std::path::Path;

use pointer_dst::corpus::{load_split, prepare_examples, PrepareConfig, SlotValue, Speaker};
use pointer_dst::schema::ElementKind;
use pointer_dst::tensor::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, ParamStore, Tensor};

fn sgd_dir() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/sgd"))
}

#[test]
fn genuine_sgd_excerpt_parses_as_is() {
    let split = load_split(sgd_dir()).unwrap();
    assert_eq!(split.schemas.len(), 1);
    let s = &split.schemas[0];
    assert_eq!(s.service_name, "Restaurants_1");
    assert_eq!(s.intents.len(), 2);
    assert_eq!(s.slots.len(), 11);
    assert_eq!(s.slot("price_range").unwrap().possible_values.len(), 4);

    assert_eq!(split.dialogues.len(), 1);
    let d = &split.dialogues[0];
    assert_eq!(d.turns.len(), 6);
    assert_eq!(d.turns[1].speaker, Speaker::System);
    let spans = &d.turns[0].frames[0].slots;
    let text: String = d.turns[0].utterance.chars().skip(spans[0].start).take(spans[0].exclusive_end - spans[0].start).collect();
    assert_eq!(text, "March 1st");
}

#[test]
fn genuine_sgd_excerpt_yields_examples() {
    let split = load_split(sgd_dir()).unwrap();
    let data = prepare_examples(&split, &PrepareConfig::default()).unwrap();
    assert_eq!(data.examples.len(), 3);
    assert_eq!(data.skipped, 0);
    let last = data.examples.last().unwrap();
    let table = data.table_of(last);
    assert_eq!(last.frame.intent, table.intent("Restaurants_1", "ReserveRestaurant"));
    assert_eq!(last.frame.slots.len(), 5);
    let party = table.slot("Restaurants_1", "party_size").unwrap();
    let SlotValue::Categorical(v) = last.frame.slots[&party] else {
        panic!("party_size should be categorical")
    };
    assert!(table.is_kind(v, ElementKind::Value));
    assert_eq!(last.frame.slots[&table.slot("Restaurants_1", "city").unwrap()], SlotValue::Text("san jose".into()));
    assert!(data.examples.iter().all(|e| !e.flagged));
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let mut store = ParamStore::<f32>::new();
    store.add("a", Tensor::from_vec(2, 3, vec![0.1, -0.0, f32::MIN_POSITIVE, 1e-40, 3.5, f32::MAX]).unwrap());
    store.add("b.c", Tensor::from_vec(1, 1, vec![-7.25]).unwrap());
    let recs: Vec<(String, Tensor<f32>)> = store.iter().map(|(n, t)| (n.to_string(), t.clone())).collect();
    let bytes = encode_checkpoint(&recs);
    let back = decode_checkpoint::<f32>(&bytes).unwrap();
    assert_eq!(encode_checkpoint(&back), bytes);
    for ((n1, t1), (n2, t2)) in recs.iter().zip(&back) {
        assert_eq!(n1, n2);
        let bits = |t: &Tensor<f32>| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(t1), bits(t2));
    }
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("x.ckpt");
    write_checkpoint(&p, &recs).unwrap();
    assert_eq!(std::fs::read(&p).unwrap(), bytes);
    assert_eq!(read_checkpoint::<f32>(&p).unwrap(), back);
}
