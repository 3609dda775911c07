mod common;

#[test]
fn hand_built_cases_match() {
    assert_eq!(common::metric_cases().len(), 20);
    let bad = common::metric_mismatches();
    assert!(bad.is_empty(), "{}", bad.join("\n"));
}
