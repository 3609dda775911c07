#![allow(dead_code)]

use pointer_dst::metrics::{intent_accuracy, joint_goal_accuracy, slot_f1, MatchMode, NamedFrame};

pub enum Case {
    Frames {
        pred: Vec<NamedFrame>,
        gold: Vec<NamedFrame>,
        intent: f64,
        exact: f64,
        fuzzy: f64,
    },
    Labels {
        pred: Vec<Vec<&'static str>>,
        gold: Vec<Vec<&'static str>>,
        f1: f64,
    },
}

fn f() -> NamedFrame {
    NamedFrame::default()
}

fn find(city: &str) -> NamedFrame {
    f().with_intent("Restaurants/FindRestaurants").slot("Restaurants/city", city, false)
}

/// Hand-built metric cases with values worked out on paper.
pub fn metric_cases() -> Vec<(&'static str, Case)> {
    use Case::*;
    let full = || {
        find("san jose")
            .slot("Restaurants/price_range", "moderate", true)
            .slot("Restaurants/time", "5 pm", false)
    };
    vec![
        ("identical turn", Frames { pred: vec![full()], gold: vec![full()], intent: 1.0, exact: 1.0, fuzzy: 1.0 }),
        (
            "wrong intent, right slots",
            Frames {
                pred: vec![full().with_intent("Restaurants/ReserveRestaurant")],
                gold: vec![full()],
                intent: 0.0,
                exact: 1.0,
                fuzzy: 1.0,
            },
        ),
        (
            "missing slot",
            Frames { pred: vec![find("san jose")], gold: vec![full()], intent: 1.0, exact: 0.0, fuzzy: 0.0 },
        ),
        (
            "extra slot",
            Frames {
                pred: vec![full().slot("Restaurants/cuisine", "thai", false)],
                gold: vec![full()],
                intent: 1.0,
                exact: 0.0,
                fuzzy: 0.0,
            },
        ),
        (
            // 1 - 1/8 = 0.875 < 0.95
            "short typo",
            Frames { pred: vec![find("campbel")], gold: vec![find("campbell")], intent: 1.0, exact: 0.0, fuzzy: 0.0 },
        ),
        (
            "case and spacing",
            Frames { pred: vec![find("San  Jose")], gold: vec![find("san jose")], intent: 1.0, exact: 1.0, fuzzy: 1.0 },
        ),
        (
            // 1 - 1/22 = 0.9545 >= 0.95
            "long typo",
            Frames {
                pred: vec![find("the cheesecake factori")],
                gold: vec![find("the cheesecake factory")],
                intent: 1.0,
                exact: 0.0,
                fuzzy: 1.0,
            },
        ),
        (
            "categorical near miss",
            Frames {
                pred: vec![f().slot("Hotels/star_rating", "4", true)],
                gold: vec![f().slot("Hotels/star_rating", "4.5", true)],
                intent: 1.0,
                exact: 0.0,
                fuzzy: 0.0,
            },
        ),
        (
            "dontcare",
            Frames {
                pred: vec![find("dontcare"), find("dontcare")],
                gold: vec![find("dontcare"), find("san jose")],
                intent: 1.0,
                exact: 0.5,
                fuzzy: 0.5,
            },
        ),
        (
            "four turns",
            Frames {
                pred: vec![full(), find("campbel"), find("los gatos").with_intent("X/Y"), find("the cheesecake factori")],
                gold: vec![full(), find("campbell"), find("los gatos"), find("the cheesecake factory")],
                intent: 0.75,
                exact: 0.5,
                fuzzy: 0.75,
            },
        ),
        ("empty frames", Frames { pred: vec![f()], gold: vec![f()], intent: 1.0, exact: 1.0, fuzzy: 1.0 }),
        (
            "empty prediction",
            Frames { pred: vec![f()], gold: vec![find("san jose")], intent: 0.0, exact: 0.0, fuzzy: 0.0 },
        ),
        (
            "punctuation",
            Frames { pred: vec![find("san jose .")], gold: vec![find("san jose")], intent: 1.0, exact: 1.0, fuzzy: 1.0 },
        ),
        (
            "categorical flag differs",
            Frames {
                pred: vec![f().slot("Restaurants/price_range", "moderate", false)],
                gold: vec![f().slot("Restaurants/price_range", "moderate", true)],
                intent: 1.0,
                exact: 0.0,
                fuzzy: 0.0,
            },
        ),
        (
            "perfect span",
            Labels { pred: vec![vec!["O", "B-city", "I-city"]], gold: vec![vec!["O", "B-city", "I-city"]], f1: 1.0 },
        ),
        (
            "wrong label",
            Labels { pred: vec![vec!["B-date", "O"]], gold: vec![vec!["B-city", "O"]], f1: 0.0 },
        ),
        (
            // P = 1/2, R = 1/2
            "one boundary error",
            Labels {
                pred: vec![vec!["B-city", "O", "B-time", "O"]],
                gold: vec![vec!["B-city", "O", "B-time", "I-time"]],
                f1: 0.5,
            },
        ),
        (
            "dangling inside tag opens a span",
            Labels { pred: vec![vec!["I-city", "O"]], gold: vec![vec!["B-city", "O"]], f1: 1.0 },
        ),
        (
            // P = 2/2, R = 2/3, F = 0.8
            "two sentences",
            Labels {
                pred: vec![vec!["B-city", "O"], vec!["O", "B-time", "I-time"]],
                gold: vec![vec!["B-city", "B-date"], vec!["O", "B-time", "I-time"]],
                f1: 0.8,
            },
        ),
        ("no spans", Labels { pred: vec![vec!["O", "O"]], gold: vec![vec!["O", "O"]], f1: 0.0 }),
    ]
}

fn owned(v: &[Vec<&str>]) -> Vec<Vec<String>> {
    v.iter().map(|s| s.iter().map(|x| x.to_string()).collect()).collect()
}

/// Mismatches between computed and hand-computed values, one line each.
pub fn metric_mismatches() -> Vec<String> {
    let mut bad = Vec::new();
    let mut expect = |name: &str, what: &str, got: f64, want: f64| {
        if (got - want).abs() > 1e-12 {
            bad.push(format!("{name}: {what} {got} != {want}"));
        }
    };
    for (name, case) in metric_cases() {
        match case {
            Case::Frames { pred, gold, intent, exact, fuzzy } => {
                expect(name, "intent", intent_accuracy(&pred, &gold).unwrap(), intent);
                expect(name, "exact", joint_goal_accuracy(&pred, &gold, MatchMode::Exact).unwrap(), exact);
                expect(name, "fuzzy", joint_goal_accuracy(&pred, &gold, MatchMode::Fuzzy(0.95)).unwrap(), fuzzy);
            }
            Case::Labels { pred, gold, f1 } => {
                expect(name, "f1", slot_f1(&owned(&pred), &owned(&gold)).unwrap(), f1);
            }
        }
    }
    expect("fuzzy_score", "campbel", pointer_dst::metrics::fuzzy_score("campbel", "campbell"), 0.875);
    bad
}
