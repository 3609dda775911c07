use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use pointer_dst::metrics::{DomainTag, EvalReport};
use pointer_dst::trainer::TrainReport;

fn pdst(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pdst"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("pdst runs")
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

const TINY: &str = "\
synth_domains = homes,hotels,restaurants
synth_unseen = restaurants
synth_train = 8
synth_dev = 2
synth_test = 6
hidden = 16
layers = 1
heads = 2
epochs = 2
beam = 2
decode_max_len = 16
";

#[test]
fn missing_config_exits_2_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let o = pdst(&["train", "--config", "nope.cfg"], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", text(&o));
    assert!(!dir.path().join("runs").exists());
}

#[test]
fn bad_config_values_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.cfg"), "hidden = lots\n").unwrap();
    let o = pdst(&["train", "--config", "bad.cfg"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o).contains("hidden"));
    let o = pdst(&["train", "--attention", "sideways"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn ablate_rejects_unknown_or_empty_variant_lists() {
    let dir = tempfile::tempdir().unwrap();
    let o = pdst(&["ablate", "--variants", "overall,w/oMagic"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let o = pdst(&["ablate", "--variants", ""], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn gold_replay_scores_one_and_marks_unseen_domains() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("tiny.cfg"), TINY).unwrap();
    let o = pdst(
        &["eval", "--config", "tiny.cfg", "--gold-replay", "--per-domain", "--split-categorical", "--out", "rep"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    let report = EvalReport::from_json(&fs::read_to_string(dir.path().join("rep/eval_report.json")).unwrap()).unwrap();
    assert_eq!(report.joint_goal_accuracy, 1.0);
    assert_eq!(report.intent_accuracy, 1.0);
    assert!(report.per_domain.iter().any(|r| r.tag == DomainTag::Unseen && r.domain == "Restaurants"));
    assert_eq!(report.per_domain.iter().map(|r| r.turns).sum::<usize>(), report.turns);
    assert!(text(&o).contains("Restaurants*"));
    assert!(report.categorical_split.is_some());
}

#[test]
fn synth_writes_sgd_layout() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("tiny.cfg"), TINY).unwrap();
    let o = pdst(&["synth", "--config", "tiny.cfg", "--out", "data"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    for split in ["train", "dev", "test"] {
        assert!(dir.path().join("data").join(split).join("schema.json").exists());
    }
    let o = pdst(&["eval", "--gold-replay", "--data", "data", "--out", "rep"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
}

#[test]
fn train_eval_infer_round_trip_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("tiny.cfg"), TINY).unwrap();
    let o = pdst(&["train", "--config", "tiny.cfg", "--seed", "3"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    let runs: Vec<_> = fs::read_dir(dir.path().join("runs")).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(runs.len(), 1);
    let run = &runs[0];
    assert!(run.file_name().unwrap().to_str().unwrap().ends_with("-s3"));
    for f in ["config.txt", "vocab.txt", "keys.txt", "last.ckpt", "best.ckpt", "loss_trace.txt", "train_report.json"] {
        assert!(run.join(f).exists(), "missing {f}");
    }
    let first = fs::read_to_string(run.join("train_report.json")).unwrap();
    let report = TrainReport::from_json(&first).unwrap();
    assert_eq!(report.epochs.len(), 2);
    assert!(!report.loss_trace.is_empty());

    // the snapshot alone reproduces the run
    let again = tempfile::tempdir().unwrap();
    fs::copy(run.join("config.txt"), again.path().join("snap.cfg")).unwrap();
    let o = pdst(&["train", "--config", "snap.cfg"], again.path());
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    let rerun = again.path().join("runs").join(run.file_name().unwrap());
    assert_eq!(fs::read_to_string(rerun.join("train_report.json")).unwrap(), first);
    assert_eq!(fs::read(rerun.join("last.ckpt")).unwrap(), fs::read(run.join("last.ckpt")).unwrap());

    let run_s = run.to_str().unwrap();
    let o = pdst(&["eval", "--checkpoint", run_s, "--per-domain", "--beam", "1"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    let rep = EvalReport::from_json(&fs::read_to_string(run.join("eval_report.json")).unwrap()).unwrap();
    assert!(rep.turns > 0);
    assert!((0.0..=1.0).contains(&rep.joint_goal_accuracy));

    fs::write(dir.path().join("schema.json"), include_str!("../../core/tests/data/schema_fixture.json")).unwrap();
    let o = pdst(
        &["infer", "--checkpoint", run_s, "--schema", "schema.json", "--services", "Hotels", "--utterance", "a hostel in paris"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    assert!(text(&o).contains("pointers"));

    // a checkpoint from a different architecture is rejected
    fs::write(run.join("config.txt"), fs::read_to_string(run.join("config.txt")).unwrap().replace("hidden = 16", "hidden = 8")).unwrap();
    let o = pdst(&["eval", "--checkpoint", run_s], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", text(&o));
}

#[test]
fn gradcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = pdst(&["gradcheck", "--coords", "60"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    assert!(text(&o).contains("PASS"));
}

#[test]
fn ablate_emits_one_row_per_variant() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("tiny.cfg"), format!("{TINY}epochs = 1\n")).unwrap();
    let o = pdst(&["ablate", "--config", "tiny.cfg", "--variants", "overall,w/oPointer"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.lines().any(|l| l.starts_with("overall ")));
    assert!(out.lines().any(|l| l.starts_with("w/oPointer ")));
}
