use std::path::Path;
use std::process::{Command, Output};

fn imgdial(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_imgdial")).args(args).output().expect("spawn imgdial")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn layout_lists_every_belief_entry() {
    let o = imgdial(&["layout"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).lines().count(), 23);
    let o = imgdial(&["layout", "--include-turn"]);
    assert_eq!(stdout(&o).lines().count(), 24);
}

#[test]
fn eval_prints_the_csv_schema() {
    let o = imgdial(&["eval", "--ser", "0", "--eval-dialogues", "20", "--check"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("policy,ser,turn,reward,goal,success"));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row[0], "rule");
    assert_eq!(row[1], "0.0");
    assert_eq!(row[5], "1.0000");
}

#[test]
fn check_violation_exits_with_two() {
    // Five turns cannot finish three goals.
    let o = imgdial(&["eval", "--ser", "0", "--eval-dialogues", "10", "--max-turns", "5", "--check"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("check failed"));
}

#[test]
fn bad_arguments_exit_with_one() {
    let o = imgdial(&["eval", "--policy", "dqn"]);
    assert_eq!(o.status.code(), Some(1));
    let o = imgdial(&["eval", "--reward", "bogus"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(&cfg, r#"{"ser": 0.5, "eval_dialogues": 10}"#).unwrap();
    let o = imgdial(&["eval", "--config", cfg.to_str().unwrap(), "--ser", "0"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("rule,0.0,"));
}

#[test]
fn dataset_train_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("scenes");
    let p = |x: &Path| x.to_str().unwrap().to_string();
    let o = imgdial(&["dataset", "generate", "--out", &p(&ds)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = imgdial(&["dataset", "inspect", &p(&ds)]);
    assert!(stdout(&o).starts_with("scenes: "));

    let ckpt = dir.path().join("dqn.bin");
    let curve = dir.path().join("curve.csv");
    let o = imgdial(&[
        "train", "--dataset", &p(&ds), "--train-dialogues", "300", "--curve-window", "100",
        "--out", &p(&ckpt), "--curve", &p(&curve),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read_to_string(&curve).unwrap().lines().count(), 4);

    let transcripts = dir.path().join("t.log");
    let o = imgdial(&[
        "eval", "--dataset", &p(&ds), "--policy", "dqn", "--checkpoint", &p(&ckpt),
        "--eval-dialogues", "5", "--transcripts", &p(&transcripts),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).lines().nth(1).unwrap().starts_with("dqn,"));
    assert_eq!(std::fs::read_to_string(&transcripts).unwrap().matches("# dialogue ").count(), 5);
}

#[test]
fn sweep_writes_csv_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep.csv");
    let plot = dir.path().join("sweep.svg");
    let o = imgdial(&[
        "sweep", "--sers", "0,0.5", "--train-dialogues", "200", "--eval-dialogues", "10",
        "--out", out.to_str().unwrap(), "--plot", plot.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(&out).unwrap();
    assert_eq!(csv.lines().count(), 5);
    assert!(csv.contains("\nrule,0.5,") && csv.contains("\ndqn,0.0,"));
    assert!(std::fs::read_to_string(&plot).unwrap().starts_with("<svg"));
}
