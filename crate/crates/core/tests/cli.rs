use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fairfl::results::ResultFile;

fn fairfl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fairfl"))
        .args(args)
        .output()
        .unwrap()
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("configs")
        .join(name)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn invalid_config_exits_1_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[experiment]\nselection_fraction = 1.5\n").unwrap();
    let out = fairfl(&[
        "run",
        "--config",
        s(&cfg),
        "--out",
        s(&dir.path().join("r.jsonl")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("selection_fraction"));
}

#[test]
fn bad_arguments_exit_1_and_help_exits_0() {
    assert_eq!(fairfl(&["run", "--nope"]).status.code(), Some(1));
    assert_eq!(fairfl(&["--help"]).status.code(), Some(0));
}

#[test]
fn unreadable_data_is_a_runtime_failure() {
    let out = fairfl(&["stats", "--data", "/nonexistent/data.csv"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn rerun_from_result_header_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("a.jsonl");
    let second = dir.path().join("b.jsonl");
    let out = fairfl(&[
        "--seed",
        "3",
        "run",
        "--config",
        s(&config("quick.toml")),
        "--out",
        s(&first),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stdout).contains("final accuracy"));
    let out = fairfl(&[
        "--threads",
        "1",
        "run",
        "--config",
        s(&first),
        "--out",
        s(&second),
    ]);
    assert!(out.status.success());

    assert_eq!(
        std::fs::read(&first).unwrap(),
        std::fs::read(&second).unwrap()
    );
    let file = ResultFile::load(&first).unwrap();
    assert_eq!(file.header.seed, 3);
    assert_eq!(file.rounds.len(), 4);
    assert_eq!(file.summary.unwrap().attack_rounds, 2);
}

#[test]
fn gen_data_then_stats() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("d.csv");
    let out = fairfl(&[
        "gen-data",
        "--config",
        s(&config("synth.toml")),
        "--out",
        s(&csv),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let data = fairfl::data::load_csv(&csv).unwrap();
    assert_eq!(data.len(), 5000);

    let out = fairfl(&["stats", "--data", s(&csv)]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    let gap: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("label rate gap"))
        .unwrap()
        .trim()
        .parse()
        .unwrap();
    assert!(gap.abs() >= 0.1, "gap {gap}");
}

#[test]
fn gamma_sweep_writes_one_file_per_value_and_a_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = fairfl(&[
        "sweep",
        "--config",
        s(&config("quick.toml")),
        "--param",
        "gamma",
        "--values",
        "1,5,10,20",
        "--out-dir",
        s(dir.path()),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for v in ["1", "5", "10", "20"] {
        let file = ResultFile::load(dir.path().join(format!("gamma_{v}.jsonl"))).unwrap();
        let gamma = file.header.scenario.experiment.attack.unwrap().gamma;
        assert_eq!(gamma, v.parse::<f64>().unwrap());
    }
    let table = std::fs::read_to_string(dir.path().join("gamma_summary.tsv")).unwrap();
    assert_eq!(table.lines().count(), 5);
}

#[test]
fn sweep_with_an_invalid_value_reports_it_and_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = fairfl(&[
        "sweep",
        "--config",
        s(&config("quick.toml")),
        "--param",
        "aggregator",
        "--values",
        "fedavg,nonsense",
        "--out-dir",
        s(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nonsense"));
    assert!(dir.path().join("aggregator_fedavg.jsonl").exists());
}
