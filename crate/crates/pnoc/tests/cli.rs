use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = r#"
[synthetic]
n_train = 16
n_eval = 6

[train]
epochs = 2
batch_size = 8

[c2amh]
epochs = 2

[refine]
steps = 8
"#;

fn pnoc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pnoc")).args(args).env("RUST_LOG", "warn").output().expect("binary runs")
}

fn tiny_config(dir: &Path, extra: &str) -> PathBuf {
    let p = dir.join("cfg.toml");
    fs::write(&p, format!("{TINY}{extra}")).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn files_under(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn help_lists_config_keys() {
    let o = pnoc(&["--help"]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    for key in ["train.epochs", "refine.beta", "c2amh.delta_sal", "pipeline.stages"] {
        assert!(text.contains(key), "missing {key}");
    }
}

#[test]
fn exit_codes_follow_the_error_kind() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[train]\nepochz = 3\n").unwrap();
    assert_eq!(pnoc(&["pipeline", "--config", s(&bad)]).status.code(), Some(2));
    fs::write(&bad, "[train]\nepochs = 0\n").unwrap();
    assert_eq!(pnoc(&["pipeline", "--config", s(&bad)]).status.code(), Some(2));
    let cfg = tiny_config(dir.path(), "");
    let out = dir.path().join("run");
    let o = pnoc(&["pipeline", "--config", s(&cfg), "--out", s(&out), "--stages", "nonsense"]);
    assert_eq!(o.status.code(), Some(2));

    let empty = dir.path().join("empty");
    fs::create_dir_all(&empty).unwrap();
    fs::write(empty.join("labels.txt"), "a cat\n\nb dog\n").unwrap();
    let o = pnoc(&["train", "--mode", "vanilla", "--data", s(&empty), "--out", s(&dir.path().join("t"))]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains(":2:"), "{}", String::from_utf8_lossy(&o.stderr));

    let o = pnoc(&["sweep", "--priors", s(&dir.path().join("nowhere")), "--gt", s(&empty), "--deltas", "0.1:0.2"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_inputs_name_the_producing_stage() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "");
    let out = dir.path().join("run");
    let o = pnoc(&["pipeline", "--config", s(&cfg), "--out", s(&out), "--stages", "evaluate"]);
    assert_eq!(o.status.code(), Some(4));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("make-priors") && err.contains("priors"), "{err}");
}

#[test]
fn synthetic_generation_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        assert!(pnoc(&["generate-synthetic", "--out", s(d), "--n", "12", "--data-seed", "5"]).status.success());
    }
    let (fa, fb) = (files_under(&a), files_under(&b));
    assert!(fa.len() >= 12 * 2 + 2);
    assert_eq!(fa, fb);
}

#[test]
fn pipeline_runs_once_and_skips_finished_stages() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "");
    let out = dir.path().join("run");
    let first = pnoc(&["pipeline", "--config", s(&cfg), "--out", s(&out)]);
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    let text = String::from_utf8_lossy(&first.stdout);
    assert_eq!(text.matches("\tdone").count(), 9, "{text}");
    for p in ["report.txt", "eval/sweep.csv", "eval/sweep.png", "eval/per_class_masks.csv", "c2amh/head.bin", "train/p_noc/noc.bin"] {
        assert!(out.join(p).is_file(), "missing {p}");
    }
    let before = files_under(&out);
    let second = pnoc(&["pipeline", "--config", s(&cfg), "--out", s(&out)]);
    assert!(second.status.success());
    assert_eq!(String::from_utf8_lossy(&second.stdout).matches("up to date").count(), 9);
    assert_eq!(files_under(&out), before);

    let report = pnoc(&["report", "--run", s(&out)]);
    assert!(report.status.success());
    assert_eq!(String::from_utf8_lossy(&report.stdout), fs::read_to_string(out.join("report.txt")).unwrap());

    let sweep = pnoc(&["sweep", "--priors", s(&out.join("priors")), "--gt", s(&out.join("data/eval"))]);
    assert!(sweep.status.success());
    let best = String::from_utf8_lossy(&sweep.stdout).lines().last().unwrap().to_string();
    let summary = fs::read_to_string(out.join("eval/summary.txt")).unwrap();
    let miou = summary.lines().find_map(|l| l.strip_prefix("priors_best_miou=")).unwrap();
    assert!(best.ends_with(miou), "{best} vs {summary}");
}

#[test]
fn resumed_training_matches_an_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "");
    let full = dir.path().join("full");
    let stages = "train-vanilla,train-p_noc";
    let o = pnoc(&["pipeline", "--config", s(&cfg), "--out", s(&full), "--stages", stages]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let cut = dir.path().join("cut");
    let o = pnoc(&["pipeline", "--config", s(&cfg), "--out", s(&cut), "--stages", stages]);
    assert!(o.status.success());
    // Simulate a crash after the first epoch of p_noc: drop later checkpoints,
    // the weights and the stamp, and leave stray log lines behind.
    let train = cut.join("train/p_noc");
    let mut cks: Vec<PathBuf> = fs::read_dir(train.join("checkpoints")).unwrap().map(|e| e.unwrap().path()).collect();
    cks.sort_by_key(|p| p.file_stem().unwrap().to_str().unwrap().trim_start_matches("step-").parse::<usize>().unwrap());
    assert!(cks.len() >= 2);
    for p in &cks[1..] {
        fs::remove_file(p).unwrap();
    }
    fs::remove_file(train.join("weights.bin")).unwrap();
    fs::remove_file(cut.join("stamps/train-p_noc.done")).unwrap();
    let mut log = fs::read_to_string(train.join("metrics.log")).unwrap();
    log.push_str("step=999 partial\n");
    fs::write(train.join("metrics.log"), log).unwrap();

    let o = pnoc(&["pipeline", "--config", s(&cfg), "--out", s(&cut), "--stages", stages]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["metrics.log", "weights.bin", "noc.bin", "estimates.log"] {
        assert_eq!(fs::read(full.join("train/p_noc").join(f)).unwrap(), fs::read(train.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn step_commands_reproduce_the_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "");
    let run = dir.path().join("run");
    let stages = "train-vanilla,train-p_noc,make-priors";
    assert!(pnoc(&["pipeline", "--config", s(&cfg), "--out", s(&run), "--stages", stages]).status.success());
    let t = dir.path().join("t");
    let data = run.join("data/train");
    let o = pnoc(&["train", "--config", s(&cfg), "--mode", "vanilla", "--data", s(&data), "--out", s(&t)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read(t.join("weights.bin")).unwrap(), fs::read(run.join("train/vanilla/weights.bin")).unwrap());
    let o = pnoc(&["train", "--config", s(&cfg), "--mode", "p_noc", "--data", s(&data), "--out", s(&t)]);
    assert_eq!(o.status.code(), Some(2));

    let pr = dir.path().join("priors");
    let w = run.join("train/p_noc/weights.bin");
    let o = pnoc(&["make-priors", "--config", s(&cfg), "--weights", s(&w), "--data", s(&run.join("data/eval")), "--out", s(&pr)]);
    assert!(o.status.success());
    assert_eq!(files_under(&pr), files_under(&run.join("priors")));
}
