use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = "\
seed = 3
data.c = 4
data.per_class = 4
data.test_per_class = 3
data.width = 16
data.height = 16
split.shots = 2
teacher.dim = 8
teacher.epochs = 3
student.dim = 8
augment.n_views = 2
distill.epochs = 2
distill.batch = 4
";

fn augpt(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_augpt"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("small.cfg"), SMALL).unwrap();
    dir
}

/// Runs a stage and returns the output directory it printed.
fn stage(dir: &Path, args: &[&str]) -> PathBuf {
    let mut all = vec!["--config", "small.cfg", "--out", "runs"];
    all.extend_from_slice(args);
    let out = augpt(dir, &all);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    let printed = String::from_utf8(out.stdout).unwrap();
    dir.join(printed.lines().last().unwrap().trim())
}

fn no_leftovers(root: &Path) -> bool {
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.file_name().unwrap().to_string_lossy().contains(".tmp-") {
                return false;
            }
            if p.is_dir() {
                stack.push(p);
            }
        }
    }
    true
}

#[test]
fn usage_errors_exit_one() {
    let dir = workspace();
    let p = dir.path();
    assert_eq!(augpt(p, &["frobnicate"]).status.code(), Some(1));
    assert_eq!(augpt(p, &["--config", "missing.cfg", "gen-data"]).status.code(), Some(1));
    assert_eq!(augpt(p, &["--config", "small.cfg", "--set", "bogus.key=1", "gen-data"]).status.code(), Some(1));
    assert_eq!(augpt(p, &["--config", "small.cfg", "--set", "data.c", "gen-data"]).status.code(), Some(1));
    assert_eq!(augpt(p, &["--threads", "0", "--config", "small.cfg", "gen-data"]).status.code(), Some(1));
    assert_eq!(augpt(p, &["--help"]).status.code(), Some(0));
    fs::write(p.join("dup.cfg"), "seed = 1\nseed = 2\n").unwrap();
    assert_eq!(augpt(p, &["--config", "dup.cfg", "gen-data"]).status.code(), Some(1));
    assert!(!p.join("runs").exists() || no_leftovers(&p.join("runs")));
}

#[test]
fn missing_data_exits_two_and_leaves_nothing_behind() {
    let dir = workspace();
    let p = dir.path();
    let out = augpt(p, &["--config", "small.cfg", "--out", "runs", "fit-teacher", "--manifest", "nowhere.jsonl"]);
    assert_eq!(out.status.code(), Some(2));
    fs::write(p.join("bad.csv"), "image_key,view_index,class_0\nk,0,not-a-number\n").unwrap();
    let out = augpt(p, &["--config", "small.cfg", "--out", "runs", "gate", "--logits", "bad.csv"]);
    assert_eq!(out.status.code(), Some(2));
    let runs = p.join("runs");
    if runs.exists() {
        assert!(no_leftovers(&runs));
        let committed: Vec<_> = fs::read_dir(&runs).unwrap().flat_map(|d| fs::read_dir(d.unwrap().path()).unwrap()).collect();
        assert!(committed.is_empty(), "failed stages must not commit");
    }
}

#[test]
fn staged_pipeline_runs_end_to_end() {
    let dir = workspace();
    let p = dir.path();
    let data = stage(p, &["gen-data"]);
    let manifest = data.join("manifest.jsonl");
    let test_manifest = data.join("test_manifest.jsonl");
    assert!(manifest.is_file() && test_manifest.is_file());
    assert!(fs::read_to_string(data.join("config.resolved")).unwrap().contains("data.c = 4"));

    let fit = stage(p, &["fit-teacher", "--manifest", manifest.to_str().unwrap()]);
    let teacher = fit.join("teacher.json");
    assert_eq!(fs::read_to_string(fit.join("fit_log.jsonl")).unwrap().lines().count(), 1 + 3, "initial loss plus one per epoch");

    let aug = stage(p, &["augment", "--manifest", manifest.to_str().unwrap(), "--teacher", teacher.to_str().unwrap()]);
    let logits = aug.join("logits.csv");
    assert!(logits.is_file());
    assert_eq!(fs::read_to_string(aug.join("provenance.jsonl")).unwrap().lines().count(), 16 * 2);

    let gate = stage(p, &["gate", "--logits", logits.to_str().unwrap()]);
    assert_eq!(fs::read_to_string(gate.join("gate.jsonl")).unwrap().lines().count(), 16);

    let distill = stage(p, &["distill", "--manifest", manifest.to_str().unwrap(), "--teacher", teacher.to_str().unwrap()]);
    let student = distill.join("student.json");
    assert!(student.is_file());

    let eval = stage(
        p,
        &[
            "eval",
            "--student",
            student.to_str().unwrap(),
            "--teacher",
            teacher.to_str().unwrap(),
            "--manifest",
            test_manifest.to_str().unwrap(),
        ],
    );
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(eval.join("report.json")).unwrap()).unwrap();
    assert!(report["hm"].as_f64().unwrap() >= 0.0);
    assert!(no_leftovers(&p.join("runs")));
}

#[test]
fn reruns_replace_outputs_byte_for_byte() {
    let dir = workspace();
    let p = dir.path();
    let first = stage(p, &["base-to-new"]);
    let a = fs::read(first.join("student.json")).unwrap();
    let second = stage(p, &["--threads", "2", "base-to-new"]);
    assert_eq!(first, second);
    assert_eq!(a, fs::read(second.join("student.json")).unwrap());
    let other = stage(p, &["--seed", "4", "base-to-new"]);
    assert_ne!(first, other, "a different seed resolves to a different run directory");
}

#[test]
fn ablation_writes_one_row_per_value() {
    let dir = workspace();
    let p = dir.path();
    let out = stage(p, &["ablate", "--sweep", "n_views", "--grid", "0,2"]);
    let csv = fs::read_to_string(out.join("results.csv")).unwrap();
    let lines: Vec<_> = csv.lines().collect();
    assert_eq!(lines[0], "sweep_value,base,new,hm");
    assert_eq!(lines.len(), 3);
    assert!(out.join("reports/n_views=0.json").is_file());
    let bad = augpt(p, &["--config", "small.cfg", "--out", "runs", "ablate", "--sweep", "colour", "--grid", "1"]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn cross_dataset_runs() {
    let dir = workspace();
    let p = dir.path();
    let out = stage(p, &["--set", "target.c=6", "cross-dataset"]);
    assert!(out.join("report.json").is_file());
}

#[test]
fn selftest_passes() {
    let dir = workspace();
    let out = augpt(dir.path(), &["selftest"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().all(|l| l.starts_with("PASS")));
}
