use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

use recorrect::cli::exit;
use recorrect::cli::manifest::{RunManifest, LOCK_FILE, MANIFEST_LOG};

fn recorrect(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_recorrect"))
        .arg("--out-dir")
        .arg(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Every artifact below `dir` except the manifest log, by relative path.
fn artifacts(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, p: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for e in std::fs::read_dir(p).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else if path.file_name().unwrap() != MANIFEST_LOG {
                out.insert(path.strip_prefix(root).unwrap().display().to_string(), std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

#[test]
fn eval_of_identical_pairs_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("same.jsonl");
    std::fs::write(
        &input,
        "{\"source\":\"a b c\",\"target\":\"a b c\"}\n{\"hypothesis\":\"x\",\"reference\":\"x\",\"id\":\"2\"}\n",
    )
    .unwrap();
    let o = recorrect(dir.path(), &["eval", input.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(exit::OK), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("WER 0.00"), "{}", stdout(&o));
    let o = recorrect(dir.path(), &["--json", "eval", input.to_str().unwrap()]);
    let v: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(v["wer"], "0.00");
    assert_eq!(v["reference_words"], 4);
    let runs = RunManifest::read_all(dir.path()).unwrap();
    assert_eq!(runs.len(), 2);
    assert_eq!(runs[0].subcommand, "eval");
    assert_eq!(runs[0].inputs.len(), 1);
    assert!(!dir.path().join(LOCK_FILE).exists());
}

#[test]
fn failures_have_distinct_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let o = recorrect(dir.path(), &["frobnicate"]);
    assert_eq!(o.status.code(), Some(exit::USAGE));

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"model": {"hidden": 30, "heads": 4}}"#).unwrap();
    let o = recorrect(dir.path(), &["--config", bad.to_str().unwrap(), "train"]);
    assert_eq!(o.status.code(), Some(exit::CONFIG));
    assert!(stderr(&o).contains("model.heads") && stderr(&o).contains("divisible"), "{}", stderr(&o));

    std::fs::write(&bad, "{not json").unwrap();
    let o = recorrect(dir.path(), &["--config", bad.to_str().unwrap(), "gen-data"]);
    assert_eq!(o.status.code(), Some(exit::CONFIG));

    std::fs::write(&bad, r#"{"chanel": {}}"#).unwrap();
    let o = recorrect(dir.path(), &["--config", bad.to_str().unwrap(), "gen-data"]);
    assert_eq!(o.status.code(), Some(exit::CONFIG));
    assert!(stderr(&o).contains("chanel"), "{}", stderr(&o));

    let o = recorrect(dir.path(), &["vocab-build"]);
    assert_eq!(o.status.code(), Some(exit::IO));
    assert!(stderr(&o).contains("corpus.train.txt"), "{}", stderr(&o));

    let junk = dir.path().join("junk.jsonl");
    std::fs::write(&junk, "{\"reference\": 3}\n").unwrap();
    let o = recorrect(dir.path(), &["eval", junk.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(exit::DATA));
    assert!(stderr(&o).contains("line 1"), "{}", stderr(&o));

    std::fs::write(dir.path().join(LOCK_FILE), "1").unwrap();
    let o = recorrect(dir.path(), &["gen-data"]);
    assert_eq!(o.status.code(), Some(exit::LOCKED));
}

#[test]
fn demo_is_the_composition_of_its_stages() {
    let stages = tempfile::tempdir().unwrap();
    for args in [
        &["gen-data"][..],
        &["vocab-build"],
        &["lm-fit"],
        &["decode"],
        &["train", "--task", "mlm"],
        &["ablate"],
    ] {
        let o = recorrect(stages.path(), &[&["--seed", "7"], args].concat());
        assert_eq!(o.status.code(), Some(exit::OK), "{args:?}: {}", stderr(&o));
    }
    let demo = tempfile::tempdir().unwrap();
    let o = recorrect(demo.path(), &["--seed", "7", "demo"]);
    assert_eq!(o.status.code(), Some(exit::OK), "{}", stderr(&o));
    let (a, b) = (artifacts(stages.path()), artifacts(demo.path()));
    assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>());
    for (k, v) in &a {
        assert!(b[k] == *v, "{k} differs");
    }
    for f in ["reports/table1.csv", "reports/table2.csv", "reports/histogram.csv", "reports/init_race.csv"] {
        assert!(a.contains_key(f), "{f} missing");
    }
    let runs = RunManifest::read_all(demo.path()).unwrap();
    assert_eq!(runs.len(), 6);
    assert!(runs.iter().all(|r| r.seed == 7 && !r.outputs.is_empty()));
}

#[test]
fn train_and_correct_individually() {
    let dir = tempfile::tempdir().unwrap();
    for args in [&["gen-data"][..], &["vocab-build"], &["lm-fit"], &["decode"]] {
        assert_eq!(recorrect(dir.path(), args).status.code(), Some(exit::OK));
    }
    let o = recorrect(dir.path(), &["train", "--variant", "cutout", "--name", "m"]);
    assert_eq!(o.status.code(), Some(exit::OK), "{}", stderr(&o));
    let o = recorrect(dir.path(), &["train", "--init", "pre/rand"]);
    assert_eq!(o.status.code(), Some(exit::IO), "pretrained cell needs the checkpoint: {}", stderr(&o));
    let o = recorrect(dir.path(), &["train", "--init", "bert/rand"]);
    assert_eq!(o.status.code(), Some(exit::CONFIG));
    let o = recorrect(dir.path(), &["correct", "--model", "m"]);
    assert_eq!(o.status.code(), Some(exit::OK), "{}", stderr(&o));
    let out = dir.path().join("corrected.m.jsonl");
    let o = recorrect(dir.path(), &["eval", out.to_str().unwrap()]);
    assert!(stdout(&o).starts_with("WER "), "{}", stdout(&o));
}
