mod common;

use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

use common::botchan_split;

fn hlscore(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hlscore"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = hlscore(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn train_score_classify_correlate() {
    let dir = tempfile::tempdir().unwrap();
    let split = botchan_split(30, 30);
    let train = dir.path().join("train.txt");
    let text: String = split.train.iter().map(|s| s.join(" ") + "\n").collect();
    std::fs::write(&train, text).unwrap();
    let model = dir.path().join("model.json");
    let id = ok(&[
        "train-lm",
        "--input",
        p(&train),
        "--order",
        "2",
        "--smoothing",
        "0.8",
        "--output",
        p(&model),
    ]);
    assert!(id.trim().starts_with("ngram-o2-"));

    let corpus = dir.path().join("eval.jsonl");
    let lines: String = split
        .test
        .iter()
        .enumerate()
        .map(|(i, s)| {
            json!({"id": format!("t{i}"), "text": s.join(" "), "rating": (i % 5 + 1)}).to_string()
                + "\n"
        })
        .collect();
    std::fs::write(&corpus, lines).unwrap();

    let backend = format!("ngram:{}", p(&model));
    let samples = dir.path().join("samples.jsonl");
    let tokens = dir.path().join("tokens.csv");
    ok(&[
        "score",
        "--backend",
        &backend,
        "--input",
        p(&corpus),
        "--samples-out",
        p(&samples),
        "--tokens-out",
        p(&tokens),
    ]);
    let n_lines = std::fs::read_to_string(&samples).unwrap().lines().count();
    assert_eq!(n_lines, 30);
    assert!(std::fs::read_to_string(&tokens)
        .unwrap()
        .starts_with("sample_id,position,token"));

    let classified = dir.path().join("classified.jsonl");
    ok(&[
        "classify",
        "--records",
        p(&samples),
        "--fp-l",
        "0.2",
        "--fp-h",
        "0.5",
        "--output",
        p(&classified),
    ]);
    let first: Value = serde_json::from_str(
        std::fs::read_to_string(&classified)
            .unwrap()
            .lines()
            .next()
            .unwrap(),
    )
    .unwrap();
    assert!(["h", "u", "m"].contains(&first["class"].as_str().unwrap()));

    let corr = ok(&[
        "correlate",
        "--records",
        p(&classified),
        "--ratings-corpus",
        p(&corpus),
        "--encoding",
        "class",
    ]);
    let corr: Value = serde_json::from_str(&corr).unwrap();
    assert_eq!(corr["n"], 30);
    assert!(corr["spearman"].as_f64().unwrap().abs() <= 1.0);
}

#[test]
fn calibrate_then_evaluate_with_threshold_file() {
    let dir = tempfile::tempdir().unwrap();
    let stub = dir.path().join("stub.json");
    std::fs::write(
        &stub,
        json!({
            "backend_id": "cli-stub",
            "vocabulary": ["a", "b", "c"],
            "table": [{"context": [], "probs": [0.6, 0.3, 0.1]}]
        })
        .to_string(),
    )
    .unwrap();
    let labeled = dir.path().join("labeled.jsonl");
    let rows = [
        ("n1", "b c b c b", "natural"),
        ("n2", "c c b a c", "natural"),
        ("s1", "a a b a a", "synthetic"),
        ("s2", "a a a b a", "synthetic"),
    ];
    let lines: String = rows
        .iter()
        .map(|(id, text, label)| json!({"id": id, "text": text, "label": label}).to_string() + "\n")
        .collect();
    std::fs::write(&labeled, lines).unwrap();
    let backend = format!("stub:{}", p(&stub));
    let thresholds = dir.path().join("thresholds.json");
    ok(&[
        "calibrate",
        "--backend",
        &backend,
        "--input",
        p(&labeled),
        "--mode",
        "dual",
        "--output",
        p(&thresholds),
    ]);
    let t: Value = serde_json::from_str(&std::fs::read_to_string(&thresholds).unwrap()).unwrap();
    assert_eq!(t["mode"], "dual");
    assert_eq!(t["backend_id"], "cli-stub");

    let report = dir.path().join("report.json");
    ok(&[
        "evaluate",
        "--backend",
        &backend,
        "--input",
        p(&labeled),
        "--thresholds",
        p(&thresholds),
        "--output",
        p(&report),
        "--no-timestamp",
    ]);
    let r: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["mode"], "dual");
    assert!(r["metadata"].get("generated_at").is_none());
    assert!(r["threshold_source"].as_str().unwrap().starts_with("file:"));

    // Thresholds from one backend cannot silently score another.
    let other = dir.path().join("other.json");
    std::fs::write(
        &other,
        std::fs::read_to_string(&stub)
            .unwrap()
            .replace("cli-stub", "other-stub"),
    )
    .unwrap();
    let other_backend = format!("stub:{}", p(&other));
    let out = hlscore(&[
        "evaluate",
        "--backend",
        &other_backend,
        "--input",
        p(&labeled),
        "--thresholds",
        p(&thresholds),
        "--output",
        p(&report),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("other-stub"));
    ok(&[
        "evaluate",
        "--backend",
        &other_backend,
        "--input",
        p(&labeled),
        "--thresholds",
        p(&thresholds),
        "--output",
        p(&report),
        "--allow-backend-mismatch",
    ]);
    let r: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["warnings"].as_array().unwrap().len(), 1);
}

#[test]
fn bad_invocations_fail_cleanly() {
    let out = hlscore(&[
        "evaluate",
        "--backend",
        "bogus:x",
        "--input",
        "/nonexistent",
        "--output",
        "/tmp/never.json",
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown backend"));
    let out = hlscore(&[
        "evaluate",
        "--backend",
        "remote",
        "--input",
        "/nonexistent",
        "--output",
        "/tmp/never.json",
    ]);
    assert!(!out.status.success());
}
