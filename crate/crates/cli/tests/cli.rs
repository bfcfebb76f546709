use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_minuscule"));
    c.env("RUST_LOG", "error");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok_json(args: &[&str]) -> Value {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn code(args: &[&str]) -> i32 {
    run(args).status.code().expect("exit code")
}

fn corpus(pages: usize) -> (TempDir, PathBuf) {
    let dir = TempDir::new().unwrap();
    let c = dir.path().join("corpus");
    ok_json(&["synth", c.to_str().unwrap(), "-n", &pages.to_string(), "--seed", "11"]);
    (dir, c)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn stats_counts_transcript_tokens() {
    let (_d, c) = corpus(2);
    let v = ok_json(&["stats", s(&c), "--format", "json"]);
    let tokens: usize = fs::read_dir(&c)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.to_string_lossy().ends_with(".tokens.txt"))
        .map(|p| fs::read_to_string(p).unwrap().split_whitespace().count())
        .sum();
    assert_eq!(v["tokens"], tokens as u64);
    let binned: u64 = v["histogram"].as_array().unwrap().iter().map(|b| b["words"].as_u64().unwrap()).sum();
    assert_eq!(binned, v["vocabulary"].as_u64().unwrap());
    let text = run(&["stats", s(&c)]);
    assert!(String::from_utf8_lossy(&text.stdout).contains("(2,5]"));
}

#[test]
fn build_dataset_layout() {
    let (d, c) = corpus(2);
    let out = d.path().join("ds");
    let v = ok_json(&["build-dataset", s(&c), "--out", s(&out), "--triplets", "100", "--seed", "2"]);
    assert_eq!(v["pages"], 2);
    for m in ["lines", "words", "classification", "triplets"] {
        assert!(out.join(m).join("manifest.json").is_file(), "{m}");
    }
    let cls: Value = serde_json::from_str(&fs::read_to_string(out.join("classification/manifest.json")).unwrap()).unwrap();
    let samples = cls["samples"].as_array().unwrap();
    assert_eq!(samples.len() as u64, v["classification_pairs"].as_u64().unwrap());
    for smp in samples {
        assert!(out.join("classification").join(smp["image"].as_str().unwrap()).is_file());
    }
    let trip: Value = serde_json::from_str(&fs::read_to_string(out.join("triplets/manifest.json")).unwrap()).unwrap();
    assert_eq!(trip.as_array().unwrap().len(), 100);
}

#[test]
fn oracle_transcription_round_trip() {
    let (d, c) = corpus(2);
    let store = d.path().join("store.json");
    let built = ok_json(&["build-store", s(&c), "--backend", &format!("oracle:{}", s(&c)), "--out", s(&store)]);
    assert!(built["entries"].as_u64().unwrap() > 0);

    let pred = d.path().join("pred.json");
    let overlay = d.path().join("overlay.png");
    let page = c.join("page000.png");
    let args = [
        "transcribe",
        s(&page),
        "--backend",
        &format!("oracle:{}", s(&c)),
        "--store",
        s(&store),
        "--overlay",
        s(&overlay),
        "--out",
        s(&pred),
    ];
    assert_eq!(code(&args), 0);
    assert!(overlay.is_file());
    let first = fs::read(&pred).unwrap();
    assert_eq!(code(&args), 0);
    assert_eq!(first, fs::read(&pred).unwrap(), "transcription is not deterministic");

    let out: Value = serde_json::from_slice(&first).unwrap();
    let tokens = fs::read_to_string(c.join("page000.tokens.txt")).unwrap();
    assert_eq!(out["flat_text"], tokens.split_whitespace().collect::<Vec<_>>().join(" "));

    let report = ok_json(&["evaluate", "--pred", s(&pred), "--gt", s(&c)]);
    assert_eq!(report["recognition"]["mean_string_distance"], 0.0);
    assert!(report["words"]["precision"].as_f64().unwrap() > 0.999);
}

#[test]
fn several_images_give_an_array() {
    let (_d, c) = corpus(2);
    let v = ok_json(&[
        "transcribe",
        s(&c.join("page000.png")),
        s(&c.join("page001.png")),
        "--backend",
        &format!("oracle:{}", s(&c)),
        "--workers",
        "2",
    ]);
    let ids: Vec<&str> = v.as_array().unwrap().iter().map(|o| o["image_id"].as_str().unwrap()).collect();
    assert_eq!(ids, ["page000", "page001"]);
}

#[test]
fn knn_lookup() {
    let d = TempDir::new().unwrap();
    let store = d.path().join("s.json");
    fs::write(
        &store,
        r#"{"version":1,"dim":2,"entries":[{"label":"amen","ord":0,"vec":[0.0,0.0]},{"label":"et","ord":1,"vec":[3.0,4.0]}]}"#,
    )
    .unwrap();
    let v = ok_json(&["knn", "--store", s(&store), "--query", "[3.0, 4.0]", "-k", "5"]);
    assert_eq!(v[0]["label"], "et");
    assert_eq!(v[0]["dist"], 0.0);
    assert_eq!(v[1]["dist"], 5.0);
    assert_eq!(code(&["knn", "--store", s(&store), "--query", "[1.0]", "-k", "1"]), 1);
    assert_eq!(code(&["knn", "--store", s(&store), "--query", "[1.0, 2.0]", "-k", "0"]), 1);
}

#[test]
fn triplets_are_seeded() {
    let (_d, c) = corpus(2);
    let a = run(&["triplets", s(&c), "-n", "40", "--seed", "5"]);
    let b = run(&["triplets", s(&c), "-n", "40", "--seed", "5"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let v: Value = serde_json::from_slice(&a.stdout).unwrap();
    for t in v.as_array().unwrap() {
        assert_ne!(t["anchor"], t["positive"]);
        assert_ne!(t["anchor_label"], t["negative_label"]);
    }
}

const STUB: &str = r#"while IFS= read -r l; do
  id=$(printf '%s' "$l" | sed 's/.*"id":\([0-9]*\).*/\1/')
  case "$l" in
    *detect_lines*) echo "{\"id\":$id,\"detections\":[{\"obb\":[0.1,0.4,0.9,0.4,0.9,0.6,0.1,0.6],\"conf\":0.9}]}";;
    *detect_words*) echo "{\"id\":$id,\"detections\":[{\"box\":[0.5,0.5,0.2,0.5],\"conf\":0.8}]}";;
    *classify*) echo "{\"id\":$id,\"candidates\":[{\"label\":\"xyz\",\"conf\":0.1}]}";;
    *embed*) echo "{\"id\":$id,\"vector\":[0.1,0.2]}";;
  esac
done"#;

fn stub_setup() -> (TempDir, PathBuf, PathBuf) {
    let (d, c) = corpus(1);
    let script = d.path().join("stub.sh");
    fs::write(&script, STUB).unwrap();
    let store = d.path().join("s.json");
    fs::write(
        &store,
        r#"{"version":1,"dim":2,"entries":[{"label":"amen","ord":0,"vec":[0.0,0.0]},{"label":"et","ord":1,"vec":[3.0,4.0]}]}"#,
    )
    .unwrap();
    let page = c.join("page000.png");
    (d, page, store)
}

#[test]
fn process_backend_with_fallback() {
    let (d, page, store) = stub_setup();
    let backend = format!("proc:sh {}", s(&d.path().join("stub.sh")));
    let v = ok_json(&["transcribe", s(&page), "--backend", &backend, "--store", s(&store), "--dim", "2"]);
    let words = v["lines"][0]["words"].as_array().unwrap();
    assert_eq!(words.len(), 1);
    assert_eq!(words[0]["source"], "fallback");
    assert_eq!(words[0]["label"], "amen");
    assert_eq!(words[0]["candidates"].as_array().unwrap().len(), 2);
    assert_eq!(v["flat_text"], "amen");
}

#[test]
fn exit_codes() {
    let (d, page, store) = stub_setup();
    let p = s(&page);
    let with = |backend: &str, extra: &[&str]| {
        let mut a = vec!["transcribe", p, "--backend", backend, "--store", s(&store), "--dim", "2"];
        a.extend_from_slice(extra);
        code(&a)
    };
    assert_eq!(with(r#"proc:while read l; do echo '{"id":999,"detections":[]}'; done"#, &[]), 2);
    assert_eq!(with("proc:true", &[]), 2);
    assert_eq!(with("proc:sleep 5", &["--timeout", "0.3"]), 2);
    assert_eq!(with(r#"proc:while read l; do echo '{"id":0,"error":"model crashed"}'; done"#, &[]), 2);

    let backend = format!("proc:sh {}", s(&d.path().join("stub.sh")));
    assert_eq!(with(&backend, &["--confidence-floor", "1.5"]), 1);
    assert_eq!(with(&backend, &["--dim", "3"]), 1);
    assert_eq!(with("http:nothing", &[]), 1);
    assert_eq!(code(&["transcribe", "/no/such.png", "--backend", &backend]), 1);
    assert_eq!(code(&["stats", "/no/such/dir"]), 1);
    assert_eq!(code(&["evaluate", "--pred", "/no/such.json", "--gt", "/no/such"]), 1);
    assert_eq!(code(&["--help"]), 0);
}
