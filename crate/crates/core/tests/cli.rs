use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use topic_align::corpus::{load_counts, load_ensemble, save_counts, CountFormat};
use topic_align::report::{analyze, scores_csv, summarize, AlignmentDocument};
use topic_align::Method;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_topic-align"));
    cmd.env("TOPIC_ALIGN_THREADS", "1");
    cmd
}

fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().unwrap();
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn code(args: &[&str]) -> i32 {
    bin().args(args).output().unwrap().status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const GIBBS: [&str; 6] = ["--burn-in", "30", "--samples", "5", "--thin", "1"];

/// simulate -> fit -> align -> diagnose -> export-flow in `dir`.
fn pipeline(dir: &Path) -> Vec<PathBuf> {
    let sim = dir.join("sim");
    run_ok(&["simulate", "--mechanism", "lda", "--n", "40", "--d", "30", "--k", "3", "--doc-total", "300", "--seed", "4", "--out", s(&sim)]);
    let ens = dir.join("ens.json");
    let mut fit = vec!["fit", "--counts", s(&sim.join("corpus_000.csv")).to_owned().leak(), "--k-range", "2..4", "--seed", "9", "--out", s(&ens)];
    fit.extend(GIBBS);
    run_ok(&fit);
    let al = dir.join("align.json");
    run_ok(&["align", "--ensemble", s(&ens), "--method", "transport", "--out", s(&al)]);
    let scores = dir.join("scores.csv");
    let summary = dir.join("summary.json");
    run_ok(&["diagnose", "--alignment", s(&al), "--out", s(&scores), "--summary", s(&summary)]);
    let svg = dir.join("flow.svg");
    run_ok(&["export-flow", "--alignment", s(&al), "--out", s(&svg)]);
    vec![sim.join("corpus_000.csv"), sim.join("truth_000.json"), ens, al, scores, summary, svg]
}

#[test]
fn pipeline_is_byte_identical_across_runs() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = pipeline(a.path());
    let second = pipeline(b.path());
    for (x, y) in first.iter().zip(&second) {
        let (bx, by) = (std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
        assert!(!bx.is_empty(), "{} is empty", x.display());
        assert!(bx == by, "{} differs between runs", x.file_name().unwrap().to_string_lossy());
    }
}

#[test]
fn align_output_matches_library_and_schema() {
    let dir = tempfile::tempdir().unwrap();
    let files = pipeline(dir.path());
    let ensemble = load_ensemble(&files[2]).unwrap();
    assert_eq!(ensemble.ks(), vec![2, 3, 4]);

    for method in ["product", "transport"] {
        let al = dir.path().join(format!("{method}.json"));
        run_ok(&["align", "--ensemble", s(&files[2]), "--method", method, "--out", s(&al)]);
        let doc = AlignmentDocument::load(&al).unwrap();
        let m: Method = method.parse().unwrap();
        let expected = AlignmentDocument::new(&ensemble, &analyze(&ensemble, m).unwrap());
        assert_eq!(doc, expected);

        let schema: serde_json::Value =
            serde_json::from_str(include_str!("../../../docs/alignment.schema.json")).unwrap();
        let instance: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&al).unwrap()).unwrap();
        let validator = jsonschema::validator_for(&schema).unwrap();
        let errors: Vec<String> = validator.iter_errors(&instance).map(|e| e.to_string()).collect();
        assert!(errors.is_empty(), "{errors:?}");
    }

    let doc = AlignmentDocument::load(&files[3]).unwrap();
    let csv = std::fs::read_to_string(&files[4]).unwrap();
    assert_eq!(csv, scores_csv(&doc));
    assert_eq!(csv.lines().count(), 1 + 2 + 3 + 4);
    assert_eq!(csv.lines().next().unwrap(), "model_k,topic_index,path_id,mass,coherence,refinement");
    assert!(csv.lines().filter(|l| l.starts_with("4,")).all(|l| l.ends_with(',')));
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&files[5]).unwrap()).unwrap();
    assert_eq!(summary, serde_json::to_value(summarize(&doc)).unwrap());
}

#[test]
fn replicates_use_distinct_streams() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(&["simulate", "--mechanism", "null", "--n", "5", "--d", "6", "--doc-total", "50", "--replicates", "3", "--format", "json", "--out", s(dir.path())]);
    let corpora: Vec<_> = (0..3)
        .map(|r| load_counts(&dir.path().join(format!("corpus_{r:03}.json")), CountFormat::Json).unwrap())
        .collect();
    assert_ne!(corpora[0], corpora[1]);
    assert_ne!(corpora[1], corpora[2]);
    assert!(!dir.path().join("truth_000.json").exists());
}

#[test]
fn strain_simulation_writes_variants() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(&["simulate", "--mechanism", "strain", "--n", "10", "--d", "50", "--subset-size", "10", "--doc-total", "100", "--out", s(dir.path())]);
    let text = std::fs::read_to_string(dir.path().join("variants_000.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["variants"].as_array().unwrap().len(), 5);
    assert_eq!(v["variants"][0].as_array().unwrap().len(), 2);
}

#[test]
fn perplexity_prints_one_row_per_model() {
    let dir = tempfile::tempdir().unwrap();
    let files = pipeline(dir.path());
    let out = run_ok(&["perplexity", "--ensemble", s(&files[2]), "--counts", s(&files[0])]);
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "k,perplexity");
    assert_eq!(lines.len(), 4);
    for line in &lines[1..] {
        let p: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert!(p > 1.0 && p < 30.0, "{line}");
    }
}

#[test]
fn exit_codes_follow_error_kind() {
    let dir = tempfile::tempdir().unwrap();
    let out = s(dir.path());
    assert_eq!(code(&["simulate", "--mechanism", "background", "--alpha", "1.5", "--out", out]), 2);
    assert_eq!(code(&["simulate", "--mechanism", "bogus", "--out", out]), 2);
    assert_eq!(code(&["fit", "--counts", "/nonexistent.csv", "--out", out]), 3);

    let files = pipeline(dir.path());
    assert_eq!(code(&["fit", "--counts", s(&files[0]), "--k-range", "5..2", "--out", out]), 2);
    let mut narrow = load_counts(&files[0], CountFormat::Csv).unwrap().counts().clone();
    narrow.slice_axis_inplace(ndarray::Axis(1), ndarray::Slice::from(0..10));
    let narrow_path = dir.path().join("narrow.csv");
    save_counts(&topic_align::CountMatrix::from_counts(narrow).unwrap(), &narrow_path, CountFormat::Csv).unwrap();
    let mismatch = bin().args(["perplexity", "--ensemble", s(&files[2]), "--counts", s(&narrow_path)]).output().unwrap();
    assert_eq!(mismatch.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&mismatch.stderr).starts_with("error:"));

    let broken = dir.path().join("broken.json");
    std::fs::write(&broken, "{\"method\": \"product\"").unwrap();
    assert_eq!(code(&["diagnose", "--alignment", s(&broken), "--out", out]), 3);
}

#[test]
fn experiment_resumes_from_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    std::fs::write(
        &config,
        r#"{"mechanism": "background", "grid": [0.0, 1.0], "replicates": 2, "n_samples": 20, "n_features": 25,
            "doc_total": 200, "k_min": 2, "k_max": 4, "burn_in": 10, "samples": 3, "thin": 1}"#,
    )
    .unwrap();
    let out = dir.path().join("exp");
    let first = run_ok(&["experiment", "--config", s(&config), "--out", s(&out)]).stdout;
    let text = String::from_utf8(first.clone()).unwrap();
    assert_eq!(text.lines().count(), 1 + 4);
    let checkpoints = std::fs::read_dir(out.join("replicates")).unwrap().count();
    assert_eq!(checkpoints, 4);
    std::fs::remove_file(out.join("replicates/cell001_rep000.json")).unwrap();
    let second = run_ok(&["experiment", "--config", s(&config), "--out", s(&out)]).stdout;
    assert_eq!(first, second);
    assert!(out.join("report.csv").exists() && out.join("report.json").exists());
}
