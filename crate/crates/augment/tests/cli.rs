use std::path::Path;
use std::process::{Command, Output};

fn cli(args: &[&str], cwd: &Path) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_slu-augment"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs");
    out
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = cli(args, cwd);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn shrink_config(path: &Path) {
    let mut cfg: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    for model in ["generator", "slu"] {
        cfg[model]["max_epochs"] = 1.into();
        cfg[model]["embedding_dim"] = 8.into();
        cfg[model]["hidden_units"] = 8.into();
    }
    cfg["combine_count"] = 10.into();
    cfg["synthesis"]["n_v"] = 1.into();
    std::fs::write(path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
}

#[test]
fn toy_domain_then_run_and_score() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["toy-domain", "--out", "toy", "--seed", "2"], d);
    shrink_config(&d.join("toy/pipeline.json"));
    let stdout = ok(&["run", "--config", "toy/pipeline.json", "--out", "run", "--ablation", "no-sentence-generator"], d);
    let summary: serde_json::Value = serde_json::from_str(stdout.trim()).unwrap();
    let f1 = summary["f1"].as_f64().unwrap();
    for f in ["manifest.json", "augmented.jsonl", "report.json", "checkpoints/slu/meta.json"] {
        assert!(d.join("run").join(f).exists(), "{f}");
    }
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("run/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["system"], "no-sentence-generator");

    let report = ok(&["score", "--pred", "run/predictions.jsonl", "--gold", "toy/target_eval.jsonl", "--out", "score.json"], d);
    let r: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert_eq!(r["f1"].as_f64().unwrap(), f1);
    assert!(d.join("score.json").exists());

    let bad = cli(&["run", "--config", "toy/pipeline.json", "--ablation", "nonsense"], d);
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("unknown system"));
}

#[test]
fn failing_run_persists_its_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["toy-domain", "--out", "toy"], d);
    shrink_config(&d.join("toy/pipeline.json"));
    std::fs::write(d.join("toy/source_train.jsonl"), "").unwrap();
    let out = cli(&["run", "--config", "toy/pipeline.json", "--out", "run", "--ablation", "without-augmentation"], d);
    assert!(!out.status.success());
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("run/manifest.json")).unwrap()).unwrap();
    assert!(manifest["error"].as_str().unwrap().contains("source training data is empty"));
}

#[test]
fn seed_sweep_writes_one_run_per_size() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["toy-domain", "--out", "toy"], d);
    shrink_config(&d.join("toy/pipeline.json"));
    ok(&["run", "--config", "toy/pipeline.json", "--out", "sweep", "--seed-sweep", "0,5,5"], d);
    let summary: Vec<serde_json::Value> = serde_json::from_str(&std::fs::read_to_string(d.join("sweep/sweep.json")).unwrap()).unwrap();
    assert_eq!(summary.len(), 2);
    assert!(d.join("sweep/seed-0/manifest.json").exists());
    assert!(d.join("sweep/seed-5/manifest.json").exists());
}

#[test]
fn model_commands_chain() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["toy-domain", "--out", "toy"], d);
    std::fs::write(d.join("gen.json"), r#"{"embedding_dim": 8, "hidden_units": 8, "max_epochs": 1, "max_decode_len": 10}"#).unwrap();
    std::fs::write(d.join("slu.json"), r#"{"embedding_dim": 8, "hidden_units": 8, "label_dim": 4, "max_epochs": 1}"#).unwrap();

    let ex = ok(&["exemplify", "--ontology", "toy/target_ontology.json", "--templates", "toy/target_templates.json", "--acts", "toy/target_seed.jsonl", "--mode", "train", "--out", "corpus.jsonl"], d);
    assert!(ex.is_empty());
    let corpus = std::fs::read_to_string(d.join("corpus.jsonl")).unwrap();
    assert_eq!(corpus.lines().count(), 50);

    let counts = ok(&["synth-acts", "--ontology", "toy/target_ontology.json", "--seed-acts", "toy/target_seed.jsonl", "--policy", "both", "--count", "20", "--nv", "1", "--seed", "3", "--out", "acts.jsonl", "--report", "synth.json"], d);
    let counts: serde_json::Value = serde_json::from_str(&counts).unwrap();
    let total = counts["total"].as_u64().unwrap() as usize;
    assert_eq!(std::fs::read_to_string(d.join("acts.jsonl")).unwrap().lines().count(), total);
    let again = ok(&["synth-acts", "--ontology", "toy/target_ontology.json", "--seed-acts", "toy/target_seed.jsonl", "--count", "20", "--nv", "1", "--seed", "3", "--out", "acts2.jsonl"], d);
    assert_eq!(serde_json::from_str::<serde_json::Value>(&again).unwrap()["total"], total);
    assert_eq!(std::fs::read(d.join("acts.jsonl")).unwrap(), std::fs::read(d.join("acts2.jsonl")).unwrap());

    // Exemplify output doubles as a generator corpus.
    std::fs::write(
        d.join("gcorpus.jsonl"),
        corpus
            .lines()
            .map(|l| {
                let v: serde_json::Value = serde_json::from_str(l).unwrap();
                serde_json::json!({ "exemplars": v["exemplars"], "utterance": "placeholder words", "dialogue_act": v["dialogue_act"] }).to_string() + "\n"
            })
            .collect::<String>(),
    )
    .unwrap();
    ok(&["train-generator", "--corpus", "gcorpus.jsonl", "--config", "gen.json", "--out", "gen"], d);
    ok(&["train-generator", "--corpus", "gcorpus.jsonl", "--init-from", "gen", "--out", "gen2"], d);
    ok(&["generate", "--model", "gen2", "--acts", "acts.jsonl", "--templates", "toy/target_templates.json", "--ontology", "toy/target_ontology.json", "--out", "aug.jsonl"], d);
    let aug = std::fs::read_to_string(d.join("aug.jsonl")).unwrap();
    assert_eq!(aug.lines().count(), total);
    let first: serde_json::Value = serde_json::from_str(aug.lines().next().unwrap()).unwrap();
    assert!(first["generator_checkpoint"].is_string());

    ok(&["train-slu", "--train", "toy/target_seed.jsonl", "--dev", "toy/target_eval.jsonl", "--ontology", "toy/target_ontology.json", "--config", "slu.json", "--out", "slu"], d);
    ok(&["train-slu", "--train", "toy/target_seed.jsonl", "--ontology", "toy/target_ontology.json", "--init-from", "slu", "--out", "slu2"], d);
    std::fs::write(d.join("utts.txt"), "i want thai food\nthank you good bye\n").unwrap();
    ok(&["parse", "--model", "slu2", "--in", "utts.txt", "--ontology", "toy/target_ontology.json", "--out", "preds.jsonl"], d);
    assert_eq!(std::fs::read_to_string(d.join("preds.jsonl")).unwrap().lines().count(), 2);

    let wrong = cli(&["generate", "--model", "slu", "--acts", "acts.jsonl", "--templates", "toy/target_templates.json", "--ontology", "toy/target_ontology.json", "--out", "x.jsonl"], d);
    assert!(!wrong.status.success());
}
