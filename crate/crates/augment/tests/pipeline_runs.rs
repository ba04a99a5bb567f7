use slu_augment::checkpoint::checkpoint_id;
use slu_augment::pipeline::{run_experiment, seed_sweep, PipelineConfig, RunManifest, StageCache, System};
use slu_augment::synthetic::{toy_config, toy_data, ExperimentData, ToySizes};

fn tiny() -> (PipelineConfig, ExperimentData) {
    let data = toy_data(5, ToySizes { source_train: 40, source_dev: 8, target_pool: 60, target_seed: 20, target_eval: 20 });
    let mut cfg = toy_config(5);
    cfg.combine_count = 20;
    cfg.synthesis.n_v = 1;
    for (e, h) in [(&mut cfg.generator.embedding_dim, &mut cfg.generator.hidden_units), (&mut cfg.slu.embedding_dim, &mut cfg.slu.hidden_units)] {
        *e = 8;
        *h = 8;
    }
    cfg.slu.label_dim = 4;
    cfg.generator.max_decode_len = 12;
    cfg.generator.train.max_epochs = 2;
    cfg.slu.train.max_epochs = 2;
    (cfg, data)
}

fn stages(m: &RunManifest) -> Vec<&str> {
    m.stages.iter().map(|s| s.stage.as_str()).collect()
}

#[test]
fn identical_runs_give_identical_manifests() {
    let (cfg, data) = tiny();
    let a = run_experiment(&cfg, &data, &mut StageCache::new()).unwrap();
    let b = run_experiment(&cfg, &data, &mut StageCache::new()).unwrap();
    assert_eq!(serde_json::to_string(&a.manifest).unwrap(), serde_json::to_string(&b.manifest).unwrap());
    assert_eq!(a.f1().to_bits(), b.f1().to_bits());
    assert_eq!(a.augmented, b.augmented);
}

#[test]
fn cached_stages_do_not_change_results() {
    let (cfg, data) = tiny();
    let mut cache = StageCache::new();
    let cold = run_experiment(&cfg, &data, &mut cache).unwrap();
    assert!(!cache.is_empty());
    let warm = run_experiment(&cfg, &data, &mut cache).unwrap();
    assert_eq!(serde_json::to_value(&cold.manifest).unwrap(), serde_json::to_value(&warm.manifest).unwrap());
}

#[test]
fn every_system_runs_its_stages() {
    let (cfg, data) = tiny();
    let mut cache = StageCache::new();
    for s in System::ALL {
        let out = run_experiment(&cfg.with_system(s), &data, &mut cache).unwrap_or_else(|e| panic!("{s}: {e}"));
        let m = &out.manifest;
        assert_eq!(m.system.as_deref(), Some(s.name()));
        let st = stages(m);
        let t = s.toggles();
        assert_eq!(st.contains(&"slu.pretrain"), t.pretrain_source, "{s}: {st:?}");
        assert_eq!(st.contains(&"slu.seed"), t.finetune_seed, "{s}: {st:?}");
        assert_eq!(st.contains(&"augment"), t.use_augmentation, "{s}: {st:?}");
        let uses_generator = t.use_augmentation && t.use_sentence_generator && s != System::Naive;
        assert_eq!(st.contains(&"generator.pretrain"), uses_generator, "{s}: {st:?}");
        assert_eq!(out.generator.is_some(), uses_generator);
        assert_eq!(*st.last().unwrap(), "evaluate");
        assert!(m.report.is_some() && m.error.is_none());

        let ckpt = out.generator.as_ref().map(|g| checkpoint_id(g.params()));
        for r in &out.augmented {
            data.target_ontology.validate_act(&r.dialogue_act).unwrap();
            assert_eq!(r.generator_checkpoint, ckpt);
            assert!(!r.source_act.is_empty());
            if s != System::Naive && t.use_atomic_templates {
                assert_eq!(r.exemplars.len(), r.dialogue_act.len());
                assert_eq!(r.templates.len(), r.dialogue_act.len());
            }
        }
        if t.use_augmentation {
            assert!(!out.augmented.is_empty(), "{s}");
        }
        let realizer = m.stages.iter().find(|r| r.stage == "augment").map(|r| r.metrics["realizer"].clone());
        match s {
            System::NoSentenceGenerator => assert_eq!(realizer.unwrap(), "concatenate"),
            System::NoAtomicTemplates => {
                assert_eq!(realizer.unwrap(), "serialize");
                assert!(out.augmented[0].utterance.contains('('));
            }
            _ => {}
        }
    }
}

#[test]
fn a_failing_stage_keeps_the_manifest_so_far() {
    let (cfg, mut data) = tiny();
    data.source_train.clear();
    let fail = match run_experiment(&cfg, &data, &mut StageCache::new()) {
        Err(f) => f,
        Ok(_) => panic!("expected a failure"),
    };
    let m = &fail.manifest;
    assert!(m.error.as_deref().unwrap().contains("source training data is empty"));
    assert!(m.report.is_none());
    let st = stages(m);
    assert!(st.contains(&"augment") && !st.contains(&"evaluate"), "{st:?}");
}

#[test]
fn seed_sweep_uses_deduplicated_sizes_and_shares_pretraining() {
    let (cfg, data) = tiny();
    let mut cache = StageCache::new();
    let runs = seed_sweep(&cfg, &data, &[20, 0, 10, 10], &mut cache).unwrap();
    let sizes: Vec<usize> = runs.iter().map(|(s, _)| *s).collect();
    assert_eq!(sizes, vec![0, 10, 20]);
    for (size, r) in &runs {
        assert_eq!(r.manifest.datasets["target_seed"].records, *size);
    }
    let zero = &runs[0].1.manifest;
    for name in ["generator.finetune", "slu.seed"] {
        let st = zero.stages.iter().find(|s| s.stage == name).unwrap();
        assert!(st.metrics.get("skipped").is_some(), "{name}");
    }
    // One generator and one parser pretraining, plus a generator finetune per non-empty seed.
    assert_eq!(cache.len(), 4);
    assert!(seed_sweep(&cfg, &data, &[61], &mut cache).is_err());
}

#[test]
fn run_directory_holds_all_artifacts() {
    let (cfg, data) = tiny();
    let out = run_experiment(&cfg, &data, &mut StageCache::new()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    out.write(dir.path()).unwrap();
    for f in ["manifest.json", "report.json", "augmented.jsonl", "predictions.jsonl", "checkpoints/slu/meta.json", "checkpoints/generator/params.bin"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let m: RunManifest = serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m, out.manifest);
    let preds = std::fs::read_to_string(dir.path().join("predictions.jsonl")).unwrap();
    assert_eq!(preds.lines().count(), data.target_eval.len());
}

#[test]
fn config_files_resolve_relative_paths() {
    let dir = tempfile::tempdir().unwrap();
    let yaml = "rng_seed: 7\ncombine_count: 5\ndata:\n  target_eval: eval.jsonl\n  source_train: /abs/train.jsonl\ntoggles:\n  augmentation_policy: naive\nslu:\n  hidden_units: 16\n";
    let p = dir.path().join("pipeline.yaml");
    std::fs::write(&p, yaml).unwrap();
    let cfg = PipelineConfig::load(&p).unwrap();
    assert_eq!(cfg.rng_seed, 7);
    assert_eq!(cfg.data.target_eval.as_deref(), Some(dir.path().join("eval.jsonl").as_path()));
    assert_eq!(cfg.data.source_train.as_deref(), Some(std::path::Path::new("/abs/train.jsonl")));
    assert_eq!(System::from_toggles(&cfg.toggles), Some(System::Naive));
    assert_eq!(cfg.slu.hidden_units, 16);
    assert_eq!(cfg.slu.embedding_dim, 100);

    let json = dir.path().join("pipeline.json");
    std::fs::write(&json, serde_json::to_string(&PipelineConfig::default()).unwrap()).unwrap();
    assert_eq!(PipelineConfig::load(&json).unwrap(), PipelineConfig::default());

    std::fs::write(&p, "rng_sed: 7\n").unwrap();
    assert!(PipelineConfig::load(&p).is_err());
    std::fs::write(&p, "toggles:\n  use_atomic_templates: false\n").unwrap();
    assert!(PipelineConfig::load(&p).is_err());
}
