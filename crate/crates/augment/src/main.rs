use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use log::info;
use serde_json::json;

use slu_augment::checkpoint::{load_generator, load_slu, save_generator, save_slu};
use slu_augment::io::{
    load_acts, load_dataset, load_ontology, load_templates, read_json, read_jsonl, read_lines, save_dataset, write_json,
    write_jsonl, ActRecord, CorpusRecord, OntologyFile, TemplateFile,
};
use slu_augment::pipeline::{load_data, run_experiment, seed_sweep, PipelineConfig, StageCache, System};
use slu_augment::synthetic::{toy_config, toy_data, ToySizes};
use slu_augment_core::augment::{realize, LabeledUtterance, Realizer};
use slu_augment_core::generator::{GeneratorExample, SourcePhrase};
use slu_augment_core::ontology::DialogueAct;
use slu_augment_core::slu::SluExample;
use slu_augment_core::synthesis::{abridge_corpus, combine, fill_values, union_dedup, DelexDialogueAct};
use slu_augment_core::templates::{exemplify_act, Selection};
use slu_augment_core::tokenize::{normalize, tokenize};
use slu_augment_core::{score, seeded_rng, GeneratorConfig, GeneratorModel, ParseConfig, SluModel, SynthesisConfig, Vocabulary};

#[derive(Parser)]
#[command(name = "slu-augment", version, about = "Data augmentation for spoken language understanding with atomic templates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Train,
    Augment,
}

#[derive(Clone, Copy, ValueEnum)]
enum Policy {
    Abridge,
    Combine,
    Both,
}

#[derive(Subcommand)]
enum Command {
    /// Pick one exemplar per triple. Train mode reads a dataset and keeps the
    /// exemplar most similar to each utterance; augment mode draws at random.
    Exemplify {
        #[arg(long)]
        ontology: PathBuf,
        #[arg(long)]
        templates: PathBuf,
        #[arg(long)]
        acts: PathBuf,
        #[arg(long, value_enum, default_value = "augment")]
        mode: Mode,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Synthesize dialogue acts by abridging seed acts and/or combining triples.
    SynthActs {
        #[arg(long)]
        ontology: PathBuf,
        #[arg(long)]
        seed_acts: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "both")]
        policy: Policy,
        #[arg(long, default_value_t = 3)]
        nc: usize,
        #[arg(long, default_value_t = 3)]
        nv: usize,
        /// Acts drawn by combination.
        #[arg(long, default_value_t = 2000)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        no_compatibility_filter: bool,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Train the sentence generator on an exemplar corpus.
    TrainGenerator {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        dev: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        init_from: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Realize dialogue acts with a trained generator.
    Generate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        acts: PathBuf,
        #[arg(long)]
        templates: PathBuf,
        #[arg(long)]
        ontology: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the parser on a dataset.
    TrainSlu {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        dev: Option<PathBuf>,
        #[arg(long)]
        ontology: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        init_from: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Parse utterances, one per line.
    Parse {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        ontology: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Triple-level precision, recall and F1.
    Score {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the full pipeline.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        ablation: Option<String>,
        /// Comma-separated seed sizes.
        #[arg(long, value_delimiter = ',')]
        seed_sweep: Option<Vec<usize>>,
        #[arg(long, default_value = "run")]
        out: PathBuf,
    },
    /// Write the scripted toy benchmark and a pipeline config for it.
    ToyDomain {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Exemplify { ontology, templates, acts, mode, seed, out } => exemplify(&ontology, &templates, &acts, mode, seed, out.as_deref()),
        Command::SynthActs { ontology, seed_acts, policy, nc, nv, count, seed, no_compatibility_filter, out, report } => {
            let cfg = SynthesisConfig { n_c: nc, n_v: nv, rng_seed: seed, compatibility_filter: !no_compatibility_filter };
            synth_acts(&ontology, seed_acts.as_deref(), policy, &cfg, count, &out, report.as_deref())
        }
        Command::TrainGenerator { corpus, dev, config, init_from, out } => train_generator(&corpus, dev.as_deref(), config.as_deref(), init_from.as_deref(), &out),
        Command::Generate { model, acts, templates, ontology, seed, out } => generate(&model, &acts, &templates, &ontology, seed, &out),
        Command::TrainSlu { train, dev, ontology, config, init_from, out } => train_slu(&train, dev.as_deref(), &ontology, config.as_deref(), init_from.as_deref(), &out),
        Command::Parse { model, input, ontology, out } => parse(&model, &input, ontology.as_deref(), &out),
        Command::Score { pred, gold, out } => score_files(&pred, &gold, out.as_deref()),
        Command::Run { config, ablation, seed_sweep, out } => run(&config, ablation.as_deref(), seed_sweep.as_deref(), &out),
        Command::ToyDomain { out, seed } => toy_domain(&out, seed),
    }
}

fn emit<T: serde::Serialize>(out: Option<&Path>, items: &[T]) -> Result<()> {
    match out {
        Some(p) => write_jsonl(p, items),
        None => {
            for it in items {
                println!("{}", serde_json::to_string(it)?);
            }
            Ok(())
        }
    }
}

fn exemplify(ontology: &Path, templates: &Path, acts: &Path, mode: Mode, seed: u64, out: Option<&Path>) -> Result<()> {
    let o = load_ontology(ontology)?;
    let reg = load_templates(templates, &o)?;
    let mut rng = seeded_rng(seed);
    let inputs: Vec<(DialogueAct, Option<String>)> = match mode {
        Mode::Train => load_dataset(acts, &o)?.into_iter().map(|lu| (lu.act, Some(lu.utterance))).collect(),
        Mode::Augment => load_acts(acts)?.into_iter().map(|a| (a, None)).collect(),
    };
    let mut rows = Vec::new();
    for (i, (act, utt)) in inputs.iter().enumerate() {
        let exemplars = match utt {
            Some(u) => {
                let target = normalize(u);
                exemplify_act(act, &reg, &o, &mut Selection::train(&target), true)
            }
            None => exemplify_act(act, &reg, &o, &mut Selection::Augment(&mut rng), true),
        }
        .with_context(|| format!("record {}", i + 1))?;
        rows.push(json!({
            "dialogue_act": act,
            "exemplars": exemplars.iter().map(|e| e.text()).collect::<Vec<_>>(),
            "templates": exemplars.iter().map(|e| e.template).collect::<Vec<_>>(),
        }));
    }
    emit(out, &rows)
}

fn synth_acts(ontology: &Path, seed_acts: Option<&Path>, policy: Policy, cfg: &SynthesisConfig, count: usize, out: &Path, report: Option<&Path>) -> Result<()> {
    let o = load_ontology(ontology)?;
    cfg.validate()?;
    let mut rng = seeded_rng(cfg.rng_seed);
    let (mut abridged, mut combined) = (Vec::new(), Vec::new());
    let mut counts = BTreeMap::new();
    if matches!(policy, Policy::Abridge | Policy::Both) {
        let path = seed_acts.context("--seed-acts is required for abridgement")?;
        let seed: Vec<DelexDialogueAct> = load_acts(path)?
            .iter()
            .filter(|a| !a.is_empty())
            .map(|a| DelexDialogueAct::from_act(a, &o))
            .collect::<Result<_, _>>()?;
        let delex: Vec<DelexDialogueAct> = abridge_corpus(&seed)?.into_iter().collect();
        counts.insert("seed_acts", seed.len());
        counts.insert("abridged_delex", delex.len());
        if !delex.is_empty() {
            abridged = fill_values(&delex, &o, cfg, &mut rng)?;
        }
        counts.insert("abridged_filled", abridged.len());
    }
    if matches!(policy, Policy::Combine | Policy::Both) {
        let delex = combine(&o, cfg, count, &mut rng)?;
        counts.insert("combined_delex", delex.len());
        if !delex.is_empty() {
            combined = fill_values(&delex, &o, cfg, &mut rng)?;
        }
        counts.insert("combined_filled", combined.len());
    }
    let all = union_dedup(&[&abridged, &combined]);
    counts.insert("total", all.len());
    let records: Vec<ActRecord> = all.into_iter().map(|a| ActRecord::Object { dialogue_act: a }).collect();
    write_jsonl(out, &records)?;
    println!("{}", serde_json::to_string_pretty(&counts)?);
    if let Some(p) = report {
        write_json(p, &counts)?;
    }
    Ok(())
}

fn corpus_examples(path: &Path) -> Result<Vec<GeneratorExample>> {
    let records: Vec<CorpusRecord> = read_jsonl(path)?;
    records
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            let exemplars = r
                .exemplars
                .iter()
                .enumerate()
                .map(|(j, e)| {
                    let mut p = SourcePhrase::plain(tokenize(e));
                    if let Some(spans) = r.value_spans.as_ref().and_then(|s| s.get(j)) {
                        for &k in spans {
                            ensure!(k < p.tokens.len(), "{}:{}: value span {k} outside exemplar {j}", path.display(), i + 1);
                            p.value_mask[k] = true;
                        }
                    }
                    Ok(p)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(GeneratorExample { exemplars, target: tokenize(&r.utterance) })
        })
        .collect()
}

fn train_generator(corpus: &Path, dev: Option<&Path>, config: Option<&Path>, init_from: Option<&Path>, out: &Path) -> Result<()> {
    let train = corpus_examples(corpus)?;
    let dev = dev.map(corpus_examples).transpose()?.unwrap_or_default();
    let mut model = match init_from {
        Some(p) => {
            let mut m = load_generator(p)?;
            if let Some(c) = config {
                *m.config_mut() = read_json(c)?;
            }
            m
        }
        None => {
            let cfg: GeneratorConfig = config.map(read_json).transpose()?.unwrap_or_default();
            let tokens = train.iter().chain(&dev).flat_map(|e| e.target.iter().chain(e.exemplars.iter().flat_map(|p| &p.tokens)));
            GeneratorModel::new(cfg.clone(), Vocabulary::build(tokens), cfg.train.seed)?
        }
    };
    model.config().validate()?;
    info!("training generator on {} pairs", train.len());
    let report = model.train(&train, &dev)?;
    let id = save_generator(out, &model)?;
    write_json(&out.join("train_report.json"), &report)?;
    println!("{}", json!({ "checkpoint_id": id, "epochs": report.epochs.len(), "best_epoch": report.best_epoch }));
    Ok(())
}

fn generate(model: &Path, acts: &Path, templates: &Path, ontology: &Path, seed: u64, out: &Path) -> Result<()> {
    let m = load_generator(model)?;
    let o = load_ontology(ontology)?;
    let reg = load_templates(templates, &o)?;
    let acts = load_acts(acts)?;
    let id = slu_augment::checkpoint::checkpoint_id(m.params());
    let samples = realize(&acts, &reg, &o, &Realizer::Generator(&m), &mut seeded_rng(seed))?;
    let rows: Vec<_> = samples
        .iter()
        .map(|s| {
            json!({
                "utterance": s.utterance,
                "dialogue_act": s.act,
                "exemplars": s.exemplars,
                "templates": s.templates,
                "truncated": s.truncated,
                "generator_checkpoint": id,
            })
        })
        .collect();
    write_jsonl(out, &rows)
}

fn slu_examples(data: &[LabeledUtterance]) -> Vec<SluExample> {
    data.iter().map(|lu| SluExample::new(&lu.utterance, lu.act.clone())).filter(|e| !e.tokens.is_empty()).collect()
}

fn train_slu(train: &Path, dev: Option<&Path>, ontology: &Path, config: Option<&Path>, init_from: Option<&Path>, out: &Path) -> Result<()> {
    let o = load_ontology(ontology)?;
    let train = slu_examples(&load_dataset(train, &o)?);
    let dev = dev.map(|d| load_dataset(d, &o)).transpose()?.map(|d| slu_examples(&d)).unwrap_or_default();
    let mut model = match init_from {
        Some(p) => {
            let mut m = load_slu(p)?;
            if let Some(c) = config {
                *m.config_mut() = read_json(c)?;
            }
            m
        }
        None => {
            let cfg: ParseConfig = config.map(read_json).transpose()?.unwrap_or_default();
            let mut tokens: Vec<String> = train.iter().chain(&dev).flat_map(|e| e.vocabulary_tokens()).collect();
            tokens.extend(o.slots().flat_map(|s| s.values().iter().flat_map(|v| tokenize(v))));
            let acts = o.acts().map(String::from).collect();
            let slots = o.slots().map(|s| s.name().to_string()).collect();
            SluModel::new(cfg.clone(), Vocabulary::build(tokens), acts, slots, cfg.train.seed)?
        }
    };
    model.config().validate()?;
    info!("training parser on {} utterances", train.len());
    let report = model.train(&train, &dev, Some(&o))?;
    let id = save_slu(out, &model)?;
    write_json(&out.join("train_report.json"), &report)?;
    println!("{}", json!({ "checkpoint_id": id, "epochs": report.epochs.len(), "best_epoch": report.best_epoch }));
    Ok(())
}

fn parse(model: &Path, input: &Path, ontology: Option<&Path>, out: &Path) -> Result<()> {
    let m = load_slu(model)?;
    let o = ontology.map(load_ontology).transpose()?;
    let rows: Vec<_> = read_lines(input)?
        .iter()
        .map(|u| json!({ "utterance": u, "dialogue_act": m.parse(&tokenize(u), o.as_ref()) }))
        .collect();
    write_jsonl(out, &rows)
}

fn score_files(pred: &Path, gold: &Path, out: Option<&Path>) -> Result<()> {
    let pred: Vec<DialogueAct> = read_jsonl::<ActRecord>(pred)?.iter().map(|r| r.act().clone()).collect();
    let gold: Vec<DialogueAct> = read_jsonl::<ActRecord>(gold)?.iter().map(|r| r.act().clone()).collect();
    let report = score(&pred, &gold)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    if let Some(p) = out {
        write_json(p, &report)?;
    }
    Ok(())
}

fn run(config: &Path, ablation: Option<&str>, sweep: Option<&[usize]>, out: &Path) -> Result<()> {
    let mut cfg = PipelineConfig::load(config)?;
    if let Some(name) = ablation {
        let Some(s) = System::parse(name) else {
            let known: Vec<&str> = System::ALL.iter().map(|s| s.name()).collect();
            bail!("unknown system {name:?}; known: {}", known.join(", "));
        };
        cfg = cfg.with_system(s);
    }
    let data = load_data(&cfg.data)?;
    let mut cache = StageCache::new();
    match sweep {
        None => match run_experiment(&cfg, &data, &mut cache) {
            Ok(r) => {
                r.write(out)?;
                println!("{}", json!({ "f1": r.f1(), "out": out }));
                Ok(())
            }
            Err(f) => {
                std::fs::create_dir_all(out)?;
                write_json(&out.join("manifest.json"), &f.manifest)?;
                Err(f.error)
            }
        },
        Some(sizes) => {
            let runs = seed_sweep(&cfg, &data, sizes, &mut cache)?;
            let mut summary = Vec::new();
            for (size, r) in &runs {
                r.write(&out.join(format!("seed-{size}")))?;
                summary.push(json!({ "seed_size": size, "f1": r.f1() }));
            }
            std::fs::create_dir_all(out)?;
            write_json(&out.join("sweep.json"), &summary)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
            Ok(())
        }
    }
}

fn toy_domain(out: &Path, seed: u64) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let d = toy_data(seed, ToySizes::default());
    write_json(&out.join("source_ontology.json"), &OntologyFile::from_ontology(&d.source_ontology))?;
    write_json(&out.join("target_ontology.json"), &OntologyFile::from_ontology(&d.target_ontology))?;
    write_json(&out.join("source_templates.json"), &TemplateFile::from_registry(&d.source_templates))?;
    write_json(&out.join("target_templates.json"), &TemplateFile::from_registry(&d.target_templates))?;
    for (name, set) in [
        ("source_train", &d.source_train),
        ("source_dev", &d.source_dev),
        ("target_seed", &d.target_seed),
        ("target_eval", &d.target_eval),
        ("target_pool", &d.target_pool),
    ] {
        save_dataset(&out.join(format!("{name}.jsonl")), set)?;
    }
    let mut cfg = toy_config(seed);
    let p = |n: &str| Some(PathBuf::from(n));
    cfg.data.source_ontology = p("source_ontology.json");
    cfg.data.source_templates = p("source_templates.json");
    cfg.data.source_train = p("source_train.jsonl");
    cfg.data.source_dev = p("source_dev.jsonl");
    cfg.data.target_ontology = p("target_ontology.json");
    cfg.data.target_templates = p("target_templates.json");
    cfg.data.target_seed = p("target_seed.jsonl");
    cfg.data.target_eval = p("target_eval.jsonl");
    cfg.data.target_pool = p("target_pool.jsonl");
    write_json(&out.join("pipeline.json"), &cfg)?;
    println!("{}", out.join("pipeline.json").display());
    Ok(())
}
