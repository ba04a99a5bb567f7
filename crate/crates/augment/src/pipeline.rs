//! End-to-end experiment: generator training, act synthesis, augmentation,
//! staged parser training and scoring, with a manifest of everything done.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, ensure, Context, Result};
use log::{info, warn};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use slu_augment_core::augment::{build_generator_corpus, naive_augment, nested_sample, realize, LabeledUtterance, Realizer};
use slu_augment_core::generator::GeneratorExample;
use slu_augment_core::ontology::DialogueAct;
use slu_augment_core::slu::SluExample;
use slu_augment_core::synthesis::{abridge_corpus, combine, fill_values, union_dedup, DelexDialogueAct};
use slu_augment_core::tokenize::tokenize;
use slu_augment_core::train::TrainReport;
use slu_augment_core::{
    derive_seed, score, seeded_rng, GeneratorConfig, GeneratorModel, Ontology, ParseConfig, ScoreReport, SluModel,
    SynthesisConfig, TemplateRegistry, Vocabulary,
};

use crate::checkpoint::{checkpoint_id, save_generator, save_slu};
use crate::io::{self, dataset_sha256, sha256_hex, write_json, write_jsonl, DatasetRecord};
use crate::synthetic::ExperimentData;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentationPolicy {
    /// Value substitution inside seed utterances.
    Naive,
    AtAbridge,
    AtCombine,
    AtBoth,
}

/// Which stages run and how augmented utterances are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Toggles {
    /// Pretrain the parser on the source domain.
    pub pretrain_source: bool,
    /// Finish parser training on the seed data.
    pub finetune_seed: bool,
    pub use_augmentation: bool,
    pub augmentation_policy: AugmentationPolicy,
    /// Paraphrase exemplars with the sentence generator; otherwise they are
    /// concatenated.
    pub use_sentence_generator: bool,
    /// Render acts through atomic templates; otherwise triples are serialized.
    pub use_atomic_templates: bool,
}

impl Default for Toggles {
    fn default() -> Self {
        System::AtBoth.toggles()
    }
}

impl Toggles {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            !self.use_sentence_generator || self.use_atomic_templates,
            "the sentence generator needs atomic templates"
        );
        ensure!(
            self.pretrain_source || self.finetune_seed || self.use_augmentation,
            "at least one parser training stage must be enabled"
        );
        Ok(())
    }

    fn template_based(&self) -> bool {
        self.use_augmentation && self.augmentation_policy != AugmentationPolicy::Naive
    }

    /// Drops settings that have no effect, so equal behavior compares equal.
    pub fn normalized(&self) -> Self {
        let mut t = *self;
        if !t.template_based() {
            t.use_sentence_generator = true;
            t.use_atomic_templates = true;
            if !t.use_augmentation {
                t.augmentation_policy = AugmentationPolicy::AtBoth;
            }
        }
        t
    }
}

/// The compared systems: no augmentation, the augmentation policies, and the
/// ablations of the full system (each ablation also keeps the ones above it).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum System {
    WithoutAugmentation,
    Naive,
    AtAbridge,
    AtCombine,
    AtBoth,
    NoSourcePretrain,
    NoSeedFinetune,
    NoSourceNoSeed,
    NoSentenceGenerator,
    NoAtomicTemplates,
}

impl System {
    pub const ALL: [System; 10] = [
        System::WithoutAugmentation,
        System::Naive,
        System::AtAbridge,
        System::AtCombine,
        System::AtBoth,
        System::NoSourcePretrain,
        System::NoSeedFinetune,
        System::NoSourceNoSeed,
        System::NoSentenceGenerator,
        System::NoAtomicTemplates,
    ];

    pub fn name(self) -> &'static str {
        match self {
            System::WithoutAugmentation => "without-augmentation",
            System::Naive => "naive",
            System::AtAbridge => "at-abridge",
            System::AtCombine => "at-combine",
            System::AtBoth => "at-both",
            System::NoSourcePretrain => "no-source-pretrain",
            System::NoSeedFinetune => "no-seed-finetune",
            System::NoSourceNoSeed => "no-source-no-seed",
            System::NoSentenceGenerator => "no-sentence-generator",
            System::NoAtomicTemplates => "no-atomic-templates",
        }
    }

    pub fn parse(name: &str) -> Option<System> {
        match name {
            "full" => Some(System::AtBoth),
            "w/o" | "none" => Some(System::WithoutAugmentation),
            _ => Self::ALL.into_iter().find(|s| s.name() == name),
        }
    }

    pub fn toggles(self) -> Toggles {
        let full = Toggles {
            pretrain_source: true,
            finetune_seed: true,
            use_augmentation: true,
            augmentation_policy: AugmentationPolicy::AtBoth,
            use_sentence_generator: true,
            use_atomic_templates: true,
        };
        let policy = |p| Toggles { augmentation_policy: p, ..full };
        let bare = Toggles { pretrain_source: false, finetune_seed: false, ..full };
        match self {
            System::WithoutAugmentation => Toggles { use_augmentation: false, ..full },
            System::Naive => policy(AugmentationPolicy::Naive),
            System::AtAbridge => policy(AugmentationPolicy::AtAbridge),
            System::AtCombine => policy(AugmentationPolicy::AtCombine),
            System::AtBoth => full,
            System::NoSourcePretrain => Toggles { pretrain_source: false, ..full },
            System::NoSeedFinetune => Toggles { finetune_seed: false, ..full },
            System::NoSourceNoSeed => bare,
            System::NoSentenceGenerator => Toggles { use_sentence_generator: false, ..bare },
            System::NoAtomicTemplates => Toggles {
                use_sentence_generator: false,
                use_atomic_templates: false,
                ..bare
            },
        }
        .normalized()
    }

    pub fn from_toggles(t: &Toggles) -> Option<System> {
        let t = t.normalized();
        Self::ALL.into_iter().find(|s| s.toggles() == t)
    }
}

impl fmt::Display for System {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Input files; relative paths are resolved against the config file.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataPaths {
    pub source_ontology: Option<PathBuf>,
    pub source_templates: Option<PathBuf>,
    pub source_train: Option<PathBuf>,
    pub source_dev: Option<PathBuf>,
    pub target_ontology: Option<PathBuf>,
    pub target_templates: Option<PathBuf>,
    pub target_seed: Option<PathBuf>,
    pub target_dev: Option<PathBuf>,
    pub target_eval: Option<PathBuf>,
    /// Oracle training set that seed sweeps sample from.
    pub target_pool: Option<PathBuf>,
}

/// Experiment configuration. Stage seeds are derived from `rng_seed`; the
/// `seed` fields of the model configs and `synthesis.rng_seed` are replaced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub data: DataPaths,
    pub toggles: Toggles,
    pub synthesis: SynthesisConfig,
    /// Number of acts drawn by combination.
    pub combine_count: usize,
    /// Share of the seed data held out for early stopping when no target dev
    /// set is given.
    pub seed_dev_fraction: f64,
    pub generator: GeneratorConfig,
    pub slu: ParseConfig,
    pub rng_seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            data: DataPaths::default(),
            toggles: Toggles::default(),
            synthesis: SynthesisConfig::default(),
            combine_count: 2000,
            seed_dev_fraction: 0.1,
            generator: GeneratorConfig::default(),
            slu: ParseConfig::default(),
            rng_seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.toggles.validate()?;
        self.synthesis.validate()?;
        self.generator.validate()?;
        self.slu.validate()?;
        ensure!((0.0..1.0).contains(&self.seed_dev_fraction), "seed_dev_fraction must be in [0, 1)");
        Ok(())
    }

    /// Reads a JSON or YAML config and resolves relative data paths.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg: PipelineConfig = serde_yaml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let d = &mut cfg.data;
        for p in [
            &mut d.source_ontology,
            &mut d.source_templates,
            &mut d.source_train,
            &mut d.source_dev,
            &mut d.target_ontology,
            &mut d.target_templates,
            &mut d.target_seed,
            &mut d.target_dev,
            &mut d.target_eval,
            &mut d.target_pool,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_system(&self, s: System) -> Self {
        Self { toggles: s.toggles(), ..self.clone() }
    }
}

/// Loads and validates every file named in `paths`.
pub fn load_data(paths: &DataPaths) -> Result<ExperimentData> {
    let need = |p: &Option<PathBuf>, what: &str| p.clone().ok_or_else(|| anyhow!("config is missing data.{what}"));
    let so = io::load_ontology(&need(&paths.source_ontology, "source_ontology")?)?;
    let to = io::load_ontology(&need(&paths.target_ontology, "target_ontology")?)?;
    let opt = |p: &Option<PathBuf>, o: &Ontology| p.as_deref().map(|p| io::load_dataset(p, o)).transpose();
    Ok(ExperimentData {
        source_templates: io::load_templates(&need(&paths.source_templates, "source_templates")?, &so)?,
        source_train: io::load_dataset(&need(&paths.source_train, "source_train")?, &so)?,
        source_dev: opt(&paths.source_dev, &so)?.unwrap_or_default(),
        target_templates: io::load_templates(&need(&paths.target_templates, "target_templates")?, &to)?,
        target_seed: opt(&paths.target_seed, &to)?.unwrap_or_default(),
        target_dev: opt(&paths.target_dev, &to)?,
        target_eval: io::load_dataset(&need(&paths.target_eval, "target_eval")?, &to)?,
        target_pool: opt(&paths.target_pool, &to)?.unwrap_or_default(),
        source_ontology: so,
        target_ontology: to,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub records: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub metrics: Value,
}

/// Everything needed to rerun and audit one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: u32,
    /// Named system whose toggles the config matches, if any.
    pub system: Option<String>,
    pub config: PipelineConfig,
    pub seeds: BTreeMap<String, u64>,
    pub datasets: BTreeMap<String, DatasetInfo>,
    pub stages: Vec<StageRecord>,
    pub report: Option<ScoreReport>,
    pub error: Option<String>,
}

/// Provenance-carrying augmented sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentedRecord {
    pub utterance: String,
    pub dialogue_act: DialogueAct,
    /// Delexicalized act the sample was realized from, or the seed act it was
    /// copied from for value substitution.
    pub source_act: String,
    pub exemplars: Vec<String>,
    pub templates: Vec<String>,
    pub generator_checkpoint: Option<String>,
    pub truncated: bool,
}

pub struct RunOutput {
    pub manifest: RunManifest,
    pub augmented: Vec<AugmentedRecord>,
    pub generator: Option<GeneratorModel>,
    pub slu: SluModel,
    pub predictions: Vec<DialogueAct>,
}

impl RunOutput {
    pub fn f1(&self) -> f64 {
        self.manifest.report.as_ref().map_or(0.0, |r| r.f1)
    }

    /// Writes `manifest.json`, `report.json`, `augmented.jsonl`,
    /// `predictions.jsonl` and `checkpoints/` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        write_json(&dir.join("manifest.json"), &self.manifest)?;
        write_json(&dir.join("report.json"), &self.manifest.report)?;
        write_jsonl(&dir.join("augmented.jsonl"), &self.augmented)?;
        let preds: Vec<Value> = self.predictions.iter().map(|p| json!({ "dialogue_act": p })).collect();
        write_jsonl(&dir.join("predictions.jsonl"), &preds)?;
        if let Some(g) = &self.generator {
            save_generator(&dir.join("checkpoints/generator"), g)?;
        }
        save_slu(&dir.join("checkpoints/slu"), &self.slu)?;
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
#[error("pipeline failed: {error:#}")]
pub struct PipelineFailure {
    /// Manifest up to the failing stage, with `error` set.
    pub manifest: Box<RunManifest>,
    pub error: anyhow::Error,
}

/// Trained models keyed by everything that determines them, shared across
/// runs (ablations, seed sweeps) so that identical stages train once.
#[derive(Default)]
pub struct StageCache {
    generators: BTreeMap<String, (GeneratorModel, TrainReport)>,
    parsers: BTreeMap<String, (SluModel, TrainReport)>,
}

impl StageCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.generators.len() + self.parsers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn cache_key(parts: &Value) -> String {
    sha256_hex(serde_json::to_string(parts).expect("json").as_bytes())
}

fn train_metrics(r: &TrainReport, cached: bool) -> Value {
    if cached {
        info!("reused cached stage");
    }
    json!({
        "examples": r.examples,
        "epochs": r.epochs.len(),
        "best_epoch": r.best_epoch,
        "stopped_early": r.stopped_early,
        "train_loss": r.epochs.iter().map(|e| e.train_loss).collect::<Vec<_>>(),
        "dev_score": r.epochs.iter().map(|e| e.dev_score).collect::<Vec<_>>(),
    })
}

/// Tokens every model may need: training utterances and labeled values,
/// template words, ontology values, label names and serialization marks.
pub fn build_vocabulary(data: &ExperimentData) -> Vocabulary {
    let mut tokens: BTreeSet<String> = ["(", ")", "="].iter().map(|s| s.to_string()).collect();
    let labeled = data
        .source_train
        .iter()
        .chain(&data.source_dev)
        .chain(&data.target_seed)
        .chain(data.target_dev.iter().flatten())
        .chain(&data.target_pool);
    for lu in labeled {
        tokens.extend(SluExample::new(&lu.utterance, lu.act.clone()).vocabulary_tokens());
    }
    for reg in [&data.source_templates, &data.target_templates] {
        for (_, list) in reg.iter() {
            tokens.extend(list.iter().flat_map(|t| tokenize(t.surface())).filter(|t| !t.starts_with('[')));
        }
    }
    for o in [&data.source_ontology, &data.target_ontology] {
        tokens.extend(o.acts().map(String::from));
        for s in o.slots() {
            tokens.insert(s.name().to_string());
            tokens.extend(s.values().iter().flat_map(|v| tokenize(v)));
        }
    }
    Vocabulary::build(tokens)
}

fn label_inventory(ontologies: &[&Ontology]) -> (Vec<String>, Vec<String>) {
    let acts: BTreeSet<String> = ontologies.iter().flat_map(|o| o.acts().map(String::from)).collect();
    let slots: BTreeSet<String> = ontologies.iter().flat_map(|o| o.slots().map(|s| s.name().to_string())).collect();
    (acts.into_iter().collect(), slots.into_iter().collect())
}

fn slu_examples(data: &[LabeledUtterance]) -> Vec<SluExample> {
    data.iter()
        .map(|lu| SluExample::new(&lu.utterance, lu.act.clone()))
        .filter(|e| !e.tokens.is_empty() && !e.act.is_empty())
        .collect()
}

fn generator_examples(data: &[LabeledUtterance], reg: &TemplateRegistry, o: &Ontology) -> Result<(Vec<GeneratorExample>, Value)> {
    let (corpus, report) = build_generator_corpus(data, reg, o, false)?;
    let examples: Vec<GeneratorExample> =
        corpus.iter().map(|c| c.to_example()).filter(|e| !e.target.is_empty()).collect();
    let cov = json!({ "total": report.total, "used": examples.len(), "skipped": report.skipped.len(), "empty_acts": report.empty_acts });
    Ok((examples, cov))
}

/// Splits seed data into training and early-stopping parts.
fn split_seed(seed: &[LabeledUtterance], fraction: f64, rng_seed: u64) -> (Vec<LabeledUtterance>, Vec<LabeledUtterance>) {
    let n = seed.len();
    let mut n_dev = (n as f64 * fraction).round() as usize;
    if n >= 2 && fraction > 0.0 {
        n_dev = n_dev.clamp(1, n - 1);
    } else if n < 2 {
        n_dev = 0;
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seeded_rng(rng_seed));
    let dev_set: BTreeSet<usize> = idx[..n_dev].iter().copied().collect();
    let train = (0..n).filter(|i| !dev_set.contains(i)).map(|i| seed[i].clone()).collect();
    let dev = dev_set.iter().map(|&i| seed[i].clone()).collect();
    (train, dev)
}

/// Acts to augment with: abridged seed acts and/or combined acts, filled with
/// values and deduplicated. Acts with triples the templates do not cover are
/// dropped.
fn synthesize_acts(
    policy: AugmentationPolicy,
    seed: &[LabeledUtterance],
    o: &Ontology,
    reg: &TemplateRegistry,
    cfg: &SynthesisConfig,
    combine_count: usize,
    rng_seed: u64,
) -> Result<(Vec<DialogueAct>, Value)> {
    let mut rng = seeded_rng(rng_seed);
    let covered = |d: &DelexDialogueAct| d.iter().all(|t| reg.get(t).is_some());
    let mut abridged = Vec::new();
    let mut combined = Vec::new();
    let (mut n_abridged, mut n_combined) = (0, 0);
    if matches!(policy, AugmentationPolicy::AtAbridge | AugmentationPolicy::AtBoth) {
        let delex = seed
            .iter()
            .filter(|lu| !lu.act.is_empty())
            .map(|lu| DelexDialogueAct::from_act(&lu.act, o))
            .collect::<Result<Vec<_>, _>>()?;
        let acts: Vec<DelexDialogueAct> = abridge_corpus(&delex)?.into_iter().filter(|d| covered(d)).collect();
        n_abridged = acts.len();
        if !acts.is_empty() {
            abridged = fill_values(&acts, o, cfg, &mut rng)?;
        }
    }
    if matches!(policy, AugmentationPolicy::AtCombine | AugmentationPolicy::AtBoth) && combine_count > 0 {
        let acts: Vec<DelexDialogueAct> = combine(o, cfg, combine_count, &mut rng)?.into_iter().filter(|d| covered(d)).collect();
        n_combined = acts.len();
        if !acts.is_empty() {
            combined = fill_values(&acts, o, cfg, &mut rng)?;
        }
    }
    let all = union_dedup(&[&abridged, &combined]);
    let report = json!({
        "abridged_delex": n_abridged,
        "abridged_filled": abridged.len(),
        "combined_delex": n_combined,
        "combined_filled": combined.len(),
        "total": all.len(),
    });
    Ok((all, report))
}

fn delex_string(d: &DialogueAct, o: &Ontology) -> String {
    d.iter()
        .map(|t| o.delexicalize(t).map_or_else(|_| t.to_string(), |dt| dt.to_string()))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect::<Vec<_>>()
        .join(", ")
}

struct Runner<'a> {
    cfg: &'a PipelineConfig,
    data: &'a ExperimentData,
    cache: &'a mut StageCache,
    manifest: RunManifest,
    vocab: Vocabulary,
}

impl Runner<'_> {
    fn seed(&mut self, label: &str) -> u64 {
        let s = derive_seed(self.cfg.rng_seed, label);
        self.manifest.seeds.insert(label.to_string(), s);
        s
    }

    fn record(&mut self, stage: &str, metrics: Value) {
        info!("stage {stage} done");
        self.manifest.stages.push(StageRecord { stage: stage.to_string(), metrics });
    }

    fn dataset(&mut self, name: &str, data: &[LabeledUtterance]) -> String {
        let sha = dataset_sha256(data);
        self.manifest.datasets.insert(name.to_string(), DatasetInfo { records: data.len(), sha256: sha.clone() });
        sha
    }

    fn train_generator(&mut self, seed_train: &[LabeledUtterance], seed_dev: &[LabeledUtterance]) -> Result<GeneratorModel> {
        let d = self.data;
        let (src, src_cov) = generator_examples(&d.source_train, &d.source_templates, &d.source_ontology)?;
        let (src_dev, _) = generator_examples(&d.source_dev, &d.source_templates, &d.source_ontology)?;
        let init = self.seed("generator.init");
        let mut cfg = self.cfg.generator.clone();
        cfg.train.seed = self.seed("generator.pretrain");
        let mut key = json!({
            "stage": "generator.pretrain",
            "config": cfg,
            "init": init,
            "vocab": sha256_hex(self.vocab.tokens().join("\n").as_bytes()),
            "train": self.manifest.datasets["source_train"].sha256,
            "dev": self.manifest.datasets["source_dev"].sha256,
        });
        let mut model = GeneratorModel::new(cfg, self.vocab.clone(), init)?;
        let mut trained = false;
        if src.is_empty() {
            self.record("generator.pretrain", json!({ "skipped": "empty corpus", "coverage": src_cov }));
        } else {
            let k = cache_key(&key);
            let cached = self.cache.generators.contains_key(&k);
            if !cached {
                info!("pretraining generator on {} pairs", src.len());
                let r = model.train(&src, &src_dev)?;
                self.cache.generators.insert(k.clone(), (model.clone(), r));
            }
            let (m, r) = self.cache.generators[&k].clone();
            model = m;
            let mut metrics = train_metrics(&r, cached);
            metrics["coverage"] = src_cov;
            self.record("generator.pretrain", metrics);
            trained = true;
        }
        let (tgt, tgt_cov) = generator_examples(seed_train, &d.target_templates, &d.target_ontology)?;
        let (tgt_dev, _) = generator_examples(seed_dev, &d.target_templates, &d.target_ontology)?;
        if tgt.is_empty() {
            self.record("generator.finetune", json!({ "skipped": "empty corpus", "coverage": tgt_cov }));
        } else {
            model.config_mut().train.seed = self.seed("generator.finetune");
            key = json!({
                "stage": "generator.finetune",
                "base": if trained { Some(cache_key(&key)) } else { None },
                "init": init,
                "config": model.config(),
                "train": dataset_sha256(seed_train),
                "dev": dataset_sha256(seed_dev),
            });
            let k = cache_key(&key);
            let cached = self.cache.generators.contains_key(&k);
            if !cached {
                info!("finetuning generator on {} pairs", tgt.len());
                let r = model.train(&tgt, &tgt_dev)?;
                self.cache.generators.insert(k.clone(), (model.clone(), r));
            }
            let (m, r) = self.cache.generators[&k].clone();
            model = m;
            let mut metrics = train_metrics(&r, cached);
            metrics["coverage"] = tgt_cov;
            self.record("generator.finetune", metrics);
            trained = true;
        }
        ensure!(trained, "the sentence generator has no training data");
        Ok(model)
    }

    fn augment(&mut self, seed_train: &[LabeledUtterance], seed_dev: &[LabeledUtterance]) -> Result<(Vec<AugmentedRecord>, Option<GeneratorModel>)> {
        let t = self.cfg.toggles;
        let d = self.data;
        let o = &d.target_ontology;
        if t.augmentation_policy == AugmentationPolicy::Naive {
            let mut rng = seeded_rng(self.seed("augment.naive"));
            let out = naive_augment(seed_train, o, self.cfg.synthesis.n_v, &mut rng);
            self.record("augment", json!({ "policy": "naive", "samples": out.len() }));
            let recs = out
                .into_iter()
                .map(|lu| AugmentedRecord {
                    source_act: delex_string(&lu.act, o),
                    utterance: lu.utterance,
                    dialogue_act: lu.act,
                    exemplars: Vec::new(),
                    templates: Vec::new(),
                    generator_checkpoint: None,
                    truncated: false,
                })
                .collect();
            return Ok((recs, None));
        }
        let generator = if t.use_sentence_generator { Some(self.train_generator(seed_train, seed_dev)?) } else { None };
        let synth_seed = self.seed("synthesis");
        let (acts, synth_report) =
            synthesize_acts(t.augmentation_policy, seed_train, o, &d.target_templates, &self.cfg.synthesis, self.cfg.combine_count, synth_seed)?;
        self.record("synthesis", synth_report);
        let realizer = match (&generator, t.use_atomic_templates) {
            (Some(g), _) => Realizer::Generator(g),
            (None, true) => Realizer::Concatenate,
            (None, false) => Realizer::Serialize,
        };
        let mut rng = seeded_rng(self.seed("realize"));
        let samples = realize(&acts, &d.target_templates, o, &realizer, &mut rng)?;
        let ckpt = generator.as_ref().map(|g| checkpoint_id(g.params()));
        let records: Vec<AugmentedRecord> = samples
            .into_iter()
            .map(|s| {
                let templates = s
                    .act
                    .iter()
                    .zip(&s.templates)
                    .map(|(tr, &i)| {
                        o.delexicalize(tr)
                            .ok()
                            .and_then(|dt| d.target_templates.get(&dt).and_then(|l| l.get(i)).map(|t| t.surface().to_string()))
                            .unwrap_or_default()
                    })
                    .collect();
                AugmentedRecord {
                    source_act: delex_string(&s.act, o),
                    utterance: s.utterance,
                    dialogue_act: s.act,
                    exemplars: s.exemplars,
                    templates,
                    generator_checkpoint: ckpt.clone(),
                    truncated: s.truncated,
                }
            })
            .collect();
        let truncated = records.iter().filter(|r| r.truncated).count();
        let empty = records.iter().filter(|r| tokenize(&r.utterance).is_empty()).count();
        let realizer_name = match realizer {
            Realizer::Generator(_) => "generator",
            Realizer::Concatenate => "concatenate",
            Realizer::Serialize => "serialize",
        };
        self.record(
            "augment",
            json!({ "policy": t.augmentation_policy, "realizer": realizer_name, "samples": records.len(), "truncated": truncated, "empty": empty, "generator_checkpoint": ckpt }),
        );
        Ok((records, generator))
    }

    fn train_parser(&mut self, augmented: &[LabeledUtterance], seed_train: &[LabeledUtterance], seed_dev: &[LabeledUtterance]) -> Result<SluModel> {
        let t = self.cfg.toggles;
        let d = self.data;
        let (acts, slots) = if t.pretrain_source {
            label_inventory(&[&d.source_ontology, &d.target_ontology])
        } else {
            label_inventory(&[&d.target_ontology])
        };
        let init = self.seed("slu.init");
        let mut model = SluModel::new(self.cfg.slu.clone(), self.vocab.clone(), acts.clone(), slots.clone(), init)?;
        let mut stages = 0;
        if t.pretrain_source {
            model.config_mut().train.seed = self.seed("slu.pretrain");
            let key = json!({
                "stage": "slu.pretrain",
                "config": model.config(),
                "init": init,
                "labels": [acts, slots],
                "vocab": sha256_hex(self.vocab.tokens().join("\n").as_bytes()),
                "train": self.manifest.datasets["source_train"].sha256,
                "dev": self.manifest.datasets["source_dev"].sha256,
            });
            let k = cache_key(&key);
            let cached = self.cache.parsers.contains_key(&k);
            if !cached {
                let train = slu_examples(&d.source_train);
                let dev = slu_examples(&d.source_dev);
                ensure!(!train.is_empty(), "source training data is empty");
                info!("pretraining parser on {} utterances", train.len());
                let r = model.train(&train, &dev, Some(&d.source_ontology))?;
                self.cache.parsers.insert(k.clone(), (model.clone(), r));
            }
            let (m, r) = self.cache.parsers[&k].clone();
            model = m;
            self.record("slu.pretrain", train_metrics(&r, cached));
            stages += 1;
        }
        let dev = slu_examples(seed_dev);
        let aug = slu_examples(augmented);
        if !aug.is_empty() {
            model.config_mut().train.seed = self.seed("slu.augmented");
            info!("training parser on {} augmented utterances", aug.len());
            let r = model.train(&aug, &dev, Some(&d.target_ontology))?;
            self.record("slu.augmented", train_metrics(&r, false));
            stages += 1;
        } else if t.use_augmentation {
            self.record("slu.augmented", json!({ "skipped": "no augmented data" }));
        }
        let seed = slu_examples(seed_train);
        if t.finetune_seed && !seed.is_empty() {
            model.config_mut().train.seed = self.seed("slu.seed");
            info!("finetuning parser on {} seed utterances", seed.len());
            let r = model.train(&seed, &dev, Some(&d.target_ontology))?;
            self.record("slu.seed", train_metrics(&r, false));
            stages += 1;
        } else if t.finetune_seed {
            self.record("slu.seed", json!({ "skipped": "no seed data" }));
        }
        ensure!(stages > 0, "no parser training stage had data");
        Ok(model)
    }

    fn run(&mut self) -> Result<(Vec<AugmentedRecord>, Option<GeneratorModel>, SluModel, Vec<DialogueAct>)> {
        self.cfg.validate()?;
        let d = self.data;
        ensure!(!d.target_eval.is_empty(), "evaluation set is empty");
        for (name, set) in [
            ("source_train", &d.source_train),
            ("source_dev", &d.source_dev),
            ("target_seed", &d.target_seed),
            ("target_eval", &d.target_eval),
            ("target_pool", &d.target_pool),
        ] {
            self.dataset(name, set);
        }
        if let Some(dev) = &d.target_dev {
            self.dataset("target_dev", dev);
        }
        let (seed_train, seed_dev) = match &d.target_dev {
            Some(dev) => (d.target_seed.clone(), dev.clone()),
            None => {
                let s = self.seed("seed.split");
                split_seed(&d.target_seed, self.cfg.seed_dev_fraction, s)
            }
        };
        self.dataset("seed_train", &seed_train);
        self.dataset("seed_dev", &seed_dev);
        self.record("vocabulary", json!({ "size": self.vocab.len(), "sha256": sha256_hex(self.vocab.tokens().join("\n").as_bytes()) }));

        let (augmented, generator) = if self.cfg.toggles.use_augmentation {
            self.augment(&seed_train, &seed_dev)?
        } else {
            (Vec::new(), None)
        };
        let aug_data: Vec<LabeledUtterance> =
            augmented.iter().map(|r| LabeledUtterance::new(r.utterance.clone(), r.dialogue_act.clone())).collect();
        for lu in &aug_data {
            d.target_ontology.validate_act(&lu.act).context("augmented label outside the target ontology")?;
        }
        if !aug_data.is_empty() {
            self.dataset("augmented", &aug_data);
        }
        let slu = self.train_parser(&aug_data, &seed_train, &seed_dev)?;

        let preds: Vec<DialogueAct> = d.target_eval.iter().map(|lu| slu.parse(&tokenize(&lu.utterance), Some(&d.target_ontology))).collect();
        let gold: Vec<DialogueAct> = d.target_eval.iter().map(|lu| lu.act.clone()).collect();
        let report = score(&preds, &gold)?;
        info!("f1 {:.4} on {} utterances", report.f1, gold.len());
        self.record("evaluate", json!({ "utterances": gold.len(), "f1": report.f1 }));
        self.manifest.report = Some(report);
        Ok((augmented, generator, slu, preds))
    }
}

/// Runs one experiment. On failure the manifest so far comes back with the
/// error.
pub fn run_experiment(cfg: &PipelineConfig, data: &ExperimentData, cache: &mut StageCache) -> Result<RunOutput, PipelineFailure> {
    let manifest = RunManifest {
        format_version: MANIFEST_VERSION,
        system: System::from_toggles(&cfg.toggles).map(|s| s.name().to_string()),
        config: cfg.clone(),
        seeds: BTreeMap::from([("rng_seed".to_string(), cfg.rng_seed)]),
        datasets: BTreeMap::new(),
        stages: Vec::new(),
        report: None,
        error: None,
    };
    let mut runner = Runner { cfg, data, cache, manifest, vocab: build_vocabulary(data) };
    match runner.run() {
        Ok((augmented, generator, slu, predictions)) => Ok(RunOutput { manifest: runner.manifest, augmented, generator, slu, predictions }),
        Err(error) => {
            let mut manifest = runner.manifest;
            manifest.error = Some(format!("{error:#}"));
            Err(PipelineFailure { manifest: Box::new(manifest), error })
        }
    }
}

/// Sorts and deduplicates sweep sizes, warning about repeats.
pub fn sweep_sizes(sizes: &[usize]) -> Vec<usize> {
    let uniq: Vec<usize> = sizes.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    if uniq.len() != sizes.len() {
        warn!("duplicate seed sizes ignored: {sizes:?} -> {uniq:?}");
    }
    uniq
}

/// One run per seed size on nested random subsets of the oracle pool (the
/// seed set itself when no pool is given). Source-domain stages are shared
/// through `cache`.
pub fn seed_sweep(cfg: &PipelineConfig, data: &ExperimentData, sizes: &[usize], cache: &mut StageCache) -> Result<Vec<(usize, RunOutput)>> {
    let sizes = sweep_sizes(sizes);
    let pool = if data.target_pool.is_empty() { &data.target_seed } else { &data.target_pool };
    let mut rng = seeded_rng(derive_seed(cfg.rng_seed, "seed_sweep"));
    let subsets = nested_sample(pool.len(), &sizes, &mut rng).map_err(|bad| anyhow!("seed size {bad} exceeds the pool of {}", pool.len()))?;
    let mut out = Vec::with_capacity(sizes.len());
    for (size, subset) in sizes.into_iter().zip(subsets) {
        info!("seed sweep: {size} samples");
        let mut d = data.clone();
        d.target_seed = subset.iter().map(|&i| pool[i].clone()).collect();
        let run = run_experiment(cfg, &d, cache).map_err(|f| f.error.context(format!("seed size {size}")))?;
        out.push((size, run));
    }
    Ok(out)
}

/// Dataset records for an augmented set (labels only, no provenance).
pub fn augmented_dataset(records: &[AugmentedRecord]) -> Vec<DatasetRecord> {
    records
        .iter()
        .map(|r| DatasetRecord { utterance: r.utterance.clone(), dialogue_act: r.dialogue_act.clone() })
        .collect()
}

/// Rejects a config whose toggles name no known system when one is required.
pub fn require_system(t: &Toggles) -> Result<System> {
    match System::from_toggles(t) {
        Some(s) => Ok(s),
        None => bail!("toggles {t:?} match no known system"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_system_has_distinct_valid_toggles() {
        let mut seen = BTreeSet::new();
        for s in System::ALL {
            let t = s.toggles();
            t.validate().unwrap();
            assert_eq!(System::from_toggles(&t), Some(s));
            assert_eq!(System::parse(s.name()), Some(s));
            assert!(seen.insert(format!("{t:?}")), "{s} duplicates another system");
        }
    }

    #[test]
    fn irrelevant_settings_do_not_change_the_system() {
        let mut t = System::WithoutAugmentation.toggles();
        t.augmentation_policy = AugmentationPolicy::Naive;
        t.use_sentence_generator = false;
        assert_eq!(System::from_toggles(&t), Some(System::WithoutAugmentation));
    }

    #[test]
    fn generator_without_templates_is_rejected() {
        let t = Toggles { use_atomic_templates: false, ..Toggles::default() };
        assert!(t.validate().is_err());
    }

    #[test]
    fn seed_split_is_ninety_ten() {
        let seed: Vec<LabeledUtterance> = (0..50)
            .map(|i| LabeledUtterance::new(format!("u{i}"), slu_augment_core::ontology::parse_dialogue_act("bye()").unwrap()))
            .collect();
        let (tr, dev) = split_seed(&seed, 0.1, 7);
        assert_eq!((tr.len(), dev.len()), (45, 5));
        assert_eq!(split_seed(&seed, 0.1, 7).1, dev);
        assert_eq!(split_seed(&seed[..1], 0.1, 7).0.len(), 1);
    }

    #[test]
    fn sweep_sizes_are_deduplicated() {
        assert_eq!(sweep_sizes(&[50, 0, 50, 10]), vec![0, 10, 50]);
    }
}
