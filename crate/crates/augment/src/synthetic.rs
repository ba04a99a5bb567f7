//! A scripted two-domain benchmark with a programmatic gold realizer.
//!
//! The source domain is a restaurant finder (food, area, price range). The
//! target domain asks about venues (food, area, venue type, television) and
//! shares only part of its vocabulary and phrasing with the source. Both
//! domains have hand-written atomic templates that are terser than the gold
//! utterances, so paraphrasing them into natural sentences has to be learned.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;

use slu_augment_core::augment::LabeledUtterance;
use slu_augment_core::ontology::{DelexTriple, DialogueAct, Triple};
use slu_augment_core::synthesis::compatible;
use slu_augment_core::train::TrainConfig;
use slu_augment_core::{seeded_rng, GeneratorConfig, Ontology, ParseConfig, SlotDef, SlotKind, TemplateRegistry};

use crate::pipeline::PipelineConfig;

/// Static description of one domain.
pub struct DomainSpec {
    pub acts: &'static [&'static str],
    /// `(name, enumerable, values)`.
    pub slots: &'static [(&'static str, bool, &'static [&'static str])],
    /// `(delex triple, sampling weight, gold phrases with {} for the value)`.
    pub phrases: &'static [(&'static str, u32, &'static [&'static str])],
    pub templates: &'static [(&'static str, &'static [&'static str])],
}

const ACTS: &[&str] = &["affirm", "bye", "deny", "inform", "request", "thankyou"];

pub const SOURCE: DomainSpec = DomainSpec {
    acts: ACTS,
    slots: &[
        ("food", false, &["thai", "chinese", "italian", "indian", "french", "british", "european", "portuguese", "lebanese", "seafood"]),
        ("area", false, &["north", "south", "east", "west", "centre"]),
        ("pricerange", true, &["cheap", "moderate", "expensive"]),
    ],
    phrases: &[
        ("inform(food=[food])", 10, &["{} food", "serving {} food", "a {} restaurant", "{}"]),
        ("inform(area=[area])", 8, &["in the {}", "in the {} part of town", "{} part of town", "somewhere in the {}"]),
        ("inform(pricerange=cheap)", 3, &["cheap", "a cheap place", "something cheap", "inexpensive"]),
        ("inform(pricerange=moderate)", 3, &["moderately priced", "in the moderate price range", "moderate"]),
        ("inform(pricerange=expensive)", 3, &["expensive", "upscale", "in the expensive price range"]),
        ("deny(food=[food])", 3, &["not {} food", "no {}", "i don't want {}"]),
        ("deny(area=[area])", 2, &["not in the {}", "not the {}"]),
        ("request(food)", 3, &["what type of food do they serve", "what kind of food is it"]),
        ("request(area)", 3, &["what area is it in", "what part of town is it"]),
        ("request(pricerange)", 3, &["what is the price range", "how expensive is it"]),
        ("affirm()", 3, &["yes", "yeah", "right"]),
        ("thankyou()", 3, &["thank you", "thanks"]),
        ("bye()", 3, &["good bye", "bye"]),
    ],
    templates: &[
        ("inform(food=[food])", &["[food]", "[food] food"]),
        ("inform(area=[area])", &["[area]", "in the [area]"]),
        ("inform(pricerange=cheap)", &["cheap", "cheap price"]),
        ("inform(pricerange=moderate)", &["moderate", "moderate price"]),
        ("inform(pricerange=expensive)", &["expensive", "expensive price"]),
        ("deny(food=[food])", &["not [food]", "no [food] food"]),
        ("deny(area=[area])", &["not [area]", "not in the [area]"]),
        ("request(food)", &["food type", "what food"]),
        ("request(area)", &["area", "what area"]),
        ("request(pricerange)", &["price range", "what price"]),
        ("affirm()", &["yes", "right"]),
        ("thankyou()", &["thank you", "thanks"]),
        ("bye()", &["goodbye", "bye"]),
    ],
};

pub const TARGET: DomainSpec = DomainSpec {
    acts: ACTS,
    slots: &[
        ("food", false, &["thai", "chinese", "italian", "indian", "french", "mexican", "korean", "greek", "turkish", "spanish", "vietnamese", "japanese"]),
        ("area", false, &["cherry hinton", "girton", "trumpington", "chesterton", "barnwell", "fen ditton", "arbury", "romsey", "newnham", "kings hedges"]),
        ("type", false, &["restaurant", "pub", "coffee shop", "bar", "cafe", "bistro"]),
        ("hastv", true, &["true", "false"]),
    ],
    phrases: &[
        ("inform(food=[food])", 8, &["{} food", "serving {} food", "{}"]),
        ("inform(area=[area])", 8, &["in {}", "near {}", "in the {} area", "{}"]),
        ("inform(type=[type])", 8, &["a {}", "{}", "some kind of {}"]),
        ("inform(hastv=true)", 3, &["with a television", "that has a tv", "with tv"]),
        ("inform(hastv=false)", 3, &["without a television", "with no tv", "that has no television"]),
        ("deny(food=[food])", 2, &["not {} food", "no {}", "i don't want {}"]),
        ("deny(area=[area])", 2, &["not in {}", "not near {}"]),
        ("deny(type=[type])", 2, &["not a {}", "i don't want a {}"]),
        ("request(food)", 2, &["what type of food do they serve", "what kind of food is it"]),
        ("request(area)", 2, &["what area is it in", "where is it"]),
        ("request(type)", 2, &["what kind of venue is it", "what type of place is it"]),
        ("request(hastv)", 2, &["does it have a television", "is there a tv"]),
        ("affirm()", 3, &["yes", "yeah", "right"]),
        ("thankyou()", 3, &["thank you", "thanks"]),
        ("bye()", 3, &["good bye", "bye"]),
    ],
    templates: &[
        ("inform(food=[food])", &["[food]", "[food] food"]),
        ("inform(area=[area])", &["[area]", "in [area]"]),
        ("inform(type=[type])", &["[type]", "a [type]"]),
        ("inform(hastv=true)", &["with television", "has a tv"]),
        ("inform(hastv=false)", &["without television", "no tv"]),
        ("deny(food=[food])", &["not [food]", "no [food] food"]),
        ("deny(area=[area])", &["not [area]", "not in [area]"]),
        ("deny(type=[type])", &["not [type]", "not a [type]"]),
        ("request(food)", &["food type", "what food"]),
        ("request(area)", &["area", "what area"]),
        ("request(type)", &["venue type", "what type of venue"]),
        ("request(hastv)", &["television", "has a tv ?"]),
        ("affirm()", &["yes", "right"]),
        ("thankyou()", &["thank you", "thanks"]),
        ("bye()", &["goodbye", "bye"]),
    ],
};

const INFORM_CARRIERS: &[&str] = &["i'm looking for", "i want", "i need", "find me", ""];

impl DomainSpec {
    pub fn ontology(&self) -> Ontology {
        let slots = self.slots.iter().map(|(name, enumerable, values)| {
            let kind = if *enumerable { SlotKind::Enumerable } else { SlotKind::NonEnumerable };
            SlotDef::new(name, kind, values.iter().map(|v| v.to_string()).collect()).expect("valid slot")
        });
        let universe = self.phrases.iter().map(|(t, _, _)| DelexTriple::parse(t).expect("valid triple"));
        Ontology::new(self.acts.iter().map(|a| a.to_string()), slots, universe).expect("valid ontology")
    }

    pub fn templates(&self) -> TemplateRegistry {
        TemplateRegistry::from_pairs(self.templates.iter().map(|(k, v)| (*k, v.to_vec()))).expect("valid templates")
    }

    /// Number of lexicon and allowed values over all slots.
    pub fn value_count(&self) -> usize {
        self.slots.iter().map(|s| s.2.len()).sum()
    }

    fn sample_act<R: Rng>(&self, o: &Ontology, rng: &mut R) -> DialogueAct {
        let universe: Vec<(DelexTriple, u32)> =
            self.phrases.iter().map(|(t, w, _)| (DelexTriple::parse(t).expect("valid triple"), *w)).collect();
        let size = match rng.gen_range(0..20) {
            0..=9 => 1,
            10..=16 => 2,
            _ => 3,
        };
        loop {
            let picked: Vec<&(DelexTriple, u32)> = universe
                .choose_multiple_weighted(&mut *rng, size, |(_, w)| f64::from(*w))
                .expect("positive weights")
                .collect();
            let delex: Vec<&DelexTriple> = picked.iter().map(|(d, _)| d).collect();
            if !compatible(&delex) {
                continue;
            }
            // Distinct values per slot so that deny and inform never coincide.
            let mut used: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
            let mut act = DialogueAct::new();
            for d in delex {
                let value = if d.is_placeholder() {
                    let slot = d.slot().expect("placeholder has a slot");
                    let taken = used.entry(slot).or_default();
                    let values: Vec<&str> = o
                        .slot(slot)
                        .expect("known slot")
                        .values()
                        .iter()
                        .map(String::as_str)
                        .filter(|v| !taken.contains(v))
                        .collect();
                    let v = *values.choose(&mut *rng).expect("slot has values");
                    taken.push(v);
                    Some(v)
                } else {
                    None
                };
                act.insert(o.lexicalize(d, value).expect("valid lexicalization"));
            }
            return act;
        }
    }

    fn phrase<R: Rng>(&self, t: &Triple, o: &Ontology, rng: &mut R) -> String {
        let d = o.delexicalize(t).expect("act from this domain");
        let key = d.to_string();
        let (_, _, options) = self.phrases.iter().find(|(k, _, _)| *k == key).expect("phrases for every triple");
        let p = options.choose(rng).expect("non-empty phrase list");
        match (d.is_placeholder(), t.value()) {
            (true, Some(v)) => p.replace("{}", v),
            _ => p.to_string(),
        }
    }

    /// The gold realizer: a natural sentence for `act`.
    pub fn realize<R: Rng>(&self, act: &DialogueAct, o: &Ontology, rng: &mut R) -> String {
        let of = |name: &str| act.iter().filter(|t| t.act() == name).collect::<Vec<_>>();
        let mut parts: Vec<String> = Vec::new();
        if !of("affirm").is_empty() {
            parts.push(self.phrase(&Triple::act_only("affirm"), o, rng));
        }
        let denies: Vec<String> = of("deny").iter().map(|t| self.phrase(t, o, rng)).collect();
        let mut informs: Vec<String> = of("inform").iter().map(|t| self.phrase(t, o, rng)).collect();
        informs.shuffle(rng);
        if !denies.is_empty() {
            parts.push(denies.join(" and "));
        }
        if !informs.is_empty() {
            let mut s = String::new();
            if !denies.is_empty() {
                s.push_str("but ");
            }
            let carrier = INFORM_CARRIERS.choose(rng).expect("carriers");
            if !carrier.is_empty() {
                s.push_str(carrier);
                s.push(' ');
            }
            let joiner = if rng.gen_bool(0.5) { " " } else { " and " };
            s.push_str(&informs.join(joiner));
            if rng.gen_bool(0.25) {
                s.push_str(" please");
            }
            parts.push(s);
        }
        let requests: Vec<String> = of("request").iter().map(|t| self.phrase(t, o, rng)).collect();
        if !requests.is_empty() {
            let r = requests.join(" and ");
            parts.push(if parts.is_empty() { r } else { format!("and {r}") });
        }
        for name in ["thankyou", "bye"] {
            if !of(name).is_empty() {
                parts.push(self.phrase(&Triple::act_only(name), o, rng));
            }
        }
        parts.join(" ")
    }

    /// `n` labeled utterances drawn from the domain's act distribution.
    pub fn sample<R: Rng>(&self, o: &Ontology, n: usize, rng: &mut R) -> Vec<LabeledUtterance> {
        (0..n)
            .map(|_| {
                let act = self.sample_act(o, rng);
                LabeledUtterance::new(self.realize(&act, o, rng), act)
            })
            .collect()
    }
}

/// Split sizes of the toy benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ToySizes {
    pub source_train: usize,
    pub source_dev: usize,
    /// Oracle target training set; seed samples are drawn from it.
    pub target_pool: usize,
    pub target_seed: usize,
    pub target_eval: usize,
}

impl Default for ToySizes {
    fn default() -> Self {
        Self {
            source_train: 400,
            source_dev: 50,
            target_pool: 500,
            target_seed: 50,
            target_eval: 300,
        }
    }
}

/// Every input a pipeline run needs, already loaded.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub source_ontology: Ontology,
    pub source_templates: TemplateRegistry,
    pub source_train: Vec<LabeledUtterance>,
    pub source_dev: Vec<LabeledUtterance>,
    pub target_ontology: Ontology,
    pub target_templates: TemplateRegistry,
    pub target_seed: Vec<LabeledUtterance>,
    pub target_dev: Option<Vec<LabeledUtterance>>,
    pub target_eval: Vec<LabeledUtterance>,
    /// Oracle training set for seed sweeps; empty when not supplied.
    pub target_pool: Vec<LabeledUtterance>,
}

/// Generates the toy benchmark. The seed set is a random subset of the pool.
pub fn toy_data(seed: u64, sizes: ToySizes) -> ExperimentData {
    assert!(sizes.target_seed <= sizes.target_pool, "seed must fit in the pool");
    let mut rng = seeded_rng(seed);
    let (so, to) = (SOURCE.ontology(), TARGET.ontology());
    let source_train = SOURCE.sample(&so, sizes.source_train, &mut rng);
    let source_dev = SOURCE.sample(&so, sizes.source_dev, &mut rng);
    let target_pool = TARGET.sample(&to, sizes.target_pool, &mut rng);
    let target_eval = TARGET.sample(&to, sizes.target_eval, &mut rng);
    let target_seed = target_pool.choose_multiple(&mut rng, sizes.target_seed).cloned().collect();
    ExperimentData {
        source_templates: SOURCE.templates(),
        source_ontology: so,
        source_train,
        source_dev,
        target_templates: TARGET.templates(),
        target_ontology: to,
        target_seed,
        target_dev: None,
        target_eval,
        target_pool,
    }
}

/// Pipeline settings sized for the toy benchmark on a CPU.
pub fn toy_config(rng_seed: u64) -> PipelineConfig {
    let train = TrainConfig {
        dropout_rate: 0.2,
        batch_size: 10,
        learning_rate: 0.005,
        max_epochs: 30,
        patience: Some(5),
        ..TrainConfig::default()
    };
    PipelineConfig {
        combine_count: 300,
        generator: GeneratorConfig {
            embedding_dim: 32,
            hidden_units: 64,
            max_decode_len: 30,
            tfd_rate: 0.5,
            train: train.clone(),
        },
        slu: ParseConfig {
            embedding_dim: 32,
            hidden_units: 64,
            label_dim: 16,
            train,
            ..ParseConfig::default()
        },
        rng_seed,
        ..PipelineConfig::default()
    }
}
