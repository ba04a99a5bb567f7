//! Corpus construction and augmentation around the generator.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::generator::{GeneratorError, GeneratorExample, GeneratorModel, SourcePhrase};
use crate::ontology::{DialogueAct, Ontology, SlotKind, Triple};
use crate::templates::{exemplify_act, Exemplar, Selection, TemplateError, TemplateRegistry};
use crate::tokenize::{detokenize, tokenize};

/// An utterance with its dialogue act.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledUtterance {
    pub utterance: String,
    pub act: DialogueAct,
}

impl LabeledUtterance {
    pub fn new(utterance: impl Into<String>, act: DialogueAct) -> Self {
        Self {
            utterance: utterance.into(),
            act,
        }
    }
}

/// Exemplars chosen for one labeled utterance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusEntry {
    pub exemplars: Vec<Exemplar>,
    pub utterance: String,
    pub act: DialogueAct,
}

impl CorpusEntry {
    pub fn to_example(&self) -> GeneratorExample {
        GeneratorExample {
            exemplars: self.exemplars.iter().map(SourcePhrase::from).collect(),
            target: tokenize(&self.utterance),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub total: usize,
    pub used: usize,
    pub empty_acts: usize,
    /// `(dataset index, uncovered delexicalized triples)`.
    pub skipped: Vec<(usize, Vec<String>)>,
}

/// Pairs every labeled utterance with the exemplars most similar to it.
/// In strict mode the first coverage failure is an error; otherwise uncovered
/// utterances are skipped and listed in the report.
pub fn build_generator_corpus(
    data: &[LabeledUtterance],
    reg: &TemplateRegistry,
    o: &Ontology,
    strict: bool,
) -> Result<(Vec<CorpusEntry>, CoverageReport), TemplateError> {
    let mut report = CoverageReport {
        total: data.len(),
        ..Default::default()
    };
    let mut out = Vec::new();
    for (i, ex) in data.iter().enumerate() {
        if ex.act.is_empty() {
            report.empty_acts += 1;
            continue;
        }
        let target = crate::tokenize::normalize(&ex.utterance);
        match exemplify_act(&ex.act, reg, o, &mut Selection::train(&target), true) {
            Ok(exemplars) => out.push(CorpusEntry {
                exemplars,
                utterance: ex.utterance.clone(),
                act: ex.act.clone(),
            }),
            Err(TemplateError::Uncovered(missing)) if !strict => report.skipped.push((i, missing)),
            Err(e) => return Err(e),
        }
    }
    report.used = out.len();
    Ok((out, report))
}

fn find_span(haystack: &[String], needle: &[String]) -> Option<usize> {
    if needle.is_empty() || needle.len() > haystack.len() {
        return None;
    }
    (0..=haystack.len() - needle.len()).find(|&i| haystack[i..i + needle.len()] == *needle)
}

/// Non-enumerable triples of `ex` whose value occurs verbatim (token-wise) in
/// the utterance.
fn substitutable(ex: &LabeledUtterance, o: &Ontology) -> Vec<Triple> {
    let tokens = tokenize(&ex.utterance);
    ex.act
        .iter()
        .filter(|t| {
            let non_enum = t
                .slot()
                .and_then(|s| o.slot(s))
                .is_some_and(|d| d.kind() == SlotKind::NonEnumerable);
            non_enum && t.value().is_some_and(|v| find_span(&tokens, &tokenize(v)).is_some())
        })
        .cloned()
        .collect()
}

fn substitute(ex: &LabeledUtterance, old: &Triple, new_value: &str) -> Option<LabeledUtterance> {
    let tokens = tokenize(&ex.utterance);
    let from = tokenize(old.value()?);
    let at = find_span(&tokens, &from)?;
    let mut out = tokens[..at].to_vec();
    out.extend(tokenize(new_value));
    out.extend_from_slice(&tokens[at + from.len()..]);
    let mut act = DialogueAct::new();
    for t in ex.act.iter() {
        act.insert(if t == old { t.replace_value(new_value).ok()? } else { t.clone() });
    }
    Some(LabeledUtterance::new(detokenize(&out), act))
}

/// Value-substitution baseline. Originals are kept; samples whose utterance
/// contains a labeled non-enumerable value are copied with that value replaced
/// (in text and label) by another value of the same slot until every value of
/// every substitutable slot occurs at least `n_v` times.
pub fn naive_augment<R: Rng + ?Sized>(seed: &[LabeledUtterance], o: &Ontology, n_v: usize, rng: &mut R) -> Vec<LabeledUtterance> {
    let mut out: Vec<LabeledUtterance> = seed.to_vec();
    // slot -> (sample index, triple) pairs usable as substitution sites
    let mut sites: BTreeMap<String, Vec<(usize, Triple)>> = BTreeMap::new();
    for (i, ex) in seed.iter().enumerate() {
        for t in substitutable(ex, o) {
            sites.entry(t.slot().unwrap_or_default().to_string()).or_default().push((i, t));
        }
    }
    let mut counts: BTreeMap<(String, String), usize> = BTreeMap::new();
    for slot in sites.keys() {
        for v in o.slot(slot).map(|d| d.values()).unwrap_or(&[]) {
            counts.insert((slot.clone(), v.clone()), 0);
        }
    }
    let record = |counts: &mut BTreeMap<(String, String), usize>, ex: &LabeledUtterance| {
        for t in ex.act.iter() {
            if let (Some(s), Some(v)) = (t.slot(), t.value()) {
                if let Some(c) = counts.get_mut(&(s.to_string(), v.to_string())) {
                    *c += 1;
                }
            }
        }
    };
    for ex in &out {
        record(&mut counts, ex);
    }
    let keys: Vec<(String, String)> = counts.keys().cloned().collect();
    for (slot, value) in keys {
        while counts[&(slot.clone(), value.clone())] < n_v {
            // A site whose act does not already carry this value for the slot.
            let usable: Vec<&(usize, Triple)> = sites[&slot]
                .iter()
                .filter(|(i, _)| !seed[*i].act.iter().any(|t| t.slot() == Some(&slot) && t.value() == Some(&value)))
                .collect();
            let Some((i, t)) = usable.choose(rng).copied() else { break };
            match substitute(&seed[*i], t, &value) {
                Some(new) => {
                    record(&mut counts, &new);
                    out.push(new);
                }
                None => break,
            }
        }
    }
    out
}

/// Random nested subsets: one shuffle of `0..pool`, then a prefix per size,
/// so a larger size always contains every smaller one.
pub fn nested_sample(pool: usize, sizes: &[usize], rng: &mut dyn RngCore) -> Result<Vec<Vec<usize>>, usize> {
    if let Some(&bad) = sizes.iter().find(|&&s| s > pool) {
        return Err(bad);
    }
    let mut order: Vec<usize> = (0..pool).collect();
    order.shuffle(rng);
    Ok(sizes.iter().map(|&s| order[..s].to_vec()).collect())
}

/// Tokens of the serialized triple, e.g. `inform ( food = thai )`.
pub fn triple_tokens(t: &Triple) -> Vec<String> {
    let mut out = alloc::vec![t.act().to_string(), "(".to_string()];
    if let Some(s) = t.slot() {
        out.push(s.to_string());
        if let Some(v) = t.value() {
            out.push("=".to_string());
            out.extend(tokenize(v));
        }
    }
    out.push(")".to_string());
    out
}

/// How augmented utterances are produced from synthesized acts.
pub enum Realizer<'a> {
    /// Exemplars paraphrased by the sentence generator.
    Generator(&'a GeneratorModel),
    /// Exemplars concatenated as-is.
    Concatenate,
    /// Serialized triples, no templates at all.
    Serialize,
}

/// One augmented sample with where it came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentedSample {
    pub utterance: String,
    pub act: DialogueAct,
    pub exemplars: Vec<String>,
    /// Registry index of the template behind each exemplar.
    pub templates: Vec<usize>,
    pub truncated: bool,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum RealizeError {
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Generator(#[from] GeneratorError),
}

/// Turns synthesized acts into labeled utterances. Exemplars are drawn
/// uniformly among the templates of each triple.
pub fn realize(
    acts: &[DialogueAct],
    reg: &TemplateRegistry,
    o: &Ontology,
    realizer: &Realizer<'_>,
    rng: &mut dyn RngCore,
) -> Result<Vec<AugmentedSample>, RealizeError> {
    let mut out = Vec::with_capacity(acts.len());
    for d in acts.iter().filter(|d| !d.is_empty()) {
        if let Realizer::Serialize = realizer {
            let tokens: Vec<String> = d.iter().flat_map(triple_tokens).collect();
            out.push(AugmentedSample {
                utterance: detokenize(&tokens),
                act: d.clone(),
                exemplars: Vec::new(),
                templates: Vec::new(),
                truncated: false,
            });
            continue;
        }
        let mut exemplars = exemplify_act(d, reg, o, &mut Selection::Augment(&mut *rng), true)?;
        // The act's canonical order is arbitrary; present exemplars shuffled.
        exemplars.shuffle(rng);
        let (tokens, truncated) = match realizer {
            Realizer::Generator(m) => {
                let src: Vec<SourcePhrase> = exemplars.iter().map(SourcePhrase::from).collect();
                let g = m.generate(&src)?;
                (g.tokens, g.truncated)
            }
            _ => (exemplars.iter().flat_map(|e| e.tokens.iter().cloned()).collect(), false),
        };
        out.push(AugmentedSample {
            utterance: detokenize(&tokens),
            act: d.clone(),
            exemplars: exemplars.iter().map(Exemplar::text).collect(),
            templates: exemplars.iter().map(|e| e.template).collect(),
            truncated,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ontology::fixtures::restaurant;
    use crate::ontology::parse_dialogue_act;
    use crate::seeded_rng;
    use crate::templates::fixtures::registry;
    use alloc::vec;
    use proptest::prelude::*;

    fn lu(u: &str, a: &str) -> LabeledUtterance {
        LabeledUtterance::new(u, parse_dialogue_act(a).unwrap())
    }

    #[test]
    fn corpus_picks_the_most_similar_exemplar() {
        let (c, r) = build_generator_corpus(&[lu("what's the address", "request(addr)")], &registry(), &restaurant(), true).unwrap();
        assert_eq!(c[0].exemplars[0].text(), "what's the address");
        assert_eq!(r.used, 1);
    }

    #[test]
    fn skip_mode_reports_uncovered() {
        let reg = TemplateRegistry::new();
        let data = [lu("bye", "bye()"), lu("thai food", "inform(food=Thai)")];
        let (c, r) = build_generator_corpus(&data, &reg, &restaurant(), false).unwrap();
        assert!(c.is_empty());
        assert_eq!(r.skipped.len(), 2);
        assert!(build_generator_corpus(&data, &reg, &restaurant(), true).is_err());
    }

    #[test]
    fn naive_substitutes_in_text_and_label() {
        let data = [lu("i want thai food", "inform(food=Thai)"), lu("what's the phone", "request(phone)")];
        let out = naive_augment(&data, &restaurant(), 1, &mut seeded_rng(0));
        assert!(out.contains(&lu("i want chinese food", "inform(food=Chinese)")));
        assert!(out.contains(&lu("i want italian food", "inform(food=Italian)")));
        assert_eq!(&out[..2], &data);
    }

    #[test]
    fn naive_passes_through_absent_values() {
        let data = [lu("some asian place", "inform(food=Thai)")];
        let out = naive_augment(&data, &restaurant(), 3, &mut seeded_rng(0));
        assert_eq!(out, data.to_vec());
    }

    #[test]
    fn serialized_triples() {
        let t = Triple::with_value("inform", "food", "Thai");
        assert_eq!(triple_tokens(&t).join(" "), "inform ( food = thai )");
        assert_eq!(triple_tokens(&Triple::act_only("bye")).join(" "), "bye ( )");
    }

    #[test]
    fn concatenation_realizer() {
        let acts = vec![parse_dialogue_act("bye(), thankyou()").unwrap()];
        let out = realize(&acts, &registry(), &restaurant(), &Realizer::Concatenate, &mut seeded_rng(1)).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].exemplars.len(), 2);
        assert_eq!(out[0].utterance, out[0].exemplars.join(" "));
    }

    proptest! {
        #[test]
        fn nested_subsets(pool in 0usize..60, seed in any::<u64>(), mut sizes in prop::collection::vec(0usize..60, 1..6)) {
            sizes.iter_mut().for_each(|s| *s = (*s).min(pool));
            sizes.sort();
            let sets = nested_sample(pool, &sizes, &mut seeded_rng(seed)).unwrap();
            for w in sets.windows(2) {
                prop_assert!(w[1].starts_with(&w[0]));
            }
            for (s, k) in sets.iter().zip(&sizes) {
                prop_assert_eq!(s.len(), *k);
            }
        }

        #[test]
        fn naive_labels_stay_valid(n_v in 1usize..4, seed in any::<u64>()) {
            let data = [
                lu("not chinese but i want thai food please", "deny(food=Chinese), inform(food=Thai)"),
                lu("is there a television", "inform(hastv=true)"),
                lu("the address on main street", "inform(addr=main street)"),
            ];
            let o = restaurant();
            let out = naive_augment(&data, &o, n_v, &mut seeded_rng(seed));
            for ex in &out {
                prop_assert!(o.validate_act(&ex.act).is_ok());
            }
        }
    }
}
