//! Atomic templates: short phrases describing one delexicalized triple.
//!
//! A registry maps each delexicalized triple to one or more surface patterns,
//! e.g. `inform(food=[food])` to `"[food]"` and `"[food] food"`. Rendering a
//! lexicalized triple through a template yields an [`Exemplar`]. When several
//! templates exist, training-time alignment keeps the exemplar most similar to
//! the reference utterance while augmentation draws one uniformly.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::ops::Range;

use rand::{Rng, RngCore};

use crate::ontology::{DelexTriple, DialogueAct, Ontology, OntologyError, Triple};
use crate::similarity::{similarity_with, Granularity};
use crate::tokenize::{detokenize, tokenize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TemplateError {
    #[error(transparent)]
    Ontology(#[from] OntologyError),
    #[error("template {surface:?} for {triple}: {reason}")]
    BadTemplate {
        triple: String,
        surface: String,
        reason: &'static str,
    },
    #[error("no templates listed for {0}")]
    EmptyEntry(String),
    #[error("template for {template} cannot render {triple}")]
    Mismatch { template: String, triple: String },
    #[error("no templates cover: {}", .0.join(", "))]
    Uncovered(Vec<String>),
    #[error("empty dialogue act")]
    EmptyAct,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AtomicTemplate {
    delex: DelexTriple,
    surface: String,
}

impl AtomicTemplate {
    pub fn new(delex: DelexTriple, surface: &str) -> Result<Self, TemplateError> {
        let bad = |reason| TemplateError::BadTemplate {
            triple: delex.to_string(),
            surface: surface.to_string(),
            reason,
        };
        if tokenize(surface).is_empty() {
            return Err(bad("surface is empty"));
        }
        if let Some(slot) = delex.slot() {
            let marker = alloc::format!("[{slot}]");
            let n = surface.matches(marker.as_str()).count();
            match (delex.is_placeholder(), n) {
                (true, 1) | (false, 0) => {}
                (true, 0) => return Err(bad("placeholder triple needs its [slot] marker")),
                (true, _) => return Err(bad("placeholder marker may occur only once")),
                (false, _) => return Err(bad("marker present but triple has no placeholder")),
            }
        }
        Ok(Self {
            delex,
            surface: surface.to_string(),
        })
    }

    pub fn delex(&self) -> &DelexTriple {
        &self.delex
    }

    pub fn surface(&self) -> &str {
        &self.surface
    }
}

/// One rendered phrase `e_i` for a lexicalized triple.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Exemplar {
    pub triple: Triple,
    pub tokens: Vec<String>,
    /// Token range realizing the slot value, for placeholder templates.
    pub value_span: Option<Range<usize>>,
    /// Index of the source template within its registry entry.
    pub template: usize,
}

impl Exemplar {
    pub fn text(&self) -> String {
        detokenize(&self.tokens)
    }

    /// Per-token flag marking tokens that realize a slot value.
    pub fn value_mask(&self) -> Vec<bool> {
        let mut mask = alloc::vec![false; self.tokens.len()];
        if let Some(span) = &self.value_span {
            mask[span.clone()].iter_mut().for_each(|m| *m = true);
        }
        mask
    }
}

/// Renders `t` through `tmpl`, substituting the value verbatim for the marker.
pub fn render(tmpl: &AtomicTemplate, t: &Triple) -> Result<Exemplar, TemplateError> {
    if !tmpl.delex.matches(t) {
        return Err(TemplateError::Mismatch {
            template: tmpl.delex.to_string(),
            triple: t.to_string(),
        });
    }
    let (tokens, value_span) = match tmpl.delex.placeholder_token() {
        Some(marker) => {
            let at = tmpl.surface.find(marker.as_str()).expect("validated marker");
            let mut tokens = tokenize(&tmpl.surface[..at]);
            let start = tokens.len();
            tokens.extend(tokenize(t.value().expect("placeholder match implies value")));
            let end = tokens.len();
            tokens.extend(tokenize(&tmpl.surface[at + marker.len()..]));
            (tokens, (end > start).then_some(start..end))
        }
        None => (tokenize(&tmpl.surface), None),
    };
    Ok(Exemplar {
        triple: t.clone(),
        tokens,
        value_span,
        template: 0,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TemplateRegistry {
    entries: BTreeMap<DelexTriple, Vec<AtomicTemplate>>,
}

impl TemplateRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends surfaces for `delex`, keeping their order.
    pub fn insert<S: AsRef<str>>(&mut self, delex: DelexTriple, surfaces: &[S]) -> Result<(), TemplateError> {
        if surfaces.is_empty() {
            return Err(TemplateError::EmptyEntry(delex.to_string()));
        }
        let parsed = surfaces
            .iter()
            .map(|s| AtomicTemplate::new(delex.clone(), s.as_ref()))
            .collect::<Result<Vec<_>, _>>()?;
        self.entries.entry(delex).or_default().extend(parsed);
        Ok(())
    }

    /// Builds a registry from `("inform(food=[food])", ["[food]", "[food] food"])` pairs.
    pub fn from_pairs<K, S>(pairs: impl IntoIterator<Item = (K, Vec<S>)>) -> Result<Self, TemplateError>
    where
        K: AsRef<str>,
        S: AsRef<str>,
    {
        let mut reg = Self::new();
        for (k, surfaces) in pairs {
            reg.insert(DelexTriple::parse(k.as_ref())?, &surfaces)?;
        }
        Ok(reg)
    }

    pub fn get(&self, delex: &DelexTriple) -> Option<&[AtomicTemplate]> {
        self.entries.get(delex).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&DelexTriple, &[AtomicTemplate])> + '_ {
        self.entries.iter().map(|(k, v)| (k, v.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Delexicalized triples of the ontology's universe without templates.
    pub fn missing(&self, o: &Ontology) -> Vec<DelexTriple> {
        o.delex_universe()
            .iter()
            .filter(|dt| !self.entries.contains_key(*dt))
            .cloned()
            .collect()
    }

    /// Checks every entry against the ontology.
    pub fn validate(&self, o: &Ontology) -> Result<(), TemplateError> {
        self.entries.keys().try_for_each(|dt| o.validate_delex(dt).map_err(Into::into))
    }

    fn lookup(&self, t: &Triple, o: &Ontology) -> Result<(DelexTriple, &[AtomicTemplate]), TemplateError> {
        let dt = o.delexicalize(t)?;
        match self.entries.get(&dt) {
            Some(list) => Ok((dt, list)),
            None => Err(TemplateError::Uncovered(alloc::vec![dt.to_string()])),
        }
    }
}

/// All exemplars `E(t)`, one per template, in registry order.
pub fn candidate_exemplars(t: &Triple, reg: &TemplateRegistry, o: &Ontology) -> Result<Vec<Exemplar>, TemplateError> {
    let (_, list) = reg.lookup(t, o)?;
    list.iter()
        .enumerate()
        .map(|(i, tmpl)| {
            render(tmpl, t).map(|mut e| {
                e.template = i;
                e
            })
        })
        .collect()
}

/// How [`select_exemplar`] picks among several candidates.
pub enum Selection<'a> {
    /// Keep the candidate most similar to the reference utterance; ties go to
    /// the lowest registry index.
    Train { target: &'a str, granularity: Granularity },
    /// Uniform draw.
    Augment(&'a mut dyn RngCore),
}

impl<'a> Selection<'a> {
    pub fn train(target: &'a str) -> Self {
        Selection::Train {
            target,
            granularity: Granularity::Character,
        }
    }
}

pub fn select_exemplar(
    t: &Triple,
    reg: &TemplateRegistry,
    o: &Ontology,
    sel: &mut Selection<'_>,
) -> Result<Exemplar, TemplateError> {
    let mut cands = candidate_exemplars(t, reg, o)?;
    let pick = match sel {
        Selection::Train { target, granularity } => {
            let mut best = 0;
            let mut best_score = f64::NEG_INFINITY;
            for (i, e) in cands.iter().enumerate() {
                let s = similarity_with(&e.text(), target, *granularity);
                if s > best_score {
                    best = i;
                    best_score = s;
                }
            }
            best
        }
        Selection::Augment(rng) => rng.gen_range(0..cands.len()),
    };
    Ok(cands.swap_remove(pick))
}

/// Selects one exemplar per triple, in the act's canonical order. Coverage
/// failures for all triples are reported together.
pub fn exemplify_act(
    d: &DialogueAct,
    reg: &TemplateRegistry,
    o: &Ontology,
    sel: &mut Selection<'_>,
    strict: bool,
) -> Result<Vec<Exemplar>, TemplateError> {
    if strict && d.is_empty() {
        return Err(TemplateError::EmptyAct);
    }
    let mut missing = Vec::new();
    for t in d.iter() {
        match reg.lookup(t, o) {
            Ok(_) => {}
            Err(TemplateError::Uncovered(m)) => missing.extend(m),
            Err(e) => return Err(e),
        }
    }
    if !missing.is_empty() {
        return Err(TemplateError::Uncovered(missing));
    }
    d.iter().map(|t| select_exemplar(t, reg, o, sel)).collect()
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;
    use alloc::vec;

    /// The example registry: two phrases per triple.
    pub fn registry() -> TemplateRegistry {
        TemplateRegistry::from_pairs([
            ("bye()", vec!["goodbye", "bye"]),
            ("request(addr)", vec!["the address", "what's the address"]),
            ("inform(food=[food])", vec!["[food]", "[food] food"]),
            ("inform(hastv=true)", vec!["television", "with a television"]),
            ("thankyou()", vec!["thank you"]),
            ("request(phone)", vec!["the phone number"]),
        ])
        .unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::registry;
    use super::*;
    use crate::ontology::fixtures::restaurant;
    use crate::ontology::parse_dialogue_act;
    use crate::similarity::oracle;
    use alloc::vec;

    fn texts(es: &[Exemplar]) -> Vec<String> {
        es.iter().map(Exemplar::text).collect()
    }

    #[test]
    fn render_examples() {
        let food = AtomicTemplate::new(DelexTriple::parse("inform(food=[food])").unwrap(), "[food] food").unwrap();
        let e = render(&food, &Triple::with_value("inform", "food", "Thai")).unwrap();
        assert_eq!(e.text(), "thai food");
        assert_eq!(e.value_span, Some(0..1));
        assert_eq!(e.value_mask(), vec![true, false]);

        let bye = AtomicTemplate::new(DelexTriple::parse("bye()").unwrap(), "goodbye").unwrap();
        assert_eq!(render(&bye, &Triple::act_only("bye")).unwrap().text(), "goodbye");

        let addr = AtomicTemplate::new(DelexTriple::parse("request(addr)").unwrap(), "the address").unwrap();
        assert_eq!(render(&addr, &Triple::with_slot("request", "addr")).unwrap().text(), "the address");
        assert!(matches!(
            render(&addr, &Triple::act_only("bye")),
            Err(TemplateError::Mismatch { .. })
        ));
    }

    #[test]
    fn multiword_values_keep_their_span() {
        let near = AtomicTemplate::new(DelexTriple::parse("inform(food=[food])").unwrap(), "serving [food] dishes").unwrap();
        let e = render(&near, &Triple::with_value("inform", "food", "Modern European")).unwrap();
        assert_eq!(e.tokens, vec!["serving", "modern", "european", "dishes"]);
        assert_eq!(e.value_span, Some(1..3));
        assert!(!e.text().contains('['));
    }

    #[test]
    fn template_marker_rules() {
        let food = DelexTriple::parse("inform(food=[food])").unwrap();
        assert!(AtomicTemplate::new(food.clone(), "some food").is_err());
        assert!(AtomicTemplate::new(food, "[food] or [food]").is_err());
        let addr = DelexTriple::parse("request(addr)").unwrap();
        assert!(AtomicTemplate::new(addr.clone(), "the [addr]").is_err());
        assert!(AtomicTemplate::new(addr, "  ").is_err());
    }

    #[test]
    fn candidates_follow_registry_order() {
        let (o, reg) = (restaurant(), registry());
        let c = candidate_exemplars(&Triple::act_only("bye"), &reg, &o).unwrap();
        assert_eq!(texts(&c), vec!["goodbye", "bye"]);
        let c = candidate_exemplars(&Triple::with_value("inform", "food", "Thai"), &reg, &o).unwrap();
        assert_eq!(texts(&c), vec!["thai", "thai food"]);
        assert_eq!(c.iter().map(|e| e.template).collect::<Vec<_>>(), vec![0, 1]);
        let c = candidate_exemplars(&Triple::act_only("thankyou"), &reg, &o).unwrap();
        assert_eq!(c.len(), 1);
        let err = candidate_exemplars(&Triple::with_value("deny", "food", "Thai"), &reg, &o).unwrap_err();
        assert_eq!(err, TemplateError::Uncovered(vec!["deny(food=[food])".into()]));
    }

    #[test]
    fn training_selection_takes_the_most_similar() {
        let (o, reg) = (restaurant(), registry());
        let x = "what's the address of it";
        let scores: Vec<f64> = ["the address", "what's the address"]
            .iter()
            .map(|c| oracle::score(c.as_bytes(), x.as_bytes()))
            .collect();
        // 2*11/35 vs 2*18/42
        assert!((scores[0] - 22.0 / 35.0).abs() < 1e-12);
        assert!((scores[1] - 36.0 / 42.0).abs() < 1e-12);
        let e = select_exemplar(&Triple::with_slot("request", "addr"), &reg, &o, &mut Selection::train(x)).unwrap();
        assert_eq!(e.text(), "what's the address");
        assert_eq!(e.template, 1);

        let e = select_exemplar(&Triple::act_only("thankyou"), &reg, &o, &mut Selection::train("zzz")).unwrap();
        assert_eq!(e.text(), "thank you");
    }

    #[test]
    fn training_ties_go_to_lowest_index() {
        let o = restaurant();
        let reg = TemplateRegistry::from_pairs([("bye()", vec!["ab", "ba"])]).unwrap();
        // Neither candidate shares a character with the target.
        let e = select_exemplar(&Triple::act_only("bye"), &reg, &o, &mut Selection::train("xy")).unwrap();
        assert_eq!(e.template, 0);
    }

    #[test]
    fn augmentation_selection_is_seeded() {
        let (o, reg) = (restaurant(), registry());
        let draw = |seed| {
            let mut rng = crate::seeded_rng(seed);
            (0..20)
                .map(|_| {
                    select_exemplar(&Triple::act_only("bye"), &reg, &o, &mut Selection::Augment(&mut rng))
                        .unwrap()
                        .template
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(7), draw(7));
        let picks = draw(7);
        assert!(picks.contains(&0) && picks.contains(&1));
    }

    #[test]
    fn exemplify_examples() {
        let o = restaurant();
        let reg = registry();
        let reg2 = TemplateRegistry::from_pairs([("thankyou()", vec!["thank you"]), ("bye()", vec!["good bye"])]).unwrap();
        let d = parse_dialogue_act("thankyou(), bye()").unwrap();
        let es = exemplify_act(&d, &reg2, &o, &mut Selection::train("thank you good bye"), true).unwrap();
        assert_eq!(texts(&es), vec!["good bye", "thank you"]);

        let d = parse_dialogue_act("bye()").unwrap();
        let es = exemplify_act(&d, &reg, &o, &mut Selection::train("goodbye"), true).unwrap();
        assert_eq!(texts(&es), vec!["goodbye"]);
        let es = exemplify_act(&d, &reg, &o, &mut Selection::train("bye"), true).unwrap();
        assert_eq!(texts(&es), vec!["bye"]);

        assert_eq!(
            exemplify_act(&DialogueAct::new(), &reg, &o, &mut Selection::train(""), true),
            Err(TemplateError::EmptyAct)
        );
        let d = parse_dialogue_act("deny(food=Thai), request(addr), inform(hastv=false)").unwrap();
        let err = exemplify_act(&d, &reg, &o, &mut Selection::train(""), true).unwrap_err();
        assert_eq!(
            err,
            TemplateError::Uncovered(vec!["deny(food=[food])".into(), "inform(hastv=false)".into()])
        );
    }

    #[test]
    fn registry_reports_missing_universe_entries() {
        let (o, reg) = (restaurant(), registry());
        let missing: Vec<String> = reg.missing(&o).iter().map(ToString::to_string).collect();
        assert_eq!(missing, vec!["affirm()", "deny(food=[food])", "inform(hastv=false)"]);
        assert!(reg.validate(&o).is_ok());
    }
}
