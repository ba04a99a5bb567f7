//! New dialogue acts for augmentation.
//!
//! Two sources of delexicalized acts are supported: abridging the acts seen in
//! the seed data (every non-empty subset of each act) and combining up to
//! `n_c` triples drawn from the ontology's universe. [`fill_values`] then
//! lexicalizes placeholders until every lexicon value has appeared `n_v` times.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ontology::{DelexTriple, DialogueAct, Ontology, OntologyError, ValueForm};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SynthesisError {
    #[error("dialogue act is empty")]
    EmptyAct,
    #[error("abridging {0} triples would produce too many subsets")]
    TooLarge(usize),
    #[error("the ontology's delexicalized universe is empty")]
    EmptyUniverse,
    #[error("invalid synthesis config: {0}")]
    Config(&'static str),
    #[error(transparent)]
    Ontology(#[from] OntologyError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthesisConfig {
    /// Maximum triples per combined act.
    pub n_c: usize,
    /// Minimum occurrences of every lexicon value after filling.
    pub n_v: usize,
    pub rng_seed: u64,
    /// Reject self-contradictory combinations (see [`compatible`]).
    pub compatibility_filter: bool,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            n_c: 3,
            n_v: 3,
            rng_seed: 0,
            compatibility_filter: true,
        }
    }
}

impl SynthesisConfig {
    pub fn validate(&self) -> Result<(), SynthesisError> {
        if self.n_c == 0 {
            return Err(SynthesisError::Config("n_c must be at least 1"));
        }
        if self.n_v == 0 {
            return Err(SynthesisError::Config("n_v must be at least 1"));
        }
        Ok(())
    }
}

/// A non-empty set of delexicalized triples.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DelexDialogueAct(BTreeSet<DelexTriple>);

impl DelexDialogueAct {
    pub fn new(triples: impl IntoIterator<Item = DelexTriple>) -> Result<Self, SynthesisError> {
        let set: BTreeSet<_> = triples.into_iter().collect();
        if set.is_empty() {
            return Err(SynthesisError::EmptyAct);
        }
        Ok(Self(set))
    }

    /// Delexicalizes every triple of `d`.
    pub fn from_act(d: &DialogueAct, o: &Ontology) -> Result<Self, SynthesisError> {
        let triples = d.iter().map(|t| o.delexicalize(t)).collect::<Result<Vec<_>, _>>()?;
        Self::new(triples)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &DelexTriple> + '_ {
        self.0.iter()
    }
}

impl fmt::Display for DelexDialogueAct {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, t) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{t}")?;
        }
        Ok(())
    }
}

const MAX_ABRIDGE: usize = 20;

/// Every non-empty subset of `d`, including `d` itself (`2^|d| - 1` acts).
pub fn abridge(d: &DelexDialogueAct) -> Result<BTreeSet<DelexDialogueAct>, SynthesisError> {
    let items: Vec<&DelexTriple> = d.iter().collect();
    let n = items.len();
    if n == 0 {
        return Err(SynthesisError::EmptyAct);
    }
    if n > MAX_ABRIDGE {
        return Err(SynthesisError::TooLarge(n));
    }
    let mut out = BTreeSet::new();
    for mask in 1u32..(1u32 << n) {
        let subset = items
            .iter()
            .enumerate()
            .filter(|(i, _)| mask & (1 << i) != 0)
            .map(|(_, t)| (*t).clone());
        out.insert(DelexDialogueAct(subset.collect()));
    }
    Ok(out)
}

/// Union of [`abridge`] over a corpus of seed acts.
pub fn abridge_corpus(seed_acts: &[DelexDialogueAct]) -> Result<BTreeSet<DelexDialogueAct>, SynthesisError> {
    let mut out = BTreeSet::new();
    for d in seed_acts {
        out.extend(abridge(d)?);
    }
    Ok(out)
}

/// Rejects two triples with the same `(act, slot)` but different value forms,
/// and `inform`/`deny` of the same literal value.
pub fn compatible(triples: &[&DelexTriple]) -> bool {
    for (i, a) in triples.iter().enumerate() {
        for b in &triples[i + 1..] {
            if a.slot().is_none() || a.slot() != b.slot() {
                continue;
            }
            if a.act() == b.act() && a.value_form() != b.value_form() {
                return false;
            }
            let contradicts = matches!(
                (a.act(), b.act()),
                ("inform", "deny") | ("deny", "inform")
            );
            if contradicts {
                if let (ValueForm::Literal(x), ValueForm::Literal(y)) = (a.value_form(), b.value_form()) {
                    if x == y {
                        return false;
                    }
                }
            }
        }
    }
    true
}

const MAX_REDRAWS: usize = 1000;

/// Draws `count` acts: size uniform on `1..=n_c` (capped by the universe),
/// triples sampled without replacement.
pub fn combine<R: Rng + ?Sized>(
    o: &Ontology,
    cfg: &SynthesisConfig,
    count: usize,
    rng: &mut R,
) -> Result<Vec<DelexDialogueAct>, SynthesisError> {
    cfg.validate()?;
    let universe: Vec<&DelexTriple> = o.delex_universe().iter().collect();
    if universe.is_empty() {
        return Err(SynthesisError::EmptyUniverse);
    }
    let max = cfg.n_c.min(universe.len());
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut chosen = None;
        for _ in 0..MAX_REDRAWS {
            let size = rng.gen_range(1..=max);
            let picked: Vec<&DelexTriple> = sample(rng, universe.len(), size).iter().map(|i| universe[i]).collect();
            if !cfg.compatibility_filter || compatible(&picked) {
                chosen = Some(picked);
                break;
            }
        }
        // Singletons are always compatible.
        let picked = chosen.unwrap_or_else(|| alloc::vec![universe[rng.gen_range(0..universe.len())]]);
        out.push(DelexDialogueAct(picked.into_iter().cloned().collect()));
    }
    Ok(out)
}

fn lexicalize_once<R: Rng + ?Sized>(
    d: &DelexDialogueAct,
    o: &Ontology,
    rng: &mut R,
) -> Result<DialogueAct, SynthesisError> {
    let mut act = DialogueAct::new();
    for dt in d.iter() {
        let t = if dt.is_placeholder() {
            let slot = dt.slot().expect("placeholder implies slot");
            let values = o.slot(slot).map(|s| s.values()).unwrap_or(&[]);
            if values.is_empty() {
                return Err(OntologyError::UnknownSlot(slot.into()).into());
            }
            let v = &values[rng.gen_range(0..values.len())];
            o.lexicalize(dt, Some(v))?
        } else {
            o.lexicalize(dt, None)?
        };
        act.insert(t);
    }
    Ok(act)
}

/// Lexicalizes placeholder slots with uniformly drawn values. Every input act
/// is emitted once; then acts with placeholders are revisited round-robin with
/// fresh draws until every value of every placeholder slot in use has occurred
/// at least `n_v` times.
pub fn fill_values<R: Rng + ?Sized>(
    acts: &[DelexDialogueAct],
    o: &Ontology,
    cfg: &SynthesisConfig,
    rng: &mut R,
) -> Result<Vec<DialogueAct>, SynthesisError> {
    cfg.validate()?;
    let mut counts: BTreeMap<(String, String), usize> = BTreeMap::new();
    for d in acts {
        for dt in d.iter().filter(|dt| dt.is_placeholder()) {
            let slot = dt.slot().expect("placeholder implies slot");
            let def = o.slot(slot).ok_or_else(|| OntologyError::UnknownSlot(slot.into()))?;
            for v in def.values() {
                counts.entry((slot.into(), v.clone())).or_insert(0);
            }
        }
    }
    let record = |counts: &mut BTreeMap<(String, String), usize>, act: &DialogueAct| {
        for t in act.iter() {
            if let (Some(s), Some(v)) = (t.slot(), t.value()) {
                if let Some(c) = counts.get_mut(&(s.into(), v.into())) {
                    *c += 1;
                }
            }
        }
    };
    let mut out = Vec::with_capacity(acts.len());
    for d in acts {
        let act = lexicalize_once(d, o, rng)?;
        record(&mut counts, &act);
        out.push(act);
    }
    let with_placeholders: Vec<&DelexDialogueAct> =
        acts.iter().filter(|d| d.iter().any(DelexTriple::is_placeholder)).collect();
    let done = |counts: &BTreeMap<(String, String), usize>| counts.values().all(|&c| c >= cfg.n_v);
    let mut next = 0;
    while !done(&counts) {
        let d = with_placeholders[next % with_placeholders.len()];
        next += 1;
        let act = lexicalize_once(d, o, rng)?;
        record(&mut counts, &act);
        out.push(act);
    }
    Ok(out)
}

/// Concatenates act lists, dropping repeats of already-seen acts.
pub fn union_dedup(lists: &[&[DialogueAct]]) -> Vec<DialogueAct> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for list in lists {
        for d in list.iter() {
            if seen.insert(d.clone()) {
                out.push(d.clone());
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ontology::{SlotDef, SlotKind, Triple};
    use crate::seeded_rng;
    use alloc::string::ToString;
    use alloc::vec;
    use alloc::vec::Vec;

    fn dt(s: &str) -> DelexTriple {
        DelexTriple::parse(s).unwrap()
    }

    fn act(xs: &[&str]) -> DelexDialogueAct {
        DelexDialogueAct::new(xs.iter().map(|s| dt(s))).unwrap()
    }

    fn letters(n: usize) -> DelexDialogueAct {
        DelexDialogueAct::new((0..n).map(|i| dt(&alloc::format!("a{i}()")))).unwrap()
    }

    /// Exhaustive subset enumeration by recursion (include / exclude).
    fn subsets_oracle(items: &[DelexTriple]) -> BTreeSet<BTreeSet<DelexTriple>> {
        fn go(items: &[DelexTriple], cur: &mut Vec<DelexTriple>, out: &mut BTreeSet<BTreeSet<DelexTriple>>) {
            match items.split_first() {
                None => {
                    if !cur.is_empty() {
                        out.insert(cur.iter().cloned().collect());
                    }
                }
                Some((head, rest)) => {
                    go(rest, cur, out);
                    cur.push(head.clone());
                    go(rest, cur, out);
                    cur.pop();
                }
            }
        }
        let mut out = BTreeSet::new();
        go(items, &mut Vec::new(), &mut out);
        out
    }

    #[test]
    fn abridge_three_gives_seven() {
        let d = act(&["inform(food=[food])", "request(addr)", "bye()"]);
        let got = abridge(&d).unwrap();
        assert_eq!(got.len(), 7);
        assert!(got.contains(&d));
        for t in d.iter() {
            assert!(got.contains(&DelexDialogueAct::new([t.clone()]).unwrap()));
        }
        assert_eq!(abridge(&act(&["bye()"])).unwrap().len(), 1);
    }

    #[test]
    fn abridge_matches_subset_oracle() {
        for n in 1..=10 {
            let d = letters(n);
            let items: Vec<DelexTriple> = d.iter().cloned().collect();
            let expected = subsets_oracle(&items);
            let got: BTreeSet<BTreeSet<DelexTriple>> = abridge(&d).unwrap().into_iter().map(|a| a.0).collect();
            assert_eq!(got.len(), (1usize << n) - 1);
            assert_eq!(got, expected);
        }
        assert_eq!(abridge(&letters(4)).unwrap().len(), 15);
    }

    #[test]
    fn abridge_corpus_unions() {
        let got = abridge_corpus(&[act(&["a()", "b()"]), act(&["b()", "c()"])]).unwrap();
        let expected: BTreeSet<DelexDialogueAct> = [
            act(&["a()"]),
            act(&["b()"]),
            act(&["c()"]),
            act(&["a()", "b()"]),
            act(&["b()", "c()"]),
        ]
        .into_iter()
        .collect();
        assert_eq!(got, expected);
        assert!(abridge_corpus(&[]).unwrap().is_empty());
        assert_eq!(DelexDialogueAct::new([]), Err(SynthesisError::EmptyAct));
    }

    fn wide_ontology(n: usize) -> Ontology {
        let acts: Vec<String> = (0..n).map(|i| alloc::format!("a{i}")).collect();
        let universe: Vec<DelexTriple> = acts.iter().map(|a| dt(&alloc::format!("{a}()"))).collect();
        Ontology::new(acts, Vec::<SlotDef>::new(), universe).unwrap()
    }

    #[test]
    fn combine_respects_size_bounds_and_seed() {
        let o = wide_ontology(35);
        let cfg = SynthesisConfig { n_c: 1, ..Default::default() };
        let acts = combine(&o, &cfg, 50, &mut seeded_rng(1)).unwrap();
        assert_eq!(acts.len(), 50);
        assert!(acts.iter().all(|a| a.len() == 1));

        let cfg = SynthesisConfig::default();
        let a = combine(&o, &cfg, 200, &mut seeded_rng(9)).unwrap();
        let b = combine(&o, &cfg, 200, &mut seeded_rng(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn combine_size_distribution_is_uniform() {
        let o = wide_ontology(35);
        let cfg = SynthesisConfig::default();
        let acts = combine(&o, &cfg, 10_000, &mut seeded_rng(3)).unwrap();
        let mut hist = [0usize; 4];
        for a in &acts {
            hist[a.len()] += 1;
        }
        assert_eq!(hist[0], 0);
        // Each size has probability 1/3; a 5-sigma band is about +-236.
        for &h in &hist[1..] {
            assert!((h as f64 - 10_000.0 / 3.0).abs() < 236.0, "{hist:?}");
        }
    }

    fn food_ontology(values: &[&str]) -> Ontology {
        let slots = vec![
            SlotDef::new("food", SlotKind::NonEnumerable, values.iter().map(|s| s.to_string()).collect()).unwrap(),
            SlotDef::new("hastv", SlotKind::Enumerable, vec!["true".into(), "false".into()]).unwrap(),
        ];
        let acts = ["inform", "deny", "request", "bye"].map(String::from);
        let universe = ["inform(food=[food])", "deny(food=[food])", "inform(hastv=true)", "inform(hastv=false)", "request(food)", "bye()"]
            .map(dt);
        Ontology::new(acts, slots, universe).unwrap()
    }

    #[test]
    fn compatibility_filter() {
        let t = dt("inform(hastv=true)");
        let f = dt("inform(hastv=false)");
        assert!(!compatible(&[&t, &f]));
        let deny_true = dt("deny(hastv=true)");
        assert!(!compatible(&[&t, &deny_true]));
        let deny_food = dt("deny(food=[food])");
        let inform_food = dt("inform(food=[food])");
        assert!(compatible(&[&inform_food, &deny_food]));
        let req = dt("request(food)");
        assert!(!compatible(&[&inform_food, &dt("inform(food)")]));
        assert!(compatible(&[&inform_food, &req]));

        let o = food_ontology(&["Thai", "Chinese"]);
        let acts = combine(&o, &SynthesisConfig::default(), 2000, &mut seeded_rng(5)).unwrap();
        for a in &acts {
            let v: Vec<&DelexTriple> = a.iter().collect();
            assert!(compatible(&v), "{a}");
        }
    }

    #[test]
    fn fill_values_singleton_lexicon() {
        let o = food_ontology(&["Thai"]);
        let out = fill_values(&[act(&["inform(food=[food])"])], &o, &SynthesisConfig::default(), &mut seeded_rng(0)).unwrap();
        assert_eq!(out.len(), 3);
        let expected: DialogueAct = [Triple::with_value("inform", "food", "Thai")].into_iter().collect();
        assert!(out.iter().all(|d| *d == expected));
    }

    #[test]
    fn fill_values_passes_placeholder_free_acts_through() {
        let o = food_ontology(&["Thai", "Chinese"]);
        let acts = [act(&["bye()"]), act(&["request(food)", "inform(hastv=true)"]), act(&["bye()"])];
        let out = fill_values(&acts, &o, &SynthesisConfig { n_v: 7, ..Default::default() }, &mut seeded_rng(0)).unwrap();
        assert_eq!(out.len(), 3);
        assert_eq!(out[1].to_string(), "inform(hastv=true), request(food)");
    }

    #[test]
    fn fill_values_reaches_coverage() {
        let values = ["Thai", "Chinese", "Italian", "Indian", "French"];
        let o = food_ontology(&values);
        let acts = [act(&["inform(food=[food])", "bye()"]), act(&["deny(food=[food])", "inform(food=[food])"]), act(&["request(food)"])];
        for seed in 0..5 {
            let cfg = SynthesisConfig { n_v: 4, ..Default::default() };
            let out = fill_values(&acts, &o, &cfg, &mut seeded_rng(seed)).unwrap();
            // Post-hoc count oracle.
            for v in values {
                let n: usize = out
                    .iter()
                    .map(|d| d.iter().filter(|t| t.slot() == Some("food") && t.value() == Some(v)).count())
                    .sum();
                assert!(n >= 4, "{v} appears {n} times");
            }
            for d in &out {
                o.validate_act(d).unwrap();
            }
        }
    }

    #[test]
    fn union_dedup_keeps_first_occurrence() {
        let a = crate::ontology::parse_dialogue_act("bye()").unwrap();
        let b = crate::ontology::parse_dialogue_act("request(food)").unwrap();
        let got = union_dedup(&[&[a.clone(), b.clone()], &[b.clone(), a.clone()]]);
        assert_eq!(got, vec![a, b]);
    }

    #[test]
    fn config_validation() {
        assert!(SynthesisConfig { n_c: 0, ..Default::default() }.validate().is_err());
        assert!(SynthesisConfig { n_v: 0, ..Default::default() }.validate().is_err());
    }
}
