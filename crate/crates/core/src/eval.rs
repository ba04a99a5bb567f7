//! Triple-level precision, recall and F1 (micro-averaged over a corpus).

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;

use serde::{Deserialize, Serialize};

use crate::ontology::DialogueAct;
use crate::tokenize::normalize;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

impl Counts {
    fn add(&mut self, o: &Counts) {
        self.true_positives += o.true_positives;
        self.false_positives += o.false_positives;
        self.false_negatives += o.false_negatives;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub per_act: BTreeMap<String, Counts>,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("prediction count {pred} differs from gold count {gold}")]
pub struct LengthMismatch {
    pub pred: usize,
    pub gold: usize,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

impl ScoreReport {
    fn from_counts(c: Counts, per_act: BTreeMap<String, Counts>) -> Self {
        let precision = ratio(c.true_positives, c.true_positives + c.false_positives);
        let recall = ratio(c.true_positives, c.true_positives + c.false_negatives);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            true_positives: c.true_positives,
            false_positives: c.false_positives,
            false_negatives: c.false_negatives,
            precision,
            recall,
            f1,
            per_act,
        }
    }

    pub fn counts(&self) -> Counts {
        Counts {
            true_positives: self.true_positives,
            false_positives: self.false_positives,
            false_negatives: self.false_negatives,
        }
    }

    /// Report over the union of both corpora.
    pub fn merge(&self, other: &ScoreReport) -> ScoreReport {
        let mut c = self.counts();
        c.add(&other.counts());
        let mut per_act = self.per_act.clone();
        for (act, k) in &other.per_act {
            per_act.entry(act.clone()).or_default().add(k);
        }
        Self::from_counts(c, per_act)
    }
}

type Key = (String, Option<String>, Option<String>);

fn keys(d: &DialogueAct) -> BTreeSet<Key> {
    d.iter()
        .map(|t| {
            (
                String::from(t.act()),
                t.slot().map(String::from),
                t.value().map(normalize),
            )
        })
        .collect()
}

/// Scores `pred` against `gold`, aligned by index. Values are compared after
/// lowercasing and whitespace collapsing.
pub fn score(pred: &[DialogueAct], gold: &[DialogueAct]) -> Result<ScoreReport, LengthMismatch> {
    if pred.len() != gold.len() {
        return Err(LengthMismatch {
            pred: pred.len(),
            gold: gold.len(),
        });
    }
    let mut total = Counts::default();
    let mut per_act: BTreeMap<String, Counts> = BTreeMap::new();
    for (p, g) in pred.iter().zip(gold) {
        let (p, g) = (keys(p), keys(g));
        for k in p.union(&g) {
            let slot = per_act.entry(k.0.clone()).or_default();
            match (p.contains(k), g.contains(k)) {
                (true, true) => {
                    slot.true_positives += 1;
                    total.true_positives += 1;
                }
                (true, false) => {
                    slot.false_positives += 1;
                    total.false_positives += 1;
                }
                _ => {
                    slot.false_negatives += 1;
                    total.false_negatives += 1;
                }
            }
        }
    }
    Ok(ScoreReport::from_counts(total, per_act))
}
