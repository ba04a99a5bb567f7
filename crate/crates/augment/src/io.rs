//! On-disk formats: ontology and template JSON, JSONL datasets and corpora.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use slu_augment_core::augment::{CorpusEntry, LabeledUtterance};
use slu_augment_core::ontology::{parse_dialogue_act, DelexTriple, DialogueAct};
use slu_augment_core::{Ontology, SlotDef, SlotKind, TemplateRegistry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotKindFile {
    Enumerable,
    NonEnumerable,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotFile {
    pub name: String,
    pub kind: SlotKindFile,
    pub values: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OntologyFile {
    pub acts: Vec<String>,
    pub slots: Vec<SlotFile>,
    pub delex_triples: Vec<String>,
}

impl OntologyFile {
    pub fn from_ontology(o: &Ontology) -> Self {
        Self {
            acts: o.acts().map(String::from).collect(),
            slots: o
                .slots()
                .map(|s| SlotFile {
                    name: s.name().to_string(),
                    kind: match s.kind() {
                        SlotKind::Enumerable => SlotKindFile::Enumerable,
                        SlotKind::NonEnumerable => SlotKindFile::NonEnumerable,
                    },
                    values: s.values().to_vec(),
                })
                .collect(),
            delex_triples: o.delex_universe().iter().map(|d| d.to_string()).collect(),
        }
    }

    pub fn to_ontology(&self) -> Result<Ontology> {
        let slots = self
            .slots
            .iter()
            .map(|s| {
                let kind = match s.kind {
                    SlotKindFile::Enumerable => SlotKind::Enumerable,
                    SlotKindFile::NonEnumerable => SlotKind::NonEnumerable,
                };
                SlotDef::new(&s.name, kind, s.values.clone()).map_err(|e| anyhow!("slot {:?}: {e}", s.name))
            })
            .collect::<Result<Vec<_>>>()?;
        let universe = self
            .delex_triples
            .iter()
            .map(|t| DelexTriple::parse(t).map_err(|e| anyhow!("delex triple {t:?}: {e}")))
            .collect::<Result<Vec<_>>>()?;
        Ok(Ontology::new(self.acts.iter().cloned(), slots, universe)?)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateFile {
    pub templates: BTreeMap<String, Vec<String>>,
}

impl TemplateFile {
    pub fn from_registry(reg: &TemplateRegistry) -> Self {
        Self {
            templates: reg
                .iter()
                .map(|(dt, list)| (dt.to_string(), list.iter().map(|t| t.surface().to_string()).collect()))
                .collect(),
        }
    }

    pub fn to_registry(&self) -> Result<TemplateRegistry> {
        Ok(TemplateRegistry::from_pairs(self.templates.iter().map(|(k, v)| (k.as_str(), v.clone())))?)
    }
}

/// One line of a dataset file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub utterance: String,
    pub dialogue_act: DialogueAct,
}

impl From<&LabeledUtterance> for DatasetRecord {
    fn from(l: &LabeledUtterance) -> Self {
        Self {
            utterance: l.utterance.clone(),
            dialogue_act: l.act.clone(),
        }
    }
}

impl From<DatasetRecord> for LabeledUtterance {
    fn from(r: DatasetRecord) -> Self {
        LabeledUtterance::new(r.utterance, r.dialogue_act)
    }
}

/// One line of a generator training corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub exemplars: Vec<String>,
    pub utterance: String,
    pub dialogue_act: DialogueAct,
    /// Per exemplar, the token positions that realize a slot value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value_spans: Option<Vec<Vec<usize>>>,
}

impl From<&CorpusEntry> for CorpusRecord {
    fn from(c: &CorpusEntry) -> Self {
        Self {
            exemplars: c.exemplars.iter().map(|e| e.text()).collect(),
            utterance: c.utterance.clone(),
            dialogue_act: c.act.clone(),
            value_spans: Some(
                c.exemplars
                    .iter()
                    .map(|e| e.value_mask().iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect())
                    .collect(),
            ),
        }
    }
}

/// One line of an acts file: either `{"dialogue_act": "..."}` or a bare string.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ActRecord {
    Object { dialogue_act: DialogueAct },
    Bare(DialogueAct),
}

impl ActRecord {
    pub fn act(&self) -> &DialogueAct {
        match self {
            ActRecord::Object { dialogue_act } | ActRecord::Bare(dialogue_act) => dialogue_act,
        }
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Reads JSONL, skipping blank lines; errors carry the 1-based line number.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.with_context(|| format!("reading {}", path.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        let v = serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), i + 1))?;
        out.push(v);
    }
    Ok(out)
}

pub fn to_jsonl<T: Serialize>(items: &[T]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    for it in items {
        serde_json::to_writer(&mut buf, it)?;
        buf.push(b'\n');
    }
    Ok(buf)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let buf = to_jsonl(items)?;
    let mut f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    f.write_all(&buf)?;
    Ok(())
}

pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text.lines().filter(|l| !l.trim().is_empty()).map(String::from).collect())
}

pub fn load_ontology(path: &Path) -> Result<Ontology> {
    read_json::<OntologyFile>(path)?.to_ontology().with_context(|| format!("validating {}", path.display()))
}

pub fn load_templates(path: &Path, o: &Ontology) -> Result<TemplateRegistry> {
    let reg = read_json::<TemplateFile>(path)?.to_registry().with_context(|| format!("loading {}", path.display()))?;
    reg.validate(o).with_context(|| format!("validating {}", path.display()))?;
    Ok(reg)
}

/// Loads a dataset, requiring non-empty acts that validate against `o`.
pub fn load_dataset(path: &Path, o: &Ontology) -> Result<Vec<LabeledUtterance>> {
    let records: Vec<DatasetRecord> = read_jsonl(path)?;
    records
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            if r.dialogue_act.is_empty() {
                bail!("{}:{}: empty dialogue act", path.display(), i + 1);
            }
            o.validate_act(&r.dialogue_act).with_context(|| format!("{}:{}", path.display(), i + 1))?;
            Ok(r.into())
        })
        .collect()
}

pub fn save_dataset(path: &Path, data: &[LabeledUtterance]) -> Result<()> {
    write_jsonl(path, &data.iter().map(DatasetRecord::from).collect::<Vec<_>>())
}

pub fn load_acts(path: &Path) -> Result<Vec<DialogueAct>> {
    // Plain text files hold one serialized act per line.
    if path.extension().is_some_and(|e| e == "txt") {
        return read_lines(path)?
            .iter()
            .enumerate()
            .map(|(i, l)| parse_dialogue_act(l).with_context(|| format!("{}:{}", path.display(), i + 1)))
            .collect();
    }
    Ok(read_jsonl::<ActRecord>(path)?.iter().map(|r| r.act().clone()).collect())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path).with_context(|| format!("reading {}", path.display()))?))
}

/// Checksum of a dataset's canonical JSONL form.
pub fn dataset_sha256(data: &[LabeledUtterance]) -> String {
    let recs: Vec<DatasetRecord> = data.iter().map(DatasetRecord::from).collect();
    sha256_hex(&to_jsonl(&recs).expect("dataset records serialize"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn act_record_accepts_both_shapes() {
        let a: ActRecord = serde_json::from_str(r#"{"dialogue_act": "bye(), thankyou()"}"#).unwrap();
        let b: ActRecord = serde_json::from_str(r#""thankyou(), bye()""#).unwrap();
        assert_eq!(a.act(), b.act());
        assert_eq!(a.act().to_string(), "bye(), thankyou()");
    }

    #[test]
    fn dataset_record_round_trips() {
        let line = r#"{"utterance":"not chinese but i want thai food please","dialogue_act":"deny(food=Chinese), inform(food=Thai)"}"#;
        let r: DatasetRecord = serde_json::from_str(line).unwrap();
        assert_eq!(r.dialogue_act.len(), 2);
        assert_eq!(serde_json::to_string(&r).unwrap(), line);
    }
}
