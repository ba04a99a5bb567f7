//! Domain ontology and the dialogue-act algebra.
//!
//! A dialogue act is a set of act-slot-value triples. Triples may omit the
//! value (`request(addr)`) or both slot and value (`bye()`). Delexicalized
//! triples replace values of non-enumerable slots with a `[slot]` placeholder
//! while keeping enumerable values (`inform(hastv=true)`) literal.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::ops::Range;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum OntologyError {
    #[error("malformed dialogue act at {span:?} ({fragment:?}): {reason}")]
    Parse {
        span: Range<usize>,
        fragment: String,
        reason: &'static str,
    },
    #[error("triple has a value but no slot")]
    ValueWithoutSlot,
    #[error("invalid identifier {0:?}")]
    BadIdentifier(String),
    #[error("unknown act {0:?}")]
    UnknownAct(String),
    #[error("unknown slot {0:?}")]
    UnknownSlot(String),
    #[error("value {value:?} is not allowed for enumerable slot {slot:?}")]
    ValueNotAllowed { slot: String, value: String },
    #[error("value {value:?} is not in the lexicon of slot {slot:?}")]
    ValueNotInLexicon { slot: String, value: String },
    #[error("placeholder triple {0} needs a value")]
    MissingValue(String),
    #[error("triple {0} takes no value")]
    UnexpectedValue(String),
    #[error("empty dialogue act")]
    EmptyAct,
    #[error("slot {0:?}: {1}")]
    InvalidSlot(String, &'static str),
    #[error("duplicate slot {0:?}")]
    DuplicateSlot(String),
    #[error("delexicalized triple {0} is inconsistent with the ontology: {1}")]
    InvalidDelex(String, &'static str),
}

fn is_ident(s: &str) -> bool {
    !s.is_empty()
        && s
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

fn check_ident(s: &str) -> Result<(), OntologyError> {
    if is_ident(s) {
        Ok(())
    } else {
        Err(OntologyError::BadIdentifier(s.to_string()))
    }
}

/// One act-slot-value triple. Ordering is lexicographic on `(act, slot, value)`
/// with absent components sorting first.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Triple {
    act: String,
    slot: Option<String>,
    value: Option<String>,
}

impl Triple {
    pub fn new(
        act: impl Into<String>,
        slot: Option<String>,
        value: Option<String>,
    ) -> Result<Self, OntologyError> {
        let act = act.into();
        check_ident(&act)?;
        if let Some(s) = &slot {
            check_ident(s)?;
        }
        if value.is_some() && slot.is_none() {
            return Err(OntologyError::ValueWithoutSlot);
        }
        if let Some(v) = &value {
            if v.trim().is_empty() || v.trim() != v || v.contains(')') || v.contains('(') {
                return Err(OntologyError::Parse {
                    span: 0..v.len(),
                    fragment: v.clone(),
                    reason: "values must be trimmed, non-empty and free of parentheses",
                });
            }
        }
        Ok(Self { act, slot, value })
    }

    /// `bye()`
    pub fn act_only(act: &str) -> Self {
        Self::new(act, None, None).expect("invalid act identifier")
    }

    /// `request(addr)`
    pub fn with_slot(act: &str, slot: &str) -> Self {
        Self::new(act, Some(slot.into()), None).expect("invalid identifier")
    }

    /// `inform(food=Thai)`
    pub fn with_value(act: &str, slot: &str, value: &str) -> Self {
        Self::new(act, Some(slot.into()), Some(value.into())).expect("invalid triple")
    }

    pub fn act(&self) -> &str {
        &self.act
    }

    pub fn slot(&self) -> Option<&str> {
        self.slot.as_deref()
    }

    pub fn value(&self) -> Option<&str> {
        self.value.as_deref()
    }

    /// Returns a copy of this triple carrying `value` instead.
    pub fn replace_value(&self, value: &str) -> Result<Self, OntologyError> {
        Self::new(self.act.clone(), self.slot.clone(), Some(value.to_string()))
    }
}

impl fmt::Display for Triple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.slot, &self.value) {
            (None, _) => write!(f, "{}()", self.act),
            (Some(s), None) => write!(f, "{}({})", self.act, s),
            (Some(s), Some(v)) => write!(f, "{}({}={})", self.act, s, v),
        }
    }
}

/// A set of triples. Iteration and serialization follow the canonical
/// (lexicographic) order.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DialogueAct {
    triples: BTreeSet<Triple>,
}

impl DialogueAct {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a triple; returns `false` if it was already present.
    pub fn insert(&mut self, t: Triple) -> bool {
        self.triples.insert(t)
    }

    pub fn contains(&self, t: &Triple) -> bool {
        self.triples.contains(t)
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Triple> + '_ {
        self.triples.iter()
    }

    pub fn triples(&self) -> &BTreeSet<Triple> {
        &self.triples
    }

    /// Canonical textual form. With `strict` set an empty act is an error,
    /// otherwise it serializes to the empty string.
    pub fn serialize(&self, strict: bool) -> Result<String, OntologyError> {
        if strict && self.is_empty() {
            return Err(OntologyError::EmptyAct);
        }
        Ok(self.to_string())
    }
}

impl FromIterator<Triple> for DialogueAct {
    fn from_iter<I: IntoIterator<Item = Triple>>(iter: I) -> Self {
        Self {
            triples: iter.into_iter().collect(),
        }
    }
}

impl fmt::Display for DialogueAct {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, t) in self.triples.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{t}")?;
        }
        Ok(())
    }
}

impl serde::Serialize for DialogueAct {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> serde::Deserialize<'de> for DialogueAct {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        parse_dialogue_act(&text).map_err(serde::de::Error::custom)
    }
}

/// Parses the comma-separated notation `act(slot=value), act(slot), act()`.
/// An empty (or blank) string yields the empty act.
pub fn parse_dialogue_act(text: &str) -> Result<DialogueAct, OntologyError> {
    parse_triples(text).map(|ts| ts.into_iter().collect())
}

/// Like [`parse_dialogue_act`] and additionally validates every triple.
pub fn parse_dialogue_act_with(text: &str, o: &Ontology) -> Result<DialogueAct, OntologyError> {
    let d = parse_dialogue_act(text)?;
    o.validate_act(&d)?;
    Ok(d)
}

/// Serializes in canonical order; `strict` rejects the empty act.
pub fn serialize_dialogue_act(d: &DialogueAct, strict: bool) -> Result<String, OntologyError> {
    d.serialize(strict)
}

fn parse_err(text: &str, span: Range<usize>, reason: &'static str) -> OntologyError {
    let mut end = span.end.min(text.len());
    while !text.is_char_boundary(end) {
        end += 1;
    }
    let mut start = span.start.min(end);
    while !text.is_char_boundary(start) {
        start -= 1;
    }
    OntologyError::Parse {
        fragment: text[start..end].to_string(),
        span: start..end,
        reason,
    }
}

fn skip_ws(bytes: &[u8], mut i: usize) -> usize {
    while i < bytes.len() && bytes[i].is_ascii_whitespace() {
        i += 1;
    }
    i
}

fn parse_triples(text: &str) -> Result<Vec<Triple>, OntologyError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = skip_ws(bytes, 0);
    if i == bytes.len() {
        return Ok(out);
    }
    loop {
        let start = i;
        while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_' || bytes[i] == b'-') {
            i += 1;
        }
        if i == start {
            return Err(parse_err(text, start..start + 1, "expected an act name"));
        }
        let act = &text[start..i];
        let j = skip_ws(bytes, i);
        if j >= bytes.len() || bytes[j] != b'(' {
            return Err(parse_err(text, start..j + 1, "expected '(' after act name"));
        }
        let open = j;
        let close = match text[open..].find(')') {
            Some(off) => open + off,
            None => return Err(parse_err(text, start..text.len(), "unclosed '('")),
        };
        let inner = &text[open + 1..close];
        if inner.contains('(') {
            return Err(parse_err(text, start..close + 1, "nested '(' inside a triple"));
        }
        let triple = if inner.trim().is_empty() {
            Triple::new(act, None, None)
        } else if let Some(eq) = inner.find('=') {
            let slot = inner[..eq].trim();
            let value = inner[eq + 1..].trim();
            if !is_ident(slot) {
                return Err(parse_err(text, start..close + 1, "invalid slot name"));
            }
            if value.is_empty() {
                return Err(parse_err(text, start..close + 1, "empty value after '='"));
            }
            Triple::new(act, Some(slot.to_string()), Some(value.to_string()))
        } else {
            let slot = inner.trim();
            if !is_ident(slot) {
                return Err(parse_err(text, start..close + 1, "invalid slot name"));
            }
            Triple::new(act, Some(slot.to_string()), None)
        }
        .map_err(|_| parse_err(text, start..close + 1, "invalid triple"))?;
        out.push(triple);

        i = skip_ws(bytes, close + 1);
        if i == bytes.len() {
            return Ok(out);
        }
        if bytes[i] != b',' {
            return Err(parse_err(text, i..i + 1, "expected ',' between triples"));
        }
        let comma = i;
        i = skip_ws(bytes, i + 1);
        if i == bytes.len() {
            return Err(parse_err(text, comma..comma + 1, "trailing ','"));
        }
    }
}

/// Whether a slot's values form a closed set or an open lexicon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SlotKind {
    Enumerable,
    NonEnumerable,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlotDef {
    name: String,
    kind: SlotKind,
    values: Vec<String>,
}

impl SlotDef {
    /// For enumerable slots `values` is the closed list of allowed values; for
    /// non-enumerable slots it is the lexicon used when filling placeholders.
    /// Either way it must be non-empty.
    pub fn new(name: &str, kind: SlotKind, values: Vec<String>) -> Result<Self, OntologyError> {
        check_ident(name)?;
        if values.is_empty() {
            return Err(OntologyError::InvalidSlot(name.to_string(), "value list must be non-empty"));
        }
        let mut seen = BTreeSet::new();
        for v in &values {
            if v.trim().is_empty() || v.contains(')') || v.contains('(') {
                return Err(OntologyError::InvalidSlot(name.to_string(), "bad value string"));
            }
            if !seen.insert(v.as_str()) {
                return Err(OntologyError::InvalidSlot(name.to_string(), "duplicate value"));
            }
        }
        Ok(Self {
            name: name.to_string(),
            kind,
            values,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> SlotKind {
        self.kind
    }

    pub fn values(&self) -> &[String] {
        &self.values
    }

    pub fn allowed_values(&self) -> Option<&[String]> {
        (self.kind == SlotKind::Enumerable).then_some(self.values.as_slice())
    }

    pub fn value_lexicon(&self) -> Option<&[String]> {
        (self.kind == SlotKind::NonEnumerable).then_some(self.values.as_slice())
    }

    /// Case-insensitive lookup returning the canonical spelling.
    pub fn canonical_value(&self, v: &str) -> Option<&str> {
        let needle = crate::tokenize::normalize(v);
        self.values
            .iter()
            .find(|c| crate::tokenize::normalize(c) == needle)
            .map(String::as_str)
    }
}

/// The value part of a delexicalized triple.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ValueForm {
    None,
    /// Stands for any value of the (non-enumerable) slot; rendered `[slot]`.
    Placeholder,
    Literal(String),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DelexTriple {
    act: String,
    slot: Option<String>,
    value: ValueForm,
}

impl DelexTriple {
    pub fn new(act: &str, slot: Option<&str>, value: ValueForm) -> Result<Self, OntologyError> {
        check_ident(act)?;
        if let Some(s) = slot {
            check_ident(s)?;
        }
        if slot.is_none() && value != ValueForm::None {
            return Err(OntologyError::ValueWithoutSlot);
        }
        Ok(Self {
            act: act.to_string(),
            slot: slot.map(str::to_string),
            value,
        })
    }

    /// Parses `inform(food=[food])`, `inform(hastv=true)`, `request(addr)`, `bye()`.
    pub fn parse(text: &str) -> Result<Self, OntologyError> {
        let ts = parse_triples(text)?;
        if ts.len() != 1 {
            return Err(parse_err(text, 0..text.len(), "expected exactly one triple"));
        }
        let t = &ts[0];
        let value = match (t.slot(), t.value()) {
            (_, None) => ValueForm::None,
            (Some(s), Some(v)) if v.len() == s.len() + 2 && v.starts_with('[') && v.ends_with(']') && &v[1..v.len() - 1] == s => {
                ValueForm::Placeholder
            }
            (_, Some(v)) => ValueForm::Literal(v.to_string()),
        };
        Self::new(t.act(), t.slot(), value)
    }

    pub fn act(&self) -> &str {
        &self.act
    }

    pub fn slot(&self) -> Option<&str> {
        self.slot.as_deref()
    }

    pub fn value_form(&self) -> &ValueForm {
        &self.value
    }

    pub fn is_placeholder(&self) -> bool {
        self.value == ValueForm::Placeholder
    }

    /// The placeholder token, e.g. `[food]`, when this triple has one.
    pub fn placeholder_token(&self) -> Option<String> {
        match (&self.value, &self.slot) {
            (ValueForm::Placeholder, Some(s)) => Some(format!("[{s}]")),
            _ => None,
        }
    }

    /// Whether `t` is an instance of this delexicalized triple.
    pub fn matches(&self, t: &Triple) -> bool {
        if self.act != t.act() || self.slot.as_deref() != t.slot() {
            return false;
        }
        match &self.value {
            ValueForm::None => t.value().is_none(),
            ValueForm::Placeholder => t.value().is_some(),
            ValueForm::Literal(v) => t.value() == Some(v.as_str()),
        }
    }
}

impl fmt::Display for DelexTriple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.slot, &self.value) {
            (None, _) => write!(f, "{}()", self.act),
            (Some(s), ValueForm::None) => write!(f, "{}({})", self.act, s),
            (Some(s), ValueForm::Placeholder) => write!(f, "{}({}=[{}])", self.act, s, s),
            (Some(s), ValueForm::Literal(v)) => write!(f, "{}({}={})", self.act, s, v),
        }
    }
}

/// The domain inventory: acts, slots and the delexicalized-triple universe.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ontology {
    acts: BTreeSet<String>,
    slots: BTreeMap<String, SlotDef>,
    delex_universe: BTreeSet<DelexTriple>,
}

impl Ontology {
    pub fn new(
        acts: impl IntoIterator<Item = String>,
        slots: impl IntoIterator<Item = SlotDef>,
        delex_universe: impl IntoIterator<Item = DelexTriple>,
    ) -> Result<Self, OntologyError> {
        let mut o = Self {
            acts: BTreeSet::new(),
            slots: BTreeMap::new(),
            delex_universe: BTreeSet::new(),
        };
        for a in acts {
            check_ident(&a)?;
            o.acts.insert(a);
        }
        for s in slots {
            if o.slots.contains_key(s.name()) {
                return Err(OntologyError::DuplicateSlot(s.name().to_string()));
            }
            o.slots.insert(s.name().to_string(), s);
        }
        for dt in delex_universe {
            o.validate_delex(&dt)?;
            o.delex_universe.insert(dt);
        }
        Ok(o)
    }

    pub fn acts(&self) -> impl Iterator<Item = &str> + '_ {
        self.acts.iter().map(String::as_str)
    }

    pub fn slots(&self) -> impl Iterator<Item = &SlotDef> + '_ {
        self.slots.values()
    }

    pub fn slot(&self, name: &str) -> Option<&SlotDef> {
        self.slots.get(name)
    }

    pub fn has_act(&self, act: &str) -> bool {
        self.acts.contains(act)
    }

    pub fn delex_universe(&self) -> &BTreeSet<DelexTriple> {
        &self.delex_universe
    }

    /// Checks a delexicalized triple against the declared acts and slots.
    pub fn validate_delex(&self, dt: &DelexTriple) -> Result<(), OntologyError> {
        if !self.acts.contains(dt.act()) {
            return Err(OntologyError::UnknownAct(dt.act().to_string()));
        }
        let Some(slot) = dt.slot() else { return Ok(()) };
        let def = self
            .slots
            .get(slot)
            .ok_or_else(|| OntologyError::UnknownSlot(slot.to_string()))?;
        match dt.value_form() {
            ValueForm::None => Ok(()),
            ValueForm::Placeholder if def.kind() == SlotKind::NonEnumerable => Ok(()),
            ValueForm::Placeholder => Err(OntologyError::InvalidDelex(
                dt.to_string(),
                "placeholder on an enumerable slot",
            )),
            ValueForm::Literal(v) => match def.allowed_values() {
                Some(allowed) if allowed.iter().any(|a| a == v) => Ok(()),
                Some(_) => Err(OntologyError::InvalidDelex(dt.to_string(), "literal not in allowed values")),
                None => Err(OntologyError::InvalidDelex(
                    dt.to_string(),
                    "literal value on a non-enumerable slot",
                )),
            },
        }
    }

    /// Checks that the act and slot are declared and that enumerable values
    /// are allowed. Non-enumerable slots accept any value.
    pub fn validate_triple(&self, t: &Triple) -> Result<(), OntologyError> {
        self.delexicalize(t).map(|_| ())
    }

    pub fn validate_act(&self, d: &DialogueAct) -> Result<(), OntologyError> {
        d.iter().try_for_each(|t| self.validate_triple(t))
    }

    pub fn delexicalize(&self, t: &Triple) -> Result<DelexTriple, OntologyError> {
        if !self.acts.contains(t.act()) {
            return Err(OntologyError::UnknownAct(t.act().to_string()));
        }
        let Some(slot) = t.slot() else {
            return DelexTriple::new(t.act(), None, ValueForm::None);
        };
        let def = self
            .slots
            .get(slot)
            .ok_or_else(|| OntologyError::UnknownSlot(slot.to_string()))?;
        let value = match (t.value(), def.kind()) {
            (None, _) => ValueForm::None,
            (Some(_), SlotKind::NonEnumerable) => ValueForm::Placeholder,
            (Some(v), SlotKind::Enumerable) => {
                if !def.values().iter().any(|a| a == v) {
                    return Err(OntologyError::ValueNotAllowed {
                        slot: slot.to_string(),
                        value: v.to_string(),
                    });
                }
                ValueForm::Literal(v.to_string())
            }
        };
        DelexTriple::new(t.act(), Some(slot), value)
    }

    /// Inverse of [`Ontology::delexicalize`]: `value` must be supplied exactly
    /// when `dt` carries a placeholder, and must belong to the slot's lexicon.
    pub fn lexicalize(&self, dt: &DelexTriple, value: Option<&str>) -> Result<Triple, OntologyError> {
        self.validate_delex(dt)?;
        match (dt.value_form(), value) {
            (ValueForm::Placeholder, None) => Err(OntologyError::MissingValue(dt.to_string())),
            (ValueForm::Placeholder, Some(v)) => {
                let slot = dt.slot().expect("placeholder implies slot");
                let def = &self.slots[slot];
                if !def.values().iter().any(|x| x == v) {
                    return Err(OntologyError::ValueNotInLexicon {
                        slot: slot.to_string(),
                        value: v.to_string(),
                    });
                }
                Triple::new(dt.act(), Some(slot.to_string()), Some(v.to_string()))
            }
            (_, Some(_)) => Err(OntologyError::UnexpectedValue(dt.to_string())),
            (ValueForm::None, None) => Triple::new(dt.act(), dt.slot().map(str::to_string), None),
            (ValueForm::Literal(v), None) => {
                Triple::new(dt.act(), dt.slot().map(str::to_string), Some(v.clone()))
            }
        }
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;
    use alloc::vec;

    fn strings(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    /// A small restaurant-style ontology covering the triples used in examples.
    pub fn restaurant() -> Ontology {
        let acts = strings(&["affirm", "bye", "deny", "inform", "request", "thankyou"]);
        let slots = vec![
            SlotDef::new("food", SlotKind::NonEnumerable, strings(&["Chinese", "Thai", "Italian"])).unwrap(),
            SlotDef::new("hastv", SlotKind::Enumerable, strings(&["true", "false"])).unwrap(),
            SlotDef::new("addr", SlotKind::NonEnumerable, strings(&["main street"])).unwrap(),
            SlotDef::new("phone", SlotKind::NonEnumerable, strings(&["555"])).unwrap(),
        ];
        let universe = [
            "bye()",
            "thankyou()",
            "affirm()",
            "request(addr)",
            "request(phone)",
            "inform(food=[food])",
            "deny(food=[food])",
            "inform(hastv=true)",
            "inform(hastv=false)",
        ]
        .iter()
        .map(|s| DelexTriple::parse(s).unwrap());
        Ontology::new(acts, slots, universe).unwrap()
    }
}
