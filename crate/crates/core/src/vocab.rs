//! Token vocabulary with fixed reserved ids.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Bijective token/id map. Ids 0..4 are reserved: [`Vocabulary::PAD`],
/// [`Vocabulary::UNK`], [`Vocabulary::BOS`], [`Vocabulary::EOS`]; the remaining
/// tokens follow in sorted order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl Vocabulary {
    pub const PAD: usize = 0;
    pub const UNK: usize = 1;
    pub const BOS: usize = 2;
    pub const EOS: usize = 3;
    pub const RESERVED: [&'static str; 4] = ["<pad>", "<unk>", "<s>", "</s>"];

    pub fn build<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let distinct: BTreeSet<String> = tokens
            .into_iter()
            .map(|t| t.as_ref().to_string())
            .filter(|t| !Self::RESERVED.contains(&t.as_str()))
            .collect();
        let all = Self::RESERVED.iter().map(|s| s.to_string()).chain(distinct);
        Self::from_list(all.collect()).expect("distinct tokens")
    }

    /// Rebuilds a vocabulary from its id-ordered token list.
    pub fn from_list(tokens: Vec<String>) -> Result<Self, String> {
        if tokens.len() < 4 || tokens[..4].iter().zip(Self::RESERVED).any(|(a, b)| a != b) {
            return Err("vocabulary must start with the reserved tokens".into());
        }
        let mut index = BTreeMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(alloc::format!("duplicate token {t:?}"));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Id of a regular (non-reserved) token.
    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied().filter(|&i| i >= 4)
    }

    /// Id for embedding lookup: unknown tokens map to [`Vocabulary::UNK`].
    pub fn id(&self, token: &str) -> usize {
        self.get(token).unwrap_or(Self::UNK)
    }

    /// Id of any token, reserved ones included.
    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

impl Serialize for Vocabulary {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.tokens.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Vocabulary {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let tokens = Vec::<String>::deserialize(d)?;
        Self::from_list(tokens).map_err(serde::de::Error::custom)
    }
}
