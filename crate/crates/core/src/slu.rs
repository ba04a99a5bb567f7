//! Hierarchical act / slot / value parser.
//!
//! A shared BiLSTM encodes the utterance. Acts are independent sigmoid
//! outputs over the summary vector. For every act, a slot head conditioned on
//! `[summary; act embedding]` scores each slot plus a `NO_SLOT` outcome (an
//! act-only triple). For every act-slot pair a pointer decoder, initialised
//! from `[summary; act embedding; slot embedding]` and fed the two label
//! embeddings next to every input token, spells the value token by token with
//! copying from the utterance; ending immediately means no value.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::eval::score;
use crate::nn::{BiLstm, Dropout, Gradients, Graph, ParamError, ParamId, ParamSet, PointerDecoder, Var};
use crate::ontology::{DialogueAct, Ontology, SlotKind, Triple};
use crate::tokenize::tokenize;
use crate::train::{fit, TrainConfig, TrainReport};
use crate::vocab::Vocabulary;
use crate::{seeded_rng, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParseConfig {
    pub embedding_dim: usize,
    pub hidden_units: usize,
    /// Size of the act and slot label embeddings.
    pub label_dim: usize,
    pub act_threshold: f64,
    pub slot_threshold: f64,
    pub max_value_len: usize,
    #[serde(flatten)]
    pub train: TrainConfig,
}

impl Default for ParseConfig {
    fn default() -> Self {
        Self {
            embedding_dim: 100,
            hidden_units: 128,
            label_dim: 32,
            act_threshold: 0.5,
            slot_threshold: 0.5,
            max_value_len: 10,
            train: TrainConfig::default(),
        }
    }
}

impl ParseConfig {
    pub fn validate(&self) -> Result<(), SluError> {
        if self.embedding_dim == 0 || self.hidden_units == 0 || self.label_dim == 0 || self.max_value_len == 0 {
            return Err(SluError::Config("dimensions and max_value_len must be positive"));
        }
        let open = |x: f64| x > 0.0 && x < 1.0;
        if !open(self.act_threshold) || !open(self.slot_threshold) {
            return Err(SluError::Config("thresholds must be in (0, 1)"));
        }
        self.train.validate().map_err(SluError::Config)
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SluError {
    #[error("invalid config: {0}")]
    Config(&'static str),
    #[error("empty training corpus")]
    EmptyCorpus,
    #[error("empty utterance")]
    EmptyUtterance,
    #[error("label {0:?} is not in the model inventory")]
    UnknownLabel(String),
    #[error("label inventories must be non-empty and duplicate-free")]
    BadInventory,
    #[error(transparent)]
    Param(#[from] ParamError),
}

/// A tokenized utterance with its gold dialogue act.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SluExample {
    pub tokens: Vec<String>,
    pub act: DialogueAct,
}

impl SluExample {
    pub fn new(utterance: &str, act: DialogueAct) -> Self {
        Self {
            tokens: tokenize(utterance),
            act,
        }
    }

    /// Utterance tokens followed by the tokens of every labeled value; the
    /// value decoder can only generate (rather than copy) what the
    /// vocabulary holds.
    pub fn vocabulary_tokens(&self) -> impl Iterator<Item = String> + '_ {
        self.tokens
            .iter()
            .cloned()
            .chain(self.act.iter().filter_map(|t| t.value()).flat_map(tokenize))
    }
}

/// Per-head losses of one example.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadLosses {
    pub act: f64,
    pub slot: f64,
    pub value: f64,
}

#[derive(Debug, Clone, Copy)]
struct Net {
    embed: ParamId,
    enc: BiLstm,
    act_w: ParamId,
    act_b: ParamId,
    act_emb: ParamId,
    slot_emb: ParamId,
    slot_h_w: ParamId,
    slot_h_b: ParamId,
    slot_w: ParamId,
    slot_b: ParamId,
    val_init_w: ParamId,
    val_init_b: ParamId,
    dec: PointerDecoder,
    hidden: usize,
}

/// Gold structure of one example in label-index space.
#[derive(Debug, Clone)]
struct Prepared {
    tokens: Vec<String>,
    acts: Vec<f64>,
    per_act: Vec<ActTarget>,
}

#[derive(Debug, Clone)]
struct ActTarget {
    act: usize,
    /// One entry per slot plus `NO_SLOT` last.
    slots: Vec<f64>,
    /// `(slot, value tokens)`; empty tokens mean a slot without value.
    values: Vec<(usize, Vec<String>)>,
}

const BANNED: [usize; 3] = [Vocabulary::PAD, Vocabulary::UNK, Vocabulary::BOS];

fn input_id(vocab: &Vocabulary, token: &str) -> usize {
    vocab.index_of(token).unwrap_or(Vocabulary::UNK)
}

struct Loss {
    act: Var,
    slot: Option<Var>,
    value: Option<Var>,
}

impl Net {
    fn register(params: &mut ParamSet, cfg: &ParseConfig, vocab: usize, n_acts: usize, n_slots: usize, rng: &mut Rng) -> Self {
        let (e, h, l) = (cfg.embedding_dim, cfg.hidden_units, cfg.label_dim);
        Self {
            embed: params.add_xavier("slu.embed", vocab, e, rng),
            enc: BiLstm::register(params, "slu.enc", e, h, rng),
            act_w: params.add_xavier("slu.act.w", n_acts, 2 * h, rng),
            act_b: params.add_zeros("slu.act.b", n_acts, 1),
            act_emb: params.add_xavier("slu.act_emb", n_acts, l, rng),
            slot_emb: params.add_xavier("slu.slot_emb", n_slots, l, rng),
            slot_h_w: params.add_xavier("slu.slot.hid.w", h, 2 * h + l, rng),
            slot_h_b: params.add_zeros("slu.slot.hid.b", h, 1),
            slot_w: params.add_xavier("slu.slot.w", n_slots + 1, h, rng),
            slot_b: params.add_zeros("slu.slot.b", n_slots + 1, 1),
            val_init_w: params.add_xavier("slu.value.init.w", h, 2 * h + 2 * l, rng),
            val_init_b: params.add_zeros("slu.value.init.b", h, 1),
            dec: PointerDecoder::register(params, "slu.value", e + 2 * l, h, 2 * h, vocab, rng),
            hidden: h,
        }
    }

    fn load(params: &ParamSet, cfg: &ParseConfig, vocab: usize, n_acts: usize, n_slots: usize) -> Result<Self, ParamError> {
        let (e, h, l) = (cfg.embedding_dim, cfg.hidden_units, cfg.label_dim);
        Ok(Self {
            embed: params.expect("slu.embed", vocab, e)?,
            enc: BiLstm::load(params, "slu.enc", e, h)?,
            act_w: params.expect("slu.act.w", n_acts, 2 * h)?,
            act_b: params.expect("slu.act.b", n_acts, 1)?,
            act_emb: params.expect("slu.act_emb", n_acts, l)?,
            slot_emb: params.expect("slu.slot_emb", n_slots, l)?,
            slot_h_w: params.expect("slu.slot.hid.w", h, 2 * h + l)?,
            slot_h_b: params.expect("slu.slot.hid.b", h, 1)?,
            slot_w: params.expect("slu.slot.w", n_slots + 1, h)?,
            slot_b: params.expect("slu.slot.b", n_slots + 1, 1)?,
            val_init_w: params.expect("slu.value.init.w", h, 2 * h + 2 * l)?,
            val_init_b: params.expect("slu.value.init.b", h, 1)?,
            dec: PointerDecoder::load(params, "slu.value", e + 2 * l, h, 2 * h, vocab)?,
            hidden: h,
        })
    }

    fn encode(&self, g: &mut Graph<'_>, tokens: &[String], vocab: &Vocabulary, drop: &mut Dropout<'_>) -> (Vec<Var>, Var) {
        let inputs: Vec<Var> = tokens
            .iter()
            .map(|t| {
                let e = g.embed(self.embed, input_id(vocab, t));
                drop.apply(g, e)
            })
            .collect();
        let out = self.enc.encode(g, &inputs);
        (out.states, out.summary)
    }

    fn slot_logits(&self, g: &mut Graph<'_>, summary: Var, act: usize, drop: &mut Dropout<'_>) -> Var {
        let a = g.embed(self.act_emb, act);
        let x = g.concat(&[summary, a]);
        let h = g.affine(self.slot_h_w, self.slot_h_b, x);
        let h = g.tanh(h);
        let h = drop.apply(g, h);
        g.affine(self.slot_w, self.slot_b, h)
    }

    /// Initial decoder state and the label vector fed alongside every input token.
    fn value_init(&self, g: &mut Graph<'_>, summary: Var, act: usize, slot: usize) -> (Var, Var, Var) {
        let a = g.embed(self.act_emb, act);
        let s = g.embed(self.slot_emb, slot);
        let label = g.concat(&[a, s]);
        let x = g.concat(&[summary, label]);
        let h = g.affine(self.val_init_w, self.val_init_b, x);
        (g.tanh(h), g.zeros(self.hidden), label)
    }

    fn value_input(&self, g: &mut Graph<'_>, prev: usize, label: Var) -> Var {
        let e = g.embed(self.embed, prev);
        g.concat(&[e, label])
    }

    #[allow(clippy::too_many_arguments)]
    fn value_nll(
        &self,
        g: &mut Graph<'_>,
        states: &[Var],
        summary: Var,
        tokens: &[String],
        act: usize,
        slot: usize,
        target: &[String],
        vocab: &Vocabulary,
        drop: &mut Dropout<'_>,
    ) -> Var {
        let (mut h, mut c, label) = self.value_init(g, summary, act, slot);
        let mut prev = Vocabulary::BOS;
        let mut terms = Vec::with_capacity(target.len() + 1);
        for t in target.iter().map(Some).chain(core::iter::once(None)) {
            let e = self.value_input(g, prev, label);
            let st = self.dec.step(g, e, h, c, states, drop, None);
            let p = match t {
                Some(tok) => self.dec.target_prob(g, &st, tok, tokens, vocab),
                None => {
                    let p = g.pick(st.p_gen, Vocabulary::EOS);
                    g.mul(st.switch, p)
                }
            };
            terms.push(g.log(p));
            (h, c) = (st.h, st.c);
            prev = t.map_or(Vocabulary::EOS, |tok| input_id(vocab, tok));
        }
        let s = g.sum(&terms);
        g.scale(s, -1.0)
    }

    fn loss(&self, g: &mut Graph<'_>, ex: &Prepared, vocab: &Vocabulary, drop: &mut Dropout<'_>) -> Loss {
        let (states, summary) = self.encode(g, &ex.tokens, vocab, drop);
        let s = drop.apply(g, summary);
        let logits = g.affine(self.act_w, self.act_b, s);
        let act = g.bce_logits(logits, ex.acts.clone());
        let (mut slot_terms, mut value_terms) = (Vec::new(), Vec::new());
        for at in &ex.per_act {
            let sl = self.slot_logits(g, summary, at.act, drop);
            slot_terms.push(g.bce_logits(sl, at.slots.clone()));
            for (slot, target) in &at.values {
                value_terms.push(self.value_nll(g, &states, summary, &ex.tokens, at.act, *slot, target, vocab, drop));
            }
        }
        let slot = (!slot_terms.is_empty()).then(|| g.sum(&slot_terms));
        let value = (!value_terms.is_empty()).then(|| g.sum(&value_terms));
        Loss { act, slot, value }
    }

    fn total(g: &mut Graph<'_>, l: &Loss) -> Var {
        let mut parts = alloc::vec![l.act];
        parts.extend(l.slot);
        parts.extend(l.value);
        g.sum(&parts)
    }
}

/// Trained parser together with its label inventories and vocabulary.
#[derive(Debug, Clone)]
pub struct SluModel {
    config: ParseConfig,
    vocab: Vocabulary,
    acts: Vec<String>,
    slots: Vec<String>,
    params: ParamSet,
    net: Net,
}

fn check_inventory(xs: &[String]) -> Result<(), SluError> {
    let mut sorted = xs.to_vec();
    sorted.sort();
    sorted.dedup();
    if xs.is_empty() || sorted.len() != xs.len() {
        return Err(SluError::BadInventory);
    }
    Ok(())
}

impl SluModel {
    pub fn new(config: ParseConfig, vocab: Vocabulary, acts: Vec<String>, slots: Vec<String>, seed: u64) -> Result<Self, SluError> {
        config.validate()?;
        check_inventory(&acts)?;
        check_inventory(&slots)?;
        let mut rng = seeded_rng(seed);
        let mut params = ParamSet::new();
        let net = Net::register(&mut params, &config, vocab.len(), acts.len(), slots.len(), &mut rng);
        Ok(Self { config, vocab, acts, slots, params, net })
    }

    pub fn from_parts(config: ParseConfig, vocab: Vocabulary, acts: Vec<String>, slots: Vec<String>, params: ParamSet) -> Result<Self, SluError> {
        config.validate()?;
        check_inventory(&acts)?;
        check_inventory(&slots)?;
        let net = Net::load(&params, &config, vocab.len(), acts.len(), slots.len())?;
        Ok(Self { config, vocab, acts, slots, params, net })
    }

    pub fn config(&self) -> &ParseConfig {
        &self.config
    }

    pub fn config_mut(&mut self) -> &mut ParseConfig {
        &mut self.config
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn acts(&self) -> &[String] {
        &self.acts
    }

    pub fn slots(&self) -> &[String] {
        &self.slots
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn prepare(&self, ex: &SluExample) -> Result<Prepared, SluError> {
        if ex.tokens.is_empty() {
            return Err(SluError::EmptyUtterance);
        }
        let find = |xs: &[String], x: &str| xs.iter().position(|a| a == x).ok_or_else(|| SluError::UnknownLabel(x.into()));
        let mut acts = alloc::vec![0.0; self.acts.len()];
        let mut per_act: Vec<ActTarget> = Vec::new();
        for t in ex.act.iter() {
            let a = find(&self.acts, t.act())?;
            acts[a] = 1.0;
            let pos = match per_act.iter().position(|p| p.act == a) {
                Some(p) => p,
                None => {
                    per_act.push(ActTarget {
                        act: a,
                        slots: alloc::vec![0.0; self.slots.len() + 1],
                        values: Vec::new(),
                    });
                    per_act.len() - 1
                }
            };
            let target = &mut per_act[pos];
            match t.slot() {
                None => target.slots[self.slots.len()] = 1.0,
                Some(s) => {
                    let k = find(&self.slots, s)?;
                    target.slots[k] = 1.0;
                    target.values.push((k, t.value().map(tokenize).unwrap_or_default()));
                }
            }
        }
        Ok(Prepared {
            tokens: ex.tokens.clone(),
            acts,
            per_act,
        })
    }

    /// Act probabilities for an utterance, in inventory order.
    pub fn act_probabilities(&self, tokens: &[String]) -> Result<Vec<f64>, SluError> {
        if tokens.is_empty() {
            return Err(SluError::EmptyUtterance);
        }
        let mut g = Graph::new(&self.params);
        let (_, summary) = self.net.encode(&mut g, tokens, &self.vocab, &mut Dropout::off());
        let logits = g.affine(self.net.act_w, self.net.act_b, summary);
        let p = g.sigmoid(logits);
        Ok(g.value(p).to_vec())
    }

    /// Parses an utterance. With an ontology the output is restricted to its
    /// acts, slots and declared triples, and values are canonicalized against
    /// the slot's value list (enumerable values outside it are dropped).
    pub fn parse(&self, tokens: &[String], ontology: Option<&Ontology>) -> DialogueAct {
        let mut out = DialogueAct::new();
        if tokens.is_empty() {
            return out;
        }
        let mut g = Graph::new(&self.params);
        let mut drop = Dropout::off();
        let (states, summary) = self.net.encode(&mut g, tokens, &self.vocab, &mut drop);
        let logits = g.affine(self.net.act_w, self.net.act_b, summary);
        let act_p = g.sigmoid(logits);
        let act_p = g.value(act_p).to_vec();
        for (a, name) in self.acts.iter().enumerate() {
            if act_p[a] < self.config.act_threshold || ontology.is_some_and(|o| !o.has_act(name)) {
                continue;
            }
            let sl = self.net.slot_logits(&mut g, summary, a, &mut drop);
            let sp = g.sigmoid(sl);
            let sp = g.value(sp).to_vec();
            if sp[self.slots.len()] >= self.config.slot_threshold {
                self.emit(&mut out, Triple::new(name.as_str(), None, None).ok(), ontology);
            }
            for (s, slot) in self.slots.iter().enumerate() {
                if sp[s] < self.config.slot_threshold || ontology.is_some_and(|o| o.slot(slot).is_none()) {
                    continue;
                }
                let value = self.decode_value(&mut g, &states, summary, tokens, a, s);
                let triple = if value.is_empty() {
                    Triple::new(name.as_str(), Some(slot.clone()), None).ok()
                } else {
                    self.lexicalize(name, slot, &value, ontology)
                };
                self.emit(&mut out, triple, ontology);
            }
        }
        out
    }

    fn emit(&self, out: &mut DialogueAct, t: Option<Triple>, ontology: Option<&Ontology>) {
        let Some(t) = t else { return };
        if let Some(o) = ontology {
            match o.delexicalize(&t) {
                Ok(dt) if o.delex_universe().is_empty() || o.delex_universe().contains(&dt) => {}
                _ => return,
            }
        }
        out.insert(t);
    }

    fn lexicalize(&self, act: &str, slot: &str, value: &[String], ontology: Option<&Ontology>) -> Option<Triple> {
        let surface = value.join(" ");
        let canonical = match ontology.and_then(|o| o.slot(slot)) {
            Some(def) => match def.values().iter().find(|v| tokenize(v) == value) {
                Some(v) => v.clone(),
                None if def.kind() == SlotKind::Enumerable => return None,
                None => surface,
            },
            None => surface,
        };
        Triple::new(act, Some(slot.into()), Some(canonical)).ok()
    }

    fn decode_value(&self, g: &mut Graph<'_>, states: &[Var], summary: Var, tokens: &[String], act: usize, slot: usize) -> Vec<String> {
        let mut drop = Dropout::off();
        let (mut h, mut c, label) = self.net.value_init(g, summary, act, slot);
        let mut prev = Vocabulary::BOS;
        let mut out = Vec::new();
        for _ in 0..self.config.max_value_len {
            let e = self.net.value_input(g, prev, label);
            let st = self.net.dec.step(g, e, h, c, states, &mut drop, None);
            let dist = self.net.dec.distribution(g, &st, tokens, &self.vocab);
            let best = dist.argmax(&BANNED);
            if best == Vocabulary::EOS {
                break;
            }
            let surface = String::from(dist.surface(best, &self.vocab));
            prev = input_id(&self.vocab, &surface);
            out.push(surface);
            (h, c) = (st.h, st.c);
        }
        out
    }

    pub fn head_losses(&self, ex: &SluExample) -> Result<HeadLosses, SluError> {
        let p = self.prepare(ex)?;
        let mut g = Graph::new(&self.params);
        let l = self.net.loss(&mut g, &p, &self.vocab, &mut Dropout::off());
        Ok(HeadLosses {
            act: g.scalar(l.act),
            slot: l.slot.map_or(0.0, |v| g.scalar(v)),
            value: l.value.map_or(0.0, |v| g.scalar(v)),
        })
    }

    /// Triple F1 of the parser on `corpus`.
    pub fn evaluate(&self, corpus: &[SluExample], ontology: Option<&Ontology>) -> f64 {
        let pred: Vec<DialogueAct> = corpus.iter().map(|e| self.parse(&e.tokens, ontology)).collect();
        let gold: Vec<DialogueAct> = corpus.iter().map(|e| e.act.clone()).collect();
        score(&pred, &gold).map_or(0.0, |r| r.f1)
    }

    /// Joint training of all three heads with teacher forcing; with a
    /// non-empty `dev` set the parameters with the best dev F1 are kept.
    pub fn train(&mut self, corpus: &[SluExample], dev: &[SluExample], ontology: Option<&Ontology>) -> Result<TrainReport, SluError> {
        if corpus.is_empty() {
            return Err(SluError::EmptyCorpus);
        }
        let prepared = corpus.iter().map(|e| self.prepare(e)).collect::<Result<Vec<_>, _>>()?;
        dev.iter().try_for_each(|e| self.prepare(e).map(|_| ()))?;
        let rate = self.config.train.dropout_rate;
        let train_cfg = self.config.train.clone();
        let net = self.net;
        let vocab = self.vocab.clone();
        let step = |p: &ParamSet, ex: &Prepared, rng: &mut Rng, grads: &mut Gradients| {
            let mut g = Graph::new(p);
            let mut drop = if rate > 0.0 { Dropout::new(rate, rng) } else { Dropout::off() };
            let l = net.loss(&mut g, ex, &vocab, &mut drop);
            let total = Net::total(&mut g, &l);
            g.backward(total, grads);
            (g.scalar(total), 1)
        };
        let mut scratch = self.clone();
        let mut dev_score = |p: &ParamSet| {
            scratch.params.clone_from(p);
            scratch.evaluate(dev, ontology)
        };
        let dev_fn: Option<&mut dyn FnMut(&ParamSet) -> f64> = if dev.is_empty() { None } else { Some(&mut dev_score) };
        Ok(fit(&mut self.params, &prepared, &train_cfg, step, dev_fn))
    }
}
