//! Sentence generator: paraphrases a set of atomic exemplars into one utterance.
//!
//! Each exemplar is encoded independently by a shared BiLSTM. The decoder's
//! hidden state starts from a learned projection of the mean exemplar summary
//! (its cell starts at zero), attends bilinearly over the token states of all
//! exemplars and emits tokens through a pointer softmax, so values can be
//! copied from the exemplars even when they are outside the vocabulary.

use alloc::string::String;
use alloc::vec::Vec;
use core::ops::Range;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::nn::{BiLstm, Dropout, Gradients, Graph, OutputDistribution, ParamError, ParamId, ParamSet, PointerDecoder, PointerStep, Var};
use crate::templates::Exemplar;
use crate::train::{fit, TrainConfig, TrainReport};
use crate::vocab::Vocabulary;
use crate::{seeded_rng, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub embedding_dim: usize,
    pub hidden_units: usize,
    pub max_decode_len: usize,
    /// Probability, per training example, of zeroing the embeddings of value
    /// tokens inside the exemplars.
    pub tfd_rate: f64,
    #[serde(flatten)]
    pub train: TrainConfig,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            embedding_dim: 100,
            hidden_units: 128,
            max_decode_len: 40,
            tfd_rate: 0.5,
            train: TrainConfig::default(),
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), GeneratorError> {
        if self.embedding_dim == 0 || self.hidden_units == 0 || self.max_decode_len == 0 {
            return Err(GeneratorError::Config("dimensions and max_decode_len must be positive"));
        }
        if !(0.0..=1.0).contains(&self.tfd_rate) {
            return Err(GeneratorError::Config("tfd_rate must be in [0, 1]"));
        }
        self.train.validate().map_err(GeneratorError::Config)
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GeneratorError {
    #[error("invalid config: {0}")]
    Config(&'static str),
    #[error("no exemplars given")]
    NoExemplars,
    #[error("exemplar {0} is empty")]
    EmptyExemplar(usize),
    #[error("empty target utterance")]
    EmptyTarget,
    #[error("empty training corpus")]
    EmptyCorpus,
    #[error("dimension mismatch: {0}")]
    Dimension(&'static str),
    #[error(transparent)]
    Param(#[from] ParamError),
}

/// One exemplar as seen by the generator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourcePhrase {
    pub tokens: Vec<String>,
    /// Tokens realizing a slot value (targets of feature dropout).
    #[serde(default)]
    pub value_mask: Vec<bool>,
}

impl SourcePhrase {
    pub fn plain(tokens: Vec<String>) -> Self {
        Self {
            value_mask: alloc::vec![false; tokens.len()],
            tokens,
        }
    }

    fn is_value(&self, j: usize) -> bool {
        self.value_mask.get(j).copied().unwrap_or(false)
    }
}

impl From<&Exemplar> for SourcePhrase {
    fn from(e: &Exemplar) -> Self {
        Self {
            tokens: e.tokens.clone(),
            value_mask: e.value_mask(),
        }
    }
}

/// A training pair: exemplars and the utterance they should become.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorExample {
    pub exemplars: Vec<SourcePhrase>,
    pub target: Vec<String>,
}

/// Numeric encoder output.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedExemplarSet {
    /// `[fwd; bwd]` state of every exemplar token, exemplars concatenated.
    pub token_states: Vec<Vec<f64>>,
    /// Range of `token_states` owned by each exemplar.
    pub boundaries: Vec<Range<usize>>,
    /// `[fwd_last; bwd_first]` per exemplar.
    pub summaries: Vec<Vec<f64>>,
    /// Surface token at each position, for copying.
    pub surfaces: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Generation {
    pub tokens: Vec<String>,
    /// No end-of-sentence before `max_decode_len`.
    pub truncated: bool,
}

#[derive(Debug, Clone, Copy)]
struct Net {
    embed: ParamId,
    enc: BiLstm,
    proj_w: ParamId,
    proj_b: ParamId,
    dec: PointerDecoder,
    emb: usize,
    hidden: usize,
}

struct Encoded {
    states: Vec<Var>,
    summaries: Vec<Var>,
    boundaries: Vec<Range<usize>>,
    surfaces: Vec<String>,
}

fn input_id(vocab: &Vocabulary, token: &str) -> usize {
    vocab.index_of(token).unwrap_or(Vocabulary::UNK)
}

const BANNED: [usize; 3] = [Vocabulary::PAD, Vocabulary::UNK, Vocabulary::BOS];

impl Net {
    fn register(params: &mut ParamSet, cfg: &GeneratorConfig, vocab: usize, rng: &mut Rng) -> Self {
        let (e, h) = (cfg.embedding_dim, cfg.hidden_units);
        let embed = params.add_xavier("gen.embed", vocab, e, rng);
        let enc = BiLstm::register(params, "gen.enc", e, h, rng);
        let proj_w = params.add_xavier("gen.init.w", h, 2 * h, rng);
        let proj_b = params.add_zeros("gen.init.b", h, 1);
        let dec = PointerDecoder::register(params, "gen.dec", e, h, 2 * h, vocab, rng);
        Self { embed, enc, proj_w, proj_b, dec, emb: e, hidden: h }
    }

    fn load(params: &ParamSet, cfg: &GeneratorConfig, vocab: usize) -> Result<Self, ParamError> {
        let (e, h) = (cfg.embedding_dim, cfg.hidden_units);
        Ok(Self {
            embed: params.expect("gen.embed", vocab, e)?,
            enc: BiLstm::load(params, "gen.enc", e, h)?,
            proj_w: params.expect("gen.init.w", h, 2 * h)?,
            proj_b: params.expect("gen.init.b", h, 1)?,
            dec: PointerDecoder::load(params, "gen.dec", e, h, 2 * h, vocab)?,
            emb: e,
            hidden: h,
        })
    }

    fn encode(&self, g: &mut Graph<'_>, exemplars: &[SourcePhrase], vocab: &Vocabulary, drop: &mut Dropout<'_>, tfd: bool) -> Encoded {
        let mut out = Encoded {
            states: Vec::new(),
            summaries: Vec::with_capacity(exemplars.len()),
            boundaries: Vec::with_capacity(exemplars.len()),
            surfaces: Vec::new(),
        };
        for ex in exemplars {
            let inputs: Vec<Var> = ex
                .tokens
                .iter()
                .enumerate()
                .map(|(j, t)| {
                    if tfd && ex.is_value(j) {
                        g.zeros(self.emb)
                    } else {
                        let e = g.embed(self.embed, input_id(vocab, t));
                        drop.apply(g, e)
                    }
                })
                .collect();
            let enc = self.enc.encode(g, &inputs);
            let start = out.states.len();
            out.states.extend(enc.states);
            out.boundaries.push(start..out.states.len());
            out.summaries.push(enc.summary);
            out.surfaces.extend(ex.tokens.iter().cloned());
        }
        out
    }

    fn init(&self, g: &mut Graph<'_>, summaries: &[Var]) -> (Var, Var) {
        let mean = g.mean(summaries);
        let h = g.affine(self.proj_w, self.proj_b, mean);
        (h, g.zeros(self.hidden))
    }

    #[allow(clippy::too_many_arguments)]
    fn step(&self, g: &mut Graph<'_>, prev: usize, h: Var, c: Var, memory: &[Var], drop: &mut Dropout<'_>, force: Option<f64>) -> PointerStep {
        let e = g.embed(self.embed, prev);
        let e = drop.apply(g, e);
        self.dec.step(g, e, h, c, memory, drop, force)
    }

    fn eos_prob(g: &mut Graph<'_>, st: &PointerStep) -> Var {
        let p = g.pick(st.p_gen, Vocabulary::EOS);
        g.mul(st.switch, p)
    }

    /// Summed negative log-likelihood of the target plus end-of-sentence.
    fn nll(&self, g: &mut Graph<'_>, ex: &GeneratorExample, vocab: &Vocabulary, drop: &mut Dropout<'_>, tfd: bool) -> (Var, usize) {
        let enc = self.encode(g, &ex.exemplars, vocab, drop, tfd);
        let (mut h, mut c) = self.init(g, &enc.summaries);
        let mut prev = Vocabulary::BOS;
        let mut terms = Vec::with_capacity(ex.target.len() + 1);
        for t in ex.target.iter().map(Some).chain(core::iter::once(None)) {
            let st = self.step(g, prev, h, c, &enc.states, drop, None);
            let p = match t {
                Some(tok) => self.dec.target_prob(g, &st, tok, &enc.surfaces, vocab),
                None => Self::eos_prob(g, &st),
            };
            terms.push(g.log(p));
            (h, c) = (st.h, st.c);
            prev = t.map_or(Vocabulary::EOS, |tok| input_id(vocab, tok));
        }
        let total = g.sum(&terms);
        (g.scale(total, -1.0), terms.len())
    }
}

fn check_exemplars(exemplars: &[SourcePhrase]) -> Result<(), GeneratorError> {
    if exemplars.is_empty() {
        return Err(GeneratorError::NoExemplars);
    }
    if let Some(i) = exemplars.iter().position(|e| e.tokens.is_empty()) {
        return Err(GeneratorError::EmptyExemplar(i));
    }
    Ok(())
}

fn check_example(ex: &GeneratorExample) -> Result<(), GeneratorError> {
    check_exemplars(&ex.exemplars)?;
    if ex.target.is_empty() {
        return Err(GeneratorError::EmptyTarget);
    }
    Ok(())
}

/// Generator parameters together with their config and vocabulary.
#[derive(Debug, Clone)]
pub struct GeneratorModel {
    config: GeneratorConfig,
    vocab: Vocabulary,
    params: ParamSet,
    net: Net,
}

impl GeneratorModel {
    pub fn new(config: GeneratorConfig, vocab: Vocabulary, seed: u64) -> Result<Self, GeneratorError> {
        config.validate()?;
        let mut rng = seeded_rng(seed);
        let mut params = ParamSet::new();
        let net = Net::register(&mut params, &config, vocab.len(), &mut rng);
        Ok(Self { config, vocab, params, net })
    }

    /// Reassembles a model from checkpointed parts, checking every shape.
    pub fn from_parts(config: GeneratorConfig, vocab: Vocabulary, params: ParamSet) -> Result<Self, GeneratorError> {
        config.validate()?;
        let net = Net::load(&params, &config, vocab.len())?;
        Ok(Self { config, vocab, params, net })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn config_mut(&mut self) -> &mut GeneratorConfig {
        &mut self.config
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn encode_exemplars(&self, exemplars: &[SourcePhrase]) -> Result<EncodedExemplarSet, GeneratorError> {
        check_exemplars(exemplars)?;
        let mut g = Graph::new(&self.params);
        let enc = self.net.encode(&mut g, exemplars, &self.vocab, &mut Dropout::off(), false);
        Ok(EncodedExemplarSet {
            token_states: enc.states.iter().map(|v| g.value(*v).to_vec()).collect(),
            boundaries: enc.boundaries,
            summaries: enc.summaries.iter().map(|v| g.value(*v).to_vec()).collect(),
            surfaces: enc.surfaces,
        })
    }

    fn check_encoding(&self, enc: &EncodedExemplarSet) -> Result<(), GeneratorError> {
        let m = 2 * self.net.hidden;
        if enc.summaries.is_empty() || enc.token_states.is_empty() {
            return Err(GeneratorError::NoExemplars);
        }
        if enc.summaries.iter().chain(&enc.token_states).any(|v| v.len() != m) {
            return Err(GeneratorError::Dimension("encoder vectors must have twice the hidden size"));
        }
        if enc.surfaces.len() != enc.token_states.len() {
            return Err(GeneratorError::Dimension("one surface per token state"));
        }
        Ok(())
    }

    pub fn init_decoder_state(&self, enc: &EncodedExemplarSet) -> Result<DecoderState, GeneratorError> {
        self.check_encoding(enc)?;
        let mut g = Graph::new(&self.params);
        let s: Vec<Var> = enc.summaries.iter().map(|v| g.input(v.clone())).collect();
        let (h, c) = self.net.init(&mut g, &s);
        Ok(DecoderState {
            h: g.value(h).to_vec(),
            c: g.value(c).to_vec(),
        })
    }

    /// One decoding step from `prev_token` (`<s>` at the start). With
    /// `force_switch` the generate/copy mixture weight is pinned.
    pub fn decode_step(
        &self,
        state: &DecoderState,
        prev_token: &str,
        enc: &EncodedExemplarSet,
        force_switch: Option<f64>,
    ) -> Result<(DecoderState, OutputDistribution), GeneratorError> {
        self.check_encoding(enc)?;
        if state.h.len() != self.net.hidden || state.c.len() != self.net.hidden {
            return Err(GeneratorError::Dimension("decoder state must match the hidden size"));
        }
        let mut g = Graph::new(&self.params);
        let memory: Vec<Var> = enc.token_states.iter().map(|v| g.input(v.clone())).collect();
        let (h, c) = (g.input(state.h.clone()), g.input(state.c.clone()));
        let st = self
            .net
            .step(&mut g, input_id(&self.vocab, prev_token), h, c, &memory, &mut Dropout::off(), force_switch);
        let dist = self.net.dec.distribution(&g, &st, &enc.surfaces, &self.vocab);
        let next = DecoderState {
            h: g.value(st.h).to_vec(),
            c: g.value(st.c).to_vec(),
        };
        Ok((next, dist))
    }

    /// Greedy 1-best decoding. Copied tokens keep their source surface.
    pub fn generate(&self, exemplars: &[SourcePhrase]) -> Result<Generation, GeneratorError> {
        check_exemplars(exemplars)?;
        let mut g = Graph::new(&self.params);
        let mut drop = Dropout::off();
        let enc = self.net.encode(&mut g, exemplars, &self.vocab, &mut drop, false);
        let (mut h, mut c) = self.net.init(&mut g, &enc.summaries);
        let mut prev = Vocabulary::BOS;
        let mut tokens = Vec::new();
        for _ in 0..self.config.max_decode_len {
            let st = self.net.step(&mut g, prev, h, c, &enc.states, &mut drop, None);
            let dist = self.net.dec.distribution(&g, &st, &enc.surfaces, &self.vocab);
            let best = dist.argmax(&BANNED);
            if best == Vocabulary::EOS {
                return Ok(Generation { tokens, truncated: false });
            }
            let surface = String::from(dist.surface(best, &self.vocab));
            prev = input_id(&self.vocab, &surface);
            tokens.push(surface);
            (h, c) = (st.h, st.c);
        }
        Ok(Generation { tokens, truncated: true })
    }

    /// Negative log-likelihood of one example (no dropout) and its token count,
    /// end-of-sentence included.
    pub fn loss(&self, ex: &GeneratorExample) -> Result<(f64, usize), GeneratorError> {
        check_example(ex)?;
        let mut g = Graph::new(&self.params);
        let (l, n) = self.net.nll(&mut g, ex, &self.vocab, &mut Dropout::off(), false);
        Ok((g.scalar(l), n))
    }

    /// Corpus NLL per token.
    pub fn mean_token_nll(&self, corpus: &[GeneratorExample]) -> Result<f64, GeneratorError> {
        let (mut sum, mut n) = (0.0, 0);
        for ex in corpus {
            let (l, k) = self.loss(ex)?;
            sum += l;
            n += k;
        }
        Ok(if n == 0 { 0.0 } else { sum / n as f64 })
    }

    /// Trains on `corpus`; with a non-empty `dev` set the parameters with the
    /// lowest dev NLL are kept.
    pub fn train(&mut self, corpus: &[GeneratorExample], dev: &[GeneratorExample]) -> Result<TrainReport, GeneratorError> {
        if corpus.is_empty() {
            return Err(GeneratorError::EmptyCorpus);
        }
        corpus.iter().chain(dev).try_for_each(check_example)?;
        let Self { config, vocab, params, net } = self;
        let (net, vocab, config) = (*net, &*vocab, &*config);
        let rate = config.train.dropout_rate;
        let step = |p: &ParamSet, ex: &GeneratorExample, rng: &mut Rng, grads: &mut Gradients| {
            let tfd = config.tfd_rate > 0.0 && rng.gen::<f64>() < config.tfd_rate;
            let mut g = Graph::new(p);
            let mut drop = if rate > 0.0 { Dropout::new(rate, rng) } else { Dropout::off() };
            let (loss, n) = net.nll(&mut g, ex, vocab, &mut drop, tfd);
            g.backward(loss, grads);
            (g.scalar(loss), n)
        };
        let mut dev_score = |p: &ParamSet| {
            let (mut sum, mut n) = (0.0, 0);
            for ex in dev {
                let mut g = Graph::new(p);
                let (l, k) = net.nll(&mut g, ex, vocab, &mut Dropout::off(), false);
                sum += g.scalar(l);
                n += k;
            }
            -sum / n as f64
        };
        let dev_fn: Option<&mut dyn FnMut(&ParamSet) -> f64> = if dev.is_empty() { None } else { Some(&mut dev_score) };
        Ok(fit(params, corpus, &config.train, step, dev_fn))
    }

    /// Largest relative error between the analytic NLL gradient and central
    /// finite differences over every parameter scalar.
    pub fn grad_check(&self, ex: &GeneratorExample) -> Result<f64, GeneratorError> {
        check_example(ex)?;
        let mut grads = Gradients::zeros_like(&self.params);
        {
            let mut g = Graph::new(&self.params);
            let (l, _) = self.net.nll(&mut g, ex, &self.vocab, &mut Dropout::off(), false);
            g.backward(l, &mut grads);
        }
        let mut params = self.params.clone();
        let eval = |p: &ParamSet| {
            let mut g = Graph::new(p);
            let (l, _) = self.net.nll(&mut g, ex, &self.vocab, &mut Dropout::off(), false);
            g.scalar(l)
        };
        let eps = 1e-5;
        let mut worst: f64 = 0.0;
        for id in self.params.ids() {
            for k in 0..self.params.get(id).data.len() {
                let orig = params.get(id).data[k];
                params.get_mut(id).data[k] = orig + eps;
                let up = eval(&params);
                params.get_mut(id).data[k] = orig - eps;
                let down = eval(&params);
                params.get_mut(id).data[k] = orig;
                let num = (up - down) / (2.0 * eps);
                let ana = grads.get(id)[k];
                worst = worst.max((num - ana).abs() / num.abs().max(ana.abs()).max(1e-4));
            }
        }
        Ok(worst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenize::tokenize;
    use alloc::collections::BTreeMap;
    use alloc::vec;

    fn phrase(s: &str) -> SourcePhrase {
        SourcePhrase::plain(tokenize(s))
    }

    fn tiny(vocab: &Vocabulary, seed: u64) -> GeneratorModel {
        let cfg = GeneratorConfig {
            embedding_dim: 4,
            hidden_units: 6,
            max_decode_len: 12,
            ..Default::default()
        };
        GeneratorModel::new(cfg, vocab.clone(), seed).unwrap()
    }

    fn toy_vocab() -> Vocabulary {
        Vocabulary::build(tokenize("thank you good bye i want thai food please"))
    }

    #[test]
    fn encoder_shapes() {
        let m = tiny(&toy_vocab(), 1);
        let enc = m.encode_exemplars(&[phrase("thank you"), phrase("good bye now")]).unwrap();
        assert_eq!(enc.token_states.len(), 5);
        assert_eq!(enc.summaries.len(), 2);
        assert_eq!(enc.boundaries, vec![0..2, 2..5]);
        assert!(enc.token_states.iter().all(|v| v.len() == 12));
        assert_eq!(m.encode_exemplars(&[]), Err(GeneratorError::NoExemplars));
        assert_eq!(
            m.encode_exemplars(&[phrase("a"), SourcePhrase::plain(vec![])]),
            Err(GeneratorError::EmptyExemplar(1))
        );
    }

    #[test]
    fn exemplars_are_encoded_independently() {
        let m = tiny(&toy_vocab(), 2);
        let (a, b) = (phrase("thank you"), phrase("i want thai food"));
        let ab = m.encode_exemplars(&[a.clone(), b.clone()]).unwrap();
        let ba = m.encode_exemplars(&[b, a]).unwrap();
        assert_eq!(ab.summaries[0], ba.summaries[1]);
        assert_eq!(ab.summaries[1], ba.summaries[0]);
        assert_eq!(ab.token_states[..2], ba.token_states[4..]);
    }

    #[test]
    fn init_state_is_projected_mean() {
        let m = tiny(&toy_vocab(), 3);
        let enc = m.encode_exemplars(&[phrase("thank you"), phrase("good bye")]).unwrap();
        let s = m.init_decoder_state(&enc).unwrap();
        let w = m.params.get(m.net.proj_w);
        let b = m.params.get(m.net.proj_b);
        for i in 0..6 {
            let mut acc = b.data[i];
            for j in 0..12 {
                acc += w.row(i)[j] * (enc.summaries[0][j] + enc.summaries[1][j]) / 2.0;
            }
            assert!((acc - s.h[i]).abs() < 1e-12);
        }
        assert!(s.c.iter().all(|x| *x == 0.0));
    }

    fn by_surface(d: &OutputDistribution, v: &Vocabulary) -> BTreeMap<String, f64> {
        let mut m = BTreeMap::new();
        for (i, p) in d.probs.iter().enumerate() {
            *m.entry(String::from(d.surface(i, v))).or_insert(0.0) += p;
        }
        m
    }

    #[test]
    fn first_step_is_permutation_invariant() {
        let v = toy_vocab();
        let m = tiny(&v, 4);
        let (a, b) = (phrase("thank you"), phrase("sushi please"));
        let run = |xs: &[SourcePhrase]| {
            let enc = m.encode_exemplars(xs).unwrap();
            let s = m.init_decoder_state(&enc).unwrap();
            by_surface(&m.decode_step(&s, "<s>", &enc, None).unwrap().1, &v)
        };
        let (p, q) = (run(&[a.clone(), b.clone()]), run(&[b, a]));
        assert_eq!(p.len(), q.len());
        for (k, x) in &p {
            assert!((x - q[k]).abs() < 1e-12, "{k}");
        }
    }

    #[test]
    fn decode_step_rejects_bad_state() {
        let m = tiny(&toy_vocab(), 5);
        let enc = m.encode_exemplars(&[phrase("thank you")]).unwrap();
        let s = DecoderState { h: vec![0.0; 3], c: vec![0.0; 6] };
        assert!(matches!(m.decode_step(&s, "<s>", &enc, None), Err(GeneratorError::Dimension(_))));
    }

    #[test]
    fn untrained_generation_respects_cap() {
        let m = tiny(&toy_vocab(), 6);
        let out = m.generate(&[phrase("thank you"), phrase("good bye")]).unwrap();
        assert!(out.tokens.len() <= 12);
        assert_eq!(out.truncated, out.tokens.len() == 12);
        assert!(out.tokens.iter().all(|t| !["<pad>", "<unk>", "<s>"].contains(&t.as_str())));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let m = tiny(&toy_vocab(), 7);
        let ex = GeneratorExample {
            exemplars: vec![phrase("thank you"), phrase("i want sushi")],
            target: tokenize("sushi please thank you good"),
        };
        let err = m.grad_check(&ex).unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn config_round_trips_flat() {
        let c = GeneratorConfig::default();
        assert_eq!(c.train.batch_size, 20);
        assert_eq!(c.hidden_units, 128);
        let bad = GeneratorConfig { tfd_rate: 1.5, ..c };
        assert!(bad.validate().is_err());
    }
}
