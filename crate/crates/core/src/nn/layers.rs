//! Recurrent and attention building blocks shared by the generator and the parser.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, RngCore};

use super::{Graph, ParamError, ParamId, ParamSet, Tensor, Var};
use crate::vocab::Vocabulary;

/// Inverted dropout driven by an optional RNG; without one it is the identity.
pub struct Dropout<'r> {
    rate: f64,
    rng: Option<&'r mut dyn RngCore>,
}

impl<'r> Dropout<'r> {
    pub fn off() -> Self {
        Self { rate: 0.0, rng: None }
    }

    pub fn new(rate: f64, rng: &'r mut dyn RngCore) -> Self {
        Self { rate, rng: Some(rng) }
    }

    pub fn active(&self) -> bool {
        self.rng.is_some() && self.rate > 0.0
    }

    pub fn rng(&mut self) -> Option<&mut dyn RngCore> {
        match &mut self.rng {
            Some(r) => Some(&mut **r),
            None => None,
        }
    }

    pub fn apply(&mut self, g: &mut Graph<'_>, v: Var) -> Var {
        if !self.active() {
            return v;
        }
        let rate = self.rate;
        let keep = 1.0 / (1.0 - rate);
        let rng = self.rng.as_mut().expect("active dropout has an rng");
        let mask = (0..g.len(v))
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect();
        g.mask(v, mask)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Lstm {
    w: ParamId,
    b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl Lstm {
    /// Registers `{prefix}.w` (4H x (in + H)) and `{prefix}.b`; the forget-gate
    /// bias starts at one.
    pub fn register<R: Rng + ?Sized>(params: &mut ParamSet, prefix: &str, input: usize, hidden: usize, rng: &mut R) -> Self {
        let w = params.add_xavier(&format!("{prefix}.w"), 4 * hidden, input + hidden, rng);
        let mut bias = Tensor::zeros(4 * hidden, 1);
        bias.data[hidden..2 * hidden].iter_mut().for_each(|x| *x = 1.0);
        let b = params.add(&format!("{prefix}.b"), bias);
        Self { w, b, input, hidden }
    }

    pub fn load(params: &ParamSet, prefix: &str, input: usize, hidden: usize) -> Result<Self, ParamError> {
        Ok(Self {
            w: params.expect(&format!("{prefix}.w"), 4 * hidden, input + hidden)?,
            b: params.expect(&format!("{prefix}.b"), 4 * hidden, 1)?,
            input,
            hidden,
        })
    }

    pub fn step(&self, g: &mut Graph<'_>, x: Var, h: Var, c: Var) -> (Var, Var) {
        let xh = g.concat(&[x, h]);
        let z = g.affine(self.w, self.b, xh);
        let hc = g.lstm(z, c);
        (g.slice(hc, 0, self.hidden), g.slice(hc, self.hidden, self.hidden))
    }
}

/// Bidirectional LSTM over one sequence.
#[derive(Debug, Clone, Copy)]
pub struct BiLstm {
    pub fwd: Lstm,
    pub bwd: Lstm,
}

/// Per-position states `[fwd_j; bwd_j]` and the summary `[fwd_T; bwd_1]`.
pub struct BiLstmOutput {
    pub states: Vec<Var>,
    pub summary: Var,
}

impl BiLstm {
    pub fn register<R: Rng + ?Sized>(params: &mut ParamSet, prefix: &str, input: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            fwd: Lstm::register(params, &format!("{prefix}.fwd"), input, hidden, rng),
            bwd: Lstm::register(params, &format!("{prefix}.bwd"), input, hidden, rng),
        }
    }

    pub fn load(params: &ParamSet, prefix: &str, input: usize, hidden: usize) -> Result<Self, ParamError> {
        Ok(Self {
            fwd: Lstm::load(params, &format!("{prefix}.fwd"), input, hidden)?,
            bwd: Lstm::load(params, &format!("{prefix}.bwd"), input, hidden)?,
        })
    }

    pub fn encode(&self, g: &mut Graph<'_>, inputs: &[Var]) -> BiLstmOutput {
        assert!(!inputs.is_empty(), "cannot encode an empty sequence");
        let h = self.fwd.hidden;
        let n = inputs.len();
        let mut fwd = Vec::with_capacity(n);
        let (mut hs, mut cs) = (g.zeros(h), g.zeros(h));
        for &x in inputs {
            (hs, cs) = self.fwd.step(g, x, hs, cs);
            fwd.push(hs);
        }
        let mut bwd = alloc::vec![hs; n];
        let (mut hs, mut cs) = (g.zeros(h), g.zeros(h));
        for j in (0..n).rev() {
            (hs, cs) = self.bwd.step(g, inputs[j], hs, cs);
            bwd[j] = hs;
        }
        let states = (0..n).map(|j| g.concat(&[fwd[j], bwd[j]])).collect();
        let summary = g.concat(&[fwd[n - 1], bwd[0]]);
        BiLstmOutput { states, summary }
    }
}

/// LSTM decoder with bilinear attention over a memory of vectors and a
/// pointer-softmax output mixing vocabulary generation with copying.
#[derive(Debug, Clone, Copy)]
pub struct PointerDecoder {
    pub cell: Lstm,
    attn: ParamId,
    out_w: ParamId,
    out_b: ParamId,
    vocab_w: ParamId,
    vocab_b: ParamId,
    switch_w: ParamId,
    switch_b: ParamId,
    pub emb: usize,
    pub hidden: usize,
    pub memory: usize,
    pub vocab: usize,
}

/// Graph nodes produced by one decoder step.
#[derive(Debug, Clone, Copy)]
pub struct PointerStep {
    pub h: Var,
    pub c: Var,
    /// Softmax over the generation vocabulary.
    pub p_gen: Var,
    /// Attention weights over memory positions.
    pub attention: Var,
    /// Probability of generating rather than copying.
    pub switch: Var,
}

impl PointerDecoder {
    pub fn register<R: Rng + ?Sized>(
        params: &mut ParamSet,
        prefix: &str,
        emb: usize,
        hidden: usize,
        memory: usize,
        vocab: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            cell: Lstm::register(params, &format!("{prefix}.cell"), emb, hidden, rng),
            attn: params.add_xavier(&format!("{prefix}.attn"), memory, hidden, rng),
            out_w: params.add_xavier(&format!("{prefix}.out.w"), hidden, hidden + memory, rng),
            out_b: params.add_zeros(&format!("{prefix}.out.b"), hidden, 1),
            vocab_w: params.add_xavier(&format!("{prefix}.vocab.w"), vocab, hidden, rng),
            vocab_b: params.add_zeros(&format!("{prefix}.vocab.b"), vocab, 1),
            switch_w: params.add_xavier(&format!("{prefix}.switch.w"), 1, hidden + memory + emb, rng),
            switch_b: params.add_zeros(&format!("{prefix}.switch.b"), 1, 1),
            emb,
            hidden,
            memory,
            vocab,
        }
    }

    pub fn load(params: &ParamSet, prefix: &str, emb: usize, hidden: usize, memory: usize, vocab: usize) -> Result<Self, ParamError> {
        Ok(Self {
            cell: Lstm::load(params, &format!("{prefix}.cell"), emb, hidden)?,
            attn: params.expect(&format!("{prefix}.attn"), memory, hidden)?,
            out_w: params.expect(&format!("{prefix}.out.w"), hidden, hidden + memory)?,
            out_b: params.expect(&format!("{prefix}.out.b"), hidden, 1)?,
            vocab_w: params.expect(&format!("{prefix}.vocab.w"), vocab, hidden)?,
            vocab_b: params.expect(&format!("{prefix}.vocab.b"), vocab, 1)?,
            switch_w: params.expect(&format!("{prefix}.switch.w"), 1, hidden + memory + emb)?,
            switch_b: params.expect(&format!("{prefix}.switch.b"), 1, 1)?,
            emb,
            hidden,
            memory,
            vocab,
        })
    }

    /// Advances the decoder by one token. `force_switch` pins the generation
    /// probability to a constant (used to inspect the degenerate mixtures).
    #[allow(clippy::too_many_arguments)]
    pub fn step(
        &self,
        g: &mut Graph<'_>,
        prev_emb: Var,
        h: Var,
        c: Var,
        memory: &[Var],
        drop: &mut Dropout<'_>,
        force_switch: Option<f64>,
    ) -> PointerStep {
        let (h, c) = self.cell.step(g, prev_emb, h, c);
        let q = g.linear(self.attn, h);
        let scores: Vec<Var> = memory.iter().map(|&m| g.dot(q, m)).collect();
        let scores = g.stack(&scores);
        let attention = g.softmax(scores);
        let ctx = g.weighted_sum(attention, memory);
        let hc = g.concat(&[h, ctx]);
        let o = g.affine(self.out_w, self.out_b, hc);
        let o = g.tanh(o);
        let o = drop.apply(g, o);
        let logits = g.affine(self.vocab_w, self.vocab_b, o);
        let p_gen = g.softmax(logits);
        let switch = match force_switch {
            Some(v) => g.input(alloc::vec![v]),
            None => {
                let sw_in = g.concat(&[h, ctx, prev_emb]);
                let z = g.affine(self.switch_w, self.switch_b, sw_in);
                g.sigmoid(z)
            }
        };
        PointerStep {
            h,
            c,
            p_gen,
            attention,
            switch,
        }
    }

    /// Probability node for emitting `target` given the source surfaces.
    pub fn target_prob(&self, g: &mut Graph<'_>, st: &PointerStep, target: &str, source: &[String], vocab: &Vocabulary) -> Var {
        let positions: Vec<usize> = source
            .iter()
            .enumerate()
            .filter(|(_, s)| s.as_str() == target)
            .map(|(j, _)| j)
            .collect();
        let gen_index = match vocab.get(target) {
            Some(id) => Some(id),
            None if positions.is_empty() => Some(Vocabulary::UNK),
            None => None,
        };
        let mut terms = Vec::with_capacity(2);
        if let Some(id) = gen_index {
            let p = g.pick(st.p_gen, id);
            terms.push(g.mul(st.switch, p));
        }
        if !positions.is_empty() {
            let a = g.sum_at(st.attention, positions);
            let copy = g.one_minus(st.switch);
            terms.push(g.mul(copy, a));
        }
        g.sum(&terms)
    }

    /// Materializes the mixture as a distribution over the vocabulary extended
    /// with out-of-vocabulary source tokens.
    pub fn distribution(&self, g: &Graph<'_>, st: &PointerStep, source: &[String], vocab: &Vocabulary) -> OutputDistribution {
        let s = g.scalar(st.switch);
        let mut probs: Vec<f64> = g.value(st.p_gen).iter().map(|p| s * p).collect();
        let mut extended: Vec<String> = Vec::new();
        for (j, a) in g.value(st.attention).iter().enumerate() {
            let mass = (1.0 - s) * a;
            let idx = match vocab.get(&source[j]) {
                Some(id) => id,
                None => match extended.iter().position(|e| *e == source[j]) {
                    Some(k) => self.vocab + k,
                    None => {
                        extended.push(source[j].clone());
                        probs.push(0.0);
                        self.vocab + extended.len() - 1
                    }
                },
            };
            probs[idx] += mass;
        }
        OutputDistribution {
            probs,
            extended,
            vocab_size: self.vocab,
            switch: s,
        }
    }
}

/// A single distribution over `vocabulary ∪ source tokens`.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputDistribution {
    /// Indices below the vocabulary size are vocabulary ids; the rest index
    /// `extended`.
    pub probs: Vec<f64>,
    pub extended: Vec<String>,
    pub vocab_size: usize,
    pub switch: f64,
}

impl OutputDistribution {
    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    pub fn surface<'a>(&'a self, idx: usize, vocab: &'a Vocabulary) -> &'a str {
        if idx < self.vocab_size {
            vocab.token(idx)
        } else {
            &self.extended[idx - self.vocab_size]
        }
    }

    /// Highest-probability index, ignoring the ids in `banned`; ties go to the
    /// lowest index.
    pub fn argmax(&self, banned: &[usize]) -> usize {
        let mut best = usize::MAX;
        let mut best_p = f64::NEG_INFINITY;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > best_p && !banned.contains(&i) {
                best = i;
                best_p = p;
            }
        }
        best
    }

    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        self.probs.iter().enumerate().filter(|(_, p)| **p > 0.0).map(|(i, _)| i)
    }
}
