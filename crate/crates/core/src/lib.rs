//! Core algorithms for spoken-language-understanding data augmentation with
//! atomic templates.
//!
//! The crate is `no_std` (it needs `alloc`) and contains no IO. It covers:
//!
//! * [`ontology`]: act-slot-value triples, dialogue acts, delexicalization and
//!   the textual dialogue-act notation `deny(food=chinese), inform(food=thai)`.
//! * [`templates`]: phrase-level atomic templates, exemplar rendering and
//!   similarity-driven exemplar selection.
//! * [`similarity`]: Ratcliff-Obershelp (gestalt pattern matching) scores.
//! * [`synthesis`]: seed abridgement, ontology-guided combination and value filling.
//! * [`nn`]: a small reverse-mode autodiff tape with LSTM cells and Adam.
//! * [`generator`]: the set-of-exemplars to utterance encoder-decoder with a
//!   pointer-softmax copy path.
//! * [`slu`]: the hierarchical act / slot / value parser.
//! * [`eval`]: triple-level precision, recall and F1.
//! * [`augment`]: corpus construction for the generator, naive value-substitution
//!   augmentation and nested seed sampling.
#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod augment;
pub mod eval;
pub mod generator;
pub mod nn;
pub mod ontology;
pub mod similarity;
pub mod slu;
pub mod synthesis;
pub mod templates;
pub mod tokenize;
pub mod train;
pub mod vocab;

pub use eval::{score, ScoreReport};
pub use generator::{GeneratorConfig, GeneratorModel};
pub use ontology::{DelexTriple, DialogueAct, Ontology, SlotDef, SlotKind, Triple, ValueForm};
pub use slu::{ParseConfig, SluModel};
pub use synthesis::SynthesisConfig;
pub use templates::{AtomicTemplate, Exemplar, TemplateRegistry};
pub use vocab::Vocabulary;

/// Deterministic RNG used throughout the crate.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Builds the crate RNG from a 64-bit seed.
pub fn seeded_rng(seed: u64) -> Rng {
    use rand::SeedableRng;
    Rng::seed_from_u64(seed)
}

/// Derives an independent seed for a named stage so that stages can be rerun
/// (or skipped) without perturbing the random streams of other stages.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    // FNV-1a over the label, then mixed with the base seed (splitmix64 finalizer).
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = seed ^ h;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
