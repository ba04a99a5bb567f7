//! Mini-batch training loop shared by the generator and the parser.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::nn::{Adam, Gradients, ParamSet};
use crate::{seeded_rng, Rng};

/// Optimizer and regularization settings (identical for both models by default).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub dropout_rate: f64,
    pub batch_size: usize,
    pub grad_clip_norm: f64,
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Stop after this many epochs without a dev improvement.
    pub patience: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dropout_rate: 0.5,
            batch_size: 20,
            grad_clip_norm: 5.0,
            learning_rate: 0.001,
            max_epochs: 50,
            patience: Some(10),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), &'static str> {
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err("dropout_rate must be in [0, 1)");
        }
        if self.batch_size == 0 {
            return Err("batch_size must be positive");
        }
        if !(self.learning_rate > 0.0) || !(self.grad_clip_norm > 0.0) {
            return Err("learning_rate and grad_clip_norm must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// Training loss per unit (token, label, ...) as reported by the model.
    pub train_loss: f64,
    /// Dev score, higher is better.
    pub dev_score: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    /// Epoch (0-based) whose parameters were kept.
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
    pub examples: usize,
}

/// Runs mini-batch Adam over `examples`.
///
/// `example_grad` adds one example's gradient into the buffer and returns its
/// `(loss, units)`. Gradients are averaged over the batch and clipped by global
/// norm. With a `dev` scorer the best-scoring parameters are restored at the end.
pub fn fit<E>(
    params: &mut ParamSet,
    examples: &[E],
    cfg: &TrainConfig,
    mut example_grad: impl FnMut(&ParamSet, &E, &mut Rng, &mut Gradients) -> (f64, usize),
    mut dev: Option<&mut dyn FnMut(&ParamSet) -> f64>,
) -> TrainReport {
    let mut report = TrainReport {
        examples: examples.len(),
        ..Default::default()
    };
    if examples.is_empty() {
        return report;
    }
    let mut rng = seeded_rng(cfg.seed);
    let mut opt = Adam::new(params, cfg.learning_rate);
    let mut grads = Gradients::zeros_like(params);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut best: Option<(f64, ParamSet)> = None;
    let mut since_best = 0;

    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut units) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            grads.zero();
            for &i in batch {
                let (l, n) = example_grad(params, &examples[i], &mut rng, &mut grads);
                loss_sum += l;
                units += n;
            }
            grads.scale(1.0 / batch.len() as f64);
            grads.clip_norm(cfg.grad_clip_norm);
            opt.step(params, &grads);
        }
        let dev_score = dev.as_mut().map(|f| f(params));
        report.epochs.push(EpochStats {
            train_loss: loss_sum / units.max(1) as f64,
            dev_score,
        });
        if let Some(score) = dev_score {
            let improved = best.as_ref().is_none_or(|(b, _)| score > *b);
            if improved {
                best = Some((score, params.clone()));
                report.best_epoch = Some(epoch);
                since_best = 0;
            } else {
                since_best += 1;
                if cfg.patience.is_some_and(|p| since_best >= p) {
                    report.stopped_early = true;
                    break;
                }
            }
        } else {
            report.best_epoch = Some(epoch);
        }
    }
    if let Some((_, p)) = best {
        *params = p;
    }
    report
}
