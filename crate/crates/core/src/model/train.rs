//! Training loop and per-example assessment.

use serde::{Deserialize, Serialize};

use super::{Dropout, Example, Model, ModelError};
use crate::grad::{LrSchedule, Rng, Tape};

/// Optimization settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Examples whose gradients are averaged into one update.
    pub batch: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// The learning rate halves every this many epochs; 0 keeps it fixed.
    pub lr_halve_every: usize,
    pub clip_norm: f64,
    pub seed: u64,
    /// Dev metrics are computed every this many epochs and after the last.
    pub eval_every: usize,
    /// Beam width used for dev metrics.
    pub eval_beam: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 80,
            batch: 64,
            lr: 1e-3,
            weight_decay: 1e-5,
            lr_halve_every: 20,
            clip_norm: 5.0,
            seed: 1,
            eval_every: 1,
            eval_beam: 1,
        }
    }
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub exact_match: Option<f64>,
    pub answer_acc: Option<f64>,
    pub lr: f64,
}

/// `|predicted − gold| ≤ 1e-4 · max(1, |gold|)`.
pub fn answer_matches(predicted: f64, gold: f64) -> bool {
    (predicted - gold).abs() <= 1e-4 * gold.abs().max(1.0)
}

/// How the model fared on one example.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    /// Decoded prefix, absent when decoding failed.
    pub tokens: Option<Vec<usize>>,
    pub value: Option<f64>,
    pub exact: bool,
    pub correct: bool,
    pub failure: Option<String>,
}

impl Model {
    /// Decodes `ex` and compares the result with its gold prefix and answer.
    pub fn assess(&self, ex: &Example, beam: usize) -> Outcome {
        match self.decode(&ex.source, &ex.slot_positions, beam) {
            Ok(d) => {
                let value = self
                    .tree(&d.tokens)
                    .ok()
                    .and_then(|t| t.evaluate(&self.registry, &ex.numbers).ok());
                Outcome {
                    exact: d.tokens == ex.target,
                    correct: value.is_some_and(|v| answer_matches(v, ex.answer)),
                    value,
                    tokens: Some(d.tokens),
                    failure: None,
                }
            }
            Err(e) => Outcome {
                tokens: None,
                value: None,
                exact: false,
                correct: false,
                failure: Some(e.to_string()),
            },
        }
    }

    /// Mean teacher-forced loss without dropout.
    pub fn mean_loss(&self, data: &[Example]) -> Result<f64, ModelError> {
        let mut total = 0.0;
        for ex in data {
            let mut tape = Tape::with_params(&self.store);
            let l = self.loss(&mut tape, ex, &mut Dropout::off())?;
            total += tape.scalar(l);
        }
        Ok(total / data.len().max(1) as f64)
    }
}

/// Trains `model` in place. Each step averages the gradients of `batch`
/// examples; example order is reshuffled every epoch. Results depend only on
/// the inputs and `cfg.seed`.
pub fn train(
    model: &mut Model,
    train: &[Example],
    dev: &[Example],
    cfg: &TrainConfig,
    mut log: impl FnMut(&EpochRecord),
) -> Result<Vec<EpochRecord>, ModelError> {
    let schedule = LrSchedule::halving(cfg.lr, cfg.lr_halve_every);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut shuffler = Rng::derived(cfg.seed, 1);
    let mut records = Vec::new();
    let mut seen: u64 = 0;
    for epoch in 0..cfg.epochs {
        shuffler.shuffle(&mut order);
        let lr = schedule.lr(epoch);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch.max(1)) {
            let mut acc = model.grad_buffer();
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                seen += 1;
                let mut drop = if model.config.dropout > 0.0 {
                    Dropout::train(model.config.dropout, Rng::derived(cfg.seed, 1 << 32 | seen))
                } else {
                    Dropout::off()
                };
                total += model.accumulate_loss(&train[i], &mut drop, &mut acc, scale)?;
            }
            let ids: Vec<_> = model.store.iter().map(|(id, _)| id).collect();
            for (id, g) in ids.into_iter().zip(&acc) {
                model.store.accumulate_raw(id, g, 1.0);
            }
            model.store.adam_step(lr, cfg.weight_decay, Some(cfg.clip_norm));
        }
        let rec = EpochRecord {
            epoch,
            split: "train".into(),
            loss: total / train.len().max(1) as f64,
            exact_match: None,
            answer_acc: None,
            lr,
        };
        log(&rec);
        records.push(rec);
        let due = cfg.eval_every > 0 && (epoch + 1) % cfg.eval_every == 0;
        if !dev.is_empty() && (due || epoch + 1 == cfg.epochs) {
            let outcomes: Vec<_> = dev.iter().map(|ex| model.assess(ex, cfg.eval_beam)).collect();
            let n = dev.len() as f64;
            let rec = EpochRecord {
                epoch,
                split: "dev".into(),
                loss: model.mean_loss(dev)?,
                exact_match: Some(outcomes.iter().filter(|o| o.exact).count() as f64 / n),
                answer_acc: Some(outcomes.iter().filter(|o| o.correct).count() as f64 / n),
                lr,
            };
            log(&rec);
            records.push(rec);
        }
    }
    Ok(records)
}
