//! Mini-batch multi-task training with an Adam phase followed by a
//! permanent switch to SGD, plus evaluation metrics and checkpoints.

mod checkpoint;
mod metrics;
mod optimizer;

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{checkpoint_load, checkpoint_save, Checkpoint, CheckpointConfig, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use metrics::Metrics;
pub use optimizer::{adam_step, optimizers, sgd_step, Adam, AdamConfig, AdamState, Optimizer, OptimizerFactory, OptimizerState, Sgd};

use crate::data::{sentence_key, PairExample};
use crate::encoder::SentenceIds;
use crate::format::PersistError;
use crate::model::{Model, ModelError};
use crate::multitask::{self, matching_loss};
use crate::numerics::{Gradients, NumericsError, Tape};
use crate::registry::UnknownStrategy;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("evaluation set is empty")]
    EmptyEvaluationSet,
    #[error("pair on line {line} has no intent label")]
    MissingIntent { line: usize },
    #[error("pair on line {line} has intent class {class}, but the model has {num_classes} classes")]
    IntentOutOfRange { line: usize, class: usize, num_classes: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    UnknownOptimizer(#[from] UnknownStrategy),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Persist(#[from] PersistError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionMetric {
    Accuracy,
    F1,
}

impl SelectionMetric {
    pub fn of(self, m: &Metrics) -> f64 {
        match self {
            SelectionMetric::Accuracy => m.accuracy,
            SelectionMetric::F1 => m.f1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Optimizer for the first phase.
    pub optimizer: String,
    /// Optimizer switched to once validation stops improving.
    pub fallback: String,
    pub adam_lr: f64,
    pub sgd_lr: f64,
    pub batch_size: usize,
    pub betas: (f64, f64),
    pub adam_eps: f64,
    /// Consecutive non-improving evaluations before switching (and, after
    /// the switch, before stopping).
    pub patience: usize,
    pub max_epochs: usize,
    /// Steps between evaluations; `None` evaluates once per epoch.
    pub eval_every: Option<u64>,
    pub max_steps: Option<u64>,
    pub seed: u64,
    pub threshold: f64,
    pub metric: SelectionMetric,
    pub early_stop: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: "adam".into(),
            fallback: "sgd".into(),
            adam_lr: 4e-4,
            sgd_lr: 1e-3,
            batch_size: 200,
            betas: (0.9, 0.999),
            adam_eps: 1e-8,
            patience: 3,
            max_epochs: 50,
            eval_every: None,
            max_steps: None,
            seed: 1,
            threshold: 0.5,
            metric: SelectionMetric::Accuracy,
            early_stop: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if !(self.adam_lr > 0.0 && self.sgd_lr > 0.0) {
            return bad("learning rates must be positive".into());
        }
        if self.patience == 0 {
            return bad("patience must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.betas.0) || !(0.0..1.0).contains(&self.betas.1) || !(self.adam_eps > 0.0) {
            return bad("adam betas must lie in [0, 1) and eps must be positive".into());
        }
        if self.eval_every == Some(0) {
            return bad("eval_every must be at least 1".into());
        }
        let reg = optimizers();
        reg.get(&self.optimizer)?;
        reg.get(&self.fallback)?;
        Ok(())
    }
}

/// One validation pass during training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: u64,
    pub epoch: usize,
    pub optimizer: String,
    /// Mean training objective since the previous evaluation.
    pub train_loss: f64,
    pub valid_loss: f64,
    pub metric: f64,
    pub metrics: Metrics,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub best: Checkpoint,
    pub best_metric: f64,
    pub history: Vec<EvalRecord>,
    /// Step at which the fallback optimizer took over.
    pub switched_at: Option<u64>,
    pub steps: u64,
    pub epochs: usize,
}

/// Validation metrics plus mean matching loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub metrics: Metrics,
    pub loss: f64,
}

/// Classifies each pair by `ŷ ≥ threshold`.
pub fn evaluate(model: &Model, pairs: &[PairExample], threshold: f64) -> Result<Metrics, TrainError> {
    Ok(evaluate_with_loss(model, pairs, threshold)?.metrics)
}

pub fn evaluate_with_loss(model: &Model, pairs: &[PairExample], threshold: f64) -> Result<Evaluation, TrainError> {
    if pairs.is_empty() {
        return Err(TrainError::EmptyEvaluationSet);
    }
    let mut slot: HashMap<String, usize> = HashMap::new();
    let mut sentences: Vec<&[String]> = Vec::new();
    for p in pairs {
        for q in [&p.q1, &p.q2] {
            slot.entry(sentence_key(q)).or_insert_with(|| {
                sentences.push(q);
                sentences.len() - 1
            });
        }
    }
    let vectors = model.encode_many(&sentences)?;
    let mut outcomes = Vec::with_capacity(pairs.len());
    let mut loss = 0.0;
    for p in pairs {
        let u = &vectors[slot[&sentence_key(&p.q1)]];
        let v = &vectors[slot[&sentence_key(&p.q2)]];
        let y_hat = multitask::cosine_match_score(u, v, &model.config.match_head).map_err(ModelError::from)?;
        loss += matching_loss(y_hat, p.label);
        outcomes.push((y_hat >= threshold, p.is_positive()));
    }
    Ok(Evaluation {
        metrics: Metrics::from_outcomes(outcomes),
        loss: loss / pairs.len() as f64,
    })
}

fn intents_of(p: &PairExample, num_classes: usize) -> Result<(usize, usize), TrainError> {
    let (Some(a), Some(b)) = (p.intent1, p.intent2) else {
        return Err(TrainError::MissingIntent { line: p.line });
    };
    for class in [a, b] {
        if class >= num_classes {
            return Err(TrainError::IntentOutOfRange {
                line: p.line,
                class,
                num_classes,
            });
        }
    }
    Ok((a, b))
}

fn dropout_seed(seed: u64, step: u64, index: usize) -> u64 {
    seed ^ step.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (index as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
}

struct Prepared {
    q1: SentenceIds,
    q2: SentenceIds,
    label: u8,
    intents: (usize, usize),
}

/// Averaged gradient of the combined objective over `batch`, and the mean loss.
fn batch_gradient(model: &Model, data: &[Prepared], batch: &[usize], seed: u64, step: u64) -> Result<(Gradients, f64), TrainError> {
    let mut grads = Gradients::zeros_like(&model.params);
    let mut loss = 0.0;
    for &i in batch {
        let p = &data[i];
        let mut tape = Tape::new(&model.params);
        let mut rng = ChaCha8Rng::seed_from_u64(dropout_seed(seed, step, i));
        let out = model.pair_loss_on(&mut tape, &p.q1, &p.q2, p.label, p.intents, Some(&mut rng));
        loss += tape.value(out.total).item();
        grads.add_assign(&tape.backward(out.total)?);
    }
    let scale = 1.0 / batch.len() as f64;
    grads.scale(scale);
    Ok((grads, loss * scale))
}

/// Gradient of the mean combined objective over `pairs` without dropout.
/// Intended for diagnostics and tests.
pub fn objective_gradient(model: &Model, pairs: &[PairExample]) -> Result<(Gradients, f64), TrainError> {
    if pairs.is_empty() {
        return Err(TrainError::EmptyTrainingSet);
    }
    let mut grads = Gradients::zeros_like(&model.params);
    let mut loss = 0.0;
    for p in pairs {
        let intents = intents_of(p, model.config.num_classes)?;
        let (q1, q2) = (model.encoder.prepare(&p.q1).map_err(ModelError::from)?, model.encoder.prepare(&p.q2).map_err(ModelError::from)?);
        let mut tape = Tape::new(&model.params);
        let out = model.pair_loss_on(&mut tape, &q1, &q2, p.label, intents, None);
        loss += tape.value(out.total).item();
        grads.add_assign(&tape.backward(out.total)?);
    }
    let scale = 1.0 / pairs.len() as f64;
    grads.scale(scale);
    Ok((grads, loss * scale))
}

/// Trains `model` in place. On return `model` holds the parameters of the
/// best validation checkpoint. An empty `valid` set evaluates on `train`.
pub fn train(model: &mut Model, train: &[PairExample], valid: &[PairExample], cfg: &TrainConfig) -> Result<TrainReport, TrainError> {
    train_from(model, train, valid, cfg, None)
}

/// Like [`train`], optionally continuing from a checkpoint's optimizer
/// state and step counter. The caller loads the checkpoint's weights into
/// `model` beforehand.
pub fn train_from(
    model: &mut Model,
    train: &[PairExample],
    valid: &[PairExample],
    cfg: &TrainConfig,
    resume: Option<&Checkpoint>,
) -> Result<TrainReport, TrainError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptyTrainingSet);
    }
    let valid = if valid.is_empty() { train } else { valid };
    let num_classes = model.config.num_classes;
    let mut data = Vec::with_capacity(train.len());
    for p in train {
        data.push(Prepared {
            q1: model.encoder.prepare(&p.q1).map_err(ModelError::from)?,
            q2: model.encoder.prepare(&p.q2).map_err(ModelError::from)?,
            label: p.label,
            intents: intents_of(p, num_classes)?,
        });
    }

    let registry = optimizers();
    let mut step = 0u64;
    let mut start_epoch = 0usize;
    let mut optimizer = registry.get(&cfg.optimizer)?(cfg);
    if let Some(ckpt) = resume {
        optimizer = registry.get(&ckpt.config.optimizer)?(cfg);
        optimizer.import_state(&ckpt.optimizer_state(), &model.params)?;
        step = ckpt.config.step;
        start_epoch = ckpt.config.epoch;
    }
    let mut switched_at = None;
    let mut in_fallback = optimizer.name() == cfg.fallback && cfg.fallback != cfg.optimizer;

    let mut history: Vec<EvalRecord> = Vec::new();
    let mut best: Option<(f64, f64, Checkpoint)> = None;
    let mut stale = 0usize;
    let mut loss_acc = (0.0, 0u64);
    let mut last_eval_step = None;
    let mut stop = false;
    let mut epoch = start_epoch;

    let mut order: Vec<usize> = (0..data.len()).collect();
    while epoch < cfg.max_epochs && !stop {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(epoch as u64));
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let (grads, loss) = batch_gradient(model, &data, batch, cfg.seed, step)?;
            optimizer.step(&mut model.params, &grads)?;
            step += 1;
            loss_acc.0 += loss;
            loss_acc.1 += 1;
            let limit_hit = cfg.max_steps.is_some_and(|m| step >= m);
            if cfg.eval_every.is_some_and(|e| step % e == 0) || limit_hit {
                let rec = evaluation_record(model, valid, cfg, step, epoch, optimizer.name(), &mut loss_acc)?;
                last_eval_step = Some(step);
                stop = after_eval(model, cfg, rec, &mut history, &mut best, &mut stale, optimizer.as_ref(), &mut in_fallback);
                if stop || limit_hit {
                    stop = true;
                    break;
                }
            }
            if in_fallback && optimizer.name() != cfg.fallback {
                optimizer = switch_optimizer(&registry, cfg, step)?;
                switched_at = Some(step);
            }
        }
        epoch += 1;
        if !stop && cfg.eval_every.is_none() {
            let rec = evaluation_record(model, valid, cfg, step, epoch, optimizer.name(), &mut loss_acc)?;
            last_eval_step = Some(step);
            stop = after_eval(model, cfg, rec, &mut history, &mut best, &mut stale, optimizer.as_ref(), &mut in_fallback);
            if in_fallback && optimizer.name() != cfg.fallback {
                optimizer = switch_optimizer(&registry, cfg, step)?;
                switched_at = Some(step);
            }
        }
    }
    if last_eval_step != Some(step) || best.is_none() {
        let rec = evaluation_record(model, valid, cfg, step, epoch, optimizer.name(), &mut loss_acc)?;
        after_eval(model, cfg, rec, &mut history, &mut best, &mut stale, optimizer.as_ref(), &mut in_fallback);
    }

    let (best_metric, _, best) = best.expect("at least one evaluation ran");
    *model = best.to_model()?;
    Ok(TrainReport {
        best,
        best_metric,
        history,
        switched_at,
        steps: step,
        epochs: epoch - start_epoch,
    })
}

fn switch_optimizer(
    registry: &crate::registry::Registry<OptimizerFactory>,
    cfg: &TrainConfig,
    step: u64,
) -> Result<Box<dyn Optimizer>, TrainError> {
    log::info!("validation stopped improving; switching to {} (lr {}) at step {step}", cfg.fallback, cfg.sgd_lr);
    Ok(registry.get(&cfg.fallback)?(cfg))
}

fn evaluation_record(
    model: &Model,
    valid: &[PairExample],
    cfg: &TrainConfig,
    step: u64,
    epoch: usize,
    optimizer: &str,
    loss_acc: &mut (f64, u64),
) -> Result<EvalRecord, TrainError> {
    let eval = evaluate_with_loss(model, valid, cfg.threshold)?;
    let train_loss = if loss_acc.1 == 0 { f64::NAN } else { loss_acc.0 / loss_acc.1 as f64 };
    *loss_acc = (0.0, 0);
    let rec = EvalRecord {
        step,
        epoch,
        optimizer: optimizer.to_string(),
        train_loss,
        valid_loss: eval.loss,
        metric: cfg.metric.of(&eval.metrics),
        metrics: eval.metrics,
    };
    log::debug!(
        "step {step} epoch {epoch} [{optimizer}] train loss {:.5} valid loss {:.5} metric {:.4}",
        rec.train_loss,
        rec.valid_loss,
        rec.metric
    );
    Ok(rec)
}

/// Records an evaluation, updates the best checkpoint and patience
/// counter, and returns whether training should stop. Sets `in_fallback`
/// when the first phase runs out of patience.
#[allow(clippy::too_many_arguments)]
fn after_eval(
    model: &Model,
    cfg: &TrainConfig,
    rec: EvalRecord,
    history: &mut Vec<EvalRecord>,
    best: &mut Option<(f64, f64, Checkpoint)>,
    stale: &mut usize,
    optimizer: &dyn Optimizer,
    in_fallback: &mut bool,
) -> bool {
    // equal metric with lower validation loss still counts as progress
    let improved = match best {
        None => true,
        Some((m, l, _)) => rec.metric > *m || (rec.metric == *m && rec.valid_loss < *l),
    };
    if improved {
        let ckpt = Checkpoint::capture(model, Some(optimizer), rec.step, rec.epoch, Some(cfg));
        *best = Some((rec.metric, rec.valid_loss, ckpt));
        *stale = 0;
    } else {
        *stale += 1;
    }
    history.push(rec);
    if *stale >= cfg.patience {
        *stale = 0;
        if *in_fallback {
            return cfg.early_stop;
        }
        *in_fallback = true;
    }
    false
}
