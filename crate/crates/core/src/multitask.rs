//! Matching head, intent classification head, and the λ-weighted
//! multi-task objective.
//!
//! The matching score is `σ(γ·(cos(u, v) − α))` and the matching loss is
//! binary cross-entropy against the gold label. The intent loss is softmax
//! cross-entropy over `Wᵀu + b`, applied identically to both sentences.
//! The objective is `λ·L_match + (1 − λ)·(L_u + L_v)/2`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::glorot;
use crate::numerics::{sigmoid, NumericsError, ParamId, ParamSet, Tape, Tensor, Var, PROB_CLAMP};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MultitaskError {
    #[error("cosine of a zero-norm vector is undefined")]
    ZeroNorm,
    #[error("vectors differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("class {class} out of range for {num_classes} intent classes")]
    ClassOutOfRange { class: usize, num_classes: usize },
    #[error("invalid head config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchHeadConfig {
    pub gamma: f64,
    pub alpha: f64,
}

impl Default for MatchHeadConfig {
    fn default() -> Self {
        Self { gamma: 10.0, alpha: 0.5 }
    }
}

impl MatchHeadConfig {
    pub fn validate(&self) -> Result<(), MultitaskError> {
        if !(self.gamma > 0.0) {
            return Err(MultitaskError::InvalidConfig(format!("gamma {} must be positive", self.gamma)));
        }
        if !(self.alpha > -1.0 && self.alpha < 1.0) {
            return Err(MultitaskError::InvalidConfig(format!("alpha {} outside (-1, 1)", self.alpha)));
        }
        Ok(())
    }

    /// Matching probability for a cosine value.
    pub fn score(&self, cosine: f64) -> f64 {
        sigmoid(self.gamma * (cosine - self.alpha))
    }
}

/// λ: weight of the matching loss against the mean intent loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda: 0.8 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), MultitaskError> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(MultitaskError::InvalidConfig(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        Ok(())
    }
}

pub fn cosine(u: &Tensor, v: &Tensor) -> Result<f64, MultitaskError> {
    if u.len() != v.len() {
        return Err(MultitaskError::LengthMismatch(u.len(), v.len()));
    }
    let (nu, nv) = (u.l2_norm(), v.l2_norm());
    if nu == 0.0 || nv == 0.0 {
        return Err(MultitaskError::ZeroNorm);
    }
    let dot: f64 = u.data().iter().zip(v.data()).map(|(a, b)| a * b).sum();
    Ok(dot / (nu * nv))
}

pub fn cosine_match_score(u: &Tensor, v: &Tensor, cfg: &MatchHeadConfig) -> Result<f64, MultitaskError> {
    Ok(cfg.score(cosine(u, v)?))
}

/// Binary cross-entropy with `y_hat` clamped to `[1e-7, 1 − 1e-7]`.
pub fn matching_loss(y_hat: f64, y: u8) -> f64 {
    let p = y_hat.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    let y = f64::from(y);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// Softmax cross-entropy of `Wᵀu + b` against `class`.
pub fn intent_loss(u: &Tensor, class: usize, w: &Tensor, b: &Tensor) -> Result<f64, MultitaskError> {
    let m = b.len();
    if class >= m {
        return Err(MultitaskError::ClassOutOfRange { class, num_classes: m });
    }
    let row = u.reshape(&[1, u.len()])?;
    let logits = crate::numerics::matmul(&row, w)?;
    let logits: Vec<f64> = logits.data().iter().zip(b.data()).map(|(z, bb)| z + bb).collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    Ok(lse - logits[class])
}

pub fn combined_loss(l_match: f64, l_u: f64, l_v: f64, w: &LossWeights) -> f64 {
    w.lambda * l_match + (1.0 - w.lambda) * (l_u + l_v) / 2.0
}

/// Softmax intent classifier over sentence vectors.
#[derive(Debug, Clone)]
pub struct IntentHead {
    pub w: ParamId,
    pub b: ParamId,
    pub num_classes: usize,
}

impl IntentHead {
    pub fn init(params: &mut ParamSet, dim: usize, num_classes: usize, seed: u64) -> Result<Self, MultitaskError> {
        if num_classes == 0 {
            return Err(MultitaskError::InvalidConfig("at least one intent class is required".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = params.insert("intent.w", glorot(&[dim, num_classes], &mut rng))?;
        let b = params.insert("intent.b", Tensor::zeros(&[num_classes]))?;
        Ok(Self { w, b, num_classes })
    }

    pub fn bind(params: &ParamSet, dim: usize, num_classes: usize) -> Result<Self, MultitaskError> {
        let get = |name: &str, shape: &[usize]| {
            let id = params
                .id(name)
                .ok_or_else(|| MultitaskError::InvalidConfig(format!("missing parameter {name}")))?;
            if params.get(id).shape() != shape {
                return Err(MultitaskError::InvalidConfig(format!(
                    "{name} has shape {:?}, expected {shape:?}",
                    params.get(id).shape()
                )));
            }
            Ok(id)
        };
        Ok(Self {
            w: get("intent.w", &[dim, num_classes])?,
            b: get("intent.b", &[num_classes])?,
            num_classes,
        })
    }

    pub fn loss_on(&self, tape: &mut Tape, u: Var, class: usize) -> Var {
        assert!(class < self.num_classes, "intent class {class} >= {}", self.num_classes);
        let (w, b) = (tape.param(self.w), tape.param(self.b));
        let len = tape.value(u).len();
        let row = tape.reshape(u, &[1, len]);
        let logits = tape.matmul(row, w);
        let logits = tape.add_row(logits, b);
        tape.softmax_cross_entropy(logits, class)
    }
}

/// γ and α recorded as frozen scalar parameters, so their gradients are
/// observable even though optimizers never move them.
#[derive(Debug, Clone)]
pub struct MatchHead {
    pub gamma: ParamId,
    pub alpha: ParamId,
}

impl MatchHead {
    pub fn init(params: &mut ParamSet, cfg: &MatchHeadConfig) -> Result<Self, MultitaskError> {
        cfg.validate()?;
        Ok(Self {
            gamma: params.insert_frozen("match.gamma", Tensor::scalar(cfg.gamma))?,
            alpha: params.insert_frozen("match.alpha", Tensor::scalar(cfg.alpha))?,
        })
    }

    pub fn bind(params: &ParamSet) -> Result<Self, MultitaskError> {
        let get = |name: &str| {
            params
                .id(name)
                .ok_or_else(|| MultitaskError::InvalidConfig(format!("missing parameter {name}")))
        };
        Ok(Self {
            gamma: get("match.gamma")?,
            alpha: get("match.alpha")?,
        })
    }

    /// `σ(γ·(cos(u, v) − α))` as a scalar node.
    pub fn score_on(&self, tape: &mut Tape, u: Var, v: Var) -> Var {
        let (gamma, alpha) = (tape.param(self.gamma), tape.param(self.alpha));
        let c = tape.cosine(u, v);
        let shifted = tape.sub(c, alpha);
        let scaled = tape.mul(gamma, shifted);
        tape.sigmoid(scaled)
    }
}

/// Nodes of one pair's objective.
#[derive(Debug, Clone, Copy)]
pub struct PairLoss {
    pub total: Var,
    pub matching: Var,
    pub score: Var,
    pub intent_u: Var,
    pub intent_v: Var,
}

/// Records the combined objective for sentence vectors `u`, `v`.
pub fn pair_loss_on(
    tape: &mut Tape,
    matcher: &MatchHead,
    intent: &IntentHead,
    weights: &LossWeights,
    u: Var,
    v: Var,
    label: u8,
    intents: (usize, usize),
) -> PairLoss {
    let score = matcher.score_on(tape, u, v);
    let matching = tape.bce(score, f64::from(label));
    let intent_u = intent.loss_on(tape, u, intents.0);
    let intent_v = intent.loss_on(tape, v, intents.1);
    let weighted_match = tape.scale(matching, weights.lambda);
    let intents_sum = tape.add(intent_u, intent_v);
    let weighted_intent = tape.scale(intents_sum, (1.0 - weights.lambda) / 2.0);
    let total = tape.add(weighted_match, weighted_intent);
    PairLoss {
        total,
        matching,
        score,
        intent_u,
        intent_v,
    }
}
