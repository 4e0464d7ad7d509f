//! The trainable model: shared encoder plus both task heads over one
//! parameter set.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::data::Vocab;
use crate::encoder::{Encoder, EncoderConfig, EncoderError, SentenceIds};
use crate::multitask::{self, IntentHead, LossWeights, MatchHead, MatchHeadConfig, MultitaskError, PairLoss};
use crate::numerics::{ParamSet, Tape, Tensor};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Heads(#[from] MultitaskError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub match_head: MatchHeadConfig,
    pub loss: LossWeights,
    /// Intent classes including "other".
    pub num_classes: usize,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamSet,
    pub encoder: Encoder,
    pub intent: IntentHead,
    pub matcher: MatchHead,
}

impl Model {
    /// Freshly initialized model. Initial values are rounded to `f32`.
    pub fn new(config: ModelConfig, vocab: Vocab, chars: Vocab, word_table: Option<Tensor>, seed: u64) -> Result<Self, ModelError> {
        config.loss.validate()?;
        let mut params = ParamSet::new();
        let encoder = Encoder::init(&mut params, config.encoder.clone(), vocab, chars, word_table, seed)?;
        let intent = IntentHead::init(&mut params, config.encoder.final_dim(), config.num_classes, seed ^ 0x5eed)?;
        let matcher = MatchHead::init(&mut params, &config.match_head)?;
        // start from values a checkpoint stores exactly
        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            for x in params.get_mut(id).data_mut() {
                *x = f64::from(*x as f32);
            }
        }
        Ok(Self {
            config,
            params,
            encoder,
            intent,
            matcher,
        })
    }

    /// Reassembles a model around an existing parameter set.
    pub fn from_params(config: ModelConfig, vocab: Vocab, chars: Vocab, params: ParamSet) -> Result<Self, ModelError> {
        config.loss.validate()?;
        config.match_head.validate()?;
        let encoder = Encoder::bind(&params, config.encoder.clone(), vocab, chars)?;
        let intent = IntentHead::bind(&params, config.encoder.final_dim(), config.num_classes)?;
        let matcher = MatchHead::bind(&params)?;
        Ok(Self {
            config,
            params,
            encoder,
            intent,
            matcher,
        })
    }

    pub fn final_dim(&self) -> usize {
        self.config.encoder.final_dim()
    }

    /// Eval-mode vector for a tokenized sentence.
    pub fn encode(&self, tokens: &[String]) -> Result<Tensor, ModelError> {
        Ok(self.encoder.encode(&self.params, tokens)?)
    }

    pub fn encode_text(&self, text: &str) -> Result<Tensor, ModelError> {
        Ok(self.encoder.encode_text(&self.params, text)?)
    }

    /// Encodes many sentences, spreading the work over the available cores.
    /// Results are in input order and identical to calling [`Model::encode`]
    /// on each.
    pub fn encode_many(&self, sentences: &[&[String]]) -> Result<Vec<Tensor>, ModelError> {
        let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(sentences.len().max(1));
        if threads <= 1 {
            return sentences.iter().map(|s| self.encode(s)).collect();
        }
        let chunk = sentences.len().div_ceil(threads);
        std::thread::scope(|scope| {
            let handles: Vec<_> = sentences
                .chunks(chunk)
                .map(|part| scope.spawn(move || part.iter().map(|s| self.encode(s)).collect::<Result<Vec<_>, _>>()))
                .collect();
            let mut out = Vec::with_capacity(sentences.len());
            for h in handles {
                out.extend(h.join().expect("encoder thread panicked")?);
            }
            Ok(out)
        })
    }

    /// Matching probability between two sentence vectors.
    pub fn score(&self, u: &Tensor, v: &Tensor) -> Result<f64, ModelError> {
        Ok(multitask::cosine_match_score(u, v, &self.config.match_head)?)
    }

    /// Records both encodings and the combined loss for one pair. Dropout
    /// is active when `rng` is given.
    pub fn pair_loss_on(
        &self,
        tape: &mut Tape,
        q1: &SentenceIds,
        q2: &SentenceIds,
        label: u8,
        intents: (usize, usize),
        rng: Option<&mut dyn RngCore>,
    ) -> PairLoss {
        let (u, v) = match rng {
            Some(r) => {
                let u = self.encoder.encode_on(tape, q1, Some(&mut *r));
                (u, self.encoder.encode_on(tape, q2, Some(r)))
            }
            None => (self.encoder.encode_on(tape, q1, None), self.encoder.encode_on(tape, q2, None)),
        };
        multitask::pair_loss_on(tape, &self.matcher, &self.intent, &self.config.loss, u, v, label, intents)
    }
}
