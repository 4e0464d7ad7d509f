//! Sentence encoder: word + character representation, BiGRU, attention
//! recurrent unit, feed-forward Add & Norm, attentive pooling, highway
//! network. One fixed-length vector per sentence.

mod config;
pub mod layers;
mod weights;

use std::sync::atomic::{AtomicU64, Ordering};

use rand::RngCore;

pub use config::EncoderConfig;
pub use weights::{glorot, AruWeights, EncoderWeights, FfnWeights, GruWeights, HeadWeights, HighwayWeights, PoolWeights};

use crate::data::{tokenize, Vocab};
use crate::numerics::{NumericsError, ParamSet, Tape, Tensor, Var};

#[derive(Debug, thiserror::Error)]
pub enum EncoderError {
    #[error("invalid encoder config: {0}")]
    InvalidConfig(String),
    #[error("missing parameter {0:?}")]
    MissingParam(String),
    #[error("parameter {name:?} has shape {found:?}, expected {expected:?}")]
    ParamShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("cannot encode an empty sentence")]
    EmptySentence,
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Vocabulary indices for one sentence, truncated to `n_max` tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentenceIds {
    pub words: Vec<usize>,
    pub chars: Vec<Vec<usize>>,
}

impl SentenceIds {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// Encoder structure plus vocabularies; the weights live in a [`ParamSet`]
/// passed to each call so one set can be shared by concurrent readers.
#[derive(Debug)]
pub struct Encoder {
    config: EncoderConfig,
    weights: EncoderWeights,
    vocab: Vocab,
    chars: Vocab,
    truncations: AtomicU64,
}

impl Clone for Encoder {
    fn clone(&self) -> Self {
        Self {
            config: self.config.clone(),
            weights: self.weights.clone(),
            vocab: self.vocab.clone(),
            chars: self.chars.clone(),
            truncations: AtomicU64::new(self.truncations.load(Ordering::Relaxed)),
        }
    }
}

impl Encoder {
    pub fn new(config: EncoderConfig, weights: EncoderWeights, vocab: Vocab, chars: Vocab) -> Self {
        Self {
            config,
            weights,
            vocab,
            chars,
            truncations: AtomicU64::new(0),
        }
    }

    /// Initializes fresh weights into `params`.
    pub fn init(
        params: &mut ParamSet,
        config: EncoderConfig,
        vocab: Vocab,
        chars: Vocab,
        word_table: Option<Tensor>,
        seed: u64,
    ) -> Result<Self, EncoderError> {
        let weights = EncoderWeights::init(params, &config, vocab.len(), chars.len(), word_table, seed)?;
        Ok(Self::new(config, weights, vocab, chars))
    }

    /// Binds to weights already present in `params` (e.g. from a checkpoint).
    pub fn bind(params: &ParamSet, config: EncoderConfig, vocab: Vocab, chars: Vocab) -> Result<Self, EncoderError> {
        let weights = EncoderWeights::bind(params, &config, vocab.len(), chars.len())?;
        Ok(Self::new(config, weights, vocab, chars))
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn weights(&self) -> &EncoderWeights {
        &self.weights
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn chars(&self) -> &Vocab {
        &self.chars
    }

    pub fn final_dim(&self) -> usize {
        self.config.final_dim()
    }

    /// Sentences cut down to `n_max` so far.
    pub fn truncation_count(&self) -> u64 {
        self.truncations.load(Ordering::Relaxed)
    }

    /// Maps tokens to indices; out-of-vocabulary words become UNK but keep
    /// their own characters.
    pub fn prepare(&self, tokens: &[String]) -> Result<SentenceIds, EncoderError> {
        if tokens.is_empty() {
            return Err(EncoderError::EmptySentence);
        }
        let tokens = if tokens.len() > self.config.n_max {
            self.truncations.fetch_add(1, Ordering::Relaxed);
            log::warn!("sentence of {} tokens truncated to {}", tokens.len(), self.config.n_max);
            &tokens[..self.config.n_max]
        } else {
            tokens
        };
        let mut buf = [0u8; 4];
        Ok(SentenceIds {
            words: tokens.iter().map(|t| self.vocab.get(t)).collect(),
            chars: tokens
                .iter()
                .map(|t| t.chars().map(|c| self.chars.get(c.encode_utf8(&mut buf))).collect())
                .collect(),
        })
    }

    /// Word representation for a prepared sentence: `n × (word_dim + char_filters)`.
    pub fn embed_words(&self, tape: &mut Tape, ids: &SentenceIds) -> Var {
        let w = &self.weights;
        let (char_embed, kernel, bias) = (tape.param(w.char_embed), tape.param(w.char_kernel), tape.param(w.char_bias));
        let chars = layers::char_conv_maxpool(tape, char_embed, kernel, bias, &ids.chars, self.config.char_kernel);
        let table = tape.param(w.word_embed);
        layers::embed_words(tape, table, &ids.words, chars)
    }

    /// Full pipeline on `tape`, returning a `1 × final_dim` node. Dropout
    /// after attentive pooling is applied only when `dropout_rng` is given.
    pub fn encode_on(&self, tape: &mut Tape, ids: &SentenceIds, dropout_rng: Option<&mut dyn RngCore>) -> Var {
        let w = &self.weights;
        let x = self.embed_words(tape, ids);
        let h = layers::bigru_forward(tape, &w.gru_fwd, &w.gru_bwd, x);
        let o = layers::aru_forward(tape, &w.aru, h);
        let o = layers::ffn_add_norm(tape, &w.ffn, o);
        let (pooled, _) = layers::attentive_pool(tape, &w.pool, o);
        let pooled = match dropout_rng {
            Some(rng) => layers::dropout(tape, pooled, self.config.dropout, rng),
            None => pooled,
        };
        layers::highway_net(tape, &w.highway, pooled)
    }

    /// Eval-mode sentence vector of length `final_dim`.
    pub fn encode(&self, params: &ParamSet, tokens: &[String]) -> Result<Tensor, EncoderError> {
        let ids = self.prepare(tokens)?;
        let mut tape = Tape::new(params);
        let v = self.encode_on(&mut tape, &ids, None);
        Ok(Tensor::vector(tape.value(v).data().to_vec()))
    }

    pub fn encode_text(&self, params: &ParamSet, text: &str) -> Result<Tensor, EncoderError> {
        let tokens = tokenize(text).map_err(|_| EncoderError::EmptySentence)?;
        self.encode(params, &tokens)
    }
}
