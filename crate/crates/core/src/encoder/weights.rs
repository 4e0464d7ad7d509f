use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{EncoderConfig, EncoderError};
use crate::data::random_embeddings;
use crate::numerics::{ParamId, ParamSet, Tensor};

#[derive(Debug, Clone, Copy)]
enum Init {
    Glorot,
    Zeros,
    Ones,
    WordTable,
}

struct Slot {
    name: String,
    shape: Vec<usize>,
    init: Init,
}

fn slot(name: impl Into<String>, shape: &[usize], init: Init) -> Slot {
    Slot {
        name: name.into(),
        shape: shape.to_vec(),
        init,
    }
}

/// One GRU direction; no bias terms.
#[derive(Debug, Clone)]
pub struct GruWeights {
    pub w_r1: ParamId,
    pub w_r2: ParamId,
    pub w_f1: ParamId,
    pub w_f2: ParamId,
    pub w_h1: ParamId,
    pub w_h2: ParamId,
}

#[derive(Debug, Clone)]
pub struct HeadWeights {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
}

#[derive(Debug, Clone)]
pub struct AruWeights {
    pub heads: Vec<HeadWeights>,
    /// `n_max × n_max` position bias shared by all heads.
    pub m_pos: ParamId,
    pub w_f1: ParamId,
    pub w_f2: ParamId,
    pub w_h1: ParamId,
    pub w_h2: ParamId,
    pub w_r1: ParamId,
    pub w_r2: ParamId,
}

#[derive(Debug, Clone)]
pub struct FfnWeights {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub gain: ParamId,
    pub bias: ParamId,
}

#[derive(Debug, Clone)]
pub struct PoolWeights {
    /// `u × d_a`
    pub w_s1: ParamId,
    /// `d_a × r_hops`
    pub w_s2: ParamId,
}

#[derive(Debug, Clone)]
pub struct HighwayWeights {
    pub w_g: ParamId,
    pub b_g: ParamId,
    pub w_h: ParamId,
    pub b_h: ParamId,
}

/// Handles to every encoder parameter inside a [`ParamSet`].
#[derive(Debug, Clone)]
pub struct EncoderWeights {
    pub word_embed: ParamId,
    pub char_embed: ParamId,
    pub char_kernel: ParamId,
    pub char_bias: ParamId,
    pub gru_fwd: GruWeights,
    pub gru_bwd: GruWeights,
    pub aru: AruWeights,
    pub ffn: FfnWeights,
    pub pool: PoolWeights,
    pub highway: Vec<HighwayWeights>,
}

fn layout(cfg: &EncoderConfig, vocab_len: usize, char_len: usize) -> Vec<Slot> {
    use Init::*;
    let (u, h, din) = (cfg.u(), cfg.gru_hidden, cfg.input_dim());
    let mut s = vec![
        slot("embed.word", &[vocab_len, cfg.word_dim], WordTable),
        slot("embed.char", &[char_len, cfg.char_dim], Glorot),
        slot("char_conv.kernel", &[cfg.char_kernel * cfg.char_dim, cfg.char_filters], Glorot),
        slot("char_conv.bias", &[cfg.char_filters], Zeros),
    ];
    for dir in ["fwd", "bwd"] {
        for gate in ["r", "f", "h"] {
            s.push(slot(format!("bigru.{dir}.w_{gate}1"), &[din, h], Glorot));
            s.push(slot(format!("bigru.{dir}.w_{gate}2"), &[h, h], Glorot));
        }
    }
    for i in 0..cfg.heads {
        for m in ["q", "k", "v"] {
            s.push(slot(format!("aru.head{i}.w_{m}"), &[u, cfg.head_dim()], Glorot));
        }
    }
    s.push(slot("aru.m_pos", &[cfg.n_max, cfg.n_max], Zeros));
    for gate in ["f", "h", "r"] {
        s.push(slot(format!("aru.w_{gate}1"), &[u, u], Glorot));
        s.push(slot(format!("aru.w_{gate}2"), &[u, u], Glorot));
    }
    s.extend([
        slot("ffn.w1", &[u, cfg.ffn_inner()], Glorot),
        slot("ffn.b1", &[cfg.ffn_inner()], Zeros),
        slot("ffn.w2", &[cfg.ffn_inner(), u], Glorot),
        slot("ffn.b2", &[u], Zeros),
        slot("norm.gain", &[u], Ones),
        slot("norm.bias", &[u], Zeros),
        slot("pool.w_s1", &[u, cfg.d_a], Glorot),
        slot("pool.w_s2", &[cfg.d_a, cfg.r_hops], Glorot),
    ]);
    let d = cfg.final_dim();
    for l in 0..cfg.highway_layers {
        s.push(slot(format!("highway.{l}.w_g"), &[d, d], Glorot));
        s.push(slot(format!("highway.{l}.b_g"), &[d], Zeros));
        s.push(slot(format!("highway.{l}.w_h"), &[d, d], Glorot));
        s.push(slot(format!("highway.{l}.b_h"), &[d], Zeros));
    }
    s
}

/// `uniform(±sqrt(6 / (fan_in + fan_out)))` over a `fan_in × fan_out` matrix.
pub fn glorot(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let (fan_in, fan_out) = (shape[0], shape[1]);
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| rng.gen_range(-limit..limit)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

impl EncoderWeights {
    /// Registers freshly initialized encoder parameters.
    ///
    /// `word_table`, when given, must be `vocab_len × word_dim` (e.g. from
    /// [`load_pretrained_embeddings`](crate::data::load_pretrained_embeddings)).
    pub fn init(
        params: &mut ParamSet,
        cfg: &EncoderConfig,
        vocab_len: usize,
        char_len: usize,
        word_table: Option<Tensor>,
        seed: u64,
    ) -> Result<Self, EncoderError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut word_table = word_table;
        for s in layout(cfg, vocab_len, char_len) {
            let t = match s.init {
                Init::Glorot => glorot(&s.shape, &mut rng),
                Init::Zeros => Tensor::zeros(&s.shape),
                Init::Ones => Tensor::filled(&s.shape, 1.0),
                Init::WordTable => match word_table.take() {
                    Some(t) if t.shape() == s.shape.as_slice() => t,
                    Some(t) => {
                        return Err(EncoderError::ParamShape {
                            name: s.name,
                            expected: s.shape,
                            found: t.shape().to_vec(),
                        })
                    }
                    None => random_embeddings(vocab_len, cfg.word_dim, rng.gen()),
                },
            };
            params.insert(s.name, t)?;
        }
        Self::bind(params, cfg, vocab_len, char_len)
    }

    /// Resolves handles by name, checking every shape against the config.
    pub fn bind(params: &ParamSet, cfg: &EncoderConfig, vocab_len: usize, char_len: usize) -> Result<Self, EncoderError> {
        cfg.validate()?;
        for s in layout(cfg, vocab_len, char_len) {
            let id = params.id(&s.name).ok_or_else(|| EncoderError::MissingParam(s.name.clone()))?;
            let found = params.get(id).shape();
            if found != s.shape.as_slice() {
                return Err(EncoderError::ParamShape {
                    name: s.name,
                    expected: s.shape,
                    found: found.to_vec(),
                });
            }
        }
        let p = |name: String| params.id(&name).expect("checked above");
        let gru = |dir: &str| GruWeights {
            w_r1: p(format!("bigru.{dir}.w_r1")),
            w_r2: p(format!("bigru.{dir}.w_r2")),
            w_f1: p(format!("bigru.{dir}.w_f1")),
            w_f2: p(format!("bigru.{dir}.w_f2")),
            w_h1: p(format!("bigru.{dir}.w_h1")),
            w_h2: p(format!("bigru.{dir}.w_h2")),
        };
        Ok(Self {
            word_embed: p("embed.word".into()),
            char_embed: p("embed.char".into()),
            char_kernel: p("char_conv.kernel".into()),
            char_bias: p("char_conv.bias".into()),
            gru_fwd: gru("fwd"),
            gru_bwd: gru("bwd"),
            aru: AruWeights {
                heads: (0..cfg.heads)
                    .map(|i| HeadWeights {
                        w_q: p(format!("aru.head{i}.w_q")),
                        w_k: p(format!("aru.head{i}.w_k")),
                        w_v: p(format!("aru.head{i}.w_v")),
                    })
                    .collect(),
                m_pos: p("aru.m_pos".into()),
                w_f1: p("aru.w_f1".into()),
                w_f2: p("aru.w_f2".into()),
                w_h1: p("aru.w_h1".into()),
                w_h2: p("aru.w_h2".into()),
                w_r1: p("aru.w_r1".into()),
                w_r2: p("aru.w_r2".into()),
            },
            ffn: FfnWeights {
                w1: p("ffn.w1".into()),
                b1: p("ffn.b1".into()),
                w2: p("ffn.w2".into()),
                b2: p("ffn.b2".into()),
                gain: p("norm.gain".into()),
                bias: p("norm.bias".into()),
            },
            pool: PoolWeights {
                w_s1: p("pool.w_s1".into()),
                w_s2: p("pool.w_s2".into()),
            },
            highway: (0..cfg.highway_layers)
                .map(|l| HighwayWeights {
                    w_g: p(format!("highway.{l}.w_g")),
                    b_g: p(format!("highway.{l}.b_g")),
                    w_h: p(format!("highway.{l}.w_h")),
                    b_h: p(format!("highway.{l}.b_h")),
                })
                .collect(),
        })
    }

    /// Every encoder parameter handle.
    pub fn all(&self) -> Vec<ParamId> {
        let mut v = vec![self.word_embed, self.char_embed, self.char_kernel, self.char_bias];
        for g in [&self.gru_fwd, &self.gru_bwd] {
            v.extend([g.w_r1, g.w_r2, g.w_f1, g.w_f2, g.w_h1, g.w_h2]);
        }
        for h in &self.aru.heads {
            v.extend([h.w_q, h.w_k, h.w_v]);
        }
        let a = &self.aru;
        v.extend([a.m_pos, a.w_f1, a.w_f2, a.w_h1, a.w_h2, a.w_r1, a.w_r2]);
        let f = &self.ffn;
        v.extend([f.w1, f.b1, f.w2, f.b2, f.gain, f.bias, self.pool.w_s1, self.pool.w_s2]);
        for h in &self.highway {
            v.extend([h.w_g, h.b_g, h.w_h, h.b_h]);
        }
        v
    }
}
