//! Encoder layers recorded on a [`Tape`]. Every function takes the handles
//! it needs and returns the output node.

use rand::Rng;

use super::weights::{AruWeights, FfnWeights, GruWeights, HighwayWeights, PoolWeights};
use crate::numerics::{Tape, Tensor, Var, LAYER_NORM_EPS};

/// Character CNN over a batch of words: zero-pad each word to at least
/// `kernel` characters, convolve, ReLU, max over positions.
/// Returns one `1 × filters` row per word, stacked as `words × filters`.
pub fn char_conv_maxpool(tape: &mut Tape, embed: Var, kernel_w: Var, bias: Var, words: &[Vec<usize>], kernel: usize) -> Var {
    let mut rows = Vec::new();
    let mut positions = Vec::with_capacity(words.len());
    for chars in words {
        let len = chars.len().max(kernel);
        let n_pos = len - kernel + 1;
        for p in 0..n_pos {
            for k in 0..kernel {
                rows.push(chars.get(p + k).copied());
            }
        }
        positions.push(n_pos);
    }
    let total: usize = positions.iter().sum();
    let char_dim = tape.value(embed).cols();
    let windows = tape.gather(embed, rows);
    let windows = tape.reshape(windows, &[total, kernel * char_dim]);
    let conv = tape.matmul(windows, kernel_w);
    let conv = tape.add_row(conv, bias);
    let act = tape.relu(conv);
    let filters = tape.value(act).cols();
    let mut start = 0;
    let mut pooled = Vec::with_capacity(words.len());
    for n_pos in positions {
        let block = tape.slice(act, start..start + n_pos, 0..filters);
        pooled.push(tape.max_over_rows(block));
        start += n_pos;
    }
    tape.concat_rows(&pooled)
}

/// Word-embedding rows concatenated with character features: `n × (word_dim + filters)`.
pub fn embed_words(tape: &mut Tape, word_table: Var, word_ids: &[usize], char_features: Var) -> Var {
    let words = tape.gather(word_table, word_ids.iter().map(|&i| Some(i)).collect());
    tape.concat_cols(&[words, char_features])
}

/// One GRU direction over the rows of `x`; `h_0 = 0`. Output row `t` is
/// the state after consuming position `t`, whichever way the pass runs.
pub fn gru_direction(tape: &mut Tape, w: &GruWeights, x: Var, reverse: bool) -> Var {
    let n = tape.value(x).rows();
    let (w_r1, w_r2, w_f1, w_f2, w_h1, w_h2) = (
        tape.param(w.w_r1),
        tape.param(w.w_r2),
        tape.param(w.w_f1),
        tape.param(w.w_f2),
        tape.param(w.w_h1),
        tape.param(w.w_h2),
    );
    let hidden = tape.value(w_r2).rows();
    // input projections for all positions at once
    let xr = tape.matmul(x, w_r1);
    let xf = tape.matmul(x, w_f1);
    let xh = tape.matmul(x, w_h1);
    let mut h = tape.constant(Tensor::zeros(&[1, hidden]));
    let mut states = vec![h; n];
    let order: Vec<usize> = if reverse { (0..n).rev().collect() } else { (0..n).collect() };
    for t in order {
        let xr_t = tape.row(xr, t);
        let xf_t = tape.row(xf, t);
        let xh_t = tape.row(xh, t);
        let hr = tape.matmul(h, w_r2);
        let r_pre = tape.add(xr_t, hr);
        let r = tape.sigmoid(r_pre);
        let hf = tape.matmul(h, w_f2);
        let f_pre = tape.add(xf_t, hf);
        let f = tape.sigmoid(f_pre);
        let hr_gated = tape.mul(h, r);
        let hh = tape.matmul(hr_gated, w_h2);
        let cand_pre = tape.add(xh_t, hh);
        let cand = tape.tanh(cand_pre);
        let keep = tape.one_minus(f);
        let new_part = tape.mul(keep, cand);
        let old_part = tape.mul(f, h);
        h = tape.add(new_part, old_part);
        states[t] = h;
    }
    tape.concat_rows(&states)
}

/// Forward and backward GRU states side by side: `n × 2·hidden`.
pub fn bigru_forward(tape: &mut Tape, fwd: &GruWeights, bwd: &GruWeights, x: Var) -> Var {
    let f = gru_direction(tape, fwd, x, false);
    let b = gru_direction(tape, bwd, x, true);
    tape.concat_cols(&[f, b])
}

/// Self-attention with a learned additive position bias, heads
/// concatenated without an output projection.
///
/// Returns the `n × u` output and each head's `n × n` attention matrix.
pub fn pos_multihead_attention(tape: &mut Tape, w: &AruWeights, x: Var) -> (Var, Vec<Var>) {
    let n = tape.value(x).rows();
    let m_pos = tape.param(w.m_pos);
    let bias = tape.slice(m_pos, 0..n, 0..n);
    let mut outputs = Vec::with_capacity(w.heads.len());
    let mut attn = Vec::with_capacity(w.heads.len());
    for head in &w.heads {
        let (wq, wk, wv) = (tape.param(head.w_q), tape.param(head.w_k), tape.param(head.w_v));
        let dk = tape.value(wq).cols();
        let q = tape.matmul(x, wq);
        let k = tape.matmul(x, wk);
        let v = tape.matmul(x, wv);
        let kt = tape.transpose(k);
        let logits = tape.matmul(q, kt);
        let logits = tape.scale(logits, 1.0 / (dk as f64).sqrt());
        let logits = tape.add(logits, bias);
        let a = tape.softmax_rows(logits);
        outputs.push(tape.matmul(a, v));
        attn.push(a);
    }
    (tape.concat_cols(&outputs), attn)
}

/// Attention recurrent unit: attention context, position-parallel gates,
/// a gated running average, and a highway connection back to the input.
pub fn aru_forward(tape: &mut Tape, w: &AruWeights, x: Var) -> Var {
    let (context, _) = pos_multihead_attention(tape, w, x);
    let gate = |tape: &mut Tape, w1, w2| {
        let (w1, w2) = (tape.param(w1), tape.param(w2));
        let a = tape.matmul(x, w1);
        let b = tape.matmul(context, w2);
        tape.add(a, b)
    };
    let f_pre = gate(tape, w.w_f1, w.w_f2);
    let cand_pre = gate(tape, w.w_h1, w.w_h2);
    let r_pre = gate(tape, w.w_r1, w.w_r2);
    let f = tape.sigmoid(f_pre);
    let cand = tape.tanh(cand_pre);
    let h = tape.gated_average(f, cand);
    let r = tape.sigmoid(r_pre);
    let carry = tape.one_minus(r);
    let kept = tape.mul(carry, x);
    let moved = tape.mul(r, h);
    tape.add(kept, moved)
}

/// `layer_norm(o + FFN(o))` with `FFN(o) = relu(o·W1 + b1)·W2 + b2`.
pub fn ffn_add_norm(tape: &mut Tape, w: &FfnWeights, o: Var) -> Var {
    let (w1, b1, w2, b2) = (tape.param(w.w1), tape.param(w.b1), tape.param(w.w2), tape.param(w.b2));
    let hidden = tape.matmul(o, w1);
    let hidden = tape.add_row(hidden, b1);
    let hidden = tape.relu(hidden);
    let out = tape.matmul(hidden, w2);
    let out = tape.add_row(out, b2);
    let residual = tape.add(o, out);
    let (gain, bias) = (tape.param(w.gain), tape.param(w.bias));
    tape.layer_norm(residual, gain, bias, LAYER_NORM_EPS)
}

/// Attentive pooling: `A = softmax_n(W_s2ᵀ · tanh(W_s1ᵀ · oᵀ))`, `M = A·o`,
/// flattened to `1 × (r_hops · u)`. Also returns `A` (`r_hops × n`).
pub fn attentive_pool(tape: &mut Tape, w: &PoolWeights, o: Var) -> (Var, Var) {
    let (w_s1, w_s2) = (tape.param(w.w_s1), tape.param(w.w_s2));
    let hidden = tape.matmul(o, w_s1);
    let hidden = tape.tanh(hidden);
    let scores = tape.matmul(hidden, w_s2);
    let scores = tape.transpose(scores);
    let a = tape.softmax_rows(scores);
    let m = tape.matmul(a, o);
    let len = tape.value(m).len();
    (tape.reshape(m, &[1, len]), a)
}

/// Inverted dropout; identity when `rate == 0`.
pub fn dropout<R: Rng + ?Sized>(tape: &mut Tape, x: Var, rate: f64, rng: &mut R) -> Var {
    if rate <= 0.0 {
        return x;
    }
    let keep = 1.0 / (1.0 - rate);
    let shape = tape.value(x).shape().to_vec();
    let n = tape.value(x).len();
    let mask: Vec<f64> = (0..n).map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep }).collect();
    let mask = tape.constant(Tensor::new(shape, mask).expect("same shape"));
    tape.mul(x, mask)
}

/// Stacked highway layers: `y = g∘relu(v·W_h + b_h) + (1 − g)∘v`, `g = σ(v·W_g + b_g)`.
pub fn highway_net(tape: &mut Tape, layers: &[HighwayWeights], v: Var) -> Var {
    let mut v = v;
    for l in layers {
        let (w_g, b_g, w_h, b_h) = (tape.param(l.w_g), tape.param(l.b_g), tape.param(l.w_h), tape.param(l.b_h));
        let g = tape.matmul(v, w_g);
        let g = tape.add_row(g, b_g);
        let g = tape.sigmoid(g);
        let t = tape.matmul(v, w_h);
        let t = tape.add_row(t, b_h);
        let t = tape.relu(t);
        let carry = tape.one_minus(g);
        let moved = tape.mul(g, t);
        let kept = tape.mul(carry, v);
        v = tape.add(moved, kept);
    }
    v
}
