//! Sentence decoder: word embedding, global image feature, an LSTM cell
//! driven by the concatenated step input, one attention block over the
//! enhanced region features, a GLU context vector, and the vocabulary
//! projection.

use crate::attention::{
    conventional_attend, x_linear_attend, AttentionInputs, ConvAttnParams, ConvAttnVars,
    XLinearDims, XLinearParams, XLinearTrace, XLinearVars,
};
use crate::encoder::EncoderOutput;
use crate::error::{Error, Result};
use crate::tensor::{Activation, ParamId, ParamSet, Tape, Tensor, Var};
use rand_chacha::ChaCha8Rng;

/// Which attention module the decoder queries with its hidden state.
#[derive(Debug, Clone)]
pub enum DecoderAttention {
    XLinear(XLinearParams),
    Conventional(ConvAttnParams),
}

pub enum DecoderAttentionVars {
    XLinear(XLinearVars),
    Conventional(ConvAttnVars),
}

/// Per-step attention record; the conventional module has no channel
/// gates or bilinear maps.
#[derive(Debug, Clone)]
pub enum DecoderTrace {
    XLinear(XLinearTrace),
    Conventional { weights: Var },
}

impl DecoderTrace {
    pub fn spatial_weights(&self) -> Var {
        match self {
            DecoderTrace::XLinear(t) => t.spatial_weights,
            DecoderTrace::Conventional { weights } => *weights,
        }
    }

    pub fn channel_gates(&self) -> Option<Var> {
        match self {
            DecoderTrace::XLinear(t) => Some(t.channel_gates),
            DecoderTrace::Conventional { .. } => None,
        }
    }
}

/// Decoder weight bundle.
///
/// The LSTM consumes the concatenation [word embedding; global image
/// feature; previous hidden; previous context]; recurrence enters through
/// that concatenation and the cell line.
#[derive(Debug, Clone)]
pub struct DecoderParams {
    pub embedding: ParamId,
    pub w_global: ParamId,
    pub lstm_w: ParamId,
    pub lstm_b: ParamId,
    pub attention: DecoderAttention,
    pub w_ctx: ParamId,
    pub b_ctx: ParamId,
    pub w_out: ParamId,
    pub b_out: ParamId,
    pub vocab_size: usize,
    pub d_hidden: usize,
}

pub struct DecoderVars {
    pub embedding: Var,
    pub w_global: Var,
    pub lstm_w: Var,
    pub lstm_b: Var,
    pub attention: DecoderAttentionVars,
    pub w_ctx: Var,
    pub b_ctx: Var,
    pub w_out: Var,
    pub b_out: Var,
    pub vocab_size: usize,
    pub d_hidden: usize,
}

impl DecoderParams {
    #[allow(clippy::too_many_arguments)]
    pub fn init(
        set: &mut ParamSet,
        vocab_size: usize,
        d_word: usize,
        d_model: usize,
        d_attn: usize,
        d_hidden: usize,
        enc_features: usize,
        attention: DecoderAttentionKind,
        activation: Activation,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let lstm_in = d_word + d_model + 2 * d_hidden;
        let attention = match attention {
            DecoderAttentionKind::XLinear => {
                let dims = XLinearDims {
                    query: d_hidden,
                    key: d_model,
                    value: d_model,
                    bilinear: d_model,
                    attn: d_attn,
                };
                DecoderAttention::XLinear(XLinearParams::init(
                    set,
                    "decoder.attn",
                    dims,
                    activation,
                    rng,
                ))
            }
            DecoderAttentionKind::Conventional => DecoderAttention::Conventional(
                ConvAttnParams::init(set, "decoder.attn", d_attn, d_model, d_hidden, rng),
            ),
        };
        DecoderParams {
            embedding: set.add_glorot("decoder.embedding", vocab_size, d_word, rng),
            w_global: set.add_glorot("decoder.w_global", d_model, enc_features * d_model, rng),
            lstm_w: set.add_glorot("decoder.lstm_w", 4 * d_hidden, lstm_in, rng),
            lstm_b: set.add_zeros("decoder.lstm_b", vec![4 * d_hidden]),
            attention,
            w_ctx: set.add_glorot("decoder.w_ctx", 2 * d_hidden, d_model + d_hidden, rng),
            b_ctx: set.add_zeros("decoder.b_ctx", vec![2 * d_hidden]),
            w_out: set.add_glorot("decoder.w_out", vocab_size, d_hidden, rng),
            b_out: set.add_zeros("decoder.b_out", vec![vocab_size]),
            vocab_size,
            d_hidden,
        }
    }

    pub fn bind(&self, tape: &mut Tape, set: &ParamSet) -> DecoderVars {
        DecoderVars {
            embedding: tape.param(set, self.embedding),
            w_global: tape.param(set, self.w_global),
            lstm_w: tape.param(set, self.lstm_w),
            lstm_b: tape.param(set, self.lstm_b),
            attention: match &self.attention {
                DecoderAttention::XLinear(p) => DecoderAttentionVars::XLinear(p.bind(tape, set)),
                DecoderAttention::Conventional(p) => {
                    DecoderAttentionVars::Conventional(p.bind(tape, set))
                }
            },
            w_ctx: tape.param(set, self.w_ctx),
            b_ctx: tape.param(set, self.b_ctx),
            w_out: tape.param(set, self.w_out),
            b_out: tape.param(set, self.b_out),
            vocab_size: self.vocab_size,
            d_hidden: self.d_hidden,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecoderAttentionKind {
    XLinear,
    Conventional,
}

/// Value-like decoding state; advancing one returns a new state.
#[derive(Debug, Clone, Copy)]
pub struct DecoderState {
    pub h: Var,
    pub cell: Var,
    pub ctx: Var,
    pub t: usize,
}

/// All-zero hidden, cell, and context; step index 0.
pub fn init_state(tape: &mut Tape, d_hidden: usize) -> DecoderState {
    let h = tape.constant(Tensor::zeros(vec![d_hidden]));
    let cell = tape.constant(Tensor::zeros(vec![d_hidden]));
    let ctx = tape.constant(Tensor::zeros(vec![d_hidden]));
    DecoderState { h, cell, ctx, t: 0 }
}

/// ṽ: one projection of all attended image-level features, concatenated.
pub fn global_image_feature(tape: &mut Tape, w_global: Var, enc: &EncoderOutput) -> Result<Var> {
    let cat = tape.concat(&enc.attended)?;
    tape.matvec(w_global, cat)
}

/// first half ⊙ sigmoid(second half); input length must be even.
pub fn glu(tape: &mut Tape, x: Var) -> Result<Var> {
    let n = tape.value(x).numel();
    if !n.is_multiple_of(2) || n == 0 {
        return Err(Error::Shape {
            op: "glu",
            expected: "even-length vector".into(),
            found: format!("{:?}", tape.shape(x)),
        });
    }
    let half = n / 2;
    let a = tape.slice(x, 0, half)?;
    let b = tape.slice(x, half, half)?;
    let gate = tape.sigmoid(b);
    tape.mul(a, gate)
}

/// One decoding step: returns vocabulary logits, the advanced state, and
/// the attention trace. Pure in (params, state, token, encoder output).
pub fn decode_step(
    tape: &mut Tape,
    p: &DecoderVars,
    state: &DecoderState,
    token: usize,
    global_feature: Var,
    regions: &[Var],
) -> Result<(Var, DecoderState, DecoderTrace)> {
    if token >= p.vocab_size {
        return Err(Error::Vocab { id: token, size: p.vocab_size });
    }
    let embedded = tape.select_row(p.embedding, token)?;
    let x = tape.concat(&[embedded, global_feature, state.h, state.ctx])?;
    let pre_gates = tape.matvec(p.lstm_w, x)?;
    let gates = tape.add(pre_gates, p.lstm_b)?;
    let hd = p.d_hidden;
    let gi = tape.slice(gates, 0, hd)?;
    let gf = tape.slice(gates, hd, hd)?;
    let gc = tape.slice(gates, 2 * hd, hd)?;
    let go = tape.slice(gates, 3 * hd, hd)?;
    let input_gate = tape.sigmoid(gi);
    let forget_gate = tape.sigmoid(gf);
    let cand = tape.tanh(gc);
    let output_gate = tape.sigmoid(go);
    let keep = tape.mul(forget_gate, state.cell)?;
    let write = tape.mul(input_gate, cand)?;
    let cell = tape.add(keep, write)?;
    let cell_act = tape.tanh(cell);
    let h = tape.mul(output_gate, cell_act)?;

    let inputs = AttentionInputs::new(h, regions, regions);
    let (attended, trace) = match &p.attention {
        DecoderAttentionVars::XLinear(vars) => {
            let (v, t) = x_linear_attend(tape, vars, &inputs)?;
            (v, DecoderTrace::XLinear(t))
        }
        DecoderAttentionVars::Conventional(vars) => {
            let (v, w) = conventional_attend(tape, vars, &inputs)?;
            (v, DecoderTrace::Conventional { weights: w })
        }
    };

    let cat = tape.concat(&[attended, h])?;
    let pre_ctx = tape.matvec(p.w_ctx, cat)?;
    let ctx_in = tape.add(pre_ctx, p.b_ctx)?;
    let ctx = glu(tape, ctx_in)?;
    let proj = tape.matvec(p.w_out, ctx)?;
    let logits = tape.add(proj, p.b_out)?;

    Ok((logits, DecoderState { h, cell, ctx, t: state.t + 1 }, trace))
}
