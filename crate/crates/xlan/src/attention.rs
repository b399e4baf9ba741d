//! Attention blocks: the conventional additive module, the X-Linear
//! bilinear-pooling block with spatial and channel-wise attention, the
//! key/value updating layer, and multi-block stacking.

use crate::error::{Error, Result};
use crate::tensor::{Activation, ParamId, ParamSet, Tape, Var};
use rand_chacha::ChaCha8Rng;

/// A query against a set of key/value pairs, all recorded on one tape.
#[derive(Debug, Clone)]
pub struct AttentionInputs<'a> {
    pub query: Var,
    pub keys: &'a [Var],
    pub values: &'a [Var],
}

impl<'a> AttentionInputs<'a> {
    pub fn new(query: Var, keys: &'a [Var], values: &'a [Var]) -> Self {
        AttentionInputs { query, keys, values }
    }

    fn validate(&self, tape: &Tape) -> Result<()> {
        if self.keys.is_empty() || self.keys.len() != self.values.len() {
            return Err(Error::Shape {
                op: "attention",
                expected: "N ≥ 1 keys with |K| = |V|".into(),
                found: format!("{} keys, {} values", self.keys.len(), self.values.len()),
            });
        }
        let dk = tape.value(self.keys[0]).numel();
        let dv = tape.value(self.values[0]).numel();
        for &k in self.keys {
            if tape.value(k).numel() != dk {
                return Err(Error::Shape {
                    op: "attention",
                    expected: format!("keys of dim {dk}"),
                    found: format!("{:?}", tape.shape(k)),
                });
            }
        }
        for &v in self.values {
            if tape.value(v).numel() != dv {
                return Err(Error::Shape {
                    op: "attention",
                    expected: format!("values of dim {dv}"),
                    found: format!("{:?}", tape.shape(v)),
                });
            }
        }
        Ok(())
    }
}

// ── Conventional additive attention ─────────────────────────────────

/// Weights for the additive (first-order) attention module:
/// score_i = w_a · tanh(W_k k_i + W_q q).
#[derive(Debug, Clone)]
pub struct ConvAttnParams {
    pub w_a: ParamId,
    pub w_k: ParamId,
    pub w_q: ParamId,
}

pub struct ConvAttnVars {
    pub w_a: Var,
    pub w_k: Var,
    pub w_q: Var,
}

impl ConvAttnParams {
    pub fn init(
        set: &mut ParamSet,
        prefix: &str,
        hidden: usize,
        key_dim: usize,
        query_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        ConvAttnParams {
            w_a: set.add_glorot(format!("{prefix}.w_a"), 1, hidden, rng),
            w_k: set.add_glorot(format!("{prefix}.w_k"), hidden, key_dim, rng),
            w_q: set.add_glorot(format!("{prefix}.w_q"), hidden, query_dim, rng),
        }
    }

    pub fn bind(&self, tape: &mut Tape, set: &ParamSet) -> ConvAttnVars {
        ConvAttnVars {
            w_a: tape.param(set, self.w_a),
            w_k: tape.param(set, self.w_k),
            w_q: tape.param(set, self.w_q),
        }
    }
}

/// Additive attention: scores from a tanh fusion of query and key,
/// softmax over regions, weighted sum of the values.
pub fn conventional_attend(
    tape: &mut Tape,
    p: &ConvAttnVars,
    inputs: &AttentionInputs,
) -> Result<(Var, Var)> {
    inputs.validate(tape)?;
    let wq_q = tape.matvec(p.w_q, inputs.query)?;
    let mut scores = Vec::with_capacity(inputs.keys.len());
    for &k in inputs.keys {
        let wk_k = tape.matvec(p.w_k, k)?;
        let fused = tape.add(wk_k, wq_q)?;
        let act = tape.tanh(fused);
        scores.push(tape.matvec(p.w_a, act)?);
    }
    let logits = tape.concat(&scores)?;
    let weights = tape.softmax(logits)?;
    let mut terms = Vec::with_capacity(inputs.values.len());
    for (i, &v) in inputs.values.iter().enumerate() {
        let w_i = tape.select(weights, i)?;
        terms.push(tape.scale_by(w_i, v)?);
    }
    let attended = tape.add_n(&terms)?;
    Ok((attended, weights))
}

// ── X-Linear attention block ────────────────────────────────────────

/// Weight bundle for one X-Linear attention block.
///
/// The block pools the query with each key through a low-rank bilinear
/// product, derives a spatial distribution over regions and, via
/// squeeze-excitation of the pooled maps, per-channel sigmoid gates,
/// then aggregates query-value bilinear products under both.
#[derive(Debug, Clone)]
pub struct XLinearParams {
    pub w_k: ParamId,
    pub w_q_k: ParamId,
    pub w_b_k: ParamId,
    pub w_b: ParamId,
    pub w_e: ParamId,
    pub w_v: ParamId,
    pub w_q_v: ParamId,
    pub activation: Activation,
}

pub struct XLinearVars {
    pub w_k: Var,
    pub w_q_k: Var,
    pub w_b_k: Var,
    pub w_b: Var,
    pub w_e: Var,
    pub w_v: Var,
    pub w_q_v: Var,
    pub activation: Activation,
}

/// Dimensions of one X-Linear block: query/key/value input dims, the
/// bilinear embedding dim, and the transformed (squeezed) dim.
#[derive(Debug, Clone, Copy)]
pub struct XLinearDims {
    pub query: usize,
    pub key: usize,
    pub value: usize,
    pub bilinear: usize,
    pub attn: usize,
}

impl XLinearDims {
    pub fn uniform(d_model: usize, d_attn: usize) -> Self {
        XLinearDims { query: d_model, key: d_model, value: d_model, bilinear: d_model, attn: d_attn }
    }
}

impl XLinearParams {
    pub fn init(
        set: &mut ParamSet,
        prefix: &str,
        dims: XLinearDims,
        activation: Activation,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        XLinearParams {
            w_k: set.add_glorot(format!("{prefix}.w_k"), dims.bilinear, dims.key, rng),
            w_q_k: set.add_glorot(format!("{prefix}.w_q_k"), dims.bilinear, dims.query, rng),
            w_b_k: set.add_glorot(format!("{prefix}.w_b_k"), dims.attn, dims.bilinear, rng),
            w_b: set.add_glorot(format!("{prefix}.w_b"), 1, dims.attn, rng),
            w_e: set.add_glorot(format!("{prefix}.w_e"), dims.bilinear, dims.attn, rng),
            w_v: set.add_glorot(format!("{prefix}.w_v"), dims.bilinear, dims.value, rng),
            w_q_v: set.add_glorot(format!("{prefix}.w_q_v"), dims.bilinear, dims.query, rng),
            activation,
        }
    }

    pub fn bind(&self, tape: &mut Tape, set: &ParamSet) -> XLinearVars {
        XLinearVars {
            w_k: tape.param(set, self.w_k),
            w_q_k: tape.param(set, self.w_q_k),
            w_b_k: tape.param(set, self.w_b_k),
            w_b: tape.param(set, self.w_b),
            w_e: tape.param(set, self.w_e),
            w_v: tape.param(set, self.w_v),
            w_q_v: tape.param(set, self.w_q_v),
            activation: self.activation,
        }
    }
}

/// Every intermediate of one X-Linear evaluation, as tape handles.
/// Handles are free to keep; materialize values only when exporting.
#[derive(Debug, Clone)]
pub struct XLinearTrace {
    /// Bilinear query-key maps, one per region.
    pub bilinear_qk: Vec<Var>,
    /// Transformed maps feeding both attention branches.
    pub transformed_qk: Vec<Var>,
    /// Mean-pooled channel descriptor (the squeeze).
    pub channel_descriptor: Var,
    pub spatial_logits: Var,
    /// Softmax over regions.
    pub spatial_weights: Var,
    pub channel_logits: Var,
    /// Sigmoid gates, one per bilinear channel (the excitation).
    pub channel_gates: Var,
    /// Bilinear query-value maps, one per region.
    pub bilinear_qv: Vec<Var>,
}

/// One X-Linear attention evaluation. Returns the attended feature
/// (dim = `bilinear`) and the full trace.
pub fn x_linear_attend(
    tape: &mut Tape,
    p: &XLinearVars,
    inputs: &AttentionInputs,
) -> Result<(Var, XLinearTrace)> {
    inputs.validate(tape)?;
    let act = p.activation;
    let n = inputs.keys.len();

    let wq_k = tape.matvec(p.w_q_k, inputs.query)?;
    let q_k = tape.activation(act, wq_k);
    let wq_v = tape.matvec(p.w_q_v, inputs.query)?;
    let q_v = tape.activation(act, wq_v);

    let mut bilinear_qk = Vec::with_capacity(n);
    let mut transformed_qk = Vec::with_capacity(n);
    let mut spatial_scores = Vec::with_capacity(n);
    for &k in inputs.keys {
        let wk_k = tape.matvec(p.w_k, k)?;
        let k_emb = tape.activation(act, wk_k);
        let b_k = tape.mul(k_emb, q_k)?;
        let wb_b = tape.matvec(p.w_b_k, b_k)?;
        let b_t = tape.activation(act, wb_b);
        spatial_scores.push(tape.matvec(p.w_b, b_t)?);
        bilinear_qk.push(b_k);
        transformed_qk.push(b_t);
    }

    let spatial_logits = tape.concat(&spatial_scores)?;
    let spatial_weights = tape.softmax(spatial_logits)?;

    // squeeze: mean over regions; excitation: gated projection
    let summed = tape.add_n(&transformed_qk)?;
    let channel_descriptor = tape.scale(summed, 1.0 / n as f64);
    let channel_logits = tape.matvec(p.w_e, channel_descriptor)?;
    let channel_gates = tape.sigmoid(channel_logits);

    let mut bilinear_qv = Vec::with_capacity(n);
    let mut weighted = Vec::with_capacity(n);
    for (i, &v) in inputs.values.iter().enumerate() {
        let wv_v = tape.matvec(p.w_v, v)?;
        let v_emb = tape.activation(act, wv_v);
        let b_v = tape.mul(v_emb, q_v)?;
        let w_i = tape.select(spatial_weights, i)?;
        weighted.push(tape.scale_by(w_i, b_v)?);
        bilinear_qv.push(b_v);
    }
    let pooled = tape.add_n(&weighted)?;
    let attended = tape.mul(channel_gates, pooled)?;

    Ok((
        attended,
        XLinearTrace {
            bilinear_qk,
            transformed_qk,
            channel_descriptor,
            spatial_logits,
            spatial_weights,
            channel_logits,
            channel_gates,
            bilinear_qv,
        },
    ))
}

// ── Key/value updating ──────────────────────────────────────────────

/// Weights refreshing keys and values after a block: a ReLU projection
/// of [attended; item] with residual connection and layer norm.
#[derive(Debug, Clone)]
pub struct KVUpdateParams {
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub key_norm_gain: ParamId,
    pub key_norm_bias: ParamId,
    pub value_norm_gain: ParamId,
    pub value_norm_bias: ParamId,
}

pub struct KVUpdateVars {
    pub w_k: Var,
    pub w_v: Var,
    pub key_norm_gain: Var,
    pub key_norm_bias: Var,
    pub value_norm_gain: Var,
    pub value_norm_bias: Var,
}

impl KVUpdateParams {
    pub fn init(
        set: &mut ParamSet,
        prefix: &str,
        attended_dim: usize,
        key_dim: usize,
        value_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        KVUpdateParams {
            w_k: set.add_glorot(format!("{prefix}.w_k"), key_dim, attended_dim + key_dim, rng),
            w_v: set.add_glorot(format!("{prefix}.w_v"), value_dim, attended_dim + value_dim, rng),
            key_norm_gain: set.add_ones(format!("{prefix}.key_norm_gain"), key_dim),
            key_norm_bias: set.add_zeros(format!("{prefix}.key_norm_bias"), vec![key_dim]),
            value_norm_gain: set.add_ones(format!("{prefix}.value_norm_gain"), value_dim),
            value_norm_bias: set.add_zeros(format!("{prefix}.value_norm_bias"), vec![value_dim]),
        }
    }

    pub fn bind(&self, tape: &mut Tape, set: &ParamSet) -> KVUpdateVars {
        KVUpdateVars {
            w_k: tape.param(set, self.w_k),
            w_v: tape.param(set, self.w_v),
            key_norm_gain: tape.param(set, self.key_norm_gain),
            key_norm_bias: tape.param(set, self.key_norm_bias),
            value_norm_gain: tape.param(set, self.value_norm_gain),
            value_norm_bias: tape.param(set, self.value_norm_bias),
        }
    }
}

/// k'_i = LayerNorm(ReLU(W [attended; k_i]) + k_i), and likewise for
/// values. Cardinality is preserved.
pub fn kv_update(
    tape: &mut Tape,
    p: &KVUpdateVars,
    attended: Var,
    keys: &[Var],
    values: &[Var],
) -> Result<(Vec<Var>, Vec<Var>)> {
    let mut new_keys = Vec::with_capacity(keys.len());
    for &k in keys {
        let cat = tape.concat(&[attended, k])?;
        let proj = tape.matvec(p.w_k, cat)?;
        let act = tape.relu(proj);
        let res = tape.add(act, k)?;
        new_keys.push(tape.layer_norm(res, p.key_norm_gain, p.key_norm_bias)?);
    }
    let mut new_values = Vec::with_capacity(values.len());
    for &v in values {
        let cat = tape.concat(&[attended, v])?;
        let proj = tape.matvec(p.w_v, cat)?;
        let act = tape.relu(proj);
        let res = tape.add(act, v)?;
        new_values.push(tape.layer_norm(res, p.value_norm_gain, p.value_norm_bias)?);
    }
    Ok((new_keys, new_values))
}

// ── Stacking ────────────────────────────────────────────────────────

/// Output of a block stack: one attended feature and trace per block,
/// plus the final refreshed key/value sets.
#[derive(Debug)]
pub struct StackOutput {
    pub attended: Vec<Var>,
    pub keys: Vec<Var>,
    pub values: Vec<Var>,
    pub traces: Vec<XLinearTrace>,
}

/// Iterate blocks: each consumes the previous attended feature as its
/// query (the original query for block 0) and refreshed keys/values.
/// With M blocks the output captures 2M-th order feature interactions.
pub fn stack_forward(
    tape: &mut Tape,
    blocks: &[(XLinearVars, KVUpdateVars)],
    inputs: &AttentionInputs,
) -> Result<StackOutput> {
    if blocks.is_empty() {
        return Err(Error::Contract("stack_forward needs at least one block".into()));
    }
    let mut query = inputs.query;
    let mut keys = inputs.keys.to_vec();
    let mut values = inputs.values.to_vec();
    let mut attended = Vec::with_capacity(blocks.len());
    let mut traces = Vec::with_capacity(blocks.len());
    for (attn, update) in blocks {
        let step_inputs = AttentionInputs::new(query, &keys, &values);
        let (v_hat, trace) = x_linear_attend(tape, attn, &step_inputs)?;
        let (k2, v2) = kv_update(tape, update, v_hat, &keys, &values)?;
        keys = k2;
        values = v2;
        query = v_hat;
        attended.push(v_hat);
        traces.push(trace);
    }
    Ok(StackOutput { attended, keys, values, traces })
}
