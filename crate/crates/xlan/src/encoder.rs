//! Image encoder: mean-pooled initial query and a stack of X-Linear
//! attention layers refining it, producing attended image-level features
//! and enhanced region features.

use crate::attention::{
    stack_forward, AttentionInputs, KVUpdateParams, KVUpdateVars, XLinearDims, XLinearParams,
    XLinearVars,
};
use crate::error::{Error, Result};
use crate::tensor::{Activation, ParamId, ParamSet, Tape, Var};
use rand_chacha::ChaCha8Rng;

/// Encoder weights: an optional input projection (raw feature dim →
/// model dim, with ReLU) and the attention layer stack. Layers share an
/// architecture, never weights.
#[derive(Debug, Clone)]
pub struct EncoderParams {
    pub input_proj: Option<ParamId>,
    pub layers: Vec<(XLinearParams, KVUpdateParams)>,
}

pub struct EncoderVars {
    pub input_proj: Option<Var>,
    pub layers: Vec<(XLinearVars, KVUpdateVars)>,
}

impl EncoderParams {
    /// `blocks` may be 0, which degrades the encoder to the projection
    /// plus mean pooling (the no-encoder-attention ablation).
    pub fn init(
        set: &mut ParamSet,
        input_dim: usize,
        d_model: usize,
        d_attn: usize,
        blocks: usize,
        activation: Activation,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let input_proj = (input_dim != d_model)
            .then(|| set.add_glorot("encoder.input_proj", d_model, input_dim, rng));
        let layers = (0..blocks)
            .map(|i| {
                let dims = XLinearDims::uniform(d_model, d_attn);
                let attn = XLinearParams::init(
                    set,
                    &format!("encoder.layer{i}.attn"),
                    dims,
                    activation,
                    rng,
                );
                let update = KVUpdateParams::init(
                    set,
                    &format!("encoder.layer{i}.update"),
                    d_model,
                    d_model,
                    d_model,
                    rng,
                );
                (attn, update)
            })
            .collect();
        EncoderParams { input_proj, layers }
    }

    pub fn bind(&self, tape: &mut Tape, set: &ParamSet) -> EncoderVars {
        EncoderVars {
            input_proj: self.input_proj.map(|p| tape.param(set, p)),
            layers: self
                .layers
                .iter()
                .map(|(a, u)| (a.bind(tape, set), u.bind(tape, set)))
                .collect(),
        }
    }
}

/// Encoder output: attended image-level features (index 0 is the mean
/// pool, then one per layer) and the final refreshed region features.
#[derive(Debug)]
pub struct EncoderOutput {
    pub attended: Vec<Var>,
    pub regions_final: Vec<Var>,
    pub traces: Vec<crate::attention::XLinearTrace>,
}

/// Encode a region set: project (if configured), mean-pool into the
/// initial query, then run the layer stack with keys = values = regions.
pub fn encode(tape: &mut Tape, p: &EncoderVars, regions: &[Var]) -> Result<EncoderOutput> {
    if regions.is_empty() {
        return Err(Error::Contract("encode needs at least one region".into()));
    }
    let projected: Vec<Var> = match p.input_proj {
        Some(w) => regions
            .iter()
            .map(|&r| {
                let proj = tape.matvec(w, r)?;
                Ok(tape.relu(proj))
            })
            .collect::<Result<_>>()?,
        None => regions.to_vec(),
    };
    let summed = tape.add_n(&projected)?;
    let mean_pool = tape.scale(summed, 1.0 / projected.len() as f64);

    if p.layers.is_empty() {
        return Ok(EncoderOutput {
            attended: vec![mean_pool],
            regions_final: projected,
            traces: Vec::new(),
        });
    }
    let inputs = AttentionInputs::new(mean_pool, &projected, &projected);
    let stack = stack_forward(tape, &p.layers, &inputs)?;
    let mut attended = Vec::with_capacity(1 + stack.attended.len());
    attended.push(mean_pool);
    attended.extend(stack.attended);
    Ok(EncoderOutput { attended, regions_final: stack.values, traces: stack.traces })
}
