//! Full caption model: configuration, parameter construction, and the
//! teacher-forced forward pass shared by training and decoding.

use crate::decoder::{
    decode_step, global_image_feature, init_state, DecoderAttentionKind, DecoderParams,
    DecoderState, DecoderTrace, DecoderVars,
};
use crate::encoder::{encode, EncoderOutput, EncoderParams, EncoderVars};
use crate::error::{Error, Result};
use crate::tensor::{Activation, ParamSet, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Architecture hyperparameters. Desk-scale defaults; the dimensions the
/// reference setup uses at full scale (d_model 1024, d_attn 512, four
/// encoder blocks, beam 3) are all reachable through configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    /// Raw region feature dimension; projected to `d_model` when different.
    pub input_dim: usize,
    pub d_model: usize,
    pub d_attn: usize,
    pub d_word: usize,
    pub d_hidden: usize,
    /// Number of X-Linear blocks in the encoder (0 disables the stack).
    pub encoder_blocks: usize,
    pub decoder_attention: DecoderAttentionKind,
    /// Switches every block activation between ReLU and elu+1.
    pub elu: bool,
    pub max_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: 0,
            input_dim: 0,
            d_model: 32,
            d_attn: 16,
            d_word: 32,
            d_hidden: 32,
            encoder_blocks: 4,
            decoder_attention: DecoderAttentionKind::XLinear,
            elu: true,
            max_len: 24,
        }
    }
}

impl ModelConfig {
    pub fn activation(&self) -> Activation {
        if self.elu {
            Activation::CeluPlusOne
        } else {
            Activation::Relu
        }
    }

    /// Deterministic key=value form, one entry per line, fixed order.
    pub fn to_kv(&self) -> String {
        let attn = match self.decoder_attention {
            DecoderAttentionKind::XLinear => "xlinear",
            DecoderAttentionKind::Conventional => "conventional",
        };
        format!(
            "vocab_size = {}\ninput_dim = {}\nd_model = {}\nd_attn = {}\nd_word = {}\n\
             d_hidden = {}\nencoder_blocks = {}\ndecoder_attention = {}\nelu = {}\nmax_len = {}\n",
            self.vocab_size,
            self.input_dim,
            self.d_model,
            self.d_attn,
            self.d_word,
            self.d_hidden,
            self.encoder_blocks,
            attn,
            if self.elu { "on" } else { "off" },
            self.max_len,
        )
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = ModelConfig::default();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected key = value, got {line:?}")))?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let parse_usize = |v: &str| {
            v.parse::<usize>()
                .map_err(|_| Error::Config(format!("invalid number {v:?} for {key}")))
        };
        match key {
            "vocab_size" => self.vocab_size = parse_usize(value)?,
            "input_dim" => self.input_dim = parse_usize(value)?,
            "d_model" => self.d_model = parse_usize(value)?,
            "d_attn" => self.d_attn = parse_usize(value)?,
            "d_word" => self.d_word = parse_usize(value)?,
            "d_hidden" => self.d_hidden = parse_usize(value)?,
            "encoder_blocks" => self.encoder_blocks = parse_usize(value)?,
            "max_len" => self.max_len = parse_usize(value)?,
            "decoder_attention" => {
                self.decoder_attention = match value {
                    "xlinear" => DecoderAttentionKind::XLinear,
                    "conventional" => DecoderAttentionKind::Conventional,
                    other => {
                        return Err(Error::Config(format!(
                            "decoder_attention must be xlinear or conventional, got {other:?}"
                        )))
                    }
                }
            }
            "elu" => {
                self.elu = match value {
                    "on" | "true" => true,
                    "off" | "false" => false,
                    other => {
                        return Err(Error::Config(format!("elu must be on or off, got {other:?}")))
                    }
                }
            }
            other => return Err(Error::Config(format!("unknown model key {other:?}"))),
        }
        Ok(())
    }
}

/// Encoder plus decoder parameters over one shared registry.
#[derive(Debug, Clone)]
pub struct CaptionModel {
    pub cfg: ModelConfig,
    pub params: ParamSet,
    pub encoder: EncoderParams,
    pub decoder: DecoderParams,
}

pub struct ModelVars {
    pub encoder: EncoderVars,
    pub decoder: DecoderVars,
}

impl CaptionModel {
    pub fn new(cfg: ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let encoder = EncoderParams::init(
            &mut params,
            cfg.input_dim,
            cfg.d_model,
            cfg.d_attn,
            cfg.encoder_blocks,
            cfg.activation(),
            &mut rng,
        );
        let decoder = DecoderParams::init(
            &mut params,
            cfg.vocab_size,
            cfg.d_word,
            cfg.d_model,
            cfg.d_attn,
            cfg.d_hidden,
            cfg.encoder_blocks + 1,
            cfg.decoder_attention,
            cfg.activation(),
            &mut rng,
        );
        CaptionModel { cfg, params, encoder, decoder }
    }

    pub fn bind(&self, tape: &mut Tape) -> ModelVars {
        ModelVars {
            encoder: self.encoder.bind(tape, &self.params),
            decoder: self.decoder.bind(tape, &self.params),
        }
    }
}

/// Encoder output plus the global image feature for one item.
pub struct ItemContext {
    pub enc: EncoderOutput,
    pub global: Var,
}

/// Run the encoder over one item's region matrix (rows are regions).
pub fn encode_item(tape: &mut Tape, vars: &ModelVars, regions: &Tensor) -> Result<ItemContext> {
    if !regions.is_matrix() || regions.shape[0] == 0 {
        return Err(Error::Shape {
            op: "encode_item",
            expected: "non-empty [N×dim] region matrix".into(),
            found: format!("{:?}", regions.shape),
        });
    }
    let region_vars: Vec<Var> = (0..regions.shape[0])
        .map(|i| tape.constant(Tensor::vector(regions.row(i).to_vec())))
        .collect();
    let enc = encode(tape, &vars.encoder, &region_vars)?;
    let global = global_image_feature(tape, vars.decoder.w_global, &enc)?;
    Ok(ItemContext { enc, global })
}

/// Teacher-forced unroll: one logit vector per input token.
pub fn decode_teacher_forced(
    tape: &mut Tape,
    vars: &DecoderVars,
    ctx: &ItemContext,
    input_tokens: &[usize],
) -> Result<(Vec<Var>, Vec<DecoderTrace>, DecoderState)> {
    let mut state = init_state(tape, vars.d_hidden);
    let mut logits = Vec::with_capacity(input_tokens.len());
    let mut traces = Vec::with_capacity(input_tokens.len());
    for &token in input_tokens {
        let (l, next, trace) =
            decode_step(tape, vars, &state, token, ctx.global, &ctx.enc.regions_final)?;
        logits.push(l);
        traces.push(trace);
        state = next;
    }
    Ok((logits, traces, state))
}
