//! Ablation harness: decoder attention module crossed with block
//! activation and encoder stack depth, trained on the toy task.

use crate::data::Example;
use crate::decoder::DecoderAttentionKind;
use crate::error::Result;
use crate::model::{CaptionModel, ModelConfig};
use crate::training::{evaluate, train_loop, AdamState, Phase, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AblationVariant {
    pub attention: DecoderAttentionKind,
    pub elu: bool,
    pub blocks: usize,
}

impl AblationVariant {
    pub fn label(&self) -> String {
        let attn = match self.attention {
            DecoderAttentionKind::XLinear => "xlinear",
            DecoderAttentionKind::Conventional => "conventional",
        };
        format!("{attn},elu={},blocks={}", if self.elu { "on" } else { "off" }, self.blocks)
    }
}

/// The full grid: {conventional, xlinear} × {elu on, off} × blocks 0..=4,
/// minus the ELU axis for the conventional decoder (the flag is inert
/// there, so those rows collapse onto elu=off).
pub fn ablation_grid() -> Vec<AblationVariant> {
    let mut grid = Vec::new();
    for blocks in 0..=4 {
        grid.push(AblationVariant {
            attention: DecoderAttentionKind::Conventional,
            elu: false,
            blocks,
        });
    }
    for elu in [false, true] {
        for blocks in 0..=4 {
            grid.push(AblationVariant { attention: DecoderAttentionKind::XLinear, elu, blocks });
        }
    }
    grid
}

#[derive(Debug, Clone)]
pub struct AblationResult {
    pub variant: AblationVariant,
    pub final_ce: f64,
    pub bleu: f64,
}

/// Train one variant from scratch for `steps` CE steps and score it on
/// the held-out split.
pub fn run_variant(
    variant: AblationVariant,
    base_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    train: &[Example],
    val: &[Example],
    steps: u64,
) -> Result<AblationResult> {
    let cfg = ModelConfig {
        decoder_attention: variant.attention,
        elu: variant.elu,
        encoder_blocks: variant.blocks,
        ..base_cfg.clone()
    };
    let mut model = CaptionModel::new(cfg, train_cfg.seed);
    let mut adam = AdamState::for_params(&model.params);
    let history = train_loop(
        &mut model,
        &mut adam,
        train,
        val,
        train_cfg,
        Phase::Ce,
        0,
        steps,
        |_, _, _| Ok(()),
    )?;
    let final_ce = history.last().map_or(f64::NAN, |r| r.loss);
    let bleu = evaluate(&model, val)?;
    Ok(AblationResult { variant, final_ce, bleu })
}
