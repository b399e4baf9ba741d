//! Run configuration files: `key = value` lines, `#` comments. Keys are
//! the union of the training and model knobs; `vocab_size` and
//! `input_dim` always come from the data and cannot be set here.

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::training::TrainConfig;
use std::path::Path;

const TRAIN_KEYS: [&str; 12] = [
    "batch_size",
    "warmup_steps",
    "ce_steps",
    "scst_steps",
    "scst_lr",
    "beam_size",
    "clip_norm",
    "seed",
    "eval_every",
    "checkpoint_every",
    "stop_below_loss",
    "vocab_min_count",
];

const MODEL_KEYS: [&str; 7] =
    ["d_model", "d_attn", "d_word", "d_hidden", "encoder_blocks", "decoder_attention", "elu"];

pub fn apply_kv(key: &str, value: &str, model: &mut ModelConfig, train: &mut TrainConfig) -> Result<()> {
    if key == "vocab_size" || key == "input_dim" {
        return Err(Error::Config(format!("{key} is derived from the dataset, not configurable")));
    }
    if TRAIN_KEYS.contains(&key) {
        train.set(key, value)
    } else if MODEL_KEYS.contains(&key) || key == "max_len" {
        model.set(key, value)
    } else {
        Err(Error::Config(format!("unknown config key {key:?}")))
    }
}

pub fn parse_config(text: &str, model: &mut ModelConfig, train: &mut TrainConfig) -> Result<()> {
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected key = value, got {raw:?}", lineno + 1))
        })?;
        apply_kv(key.trim(), value.trim(), model, train)?;
    }
    Ok(())
}

pub fn load_config_file(
    path: &Path,
    model: &mut ModelConfig,
    train: &mut TrainConfig,
) -> Result<()> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text, model, train)
}
