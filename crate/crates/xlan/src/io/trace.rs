//! Attention-trace export: per decode step, the emitted token, the
//! spatial distribution over regions, a channel-gate summary, and the
//! argmax region — as JSON with a stable schema.

use crate::data::vocab::Vocabulary;
use crate::error::{Error, Result};
use crate::inference::{greedy_decode_traced, StepTrace};
use crate::model::CaptionModel;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceStep {
    pub t: usize,
    pub token_id: usize,
    pub token: String,
    /// Spatial attention over regions; sums to 1.
    pub spatial: Vec<f64>,
    pub argmax_region: usize,
    /// Channel-gate summary; all 1.0 when the variant has no gates.
    pub channel_min: f64,
    pub channel_mean: f64,
    pub channel_max: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceFile {
    pub image_id: String,
    pub caption: Vec<String>,
    pub steps: Vec<TraceStep>,
}

fn summarize(step: &StepTrace, vocab: &Vocabulary, t: usize) -> TraceStep {
    let (min, mean, max) = match &step.channel {
        Some(c) => {
            let min = c.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = c.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            (min, c.iter().sum::<f64>() / c.len() as f64, max)
        }
        None => (1.0, 1.0, 1.0),
    };
    TraceStep {
        t,
        token_id: step.token,
        token: vocab.decode(step.token).to_string(),
        spatial: step.spatial.clone(),
        argmax_region: step.argmax_region,
        channel_min: min,
        channel_mean: mean,
        channel_max: max,
    }
}

/// Greedy-decode one example and build its trace record.
pub fn trace_example(
    model: &CaptionModel,
    vocab: &Vocabulary,
    image_id: &str,
    regions: &Tensor,
) -> Result<TraceFile> {
    let (caption, steps) = greedy_decode_traced(model, regions, model.cfg.max_len)?;
    Ok(TraceFile {
        image_id: image_id.to_string(),
        caption: vocab.decode_all(&caption.tokens),
        steps: steps.iter().enumerate().map(|(t, s)| summarize(s, vocab, t)).collect(),
    })
}

/// Decode, summarize, and write the JSON trace file.
pub fn dump_attention(
    model: &CaptionModel,
    vocab: &Vocabulary,
    image_id: &str,
    regions: &Tensor,
    out_path: &Path,
) -> Result<TraceFile> {
    let trace = trace_example(model, vocab, image_id, regions)?;
    let json = serde_json::to_string_pretty(&trace)
        .map_err(|e| Error::Format(format!("trace serialization: {e}")))?;
    std::fs::write(out_path, json)?;
    Ok(trace)
}
