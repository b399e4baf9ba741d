//! Caption generation (greedy and beam search) and a sentence-level
//! smoothed n-gram score for desk-scale evaluation and reward.

use crate::data::vocab::{BOS, EOS, PAD};
use crate::decoder::{decode_step, init_state, DecoderState, DecoderTrace};
use crate::error::Result;
use crate::model::{encode_item, CaptionModel};
use crate::tensor::{Tape, Tensor, Var};

/// A generated caption: token ids with BOS/EOS stripped, and the mean
/// log-probability of the generated sequence (EOS step included).
#[derive(Debug, Clone, PartialEq)]
pub struct Caption {
    pub tokens: Vec<usize>,
    pub score: f64,
    pub finished: bool,
}

/// Per-step attention summary captured during decoding.
#[derive(Debug, Clone)]
pub struct StepTrace {
    pub token: usize,
    pub spatial: Vec<f64>,
    pub channel: Option<Vec<f64>>,
    pub argmax_region: usize,
}

fn log_probs(tape: &Tape, logits: Var) -> Vec<f64> {
    let d = tape.data(logits);
    let max = d.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + d.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    d.iter().map(|v| v - lse).collect()
}

/// Lowest index among maximal entries.
fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in xs.iter().enumerate().skip(1) {
        if *v > xs[best] {
            best = i;
        }
    }
    best
}

/// Lowest non-PAD index among maximal entries; captions never carry PAD.
fn argmax_generable(xs: &[f64]) -> usize {
    let mut best = usize::from(PAD == 0);
    for (i, v) in xs.iter().enumerate().skip(best + 1) {
        if i != PAD && *v > xs[best] {
            best = i;
        }
    }
    best
}

fn extract_trace(tape: &Tape, trace: &DecoderTrace, token: usize) -> StepTrace {
    let spatial = tape.data(trace.spatial_weights()).to_vec();
    StepTrace {
        token,
        argmax_region: argmax(&spatial),
        spatial,
        channel: trace.channel_gates().map(|g| tape.data(g).to_vec()),
    }
}

/// Argmax decoding from BOS until EOS or `max_len` steps; ties break
/// toward the lowest token id.
pub fn greedy_decode(model: &CaptionModel, regions: &Tensor, max_len: usize) -> Result<Caption> {
    let (caption, _) = greedy_decode_traced(model, regions, max_len)?;
    Ok(caption)
}

/// Greedy decoding that also returns the per-step attention record.
pub fn greedy_decode_traced(
    model: &CaptionModel,
    regions: &Tensor,
    max_len: usize,
) -> Result<(Caption, Vec<StepTrace>)> {
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape);
    let ctx = encode_item(&mut tape, &vars, regions)?;
    let mut state = init_state(&mut tape, model.cfg.d_hidden);
    let mut prev = BOS;
    let mut tokens = Vec::new();
    let mut traces = Vec::new();
    let mut total_logp = 0.0;
    let mut steps = 0usize;
    let mut finished = false;
    while steps < max_len {
        let (logits, next, trace) = decode_step(
            &mut tape,
            &vars.decoder,
            &state,
            prev,
            ctx.global,
            &ctx.enc.regions_final,
        )?;
        let lp = log_probs(&tape, logits);
        let tok = argmax_generable(&lp);
        total_logp += lp[tok];
        steps += 1;
        traces.push(extract_trace(&tape, &trace, tok));
        state = next;
        if tok == EOS {
            finished = true;
            break;
        }
        tokens.push(tok);
        prev = tok;
    }
    let score = if steps == 0 { 0.0 } else { total_logp / steps as f64 };
    Ok((Caption { tokens, score, finished }, traces))
}

struct BeamHyp {
    /// Generated tokens, EOS excluded.
    tokens: Vec<usize>,
    /// Cumulative log-probability over all generated steps.
    logp: f64,
    /// Steps taken (EOS step included), the mean denominator.
    steps: usize,
    state: DecoderState,
}

impl BeamHyp {
    fn mean(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.logp / self.steps as f64
        }
    }
}

/// Length-capped beam search over log-probabilities. Hypotheses reaching
/// EOS retire to a pool and stop consuming beam slots; the final ranking
/// is by mean log-probability with (score desc, tokens lex asc)
/// tie-breaking. Returns at most `beam` captions, best first.
pub fn beam_search(
    model: &CaptionModel,
    regions: &Tensor,
    beam: usize,
    max_len: usize,
) -> Result<Vec<Caption>> {
    assert!(beam >= 1, "beam size must be at least 1");
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape);
    let ctx = encode_item(&mut tape, &vars, regions)?;
    let root = init_state(&mut tape, model.cfg.d_hidden);
    let mut active = vec![BeamHyp { tokens: Vec::new(), logp: 0.0, steps: 0, state: root }];
    let mut pool: Vec<BeamHyp> = Vec::new();

    for _ in 0..max_len {
        if active.is_empty() {
            break;
        }
        // candidate = (parent index, token, cumulative logp, state)
        let mut candidates: Vec<(usize, usize, f64, DecoderState)> = Vec::new();
        for (parent, hyp) in active.iter().enumerate() {
            let prev = *hyp.tokens.last().unwrap_or(&BOS);
            let (logits, next, _) = decode_step(
                &mut tape,
                &vars.decoder,
                &hyp.state,
                prev,
                ctx.global,
                &ctx.enc.regions_final,
            )?;
            for (tok, lp) in log_probs(&tape, logits).into_iter().enumerate() {
                if tok == PAD {
                    continue;
                }
                candidates.push((parent, tok, hyp.logp + lp, next));
            }
        }
        candidates.sort_by(|a, b| {
            b.2.partial_cmp(&a.2).unwrap_or(std::cmp::Ordering::Equal).then_with(|| {
                let seq_a = (&active[a.0].tokens, a.1);
                let seq_b = (&active[b.0].tokens, b.1);
                seq_a.cmp(&seq_b)
            })
        });
        candidates.truncate(beam);

        let mut next_active = Vec::with_capacity(beam);
        for (parent, tok, logp, state) in candidates {
            let hyp = &active[parent];
            let mut tokens = hyp.tokens.clone();
            let steps = hyp.steps + 1;
            if tok == EOS {
                pool.push(BeamHyp { tokens, logp, steps, state });
            } else {
                tokens.push(tok);
                next_active.push(BeamHyp { tokens, logp, steps, state });
            }
        }
        active = next_active;
    }
    // hypotheses still alive at the cap join the pool unfinished
    let mut finished: Vec<(BeamHyp, bool)> =
        pool.into_iter().map(|h| (h, true)).collect();
    finished.extend(active.into_iter().map(|h| (h, false)));
    finished.sort_by(|(a, _), (b, _)| {
        b.mean()
            .partial_cmp(&a.mean())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.tokens.cmp(&b.tokens))
    });
    finished.truncate(beam);
    Ok(finished
        .into_iter()
        .map(|(h, fin)| Caption { score: h.mean(), tokens: h.tokens, finished: fin })
        .collect())
}

// ── Smoothed sentence-level n-gram score ────────────────────────────

fn ngram_counts(tokens: &[usize], n: usize) -> std::collections::HashMap<&[usize], usize> {
    let mut counts = std::collections::HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Add-one-smoothed modified n-gram precisions (n = 1..=max_n), geometric
/// mean, times the usual brevity penalty against the closest reference
/// length. Empty candidates score 0.
pub fn bleu_smooth(candidate: &[usize], references: &[Vec<usize>], max_n: usize) -> f64 {
    assert!(max_n >= 1, "max_n must be at least 1");
    assert!(!references.is_empty(), "bleu_smooth needs at least one reference");
    if candidate.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=max_n {
        let cand = ngram_counts(candidate, n);
        let total: usize = cand.values().sum();
        let mut matches = 0usize;
        for (gram, &count) in &cand {
            let best_ref = references
                .iter()
                .map(|r| ngram_counts(r, n).get(gram).copied().unwrap_or(0))
                .max()
                .unwrap_or(0);
            matches += count.min(best_ref);
        }
        log_sum += (((matches + 1) as f64) / ((total + 1) as f64)).ln();
    }
    let precision = (log_sum / max_n as f64).exp();

    let c = candidate.len();
    // closest reference length, ties toward the shorter
    let r = references
        .iter()
        .map(|r| r.len())
        .min_by_key(|&len| ((len as i64 - c as i64).abs(), len))
        .unwrap();
    let bp = if c >= r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    bp * precision
}
