//! Two-phase training: teacher-forced cross-entropy with warmup, then
//! self-critical sequence-level reward starting from the CE model.

mod adam;

pub use adam::{adam_step, clip_gradients, noam_lr, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};

use crate::data::vocab::{BOS, EOS};
use crate::data::Example;
use crate::decoder::{decode_step, init_state};
use crate::error::{Error, Result};
use crate::inference::{bleu_smooth, greedy_decode};
use crate::model::{decode_teacher_forced, encode_item, CaptionModel};
use crate::tensor::{Tape, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Ce,
    Scst,
}

impl Phase {
    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::Ce => "ce",
            Phase::Scst => "scst",
        }
    }
}

/// Training knobs. The desk defaults keep the whole pipeline in the
/// minutes range; reference-scale values (warmup 10000, batch 40,
/// epoch-based budgets) are all reachable through configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub warmup_steps: u64,
    pub ce_steps: u64,
    pub scst_steps: u64,
    pub scst_lr: f64,
    pub beam_size: usize,
    pub clip_norm: f64,
    pub seed: u64,
    pub eval_every: u64,
    pub checkpoint_every: u64,
    /// Early stop for the CE phase once the batch loss dips below this.
    pub stop_below_loss: Option<f64>,
    pub vocab_min_count: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            warmup_steps: 200,
            ce_steps: 2000,
            scst_steps: 500,
            scst_lr: 1e-5,
            beam_size: 3,
            clip_norm: 5.0,
            seed: 7,
            eval_every: 100,
            checkpoint_every: 500,
            stop_below_loss: None,
            vocab_min_count: 6,
        }
    }
}

impl TrainConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| Error::Config(format!("invalid {what} {value:?} for {key}"));
        match key {
            "batch_size" => self.batch_size = value.parse().map_err(|_| bad("number"))?,
            "warmup_steps" => self.warmup_steps = value.parse().map_err(|_| bad("number"))?,
            "ce_steps" => self.ce_steps = value.parse().map_err(|_| bad("number"))?,
            "scst_steps" => self.scst_steps = value.parse().map_err(|_| bad("number"))?,
            "scst_lr" => self.scst_lr = value.parse().map_err(|_| bad("number"))?,
            "beam_size" => self.beam_size = value.parse().map_err(|_| bad("number"))?,
            "clip_norm" => self.clip_norm = value.parse().map_err(|_| bad("number"))?,
            "seed" => self.seed = value.parse().map_err(|_| bad("number"))?,
            "eval_every" => self.eval_every = value.parse().map_err(|_| bad("number"))?,
            "checkpoint_every" => {
                self.checkpoint_every = value.parse().map_err(|_| bad("number"))?
            }
            "stop_below_loss" => {
                self.stop_below_loss = Some(value.parse().map_err(|_| bad("number"))?)
            }
            "vocab_min_count" => {
                self.vocab_min_count = value.parse().map_err(|_| bad("number"))?
            }
            other => return Err(Error::Config(format!("unknown train key {other:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.warmup_steps == 0 || self.batch_size == 0 {
            return Err(Error::Config("warmup_steps and batch_size must be ≥ 1".into()));
        }
        if self.scst_lr <= 0.0 {
            return Err(Error::Config("scst_lr must be positive".into()));
        }
        Ok(())
    }
}

/// One training-log record; `metric` is the held-out score when this
/// step ran an evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRow {
    pub step: u64,
    pub phase: Phase,
    pub loss: f64,
    pub lr: f64,
    pub metric: Option<f64>,
}

impl HistoryRow {
    pub const CSV_HEADER: &'static str = "step,phase,loss,lr,metric";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.step,
            self.phase.as_str(),
            self.loss,
            self.lr,
            self.metric.map(|m| m.to_string()).unwrap_or_default()
        )
    }
}

// ── Losses ──────────────────────────────────────────────────────────

/// Mean over unmasked positions of −log softmax(logits)[target].
pub fn cross_entropy_loss(
    tape: &mut Tape,
    logits: &[Var],
    targets: &[usize],
    mask: &[bool],
) -> Result<Var> {
    if logits.len() != targets.len() || logits.len() != mask.len() {
        return Err(Error::Shape {
            op: "cross_entropy_loss",
            expected: format!("{} aligned targets and mask flags", logits.len()),
            found: format!("{} targets, {} flags", targets.len(), mask.len()),
        });
    }
    let mut terms = Vec::new();
    for ((&l, &target), &keep) in logits.iter().zip(targets).zip(mask) {
        let vocab = tape.value(l).numel();
        if target >= vocab {
            return Err(Error::Vocab { id: target, size: vocab });
        }
        if !keep {
            continue;
        }
        let lse = tape.logsumexp(l)?;
        let picked = tape.select(l, target)?;
        terms.push(tape.sub(lse, picked)?);
    }
    if terms.is_empty() {
        return Err(Error::Contract("cross_entropy_loss: every position is masked".into()));
    }
    let total = tape.add_n(&terms)?;
    Ok(tape.scale(total, 1.0 / terms.len() as f64))
}

/// Teacher-forced CE over a batch: per item, inputs are [BOS, w…] and
/// targets [w…, EOS]; the batch loss is the mean of item losses.
pub fn ce_batch_loss(model: &CaptionModel, batch: &[&Example]) -> Result<(Tape, Var)> {
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape);
    let mut item_losses = Vec::with_capacity(batch.len());
    for ex in batch {
        let ctx = encode_item(&mut tape, &vars, &ex.regions)?;
        let mut inputs = vec![BOS];
        inputs.extend_from_slice(&ex.tokens);
        let mut targets = ex.tokens.clone();
        targets.push(EOS);
        let (logits, _, _) = decode_teacher_forced(&mut tape, &vars.decoder, &ctx, &inputs)?;
        let mask = vec![true; targets.len()];
        item_losses.push(cross_entropy_loss(&mut tape, &logits, &targets, &mask)?);
    }
    let total = tape.add_n(&item_losses)?;
    let loss = tape.scale(total, 1.0 / batch.len() as f64);
    Ok((tape, loss))
}

/// Everything needed to replay one item's self-critical term.
#[derive(Debug, Clone)]
pub struct ScstItemLog {
    pub sampled: Vec<usize>,
    pub greedy: Vec<usize>,
    pub sample_reward: f64,
    pub greedy_reward: f64,
    /// log p of each sampled step (EOS step included).
    pub step_logps: Vec<f64>,
}

pub type RewardFn<'a> = &'a (dyn Fn(&[usize], &[Vec<usize>]) -> f64 + 'a);

/// Sentence-level reward training: sample a caption per item, decode a
/// greedy baseline, and weight the sampled log-probabilities by the
/// negated advantage. Gradient flows only through the sampled log-probs.
pub fn scst_loss(
    model: &CaptionModel,
    batch: &[&Example],
    reward: RewardFn,
    rng: &mut ChaCha8Rng,
) -> Result<(Tape, Var, Vec<ScstItemLog>)> {
    let max_len = model.cfg.max_len;
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape);
    let mut item_losses = Vec::with_capacity(batch.len());
    let mut logs = Vec::with_capacity(batch.len());
    for ex in batch {
        let baseline = greedy_decode(model, &ex.regions, max_len)?;
        let refs = vec![ex.tokens.clone()];
        let greedy_reward = reward(&baseline.tokens, &refs);

        let ctx = encode_item(&mut tape, &vars, &ex.regions)?;
        let mut state = init_state(&mut tape, model.cfg.d_hidden);
        let mut prev = BOS;
        let mut sampled = Vec::new();
        let mut step_logp_vars = Vec::new();
        for _ in 0..max_len {
            let (logits, next, _) = decode_step(
                &mut tape,
                &vars.decoder,
                &state,
                prev,
                ctx.global,
                &ctx.enc.regions_final,
            )?;
            // multinomial draw at temperature 1
            let d = tape.data(logits);
            let max = d.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = d.iter().map(|v| (v - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            let mut u = rng.gen::<f64>() * sum;
            let mut tok = exps.len() - 1;
            for (i, e) in exps.iter().enumerate() {
                if u < *e {
                    tok = i;
                    break;
                }
                u -= e;
            }

            let lse = tape.logsumexp(logits)?;
            let picked = tape.select(logits, tok)?;
            step_logp_vars.push(tape.sub(picked, lse)?);
            state = next;
            if tok == EOS {
                break;
            }
            sampled.push(tok);
            prev = tok;
        }
        let sample_reward = reward(&sampled, &refs);
        let advantage = sample_reward - greedy_reward;
        let logp_sum = tape.add_n(&step_logp_vars)?;
        item_losses.push(tape.scale(logp_sum, -advantage));
        logs.push(ScstItemLog {
            sampled,
            greedy: baseline.tokens,
            sample_reward,
            greedy_reward,
            step_logps: step_logp_vars.iter().map(|v| tape.data(*v)[0]).collect(),
        });
    }
    let total = tape.add_n(&item_losses)?;
    let loss = tape.scale(total, 1.0 / batch.len() as f64);
    Ok((tape, loss, logs))
}

// ── The loop ────────────────────────────────────────────────────────

fn step_rng(seed: u64, phase: Phase, step: u64, lane: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let phase_bits: u64 = match phase {
        Phase::Ce => 0,
        Phase::Scst => 1,
    };
    r.set_stream((phase_bits << 56) | (lane << 48) | step);
    r
}

fn sample_batch<'a>(
    train: &'a [Example],
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<&'a Example> {
    (0..batch_size.min(train.len()))
        .map(|_| &train[rng.gen_range(0..train.len())])
        .collect()
}

/// Mean held-out sentence score under greedy decoding.
pub fn evaluate(model: &CaptionModel, examples: &[Example]) -> Result<f64> {
    if examples.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for ex in examples {
        let cap = greedy_decode(model, &ex.regions, model.cfg.max_len)?;
        total += bleu_smooth(&cap.tokens, std::slice::from_ref(&ex.tokens), 4);
    }
    Ok(total / examples.len() as f64)
}

/// Run `steps` optimization steps of one phase, starting after
/// `start_step` (0 for a fresh run). Batches, SCST sampling, and the
/// schedule derive from (seed, phase, step) alone, so a resumed run
/// retraces the uninterrupted one exactly. The hook fires at every
/// checkpoint interval and at the final step.
#[allow(clippy::too_many_arguments)]
pub fn train_loop(
    model: &mut CaptionModel,
    adam: &mut AdamState,
    train: &[Example],
    val: &[Example],
    cfg: &TrainConfig,
    phase: Phase,
    start_step: u64,
    steps: u64,
    mut checkpoint_hook: impl FnMut(u64, &CaptionModel, &AdamState) -> Result<()>,
) -> Result<Vec<HistoryRow>> {
    if train.is_empty() {
        return Err(Error::Contract("train_loop needs a non-empty dataset".into()));
    }
    cfg.validate()?;
    let mut history = Vec::new();
    let reward: RewardFn = &|cand, refs| bleu_smooth(cand, refs, 4);

    for step in (start_step + 1)..=steps {
        let mut batch_rng = step_rng(cfg.seed, phase, step, 0);
        let batch = sample_batch(train, cfg.batch_size, &mut batch_rng);
        model.params.zero_grad();

        let (loss_value, lr) = match phase {
            Phase::Ce => {
                let (mut tape, loss) = ce_batch_loss(model, &batch)?;
                let value = tape.data(loss)[0];
                tape.backward(loss)?;
                model.params.accumulate_grads(&tape);
                (value, noam_lr(step, model.cfg.d_model, cfg.warmup_steps)?)
            }
            Phase::Scst => {
                let mut sample_rng = step_rng(cfg.seed, phase, step, 1);
                let (mut tape, loss, _) = scst_loss(model, &batch, reward, &mut sample_rng)?;
                let value = tape.data(loss)[0];
                tape.backward(loss)?;
                model.params.accumulate_grads(&tape);
                (value, cfg.scst_lr)
            }
        };

        clip_gradients(&mut model.params, cfg.clip_norm);
        adam_step(adam, &mut model.params, lr);

        // only on the fixed grid, so a resumed run's log stitches
        // bit-identically onto the uninterrupted one
        let metric = if step % cfg.eval_every == 0 && !val.is_empty() {
            Some(evaluate(model, val)?)
        } else {
            None
        };
        history.push(HistoryRow { step, phase, loss: loss_value, lr, metric });

        if step % cfg.checkpoint_every == 0 || step == steps {
            checkpoint_hook(step, model, adam)?;
        }
        if phase == Phase::Ce {
            if let Some(threshold) = cfg.stop_below_loss {
                if loss_value < threshold {
                    checkpoint_hook(step, model, adam)?;
                    break;
                }
            }
        }
    }
    Ok(history)
}
