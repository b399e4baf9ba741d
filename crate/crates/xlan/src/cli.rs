//! Command-line surface: dataset generation, two-phase training,
//! evaluation, inference, attention export, and the ablation grid.

use crate::ablate::{ablation_grid, run_variant};
use crate::config::load_config_file;
use crate::data::toy::{gen_toy_dataset, ToyTaskSpec};
use crate::data::vocab::{build_vocab, Vocabulary};
use crate::data::{load_split, tokenize, write_split, Example};
use crate::decoder::DecoderAttentionKind;
use crate::error::{Error, Result};
use crate::inference::{beam_search, bleu_smooth};
use crate::io::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::io::trace::dump_attention;
use crate::model::{CaptionModel, ModelConfig};
use crate::training::{train_loop, AdamState, HistoryRow, Phase, TrainConfig};
use clap::{Parser, Subcommand, ValueEnum};
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "xlan", version, about = "X-Linear attention captioning, desk scale")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum PhaseArg {
    Ce,
    Scst,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum AttentionArg {
    Conventional,
    Xlinear,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

#[derive(Subcommand)]
pub enum Command {
    /// Generate the synthetic attribute-captioning dataset
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 6)]
        slots: usize,
        #[arg(long, default_value_t = 5)]
        colors: usize,
        #[arg(long, default_value_t = 4)]
        shapes: usize,
        #[arg(long, default_value_t = 0.05)]
        noise: f64,
        #[arg(long, default_value_t = 512)]
        train_size: usize,
        #[arg(long, default_value_t = 64)]
        val_size: usize,
        #[arg(long, default_value_t = 64)]
        test_size: usize,
    },
    /// Train one phase (cross-entropy, or self-critical from a CE model)
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "ce")]
        phase: PhaseArg,
        #[arg(long)]
        seed: Option<u64>,
        /// Total step budget for the phase (overrides the config file)
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        encoder_blocks: Option<usize>,
        #[arg(long, value_enum)]
        attention: Option<AttentionArg>,
        #[arg(long, value_enum)]
        elu: Option<Switch>,
        /// Continue a checkpoint of the same phase
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Initialize SCST from a cross-entropy checkpoint
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Mean held-out sentence score under beam-search decoding
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value = "val")]
        split: String,
        #[arg(long, default_value_t = 3)]
        beam: usize,
        #[arg(long, default_value_t = 6)]
        min_count: usize,
    },
    /// Caption one example (or an external feature file)
    Infer {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, default_value_t = 0)]
        index: usize,
        /// Caption this region-feature file instead of a dataset example
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        beam: usize,
        #[arg(long, default_value_t = 6)]
        min_count: usize,
    },
    /// Export per-step attention for one example as JSON
    DumpAttention {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 6)]
        min_count: usize,
    },
    /// Train every grid variant briefly and tabulate CE and BLEU
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 300)]
        steps: u64,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

pub fn run(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::GenData {
            out,
            seed,
            slots,
            colors,
            shapes,
            noise,
            train_size,
            val_size,
            test_size,
        } => cmd_gen_data(
            &out,
            ToyTaskSpec { slots, colors, shapes, noise, train_size, val_size, test_size, seed },
        ),
        Command::Train {
            data,
            out,
            phase,
            seed,
            steps,
            config,
            encoder_blocks,
            attention,
            elu,
            resume,
            init,
        } => cmd_train(TrainArgs {
            data,
            out,
            phase,
            seed,
            steps,
            config,
            encoder_blocks,
            attention,
            elu,
            resume,
            init,
        }),
        Command::Eval { data, ckpt, split, beam, min_count } => {
            cmd_eval(&data, &ckpt, &split, beam, min_count)
        }
        Command::Infer { data, ckpt, split, index, features, beam, min_count } => {
            cmd_infer(&data, &ckpt, &split, index, features.as_deref(), beam, min_count)
        }
        Command::DumpAttention { data, ckpt, split, index, out, min_count } => {
            cmd_dump_attention(&data, &ckpt, &split, index, &out, min_count)
        }
        Command::Ablate { data, out, steps, seed, config } => {
            cmd_ablate(&data, &out, steps, seed, config.as_deref())
        }
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => 2,
                _ => 1,
            }
        }
    }
}

// ── gen-data ────────────────────────────────────────────────────────

fn cmd_gen_data(out: &Path, spec: ToyTaskSpec) -> Result<()> {
    fs::create_dir_all(out)?;
    let ds = gen_toy_dataset(&spec)?;
    write_split(out, "train", &ds.train)?;
    write_split(out, "val", &ds.val)?;
    write_split(out, "test", &ds.test)?;
    let spec_text = format!(
        "slots = {}\ncolors = {}\nshapes = {}\nnoise = {}\ntrain_size = {}\nval_size = {}\n\
         test_size = {}\nseed = {}\n",
        spec.slots,
        spec.colors,
        spec.shapes,
        spec.noise,
        spec.train_size,
        spec.val_size,
        spec.test_size,
        spec.seed
    );
    fs::write(out.join("toyspec.txt"), spec_text)?;
    println!(
        "wrote {} train / {} val / {} test examples to {} (feature dim {}, caption vocab {})",
        ds.train.len(),
        ds.val.len(),
        ds.test.len(),
        out.display(),
        spec.feature_dim(),
        spec.vocab_size()
    );
    Ok(())
}

// ── shared loading ──────────────────────────────────────────────────

pub struct LoadedData {
    pub train: Vec<Example>,
    pub val: Vec<Example>,
    pub test: Vec<Example>,
    pub vocab: Vocabulary,
    pub input_dim: usize,
}

pub fn load_data(dir: &Path, min_count: usize) -> Result<LoadedData> {
    let train_raw = load_split(dir, "train")?;
    let val_raw = load_split(dir, "val")?;
    let test_raw = load_split(dir, "test")?;
    let first = train_raw
        .first()
        .ok_or_else(|| Error::Contract("train split is empty".into()))?;
    let input_dim = first.regions.shape[1];
    let corpus: Vec<Vec<String>> = train_raw.iter().map(|e| e.caption.clone()).collect();
    let vocab = build_vocab(&corpus, min_count);
    Ok(LoadedData {
        train: tokenize(&train_raw, &vocab),
        val: tokenize(&val_raw, &vocab),
        test: tokenize(&test_raw, &vocab),
        vocab,
        input_dim,
    })
}

fn split_of<'a>(data: &'a LoadedData, split: &str) -> Result<&'a [Example]> {
    match split {
        "train" => Ok(&data.train),
        "val" => Ok(&data.val),
        "test" => Ok(&data.test),
        other => Err(Error::Config(format!("unknown split {other:?}"))),
    }
}

fn restore_model(ckpt_path: &Path, data: &LoadedData) -> Result<(Checkpoint, CaptionModel)> {
    let ckpt = load_checkpoint(ckpt_path)?;
    if ckpt.config.vocab_size != data.vocab.size() {
        return Err(Error::Config(format!(
            "checkpoint vocabulary size {} does not match the dataset's {} \
             (was --min-count different at training time?)",
            ckpt.config.vocab_size,
            data.vocab.size()
        )));
    }
    let model = ckpt.restore()?;
    Ok((ckpt, model))
}

fn write_log(path: &Path, history: &[HistoryRow]) -> Result<()> {
    let mut text = String::from(HistoryRow::CSV_HEADER);
    text.push('\n');
    for row in history {
        text.push_str(&row.to_csv());
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

// ── train ───────────────────────────────────────────────────────────

struct TrainArgs {
    data: PathBuf,
    out: PathBuf,
    phase: PhaseArg,
    seed: Option<u64>,
    steps: Option<u64>,
    config: Option<PathBuf>,
    encoder_blocks: Option<usize>,
    attention: Option<AttentionArg>,
    elu: Option<Switch>,
    resume: Option<PathBuf>,
    init: Option<PathBuf>,
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let mut model_cfg = ModelConfig::default();
    let mut train_cfg = TrainConfig::default();
    if let Some(path) = &args.config {
        load_config_file(path, &mut model_cfg, &mut train_cfg)?;
    }
    if let Some(seed) = args.seed {
        train_cfg.seed = seed;
    }
    if let Some(blocks) = args.encoder_blocks {
        model_cfg.encoder_blocks = blocks;
    }
    if let Some(attn) = args.attention {
        model_cfg.decoder_attention = match attn {
            AttentionArg::Conventional => DecoderAttentionKind::Conventional,
            AttentionArg::Xlinear => DecoderAttentionKind::XLinear,
        };
    }
    if let Some(sw) = args.elu {
        model_cfg.elu = matches!(sw, Switch::On);
    }
    let phase = match args.phase {
        PhaseArg::Ce => Phase::Ce,
        PhaseArg::Scst => Phase::Scst,
    };
    let steps = args.steps.unwrap_or(match phase {
        Phase::Ce => train_cfg.ce_steps,
        Phase::Scst => train_cfg.scst_steps,
    });

    let data = load_data(&args.data, train_cfg.vocab_min_count)?;
    model_cfg.vocab_size = data.vocab.size();
    model_cfg.input_dim = data.input_dim;

    // three entry modes: fresh, resume same phase, or scst-from-ce init
    let (mut model, mut adam, start_step, seed) = match (&args.resume, &args.init, phase) {
        (Some(path), None, _) => {
            let (ckpt, model) = restore_model(path, &data)?;
            if ckpt.phase != phase {
                return Err(Error::Config(format!(
                    "--resume checkpoint is a {} checkpoint, asked to train {}",
                    ckpt.phase.as_str(),
                    phase.as_str()
                )));
            }
            let adam =
                ckpt.adam.clone().unwrap_or_else(|| AdamState::for_params(&model.params));
            (model, adam, ckpt.step, ckpt.seed)
        }
        (None, Some(path), Phase::Scst) => {
            let (_, model) = restore_model(path, &data)?;
            let adam = AdamState::for_params(&model.params);
            (model, adam, 0, train_cfg.seed)
        }
        (None, Some(_), Phase::Ce) => {
            return Err(Error::Config("--init is only meaningful with --phase scst".into()))
        }
        (Some(_), Some(_), _) => {
            return Err(Error::Config("--resume and --init are mutually exclusive".into()))
        }
        (None, None, Phase::Ce) => {
            let model = CaptionModel::new(model_cfg.clone(), train_cfg.seed);
            let adam = AdamState::for_params(&model.params);
            (model, adam, 0, train_cfg.seed)
        }
        (None, None, Phase::Scst) => {
            return Err(Error::Config(
                "--phase scst needs --init <ce checkpoint> (or --resume)".into(),
            ))
        }
    };
    train_cfg.seed = seed;

    fs::create_dir_all(&args.out)?;
    let out_dir = args.out.clone();
    let history = train_loop(
        &mut model,
        &mut adam,
        &data.train,
        &data.val,
        &train_cfg,
        phase,
        start_step,
        steps,
        |step, model, adam| {
            let ckpt = Checkpoint::of_model(model, Some(adam), step, phase, seed);
            save_checkpoint(&out_dir.join(format!("ckpt_step{step:06}.xlck")), &ckpt)
        },
    )?;

    let final_step = history.last().map_or(start_step, |r| r.step);
    let ckpt = Checkpoint::of_model(&model, Some(&adam), final_step, phase, seed);
    save_checkpoint(&args.out.join("ckpt_final.xlck"), &ckpt)?;
    write_log(&args.out.join("train_log.csv"), &history)?;

    let final_loss = history.last().map_or(f64::NAN, |r| r.loss);
    let final_metric = crate::training::evaluate(&model, &data.val)?;
    println!(
        "{} phase done at step {final_step}: loss {final_loss:.6}, val bleu4 {final_metric:.4}",
        phase.as_str()
    );
    Ok(())
}

// ── eval / infer / dump-attention ───────────────────────────────────

fn cmd_eval(data: &Path, ckpt: &Path, split: &str, beam: usize, min_count: usize) -> Result<()> {
    let data = load_data(data, min_count)?;
    let (_, model) = restore_model(ckpt, &data)?;
    let examples = split_of(&data, split)?;
    let mut total = 0.0;
    for ex in examples {
        let captions = beam_search(&model, &ex.regions, beam, model.cfg.max_len)?;
        let top = captions
            .first()
            .ok_or_else(|| Error::Contract("beam search returned no hypotheses".into()))?;
        total += bleu_smooth(&top.tokens, std::slice::from_ref(&ex.tokens), 4);
    }
    let mean = total / examples.len().max(1) as f64;
    println!("split {split}: {} examples, beam {beam}, bleu4 {mean:.4}", examples.len());
    Ok(())
}

fn cmd_infer(
    data_dir: &Path,
    ckpt: &Path,
    split: &str,
    index: usize,
    features: Option<&Path>,
    beam: usize,
    min_count: usize,
) -> Result<()> {
    let data = load_data(data_dir, min_count)?;
    let (_, model) = restore_model(ckpt, &data)?;
    let (id, regions, reference) = match features {
        Some(path) => {
            (path.display().to_string(), crate::data::features::read_region_file(path)?, None)
        }
        None => {
            let examples = split_of(&data, split)?;
            let ex = examples.get(index).ok_or_else(|| {
                Error::Config(format!(
                    "index {index} out of range for split {split} ({} examples)",
                    examples.len()
                ))
            })?;
            (ex.id.clone(), ex.regions.clone(), Some(ex.caption.clone()))
        }
    };
    let captions = beam_search(&model, &regions, beam, model.cfg.max_len)?;
    let top = captions
        .first()
        .ok_or_else(|| Error::Contract("beam search returned no hypotheses".into()))?;
    println!("{id}: {}", data.vocab.decode_all(&top.tokens).join(" "));
    println!("score {:.4}", top.score);
    if let Some(reference) = reference {
        println!("reference: {}", reference.join(" "));
    }
    Ok(())
}

fn cmd_dump_attention(
    data_dir: &Path,
    ckpt: &Path,
    split: &str,
    index: usize,
    out: &Path,
    min_count: usize,
) -> Result<()> {
    let data = load_data(data_dir, min_count)?;
    let (_, model) = restore_model(ckpt, &data)?;
    let examples = split_of(&data, split)?;
    let ex = examples.get(index).ok_or_else(|| {
        Error::Config(format!(
            "index {index} out of range for split {split} ({} examples)",
            examples.len()
        ))
    })?;
    let trace = dump_attention(&model, &data.vocab, &ex.id, &ex.regions, out)?;
    println!("wrote {} steps for {} to {}", trace.steps.len(), ex.id, out.display());
    Ok(())
}

// ── ablate ──────────────────────────────────────────────────────────

fn cmd_ablate(
    data_dir: &Path,
    out: &Path,
    steps: u64,
    seed: Option<u64>,
    config: Option<&Path>,
) -> Result<()> {
    let mut model_cfg = ModelConfig::default();
    let mut train_cfg = TrainConfig::default();
    if let Some(path) = config {
        load_config_file(path, &mut model_cfg, &mut train_cfg)?;
    }
    if let Some(seed) = seed {
        train_cfg.seed = seed;
    }
    let data = load_data(data_dir, train_cfg.vocab_min_count)?;
    model_cfg.vocab_size = data.vocab.size();
    model_cfg.input_dim = data.input_dim;

    fs::create_dir_all(out)?;
    let mut csv = String::from("attention,elu,blocks,final_ce,bleu4\n");
    println!("{:<34} {:>10} {:>8}", "variant", "final_ce", "bleu4");
    for variant in ablation_grid() {
        let result =
            run_variant(variant, &model_cfg, &train_cfg, &data.train, &data.val, steps)?;
        println!("{:<34} {:>10.4} {:>8.4}", variant.label(), result.final_ce, result.bleu);
        let attn = match variant.attention {
            DecoderAttentionKind::XLinear => "xlinear",
            DecoderAttentionKind::Conventional => "conventional",
        };
        csv.push_str(&format!(
            "{attn},{},{},{},{}\n",
            if variant.elu { "on" } else { "off" },
            variant.blocks,
            result.final_ce,
            result.bleu
        ));
    }
    fs::write(out.join("ablation.csv"), csv)?;
    println!("grid written to {}", out.join("ablation.csv").display());
    Ok(())
}
