//! Synthetic captioning task: each pseudo-region carries a (color, shape)
//! attribute pair plus a slot marker, and the caption lists the
//! attributes in canonical slot order. Solving it requires attending to
//! a different region at each step.

use super::RawExample;
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::collections::HashSet;

pub const COLOR_WORDS: [&str; 8] =
    ["red", "green", "blue", "yellow", "purple", "orange", "pink", "brown"];
pub const SHAPE_WORDS: [&str; 8] =
    ["circle", "square", "triangle", "star", "hexagon", "diamond", "ring", "cross"];
pub const TEMPLATE_WORDS: [&str; 1] = ["a"];

#[derive(Debug, Clone, PartialEq)]
pub struct ToyTaskSpec {
    /// Attribute slots = regions per example.
    pub slots: usize,
    pub colors: usize,
    pub shapes: usize,
    /// Gaussian feature noise.
    pub noise: f64,
    pub train_size: usize,
    pub val_size: usize,
    pub test_size: usize,
    pub seed: u64,
}

impl Default for ToyTaskSpec {
    fn default() -> Self {
        ToyTaskSpec {
            slots: 6,
            colors: 5,
            shapes: 4,
            noise: 0.05,
            train_size: 512,
            val_size: 64,
            test_size: 64,
            seed: 7,
        }
    }
}

impl ToyTaskSpec {
    pub fn feature_dim(&self) -> usize {
        self.colors + self.shapes + self.slots
    }

    /// Distinct caption words the generator can emit, reserved ids included.
    pub fn vocab_size(&self) -> usize {
        self.colors + self.shapes + TEMPLATE_WORDS.len() + 4
    }

    pub fn validate(&self) -> Result<()> {
        if self.slots == 0
            || self.colors == 0
            || self.colors > COLOR_WORDS.len()
            || self.shapes == 0
            || self.shapes > SHAPE_WORDS.len()
        {
            return Err(Error::Config(format!(
                "toy spec out of range: slots {}, colors {} (≤{}), shapes {} (≤{})",
                self.slots,
                self.colors,
                COLOR_WORDS.len(),
                self.shapes,
                SHAPE_WORDS.len()
            )));
        }
        if self.noise < 0.0 {
            return Err(Error::Config("toy noise must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ToyDataset {
    pub train: Vec<RawExample>,
    pub val: Vec<RawExample>,
    pub test: Vec<RawExample>,
}

/// Generate all three splits. Everything — attribute draws, noise,
/// region shuffling, split membership — derives from (spec, seed), and
/// attribute tuples never repeat across splits.
pub fn gen_toy_dataset(spec: &ToyTaskSpec) -> Result<ToyDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut seen: HashSet<Vec<(usize, usize)>> = HashSet::new();
    let noise = if spec.noise > 0.0 {
        Some(Normal::new(0.0, spec.noise).map_err(|e| Error::Config(e.to_string()))?)
    } else {
        None
    };

    let mut gen_split = |name: &str, size: usize| -> Vec<RawExample> {
        (0..size)
            .map(|i| {
                // rejection-sample an unseen attribute assignment
                let attrs: Vec<(usize, usize)> = loop {
                    let candidate: Vec<(usize, usize)> = (0..spec.slots)
                        .map(|_| {
                            (rng.gen_range(0..spec.colors), rng.gen_range(0..spec.shapes))
                        })
                        .collect();
                    if seen.insert(candidate.clone()) {
                        break candidate;
                    }
                };

                let dim = spec.feature_dim();
                let mut regions = Tensor::zeros(vec![spec.slots, dim]);
                for (slot, &(color, shape)) in attrs.iter().enumerate() {
                    let row = slot * dim;
                    regions.data[row + color] = 1.0;
                    regions.data[row + spec.colors + shape] = 1.0;
                    regions.data[row + spec.colors + spec.shapes + slot] = 1.0;
                }
                if let Some(n) = &noise {
                    for v in &mut regions.data {
                        *v += n.sample(&mut rng);
                    }
                }
                // store at file precision so memory and disk agree bit-for-bit
                for v in &mut regions.data {
                    *v = *v as f32 as f64;
                }

                // present regions in shuffled order; the slot marker carries identity
                let mut order: Vec<usize> = (0..spec.slots).collect();
                order.shuffle(&mut rng);
                let mut shuffled = Tensor::zeros(vec![spec.slots, dim]);
                for (new_row, &old_row) in order.iter().enumerate() {
                    shuffled.data[new_row * dim..(new_row + 1) * dim]
                        .copy_from_slice(&regions.data[old_row * dim..(old_row + 1) * dim]);
                }

                let mut caption = Vec::with_capacity(3 * spec.slots);
                for &(color, shape) in &attrs {
                    caption.push(TEMPLATE_WORDS[0].to_string());
                    caption.push(COLOR_WORDS[color].to_string());
                    caption.push(SHAPE_WORDS[shape].to_string());
                }

                RawExample {
                    id: format!("{name}_{i:06}"),
                    regions: shuffled,
                    caption,
                }
            })
            .collect()
    };

    let train = gen_split("train", spec.train_size);
    let val = gen_split("val", spec.val_size);
    let test = gen_split("test", spec.test_size);
    Ok(ToyDataset { train, val, test })
}
