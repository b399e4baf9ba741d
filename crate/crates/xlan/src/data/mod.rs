//! Datasets on disk and in memory: the toy generator, vocabulary,
//! region-feature files, and split loading.
//!
//! On-disk layout produced by `gen-data` and consumed by `train`/`eval`:
//!   <dir>/features/<id>.xlrf     one region file per example
//!   <dir>/<split>.manifest       id → feature file
//!   <dir>/<split>.captions       id<TAB>space-separated caption
//! for split ∈ {train, val, test}.

pub mod features;
pub mod toy;
pub mod vocab;

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use std::fs;
use std::path::Path;

/// An example as generated or loaded: regions plus caption words.
#[derive(Debug, Clone)]
pub struct RawExample {
    pub id: String,
    pub regions: Tensor,
    pub caption: Vec<String>,
}

/// A tokenized example ready for training.
#[derive(Debug, Clone)]
pub struct Example {
    pub id: String,
    pub regions: Tensor,
    pub caption: Vec<String>,
    pub tokens: Vec<usize>,
}

pub fn tokenize(examples: &[RawExample], vocab: &vocab::Vocabulary) -> Vec<Example> {
    examples
        .iter()
        .map(|e| Example {
            id: e.id.clone(),
            regions: e.regions.clone(),
            caption: e.caption.clone(),
            tokens: vocab.encode_all(&e.caption),
        })
        .collect()
}

pub const SPLITS: [&str; 3] = ["train", "val", "test"];

/// Write one split: feature files, manifest, captions.
pub fn write_split(dir: &Path, split: &str, examples: &[RawExample]) -> Result<()> {
    let feat_dir = dir.join("features");
    fs::create_dir_all(&feat_dir)?;
    let mut manifest = Vec::with_capacity(examples.len());
    let mut captions = String::new();
    for e in examples {
        let rel = format!("features/{}.xlrf", e.id);
        features::write_region_file(&dir.join(&rel), &e.regions)?;
        manifest.push((e.id.clone(), rel));
        captions.push_str(&e.id);
        captions.push('\t');
        captions.push_str(&e.caption.join(" "));
        captions.push('\n');
    }
    features::write_manifest(&dir.join(format!("{split}.manifest")), &manifest)?;
    fs::write(dir.join(format!("{split}.captions")), captions)?;
    Ok(())
}

/// Load one split back from disk, in manifest order.
pub fn load_split(dir: &Path, split: &str) -> Result<Vec<RawExample>> {
    let manifest = features::read_manifest(&dir.join(format!("{split}.manifest")))?;
    let caption_path = dir.join(format!("{split}.captions"));
    let text = fs::read_to_string(&caption_path)?;
    let mut captions = std::collections::BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (id, sentence) = line.split_once('\t').ok_or_else(|| {
            Error::Format(format!(
                "{}:{}: expected id<TAB>caption",
                caption_path.display(),
                lineno + 1
            ))
        })?;
        captions.insert(
            id.to_string(),
            sentence.split_whitespace().map(str::to_string).collect::<Vec<_>>(),
        );
    }
    manifest
        .into_iter()
        .map(|(id, rel)| {
            let regions = features::read_region_file(&dir.join(&rel))?;
            let caption = captions
                .get(&id)
                .cloned()
                .ok_or_else(|| Error::Format(format!("no caption for id {id:?}")))?;
            Ok(RawExample { id, regions, caption })
        })
        .collect()
}
