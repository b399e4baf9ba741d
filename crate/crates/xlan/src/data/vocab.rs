//! Vocabulary with reserved control tokens and count-threshold pruning.

use std::collections::BTreeMap;

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;

pub const RESERVED: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

/// Bijective token map over the retained words; everything else is UNK.
/// Ordering is deterministic: descending count, then lexicographic.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    token_to_id: BTreeMap<String, usize>,
    id_to_token: Vec<String>,
    pub min_count: usize,
}

impl Vocabulary {
    pub fn size(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn encode(&self, token: &str) -> usize {
        let lower = token.to_lowercase();
        self.token_to_id.get(&lower).copied().unwrap_or(UNK)
    }

    pub fn encode_all(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.encode(t)).collect()
    }

    pub fn decode(&self, id: usize) -> &str {
        self.id_to_token.get(id).map_or("<unk>", String::as_str)
    }

    pub fn decode_all(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| self.decode(i).to_string()).collect()
    }

    /// The id list in order; handy for persistence and debugging.
    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }
}

/// Lowercase the corpus, count occurrences, keep words with
/// count ≥ min_count, and assign ids 4.. by (count desc, token asc).
pub fn build_vocab(corpus: &[Vec<String>], min_count: usize) -> Vocabulary {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for sentence in corpus {
        for token in sentence {
            *counts.entry(token.to_lowercase()).or_insert(0) += 1;
        }
    }
    let mut retained: Vec<(String, usize)> =
        counts.into_iter().filter(|(_, c)| *c >= min_count).collect();
    retained.sort_by(|(ta, ca), (tb, cb)| cb.cmp(ca).then_with(|| ta.cmp(tb)));

    let mut id_to_token: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
    id_to_token.extend(retained.into_iter().map(|(t, _)| t));
    let token_to_id =
        id_to_token.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
    Vocabulary { token_to_id, id_to_token, min_count }
}
