//! Utterances, datasets, annotator-vote resolution and duration-budget
//! subsetting.

mod features;
mod manifest;
pub mod synth;

use std::collections::HashSet;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::labels::SentimentLabel;
use crate::numkernel::Tensor;
use crate::pseudolab::{TokenSequence, TokenSource};

pub use features::{read_embeddings, read_frames, write_embeddings, write_frames};
pub use manifest::{load_manifest, manifest_to_string, save_manifest};
pub use synth::{generate_synthetic_corpus, SynthSpec};

/// Majority label of three annotations, `None` on a 3-way disagreement.
pub fn majority_vote(labels: [SentimentLabel; 3]) -> Option<SentimentLabel> {
    let [a, b, c] = labels;
    if a == b || a == c {
        Some(a)
    } else if b == c {
        Some(b)
    } else {
        None
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub duration_seconds: f64,
    /// Feature file, relative to the dataset root.
    pub features: Option<PathBuf>,
    pub tokens_gt: TokenSequence,
    pub tokens_asr: Option<TokenSequence>,
    /// `None` for utterances without human annotation.
    pub annotator_labels: Option<[SentimentLabel; 3]>,
    pub gold: Option<SentimentLabel>,
}

impl Utterance {
    pub fn labeled(id: &str, duration_seconds: f64, tokens_gt: TokenSequence, labels: [SentimentLabel; 3]) -> Self {
        Utterance {
            id: id.to_string(),
            duration_seconds,
            features: None,
            tokens_gt,
            tokens_asr: None,
            annotator_labels: Some(labels),
            gold: majority_vote(labels),
        }
    }

    pub fn tokens(&self, source: TokenSource) -> Result<&TokenSequence> {
        match source {
            TokenSource::Gt => Ok(&self.tokens_gt),
            TokenSource::Asr => self
                .tokens_asr
                .as_ref()
                .ok_or_else(|| Error::Data(format!("utterance `{}` has no ASR tokens", self.id))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Discard {
    pub id: String,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    /// Directory that relative feature paths resolve against.
    pub root: PathBuf,
    pub utterances: Vec<Utterance>,
    /// Utterances dropped for a 3-way annotator disagreement.
    pub discarded: Vec<Discard>,
}

impl Dataset {
    pub fn new(name: &str, utterances: Vec<Utterance>) -> Self {
        Dataset {
            name: name.to_string(),
            root: PathBuf::from("."),
            utterances,
            discarded: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn total_hours(&self) -> f64 {
        self.utterances.iter().map(|u| u.duration_seconds).sum::<f64>() / 3600.0
    }

    pub fn ids(&self) -> Vec<&str> {
        self.utterances.iter().map(|u| u.id.as_str()).collect()
    }

    pub fn validate_unique_ids(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for u in &self.utterances {
            if !seen.insert(u.id.as_str()) {
                return Err(Error::Data(format!("duplicate id `{}` in {}", u.id, self.name)));
            }
        }
        Ok(())
    }

    /// Loads the utterance's feature matrix, widened to f64.
    pub fn load_frames(&self, utt: &Utterance) -> Result<Tensor> {
        let rel = utt
            .features
            .as_ref()
            .ok_or_else(|| Error::Data(format!("utterance `{}` has no feature file", utt.id)))?;
        read_frames(&self.root.join(rel))
    }

    /// Concatenation; ids must stay unique.
    pub fn concat(name: &str, parts: &[&Dataset]) -> Result<Dataset> {
        let mut utterances = Vec::new();
        for p in parts {
            for u in &p.utterances {
                let mut u = u.clone();
                if let Some(f) = &u.features {
                    u.features = Some(p.root.join(f));
                }
                utterances.push(u);
            }
        }
        let d = Dataset {
            name: name.to_string(),
            root: PathBuf::new(),
            utterances,
            discarded: Vec::new(),
        };
        d.validate_unique_ids()?;
        Ok(d)
    }
}

/// Seeded shuffle, then the longest prefix whose cumulative duration stays
/// within `hours_budget` (at least one utterance). Equal seeds give nested
/// subsets for growing budgets.
pub fn subset_by_hours(dataset: &Dataset, hours_budget: f64, seed: u64) -> Result<Dataset> {
    if dataset.is_empty() {
        return Err(Error::Data(format!("cannot subset empty dataset `{}`", dataset.name)));
    }
    if !(hours_budget > 0.0) {
        return Err(Error::Config(format!("hour budget must be > 0, got {hours_budget}")));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let budget = hours_budget * 3600.0;
    let mut total = 0.0;
    let mut picked = Vec::new();
    for i in order {
        let d = dataset.utterances[i].duration_seconds;
        if !picked.is_empty() && total + d > budget {
            break;
        }
        total += d;
        picked.push(dataset.utterances[i].clone());
    }
    Ok(Dataset {
        name: format!("{}[{:.4}h]", dataset.name, hours_budget),
        root: dataset.root.clone(),
        utterances: picked,
        discarded: Vec::new(),
    })
}

/// [`subset_by_hours`] with the budget given as a fraction of total hours.
pub fn subset_by_fraction(dataset: &Dataset, fraction: f64, seed: u64) -> Result<Dataset> {
    if !(fraction > 0.0) {
        return Err(Error::Config(format!("budget fraction must be > 0, got {fraction}")));
    }
    // Guard against rounding just below the full total.
    let hours = if fraction >= 1.0 {
        dataset.total_hours() * fraction + 1e-9
    } else {
        dataset.total_hours() * fraction
    };
    subset_by_hours(dataset, hours, seed)
}
