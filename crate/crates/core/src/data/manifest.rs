//! JSON-lines manifest: one object per utterance with `id`,
//! `duration_seconds`, `features`, `tokens_gt`, optional `tokens_asr` and
//! `labels` (three of Negative/Neutral/Positive; absent or empty for
//! unannotated audio). `gold` is written for resolved utterances and checked
//! on load.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{majority_vote, Dataset, Discard, Utterance};
use crate::error::{Error, Result};
use crate::labels::SentimentLabel;
use crate::pseudolab::{TokenSequence, TokenSource};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Row {
    id: String,
    duration_seconds: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    features: Option<String>,
    tokens_gt: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tokens_asr: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    labels: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gold: Option<String>,
}

/// Reads a manifest, resolving gold labels by majority vote. 3-way
/// disagreements are moved to [`Dataset::discarded`].
pub fn load_manifest(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let mut utterances = Vec::new();
    let mut discarded = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let err = |msg: String| Error::parse(path, line, msg);
        let row: Row = serde_json::from_str(raw).map_err(|e| err(e.to_string()))?;
        if row.id.is_empty() {
            return Err(err("empty id".into()));
        }
        if let Some(first) = seen.insert(row.id.clone(), line) {
            return Err(err(format!("duplicate id `{}` (first on line {first})", row.id)));
        }
        if !(row.duration_seconds.is_finite() && row.duration_seconds > 0.0) {
            return Err(err(format!("duration_seconds must be > 0, got {}", row.duration_seconds)));
        }
        let annotator_labels = match row.labels.len() {
            0 => None,
            3 => {
                let mut out = [SentimentLabel::Neutral; 3];
                for (slot, s) in out.iter_mut().zip(&row.labels) {
                    *slot = s.parse().map_err(|_| err(format!("unparseable label `{s}`")))?;
                }
                Some(out)
            }
            n => return Err(err(format!("expected 3 annotator labels, got {n}"))),
        };
        let gold = annotator_labels.and_then(majority_vote);
        if let Some(g) = &row.gold {
            let stated: SentimentLabel = g.parse().map_err(|_| err(format!("unparseable gold `{g}`")))?;
            if Some(stated) != gold {
                return Err(err(format!("gold `{g}` disagrees with annotator majority")));
            }
        }
        if annotator_labels.is_some() && gold.is_none() {
            discarded.push(Discard { id: row.id, line });
            continue;
        }
        utterances.push(Utterance {
            id: row.id,
            duration_seconds: row.duration_seconds,
            features: row.features.map(PathBuf::from),
            tokens_gt: TokenSequence::new(row.tokens_gt, TokenSource::Gt),
            tokens_asr: row.tokens_asr.map(|t| TokenSequence::new(t, TokenSource::Asr)),
            annotator_labels,
            gold,
        });
    }

    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(Dataset {
        name,
        root: path.parent().map(Path::to_path_buf).unwrap_or_default(),
        utterances,
        discarded,
    })
}

pub fn manifest_to_string(dataset: &Dataset) -> String {
    let mut out = String::new();
    for u in &dataset.utterances {
        let row = Row {
            id: u.id.clone(),
            duration_seconds: u.duration_seconds,
            features: u.features.as_ref().map(|p| p.to_string_lossy().into_owned()),
            tokens_gt: u.tokens_gt.tokens().to_vec(),
            tokens_asr: u.tokens_asr.as_ref().map(|t| t.tokens().to_vec()),
            labels: u
                .annotator_labels
                .map(|ls| ls.iter().map(|l| l.as_str().to_string()).collect())
                .unwrap_or_default(),
            gold: u.gold.map(|g| g.as_str().to_string()),
        };
        out.push_str(&serde_json::to_string(&row).expect("serializable row"));
        out.push('\n');
    }
    out
}

pub fn save_manifest(dataset: &Dataset, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
    }
    fs::write(path, manifest_to_string(dataset)).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}
