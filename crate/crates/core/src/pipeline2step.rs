//! Transcript-based classifiers: a token model trained from scratch (θs) and
//! a model over precomputed contextual token embeddings (θb). Both reuse the
//! E2E classifier body and the trainer's SGD loop.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::labels::SentimentLabel;
use crate::model::{build_classifier, ClassifierConfig, Front, SentimentClassifier, StageTag};
use crate::numkernel::Tensor;
use crate::pseudolab::{TokenSource, MAX_TOKENS};
use crate::trainer::{run_stage, Example, Features, TrainingLog, TrainingPlan, WeightScheme};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
const VOCAB_META_KEY: &str = "vocab";

/// Token → index map. Index 0 is padding, 1 is unknown, known tokens follow
/// in sorted order.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let set: BTreeSet<String> = tokens.into_iter().map(|t| t.as_ref().to_string()).collect();
        if set.is_empty() {
            return Err(Error::Data("vocabulary would be empty".into()));
        }
        let tokens: Vec<String> = set.into_iter().collect();
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i + 2)).collect();
        Ok(Vocabulary { tokens, index })
    }

    pub fn build(dataset: &Dataset, source: TokenSource) -> Result<Self> {
        let mut all = Vec::new();
        for u in &dataset.utterances {
            all.extend(u.tokens(source)?.tokens().iter().cloned());
        }
        Self::from_tokens(all)
    }

    /// Including the two reserved indices.
    pub fn len(&self) -> usize {
        self.tokens.len() + 2
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn get(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    /// Truncated to [`MAX_TOKENS`]; an empty transcript becomes `[PAD]`.
    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        let ids: Vec<usize> = tokens.iter().take(MAX_TOKENS).map(|t| self.get(t)).collect();
        if ids.is_empty() {
            vec![PAD]
        } else {
            ids
        }
    }

    fn to_meta(&self) -> String {
        self.tokens.join("\n")
    }

    /// The vocabulary stored with a θs model.
    pub fn from_model(model: &SentimentClassifier) -> Result<Self> {
        let raw = model
            .meta
            .get(VOCAB_META_KEY)
            .ok_or_else(|| Error::Stage("model carries no vocabulary".into()))?;
        Self::from_tokens(raw.split('\n'))
    }
}

/// Body dimensions for the text classifiers.
#[derive(Debug, Clone, PartialEq)]
pub struct TextConfig {
    pub embedding_dim: usize,
    pub blstm_hidden: usize,
    pub blstm_layers: usize,
    pub attention_dim: usize,
    pub seed: u64,
}

impl TextConfig {
    /// 200-d embeddings, 2×BLSTM(128).
    pub fn token_baseline(seed: u64) -> Self {
        TextConfig { embedding_dim: 200, blstm_hidden: 128, blstm_layers: 2, attention_dim: 32, seed }
    }

    /// 3×BLSTM(128) over the ingested embeddings.
    pub fn contextual(seed: u64) -> Self {
        TextConfig { embedding_dim: 0, blstm_hidden: 128, blstm_layers: 3, attention_dim: 32, seed }
    }
}

/// Baseline plan: inverse-frequency weighted cross-entropy.
pub fn token_baseline_plan(seed: u64) -> TrainingPlan {
    TrainingPlan {
        class_weights: WeightScheme::InverseFrequency,
        ..TrainingPlan::new(crate::trainer::StageKind::Baseline, seed)
    }
}

/// Contextual plan: unweighted cross-entropy.
pub fn contextual_plan(seed: u64) -> TrainingPlan {
    TrainingPlan::new(crate::trainer::StageKind::Baseline, seed)
}

fn gold(u: &crate::data::Utterance) -> Result<usize> {
    u.gold
        .map(SentimentLabel::index)
        .ok_or_else(|| Error::Data(format!("utterance `{}` has no gold label", u.id)))
}

pub fn token_examples(dataset: &Dataset, source: TokenSource, vocab: &Vocabulary) -> Result<Vec<Example>> {
    dataset
        .utterances
        .iter()
        .map(|u| {
            Ok(Example {
                id: u.id.clone(),
                features: Features::Tokens(vocab.encode(u.tokens(source)?.tokens())),
                target: gold(u)?,
            })
        })
        .collect()
}

/// Pairs each utterance with its `L×E` embedding, checking `L` against the
/// truncated token count.
pub fn contextual_examples(
    dataset: &Dataset,
    source: TokenSource,
    embeddings: &BTreeMap<String, Tensor>,
) -> Result<Vec<Example>> {
    dataset
        .utterances
        .iter()
        .map(|u| {
            let z = embeddings
                .get(&u.id)
                .ok_or_else(|| Error::Data(format!("no contextual embedding for utterance `{}`", u.id)))?;
            let z = truncate_rows(z);
            let l = u.tokens(source)?.len();
            if z.rows() != l {
                return Err(Error::Data(format!(
                    "utterance `{}`: embedding has {} rows but {l} tokens",
                    u.id,
                    z.rows()
                )));
            }
            Ok(Example { id: u.id.clone(), features: Features::Frames(z), target: gold(u)? })
        })
        .collect()
}

fn truncate_rows(z: &Tensor) -> Tensor {
    if z.rows() <= MAX_TOKENS {
        return z.clone();
    }
    let cols = z.cols();
    Tensor::from_vec(&[MAX_TOKENS, cols], z.data()[..MAX_TOKENS * cols].to_vec()).expect("consistent shape")
}

fn require_nonempty(train: &[Example]) -> Result<()> {
    if train.is_empty() {
        Err(Error::Data("empty training set".into()))
    } else {
        Ok(())
    }
}

/// Learns token embeddings jointly with the BLSTM body and head (θs).
pub fn train_text_baseline(
    train: &Dataset,
    validation: Option<&Dataset>,
    source: TokenSource,
    config: &TextConfig,
    plan: &TrainingPlan,
) -> Result<(SentimentClassifier, TrainingLog)> {
    if train.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }
    let vocab = Vocabulary::build(train, source)?;
    let examples = token_examples(train, source, &vocab)?;
    let val = validation.map(|v| token_examples(v, source, &vocab)).transpose()?;
    let mut model = build_classifier(ClassifierConfig {
        front: Front::Embedding,
        input_dim: vocab.len(),
        fc_dim: config.embedding_dim,
        blstm_hidden: config.blstm_hidden,
        blstm_layers: config.blstm_layers,
        attention_dim: config.attention_dim,
        num_classes: 3,
        seed: config.seed,
    })?;
    model.meta.insert(VOCAB_META_KEY.into(), vocab.to_meta());
    model.meta.insert("token_source".into(), source.as_str().into());
    let log = run_stage(&mut model, &examples, val.as_deref(), plan, StageTag::TextBaseline, None)?;
    Ok((model, log))
}

/// Classifier over ingested contextual embeddings (θb).
pub fn train_text_contextual(
    train: &Dataset,
    embeddings: &BTreeMap<String, Tensor>,
    validation: Option<(&Dataset, &BTreeMap<String, Tensor>)>,
    source: TokenSource,
    config: &TextConfig,
    plan: &TrainingPlan,
) -> Result<(SentimentClassifier, TrainingLog)> {
    let examples = contextual_examples(train, source, embeddings)?;
    require_nonempty(&examples)?;
    let val = validation
        .map(|(ds, emb)| contextual_examples(ds, source, emb))
        .transpose()?;
    let Features::Frames(first) = &examples[0].features else {
        unreachable!("contextual examples carry matrices")
    };
    let mut model = build_classifier(ClassifierConfig {
        front: Front::Direct,
        input_dim: first.cols(),
        fc_dim: 0,
        blstm_hidden: config.blstm_hidden,
        blstm_layers: config.blstm_layers,
        attention_dim: config.attention_dim,
        num_classes: 3,
        seed: config.seed,
    })?;
    model.meta.insert("token_source".into(), source.as_str().into());
    let log = run_stage(&mut model, &examples, val.as_deref(), plan, StageTag::TextContextual, None)?;
    Ok((model, log))
}

pub enum TextInput<'a> {
    Tokens(&'a [String], &'a Vocabulary),
    Contextual(&'a Tensor),
}

/// Argmax label and 3-class posteriors for a θs or θb model.
pub fn classify_text(model: &SentimentClassifier, input: TextInput<'_>) -> Result<(SentimentLabel, Vec<f64>)> {
    let posteriors = match (model.stage(), input) {
        (StageTag::TextBaseline, TextInput::Tokens(tokens, vocab)) => {
            model.posteriors(crate::model::Input::Tokens(&vocab.encode(tokens)))?
        }
        (StageTag::TextContextual, TextInput::Contextual(z)) => {
            model.posteriors(crate::model::Input::Frames(&truncate_rows(z)))?
        }
        (stage, _) => {
            return Err(Error::Stage(format!(
                "text classification needs a theta_s model with tokens or a theta_b model with embeddings, got {stage}"
            )))
        }
    };
    let label = SentimentLabel::from_index(crate::trainer::argmax(&posteriors)).expect("3-class posteriors");
    Ok((label, posteriors))
}
