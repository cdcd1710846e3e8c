//! Training orchestration: supervised baseline, pseudo-label pretraining and
//! head-replaced fine-tuning, all sharing one SGD loop with validation-selected
//! checkpointing.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::{Dataset, Utterance};
use crate::error::{Error, Result};
use crate::labels::{PseudoClass, SentimentLabel};
use crate::metrics::{derive_metrics, ConfusionMatrix, MetricsReport};
use crate::model::{Input, SentimentClassifier, StageTag};
use crate::numkernel::{sgd_step, ClassWeights, Tensor};
use crate::pseudolab::{pseudo_label, NgramLabeler, PseudoLabel, TokenSource};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StageKind {
    Baseline,
    PseudoPretrain,
    FineTune,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PseudoSource {
    None,
    /// The built-in n-gram labeler applied to GT or ASR tokens.
    Builtin(TokenSourceName),
    External(String),
}

/// Serializable mirror of [`TokenSource`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenSourceName {
    Gt,
    Asr,
}

impl From<TokenSource> for TokenSourceName {
    fn from(s: TokenSource) -> Self {
        match s {
            TokenSource::Gt => TokenSourceName::Gt,
            TokenSource::Asr => TokenSourceName::Asr,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightScheme {
    Uniform,
    InverseFrequency,
    Explicit(Vec<f64>),
}

impl WeightScheme {
    pub fn resolve(&self, targets: &[usize], classes: usize) -> Result<ClassWeights> {
        match self {
            WeightScheme::Uniform => Ok(ClassWeights::uniform(classes)),
            WeightScheme::InverseFrequency => {
                let mut counts = vec![0usize; classes];
                for &t in targets {
                    if t >= classes {
                        return Err(Error::ClassIndex { index: t, classes });
                    }
                    counts[t] += 1;
                }
                Ok(ClassWeights::inverse_frequency(&counts))
            }
            WeightScheme::Explicit(w) => {
                if w.len() != classes {
                    return Err(Error::Config(format!("{} class weights for {classes} classes", w.len())));
                }
                ClassWeights::new(w.clone())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainingPlan {
    pub stage: StageKind,
    pub datasets: Vec<String>,
    pub pseudo_source: PseudoSource,
    pub epochs: usize,
    pub lr: f64,
    /// Multiplier applied after `lr_patience` epochs without improvement.
    pub lr_decay: f64,
    pub lr_patience: usize,
    /// Stop after this many epochs without validation improvement.
    pub early_stop_patience: usize,
    pub clip: f64,
    pub seed: u64,
    pub class_weights: WeightScheme,
    /// Seed of the 3-class head attached before fine-tuning.
    pub head_seed: u64,
}

impl TrainingPlan {
    pub fn new(stage: StageKind, seed: u64) -> Self {
        TrainingPlan {
            stage,
            datasets: Vec::new(),
            pseudo_source: PseudoSource::None,
            epochs: 50,
            lr: 0.01,
            lr_decay: 0.5,
            lr_patience: 3,
            early_stop_patience: 10,
            clip: 5.0,
            seed,
            class_weights: WeightScheme::Uniform,
            head_seed: seed.wrapping_add(1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config(format!("lr_decay must be in (0, 1], got {}", self.lr_decay)));
        }
        if self.lr_patience == 0 || self.early_stop_patience == 0 {
            return Err(Error::Config("patience values must be >= 1".into()));
        }
        if !(self.clip > 0.0) {
            return Err(Error::Config(format!("clip must be positive, got {}", self.clip)));
        }
        if self.stage == StageKind::PseudoPretrain && self.pseudo_source == PseudoSource::None {
            return Err(Error::Config("pseudo pretraining needs a pseudo-label source".into()));
        }
        Ok(())
    }
}

/// Owned model input.
#[derive(Debug, Clone, PartialEq)]
pub enum Features {
    Frames(Tensor),
    Tokens(Vec<usize>),
}

impl Features {
    pub fn as_input(&self) -> Input<'_> {
        match self {
            Features::Frames(t) => Input::Frames(t),
            Features::Tokens(ids) => Input::Tokens(ids),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: String,
    pub features: Features,
    pub target: usize,
}

/// Frame examples with gold 3-class targets.
pub fn gold_examples(dataset: &Dataset) -> Result<Vec<Example>> {
    dataset
        .utterances
        .iter()
        .map(|u| {
            let gold = u
                .gold
                .ok_or_else(|| Error::Data(format!("utterance `{}` has no gold label", u.id)))?;
            Ok(Example { id: u.id.clone(), features: Features::Frames(dataset.load_frames(u)?), target: gold.index() })
        })
        .collect()
}

/// Frame examples with binary pseudo targets. Gold labels are never read.
pub fn pseudo_examples(dataset: &Dataset, labels: &BTreeMap<String, PseudoLabel>) -> Result<Vec<Example>> {
    dataset
        .utterances
        .iter()
        .map(|u| {
            let l = labels
                .get(&u.id)
                .ok_or_else(|| Error::Data(format!("no pseudo label for utterance `{}`", u.id)))?;
            Ok(Example { id: u.id.clone(), features: Features::Frames(dataset.load_frames(u)?), target: l.label.index() })
        })
        .collect()
}

/// Labels every utterance from its GT or ASR transcript.
pub fn builtin_pseudo_labels(
    dataset: &Dataset,
    labeler: &NgramLabeler,
    source: TokenSource,
) -> Result<BTreeMap<String, PseudoLabel>> {
    dataset
        .utterances
        .iter()
        .map(|u: &Utterance| Ok((u.id.clone(), pseudo_label(labeler, u.tokens(source)?))))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub validation: Option<MetricsReport>,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Lineage {
    pub seed: u64,
    pub plan: TrainingPlan,
    /// Content hash of the θp model a fine-tuned model started from.
    pub parent_hash: Option<String>,
}

#[derive(Debug, Clone)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub wall_clock_seconds: f64,
    pub final_stage: StageTag,
    pub lineage: Lineage,
}

impl TrainingLog {
    pub fn best(&self) -> &EpochRecord {
        &self.epochs[self.best_epoch - 1]
    }

    /// `epoch,mean_loss,val_uw_f1,val_w_f1,lr`; validation columns are empty
    /// when no validation set was given.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,mean_loss,val_uw_f1,val_w_f1,lr\n");
        for r in &self.epochs {
            let (uw, w) = match &r.validation {
                Some(m) => (m.unweighted.f1.to_string(), m.weighted.f1.to_string()),
                None => (String::new(), String::new()),
            };
            let _ = writeln!(out, "{},{},{uw},{w},{}", r.epoch, r.mean_loss, r.lr);
        }
        out
    }

    /// Run manifest: plan, lineage and hashes of the inputs and output model.
    pub fn run_manifest(&self, inputs: &[(String, String)], model_hash: &str) -> serde_json::Value {
        serde_json::json!({
            "stage": self.final_stage.as_str(),
            "seed": self.lineage.seed,
            "plan": self.lineage.plan,
            "parent_hash": self.lineage.parent_hash,
            "inputs": inputs.iter().map(|(k, v)| serde_json::json!({"name": k, "sha256": v})).collect::<Vec<_>>(),
            "model_sha256": model_hash,
            "best_epoch": self.best_epoch,
            "epochs_run": self.epochs.len(),
        })
    }
}

fn class_names(classes: usize) -> Vec<String> {
    if classes == 2 {
        PseudoClass::class_names()
    } else {
        SentimentLabel::class_names()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub id: String,
    pub gold: usize,
    pub predicted: usize,
    pub posteriors: Vec<f64>,
}

/// Argmax predictions; ties resolve to the lowest class index.
pub fn predict(model: &SentimentClassifier, examples: &[Example]) -> Result<Vec<Prediction>> {
    examples
        .iter()
        .map(|ex| {
            let posteriors = model.posteriors(ex.features.as_input())?;
            let predicted = argmax(&posteriors);
            Ok(Prediction { id: ex.id.clone(), gold: ex.target, predicted, posteriors })
        })
        .collect()
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

pub fn confusion(predictions: &[Prediction], classes: usize) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::new(class_names(classes));
    for p in predictions {
        cm.accumulate_index(p.gold, p.predicted)?;
    }
    Ok(cm)
}

pub fn evaluate(model: &SentimentClassifier, examples: &[Example]) -> Result<MetricsReport> {
    derive_metrics(&confusion(&predict(model, examples)?, model.num_classes())?)
}

fn snapshot(model: &SentimentClassifier) -> Vec<Vec<f64>> {
    model.params().iter().map(|p| p.value.data().to_vec()).collect()
}

fn restore(model: &mut SentimentClassifier, values: &[Vec<f64>]) {
    for (p, v) in model.params_mut().into_iter().zip(values) {
        p.value.data_mut().copy_from_slice(v);
    }
}

/// The shared SGD loop. Selection metric is validation unweighted F1, or
/// negative mean training loss when there is no validation set. The best
/// epoch's parameters are restored before returning.
pub fn fit(
    model: &mut SentimentClassifier,
    train: &[Example],
    validation: Option<&[Example]>,
    plan: &TrainingPlan,
) -> Result<(Vec<EpochRecord>, usize)> {
    plan.validate()?;
    if train.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }
    let classes = model.num_classes();
    let targets: Vec<usize> = train.iter().map(|e| e.target).collect();
    if let Some(&bad) = targets.iter().find(|&&t| t >= classes) {
        return Err(Error::ClassIndex { index: bad, classes });
    }
    let weights = plan.class_weights.resolve(&targets, classes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut lr = plan.lr;
    let mut records = Vec::new();
    let mut best: Option<(f64, usize, Vec<Vec<f64>>)> = None;
    let mut stale = 0;
    model.zero_grads();

    for epoch in 1..=plan.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            let ex = &train[i];
            total += model.accumulate_example(ex.features.as_input(), ex.target, &weights)?;
            sgd_step(&mut model.params_mut(), lr, plan.clip)?;
        }
        let mean_loss = total / train.len() as f64;
        if !mean_loss.is_finite() {
            return Err(Error::NonFinite(format!("mean training loss at epoch {epoch}")));
        }
        let report = validation.map(|v| evaluate(model, v)).transpose()?;
        let score = report.as_ref().map_or(-mean_loss, |m| m.unweighted.f1);
        records.push(EpochRecord { epoch, mean_loss, validation: report, lr });

        if best.as_ref().is_none_or(|(s, _, _)| score > *s) {
            best = Some((score, epoch, snapshot(model)));
            stale = 0;
        } else {
            stale += 1;
            if stale >= plan.early_stop_patience {
                break;
            }
            if stale % plan.lr_patience == 0 {
                lr *= plan.lr_decay;
            }
        }
    }
    let (_, best_epoch, values) = best.expect("at least one epoch");
    restore(model, &values);
    Ok((records, best_epoch))
}

fn require(model: &SentimentClassifier, stage: StageTag, classes: usize, what: &str) -> Result<()> {
    if model.stage() != stage {
        return Err(Error::Stage(format!("{what} needs a {stage} model, got {}", model.stage())));
    }
    if model.num_classes() != classes {
        return Err(Error::Config(format!("{what} needs {classes} classes, model has {}", model.num_classes())));
    }
    Ok(())
}

pub(crate) fn run_stage(
    model: &mut SentimentClassifier,
    train: &[Example],
    validation: Option<&[Example]>,
    plan: &TrainingPlan,
    stage: StageTag,
    parent_hash: Option<String>,
) -> Result<TrainingLog> {
    let start = Instant::now();
    let (epochs, best_epoch) = fit(model, train, validation, plan)?;
    model.advance_stage(stage)?;
    model.meta.insert("train_seed".into(), plan.seed.to_string());
    if let Some(h) = &parent_hash {
        model.meta.insert("parent_sha256".into(), h.clone());
    }
    Ok(TrainingLog {
        epochs,
        best_epoch,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        final_stage: stage,
        lineage: Lineage { seed: plan.seed, plan: plan.clone(), parent_hash },
    })
}

/// Supervised 3-class training of a fresh model on gold labels.
pub fn train_baseline(
    model: &mut SentimentClassifier,
    train: &[Example],
    validation: &[Example],
    plan: &TrainingPlan,
) -> Result<TrainingLog> {
    require(model, StageTag::Fresh, 3, "baseline training")?;
    run_stage(model, train, Some(validation), plan, StageTag::FineTuned, None)
}

/// 2-class training of a fresh model against pseudo labels. `validation`
/// (also pseudo-labeled) is optional.
pub fn pretrain_pseudo(
    model: &mut SentimentClassifier,
    train: &[Example],
    validation: Option<&[Example]>,
    plan: &TrainingPlan,
) -> Result<TrainingLog> {
    require(model, StageTag::Fresh, 2, "pseudo pretraining")?;
    if plan.pseudo_source == PseudoSource::None {
        return Err(Error::Config("pseudo pretraining needs a pseudo-label source".into()));
    }
    run_stage(model, train, validation, plan, StageTag::PseudoPretrained, None)
}

/// Replaces the head of a θp model with a 3-class one seeded by
/// `plan.head_seed`, then trains all parameters on gold labels.
pub fn finetune(
    pretrained: &SentimentClassifier,
    train: &[Example],
    validation: &[Example],
    plan: &TrainingPlan,
) -> Result<(SentimentClassifier, TrainingLog)> {
    if pretrained.stage() != StageTag::PseudoPretrained {
        return Err(Error::Stage(format!("fine-tuning needs a theta_p model, got {}", pretrained.stage())));
    }
    if train.is_empty() {
        return Err(Error::Data("empty fine-tuning set".into()));
    }
    let parent = pretrained.content_hash();
    let mut model = pretrained.replace_output_head(3, plan.head_seed)?;
    let log = run_stage(&mut model, train, Some(validation), plan, StageTag::FineTuned, Some(parent))?;
    Ok((model, log))
}
