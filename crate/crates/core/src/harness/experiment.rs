//! In-memory orchestration shared by `run`, `sweep` and the acceptance suite:
//! baseline, pretrain and fine-tune with one set of plans, and the
//! annotation-budget sweep.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use super::config::Config;
use crate::data::synth::{SyntheticCorpus, SynthUtterance};
use crate::data::{subset_by_fraction, Dataset};
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::model::{build_classifier, ClassifierConfig, SentimentClassifier};
use crate::pseudolab::{pseudo_label, NgramLabeler, TokenSource};
use crate::trainer::{
    evaluate, finetune, pretrain_pseudo, train_baseline, Example, Features, PseudoSource, StageKind,
    TokenSourceName, TrainingLog, TrainingPlan, WeightScheme,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelDims {
    pub fc_dim: usize,
    pub blstm_hidden: usize,
    pub attention_dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub dims: ModelDims,
    pub baseline: TrainingPlan,
    pub pretrain: TrainingPlan,
    pub finetune: TrainingPlan,
    pub seed: u64,
}

fn parse_weights(raw: &str) -> Result<WeightScheme> {
    match raw {
        "uniform" => Ok(WeightScheme::Uniform),
        "inverse_frequency" => Ok(WeightScheme::InverseFrequency),
        list => list
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map(WeightScheme::Explicit)
            .map_err(|_| Error::Config(format!("unrecognized class weights `{raw}`"))),
    }
}

fn plan_from(config: &Config, section: &str, stage: StageKind, seed: u64) -> Result<TrainingPlan> {
    let key = |k: &str| format!("{section}.{k}");
    let mut plan = TrainingPlan::new(stage, seed);
    plan.epochs = config.get(&key("epochs"))?;
    plan.lr = config.get(&key("lr"))?;
    plan.lr_decay = config.get(&key("lr_decay"))?;
    plan.lr_patience = config.get(&key("lr_patience"))?;
    plan.early_stop_patience = config.get(&key("early_stop_patience"))?;
    plan.clip = config.get(&key("clip"))?;
    if stage != StageKind::PseudoPretrain {
        plan.class_weights = parse_weights(config.raw(&key("class_weights")))?;
    }
    plan.validate().or_else(|e| match (stage, &e) {
        // the pseudo source is filled in by the caller
        (StageKind::PseudoPretrain, Error::Config(m)) if m.contains("pseudo-label source") => Ok(()),
        _ => Err(e),
    })?;
    Ok(plan)
}

impl Experiment {
    /// Settings used for the synthetic reference benchmark.
    pub fn reference(seed: u64) -> Self {
        let mut c = Config::default();
        for (k, v) in [("model.fc_dim", "16"), ("model.blstm_hidden", "16"), ("model.attention_dim", "16")] {
            c.set(k, v).expect("known key");
        }
        c.set("run.seed", &seed.to_string()).expect("known key");
        Self::from_config(&c).expect("reference settings are valid")
    }

    pub fn from_config(config: &Config) -> Result<Self> {
        let seed: u64 = config.get("run.seed")?;
        let dims = ModelDims {
            fc_dim: config.get("model.fc_dim")?,
            blstm_hidden: config.get("model.blstm_hidden")?,
            attention_dim: config.get("model.attention_dim")?,
        };
        let mut pretrain = plan_from(config, "pretrain", StageKind::PseudoPretrain, seed)?;
        let tokens: TokenSource = config.raw("labeler.tokens").parse()?;
        pretrain.pseudo_source = match config.raw("labeler.source") {
            "builtin" => PseudoSource::Builtin(tokens.into()),
            "external" => PseudoSource::External(config.raw("data.pseudo_labels").to_string()),
            other => return Err(Error::Config(format!("labeler.source must be builtin or external, got `{other}`"))),
        };
        Ok(Experiment {
            dims,
            baseline: plan_from(config, "baseline", StageKind::Baseline, seed)?,
            pretrain,
            finetune: plan_from(config, "finetune", StageKind::FineTune, seed)?,
            seed,
        })
    }

    pub fn classifier_config(&self, input_dim: usize, num_classes: usize) -> ClassifierConfig {
        ClassifierConfig {
            fc_dim: self.dims.fc_dim,
            blstm_hidden: self.dims.blstm_hidden,
            attention_dim: self.dims.attention_dim,
            ..ClassifierConfig::e2e(input_dim, num_classes, self.seed)
        }
    }

    pub fn run_baseline(&self, train: &[Example], val: &[Example]) -> Result<(SentimentClassifier, TrainingLog)> {
        let mut model = build_classifier(self.classifier_config(input_dim(train)?, 3))?;
        let log = train_baseline(&mut model, train, val, &self.baseline)?;
        Ok((model, log))
    }

    pub fn run_pretrain(&self, pretrain: &[Example]) -> Result<(SentimentClassifier, TrainingLog)> {
        let mut model = build_classifier(self.classifier_config(input_dim(pretrain)?, 2))?;
        let log = pretrain_pseudo(&mut model, pretrain, None, &self.pretrain)?;
        Ok((model, log))
    }

    pub fn run_finetune(
        &self,
        pretrained: &SentimentClassifier,
        train: &[Example],
        val: &[Example],
    ) -> Result<(SentimentClassifier, TrainingLog)> {
        finetune(pretrained, train, val, &self.finetune)
    }
}

fn input_dim(examples: &[Example]) -> Result<usize> {
    match examples.first().map(|e| &e.features) {
        Some(Features::Frames(m)) => Ok(m.cols()),
        Some(Features::Tokens(_)) => Err(Error::Config("speech classifier needs frame features".into())),
        None => Err(Error::Data("empty training set".into())),
    }
}

/// Labeled splits plus the pretraining pool.
#[derive(Debug, Clone)]
pub struct SplitData {
    /// Source of utterance durations for hour budgets.
    pub train_dataset: Dataset,
    pub train: Vec<Example>,
    pub val: Vec<Example>,
    pub eval: Vec<Example>,
    pub pretrain: Vec<Example>,
}

impl SplitData {
    /// Refuses to proceed when an evaluation id also appears in any split
    /// that is trained or selected on.
    pub fn check_roles(&self) -> Result<()> {
        let eval: HashSet<&str> = self.eval.iter().map(|e| e.id.as_str()).collect();
        for (role, set) in [("train", &self.train), ("val", &self.val), ("pretrain", &self.pretrain)] {
            if let Some(e) = set.iter().find(|e| eval.contains(e.id.as_str())) {
                return Err(Error::Config(format!("evaluation utterance `{}` also in {role} split", e.id)));
            }
        }
        Ok(())
    }
}

fn gold_example(s: &SynthUtterance) -> Option<Example> {
    s.utterance.gold.map(|g| Example {
        id: s.utterance.id.clone(),
        features: Features::Frames(s.frames.clone()),
        target: g.index(),
    })
}

/// Splits of an in-memory synthetic corpus. The pretraining pool is the
/// unlabeled audio plus the training audio, labeled by `labeler`.
pub fn synthetic_splits(corpus: &SyntheticCorpus, labeler: &NgramLabeler, tokens: TokenSource) -> Result<SplitData> {
    let mut pretrain = Vec::with_capacity(corpus.unlabeled.len() + corpus.train.len());
    for s in corpus.unlabeled.iter().chain(&corpus.train) {
        pretrain.push(Example {
            id: s.utterance.id.clone(),
            features: Features::Frames(s.frames.clone()),
            target: pseudo_label(labeler, s.utterance.tokens(tokens)?).label.index(),
        });
    }
    let data = SplitData {
        train_dataset: SyntheticCorpus::dataset("train", &corpus.train, std::path::Path::new("")),
        train: corpus.train.iter().filter_map(gold_example).collect(),
        val: corpus.val.iter().filter_map(gold_example).collect(),
        eval: corpus.eval.iter().filter_map(gold_example).collect(),
        pretrain,
    };
    data.check_roles()?;
    Ok(data)
}

/// The training examples inside a seeded hour budget, in subset order.
pub fn budget_examples(data: &SplitData, fraction: f64, seed: u64) -> Result<(Vec<Example>, f64)> {
    let subset = subset_by_fraction(&data.train_dataset, fraction, seed)?;
    let by_id: BTreeMap<&str, &Example> = data.train.iter().map(|e| (e.id.as_str(), e)).collect();
    let examples = subset
        .utterances
        .iter()
        .map(|u| {
            by_id
                .get(u.id.as_str())
                .map(|e| (*e).clone())
                .ok_or_else(|| Error::Data(format!("no training example for `{}`", u.id)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((examples, subset.total_hours()))
}

pub fn check_budgets(budgets: &[f64]) -> Result<()> {
    if budgets.is_empty() {
        return Err(Error::Config("sweep needs at least one budget".into()));
    }
    if budgets.iter().any(|b| !(*b > 0.0 && *b <= 1.0)) {
        return Err(Error::Config(format!("budgets must be fractions in (0, 1]: {budgets:?}")));
    }
    if budgets.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config(format!("budgets must be strictly increasing: {budgets:?}")));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub fraction: f64,
    pub hours: f64,
    pub utterances: usize,
    pub baseline: MetricsReport,
    pub semisup: MetricsReport,
}

#[derive(Debug, Clone)]
pub struct SweepCurve {
    pub rows: Vec<SweepRow>,
}

impl SweepCurve {
    /// Unweighted F1 of the baseline at the largest budget.
    pub fn full_baseline_uw_f1(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| r.baseline.unweighted.f1)
    }

    /// Smallest budget whose semi-supervised unweighted F1 reaches the
    /// largest-budget baseline.
    pub fn crossover(&self) -> Option<f64> {
        let target = self.full_baseline_uw_f1();
        self.rows.iter().find(|r| r.semisup.unweighted.f1 >= target).map(|r| r.fraction)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "budget_fraction,budget_hours,utterances,baseline_uw_f1,semisup_uw_f1,baseline_w_f1,semisup_w_f1,baseline_w_rec,semisup_w_rec\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{:.4},{},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4}",
                r.fraction,
                r.hours,
                r.utterances,
                r.baseline.unweighted.f1,
                r.semisup.unweighted.f1,
                r.baseline.weighted.f1,
                r.semisup.weighted.f1,
                r.baseline.weighted.recall,
                r.semisup.weighted.recall
            );
        }
        out
    }

    pub fn summary(&self) -> String {
        match self.crossover() {
            Some(c) => format!(
                "full_baseline_uw_f1,{:.4}\ncrossover_fraction,{c}\nannotation_savings,{:.4}\n",
                self.full_baseline_uw_f1(),
                1.0 - c
            ),
            None => format!("full_baseline_uw_f1,{:.4}\ncrossover_fraction,none\nannotation_savings,none\n", self.full_baseline_uw_f1()),
        }
    }
}

/// One point of the budget curve: paired baseline and fine-tuned runs on the
/// same subset, both scored on the evaluation split.
pub fn sweep_point(
    exp: &Experiment,
    data: &SplitData,
    pretrained: &SentimentClassifier,
    fraction: f64,
) -> Result<SweepRow> {
    let (train, hours) = budget_examples(data, fraction, exp.seed)?;
    let (base, _) = exp.run_baseline(&train, &data.val)?;
    let (semi, _) = exp.run_finetune(pretrained, &train, &data.val)?;
    Ok(SweepRow {
        fraction,
        hours,
        utterances: train.len(),
        baseline: evaluate(&base, &data.eval)?,
        semisup: evaluate(&semi, &data.eval)?,
    })
}

/// θp is trained once by the caller and shared by every budget.
pub fn sweep(exp: &Experiment, data: &SplitData, pretrained: &SentimentClassifier, budgets: &[f64]) -> Result<SweepCurve> {
    check_budgets(budgets)?;
    let rows = budgets
        .iter()
        .map(|&b| sweep_point(exp, data, pretrained, b))
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepCurve { rows })
}

impl From<TokenSourceName> for TokenSource {
    fn from(s: TokenSourceName) -> Self {
        match s {
            TokenSourceName::Gt => TokenSource::Gt,
            TokenSourceName::Asr => TokenSource::Asr,
        }
    }
}
