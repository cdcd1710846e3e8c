//! Command implementations behind the `semisent` binary. Each command takes a
//! resolved [`Config`] and writes its artifacts under `run.out`.

pub mod config;
pub mod experiment;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

pub use config::{split_overrides, Config};
pub use experiment::{
    budget_examples, check_budgets, sweep, sweep_point, synthetic_splits, Experiment, ModelDims, SplitData, SweepCurve, SweepRow,
};

use crate::data::synth::{generate_synthetic_corpus, SynthSpec, SynthSummary};
use crate::data::{load_manifest, read_embeddings, save_manifest, Dataset};
use crate::error::{Error, Result};
use crate::metrics::{derive_metrics, ConfusionMatrix, MetricsReport};
use crate::model::{load_model, SentimentClassifier, StageTag};
use crate::numkernel::grad_check;
use crate::numkernel::gradcheck::{
    AffineFragment, AttentionFragment, BlstmFragment, CrossEntropyFragment, GradFragment, LstmFragment,
};
use crate::numkernel::GradCheckReport;
use crate::pipeline2step::{
    contextual_examples, token_examples, train_text_baseline, train_text_contextual, TextConfig, Vocabulary,
};
use crate::pseudolab::{
    evaluate_labeler, load_external_pseudo_labels, load_text_corpus, pseudo_label, pseudo_labels_to_csv,
    train_labeler, LabelerHyper, NgramLabeler, PseudoLabel, TokenSource,
};
use crate::trainer::{
    builtin_pseudo_labels, confusion, gold_examples, predict, pseudo_examples, Example, Prediction, StageKind,
    TrainingLog, TrainingPlan,
};

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// `run.out`, which must be empty or absent unless `run.overwrite` is set.
fn output_dir(config: &Config) -> Result<PathBuf> {
    let out = PathBuf::from(config.raw("run.out"));
    let overwrite: bool = config.get("run.overwrite")?;
    if !overwrite && out.is_dir() {
        let mut entries = fs::read_dir(&out).map_err(|e| Error::io(format!("listing {}", out.display()), e))?;
        if entries.next().is_some() {
            return Err(Error::Config(format!(
                "output directory {} is not empty (set run.overwrite = true)",
                out.display()
            )));
        }
    }
    fs::create_dir_all(&out).map_err(|e| Error::io(format!("creating {}", out.display()), e))?;
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct PrepareReport {
    pub manifest: PathBuf,
    pub kept: usize,
    pub discarded: Vec<String>,
}

/// Validates a manifest, writes the resolved manifest (discards removed) and
/// a discard report into `out`. Feature paths are rewritten relative to the
/// new location only when it differs from the source directory.
pub fn cmd_prepare(manifest: &Path, out: &Path) -> Result<PrepareReport> {
    let mut ds = load_manifest(manifest)?;
    let same_dir = fs::canonicalize(&ds.root).ok() == fs::canonicalize(out).ok();
    if !same_dir {
        let root = fs::canonicalize(&ds.root).map_err(|e| Error::io(format!("resolving {}", ds.root.display()), e))?;
        for u in &mut ds.utterances {
            if let Some(f) = &u.features {
                u.features = Some(root.join(f));
            }
        }
    }
    let target = out.join(format!("{}.jsonl", ds.name));
    save_manifest(&ds, &target)?;
    let mut report = String::from("id,line\n");
    for d in &ds.discarded {
        let _ = writeln!(report, "{},{}", d.id, d.line);
    }
    write(&out.join(format!("{}_discarded.csv", ds.name)), report)?;
    Ok(PrepareReport {
        manifest: target,
        kept: ds.len(),
        discarded: ds.discarded.iter().map(|d| d.id.clone()).collect(),
    })
}

/// `id,gold,predicted,p_<class>...` with full-precision posteriors.
pub fn predictions_to_csv(predictions: &[Prediction], classes: &[String]) -> String {
    let mut out = String::from("id,gold,predicted");
    for c in classes {
        let _ = write!(out, ",p_{c}");
    }
    out.push('\n');
    for p in predictions {
        let _ = write!(out, "{},{},{}", p.id, classes[p.gold], classes[p.predicted]);
        for x in &p.posteriors {
            let _ = write!(out, ",{x}");
        }
        out.push('\n');
    }
    out
}

/// Rebuilds the confusion matrix from a predictions file.
pub fn metrics_from_predictions(path: &Path) -> Result<MetricsReport> {
    let file = fs::File::open(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let mut reader = csv::Reader::from_reader(file);
    let headers = reader.headers().map_err(|e| Error::parse(path, 1, e.to_string()))?.clone();
    let classes: Vec<String> = headers
        .iter()
        .skip(3)
        .map(|h| h.strip_prefix("p_").map(str::to_string).ok_or_else(|| Error::parse(path, 1, format!("bad column `{h}`"))))
        .collect::<Result<_>>()?;
    if headers.len() < 5 || &headers[0] != "id" || &headers[1] != "gold" || &headers[2] != "predicted" {
        return Err(Error::parse(path, 1, "header must be id,gold,predicted,p_<class>..."));
    }
    let mut cm = ConfusionMatrix::new(classes);
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::parse(path, i + 2, e.to_string()))?;
        cm.accumulate(&rec[1], &rec[2]).map_err(|e| Error::parse(path, i + 2, e.to_string()))?;
    }
    derive_metrics(&cm)
}

fn save_evaluation(out: &Path, name: &str, split: &str, model: &SentimentClassifier, examples: &[Example]) -> Result<MetricsReport> {
    let predictions = predict(model, examples)?;
    let cm = confusion(&predictions, model.num_classes())?;
    let report = derive_metrics(&cm)?;
    write(&out.join(format!("predictions/{name}_{split}.csv")), predictions_to_csv(&predictions, cm.classes()))?;
    write(&out.join(format!("reports/{name}_{split}.csv")), report.to_csv())?;
    Ok(report)
}

fn save_run(
    out: &Path,
    name: &str,
    model: &SentimentClassifier,
    log: &TrainingLog,
    inputs: &[(String, String)],
) -> Result<()> {
    write(&out.join(format!("models/{name}.sfm")), model.to_bytes())?;
    write(&out.join(format!("logs/{name}.csv")), log.to_csv())?;
    let manifest = log.run_manifest(inputs, &model.content_hash());
    write(
        &out.join(format!("runs/{name}.json")),
        serde_json::to_string_pretty(&manifest).expect("serializable manifest") + "\n",
    )?;
    eprintln!(
        "{name}: {} epochs, best {} ({:.1}s)",
        log.epochs.len(),
        log.best_epoch,
        log.wall_clock_seconds
    );
    Ok(())
}

fn labeler_hyper(config: &Config) -> Result<LabelerHyper> {
    Ok(LabelerHyper {
        epochs: config.get("labeler.epochs")?,
        lr: config.get("labeler.lr")?,
        l2: config.get("labeler.l2")?,
        seed: config.get("run.seed")?,
    })
}

fn builtin_labeler(config: &Config) -> Result<NgramLabeler> {
    let corpus = load_text_corpus(&config.require_path("data.text_corpus")?)?;
    train_labeler(&corpus, &labeler_hyper(config)?)
}

fn pretrain_dataset(config: &Config) -> Result<Dataset> {
    let paths = config.paths("data.pretrain");
    if paths.is_empty() {
        return Err(Error::Config("`data.pretrain` must list at least one manifest".into()));
    }
    let parts = paths.iter().map(|p| load_manifest(p)).collect::<Result<Vec<_>>>()?;
    Dataset::concat("pretrain", &parts.iter().collect::<Vec<_>>())
}

/// Pseudo labels for the pretraining pool, from the built-in labeler or an
/// external CSV according to `labeler.source`.
fn pretrain_labels(config: &Config, pool: &Dataset) -> Result<BTreeMap<String, PseudoLabel>> {
    match config.raw("labeler.source") {
        "builtin" => builtin_pseudo_labels(pool, &builtin_labeler(config)?, config.raw("labeler.tokens").parse()?),
        "external" => load_external_pseudo_labels(&config.require_path("data.pseudo_labels")?),
        other => Err(Error::Config(format!("labeler.source must be builtin or external, got `{other}`"))),
    }
}

struct Loaded {
    train_ds: Dataset,
    val_ds: Dataset,
    eval_ds: Dataset,
    inputs: Vec<(String, String)>,
}

fn load_splits(config: &Config) -> Result<Loaded> {
    let mut inputs = Vec::new();
    let mut load = |key: &str| -> Result<Dataset> {
        let p = config.require_path(key)?;
        inputs.push((key.to_string(), sha256_file(&p)?));
        load_manifest(&p)
    };
    Ok(Loaded { train_ds: load("data.train")?, val_ds: load("data.val")?, eval_ds: load("data.eval")?, inputs })
}

type SpeechData = (SplitData, BTreeMap<String, PseudoLabel>, Vec<(String, String)>);

fn speech_data(config: &Config, loaded: &Loaded, with_pretrain: bool) -> Result<SpeechData> {
    let mut inputs = loaded.inputs.clone();
    let mut labels = BTreeMap::new();
    let pretrain = if with_pretrain {
        let pool = pretrain_dataset(config)?;
        for p in config.paths("data.pretrain") {
            inputs.push((format!("data.pretrain:{}", p.display()), sha256_file(&p)?));
        }
        labels = pretrain_labels(config, &pool)?;
        for key in ["data.text_corpus", "data.pseudo_labels"] {
            if let Some(p) = config.path(key).filter(|p| p.exists()) {
                inputs.push((key.to_string(), sha256_file(&p)?));
            }
        }
        pseudo_examples(&pool, &labels)?
    } else {
        Vec::new()
    };
    let data = SplitData {
        train_dataset: loaded.train_ds.clone(),
        train: gold_examples(&loaded.train_ds)?,
        val: gold_examples(&loaded.val_ds)?,
        eval: gold_examples(&loaded.eval_ds)?,
        pretrain,
    };
    data.check_roles()?;
    Ok((data, labels, inputs))
}

fn text_plan(config: &Config, section: &str, seed: u64) -> Result<TrainingPlan> {
    let mut plan = TrainingPlan::new(StageKind::Baseline, seed);
    plan.epochs = config.get(&format!("{section}.epochs"))?;
    plan.lr = config.get(&format!("{section}.lr"))?;
    plan.class_weights = match config.raw(&format!("{section}.class_weights")) {
        "uniform" => crate::trainer::WeightScheme::Uniform,
        "inverse_frequency" => crate::trainer::WeightScheme::InverseFrequency,
        other => return Err(Error::Config(format!("{section}.class_weights: unsupported `{other}`"))),
    };
    plan.validate()?;
    Ok(plan)
}

#[derive(Debug, Clone, Default)]
pub struct RunSummary {
    pub out: PathBuf,
    /// `(model name, split, report)`.
    pub reports: Vec<(String, String, MetricsReport)>,
}

/// Executes the configured stages and writes models, logs, run manifests,
/// predictions and metric reports for the validation and evaluation splits.
pub fn cmd_run(config: &Config) -> Result<RunSummary> {
    let stages: Vec<String> = config.list("run.stages")?;
    for s in &stages {
        if !["baseline", "semisup", "text", "contextual"].contains(&s.as_str()) {
            return Err(Error::Config(format!("unknown stage `{s}`")));
        }
    }
    let exp = Experiment::from_config(config)?;
    let loaded = load_splits(config)?;
    let out = output_dir(config)?;
    write(&out.join("config.conf"), config.render())?;
    let has = |s: &str| stages.iter().any(|x| x == s);
    let mut summary = RunSummary { out: out.clone(), reports: Vec::new() };
    let record = |summary: &mut RunSummary, name: &str, model: &SentimentClassifier, val: &[Example], eval: &[Example]| -> Result<()> {
        for (split, ex) in [("val", val), ("eval", eval)] {
            let r = save_evaluation(&out, name, split, model, ex)?;
            summary.reports.push((name.to_string(), split.to_string(), r));
        }
        Ok(())
    };

    if has("baseline") || has("semisup") {
        let (data, labels, inputs) = speech_data(config, &loaded, has("semisup"))?;
        if has("baseline") {
            let (train, _) = budget_examples(&data, config.get("baseline.budget")?, exp.seed)?;
            let (model, log) = exp.run_baseline(&train, &data.val)?;
            save_run(&out, "baseline", &model, &log, &inputs)?;
            record(&mut summary, "baseline", &model, &data.val, &data.eval)?;
        }
        if has("semisup") {
            write(
                &out.join("pseudo_labels.csv"),
                pseudo_labels_to_csv(data.pretrain.iter().map(|e| (e.id.as_str(), labels[&e.id]))),
            )?;
            let (theta_p, plog) = exp.run_pretrain(&data.pretrain)?;
            save_run(&out, "theta_p", &theta_p, &plog, &inputs)?;
            let (train, _) = budget_examples(&data, config.get("finetune.budget")?, exp.seed)?;
            let (theta_f, flog) = exp.run_finetune(&theta_p, &train, &data.val)?;
            save_run(&out, "theta_f", &theta_f, &flog, &inputs)?;
            record(&mut summary, "theta_f", &theta_f, &data.val, &data.eval)?;
        }
    }

    let tokens: TokenSource = config.raw("text.tokens").parse()?;
    if has("text") {
        let cfg = TextConfig {
            embedding_dim: config.get("text.embedding_dim")?,
            blstm_hidden: config.get("text.blstm_hidden")?,
            blstm_layers: config.get("text.blstm_layers")?,
            attention_dim: config.get("text.attention_dim")?,
            seed: exp.seed,
        };
        let plan = text_plan(config, "text", exp.seed)?;
        let (model, log) = train_text_baseline(&loaded.train_ds, Some(&loaded.val_ds), tokens, &cfg, &plan)?;
        save_run(&out, "theta_s", &model, &log, &loaded.inputs)?;
        let vocab = Vocabulary::from_model(&model)?;
        let val = token_examples(&loaded.val_ds, tokens, &vocab)?;
        let eval = token_examples(&loaded.eval_ds, tokens, &vocab)?;
        record(&mut summary, "theta_s", &model, &val, &eval)?;
    }
    if has("contextual") {
        let cfg = TextConfig {
            embedding_dim: 0,
            blstm_hidden: config.get("contextual.blstm_hidden")?,
            blstm_layers: config.get("contextual.blstm_layers")?,
            attention_dim: config.get("contextual.attention_dim")?,
            seed: exp.seed,
        };
        let plan = text_plan(config, "contextual", exp.seed)?;
        let emb = |key: &str| read_embeddings(&config.require_path(key)?);
        let (train_z, val_z, eval_z) = (emb("data.train_embeddings")?, emb("data.val_embeddings")?, emb("data.eval_embeddings")?);
        let (model, log) =
            train_text_contextual(&loaded.train_ds, &train_z, Some((&loaded.val_ds, &val_z)), tokens, &cfg, &plan)?;
        save_run(&out, "theta_b", &model, &log, &loaded.inputs)?;
        let val = contextual_examples(&loaded.val_ds, tokens, &val_z)?;
        let eval = contextual_examples(&loaded.eval_ds, tokens, &eval_z)?;
        record(&mut summary, "theta_b", &model, &val, &eval)?;
    }
    Ok(summary)
}

/// Pretrains once, then runs paired baseline / fine-tuned models for every
/// budget in `sweep.budgets`. Writes `curve.csv`, `crossover.csv` and the
/// shared θp model.
pub fn cmd_sweep(config: &Config) -> Result<SweepCurve> {
    let budgets: Vec<f64> = config.list("sweep.budgets")?;
    check_budgets(&budgets)?;
    let exp = Experiment::from_config(config)?;
    let loaded = load_splits(config)?;
    let out = output_dir(config)?;
    write(&out.join("config.conf"), config.render())?;
    let (data, _, inputs) = speech_data(config, &loaded, true)?;
    let (theta_p, plog) = exp.run_pretrain(&data.pretrain)?;
    save_run(&out, "theta_p", &theta_p, &plog, &inputs)?;
    let curve = sweep(&exp, &data, &theta_p, &budgets)?;
    write(&out.join("curve.csv"), curve.to_csv())?;
    write(&out.join("crossover.csv"), curve.summary())?;
    Ok(curve)
}

/// Table-1 style report: REC averages per transcript source.
pub fn labeler_report(rows: &[(TokenSource, MetricsReport)]) -> String {
    let mut out = String::from("transcript,unweighted_REC,weighted_REC\n");
    for (source, r) in rows {
        let _ = writeln!(out, "{},{:.4},{:.4}", source.as_str(), r.unweighted.recall, r.weighted.recall);
    }
    out
}

/// Pseudo-labels every `data.pretrain` utterance from GT and ASR transcripts
/// (or passes an external file through) and scores the labels on the
/// Negative/Positive utterances of `data.eval`.
pub fn cmd_label(config: &Config) -> Result<Vec<(TokenSource, MetricsReport)>> {
    let out = output_dir(config)?;
    let pool = pretrain_dataset(config)?;
    let held_out = load_manifest(&config.require_path("data.eval")?)?;
    let mut rows = Vec::new();
    match config.raw("labeler.source") {
        "builtin" => {
            let labeler = builtin_labeler(config)?;
            write(&out.join("labeler.tsv"), labeler.to_tsv())?;
            for source in [TokenSource::Gt, TokenSource::Asr] {
                let labels = builtin_pseudo_labels(&pool, &labeler, source)?;
                write(
                    &out.join(format!("pseudo_labels_{}.csv", source.as_str())),
                    pseudo_labels_to_csv(pool.utterances.iter().map(|u| (u.id.as_str(), labels[&u.id]))),
                )?;
                let report = evaluate_labeler(&held_out, |u| Ok(pseudo_label(&labeler, u.tokens(source)?)))?;
                rows.push((source, report));
            }
        }
        "external" => {
            let labels = load_external_pseudo_labels(&config.require_path("data.pseudo_labels")?)?;
            let report = evaluate_labeler(&held_out, |u| {
                labels
                    .get(&u.id)
                    .copied()
                    .ok_or_else(|| Error::Data(format!("no external pseudo label for `{}`", u.id)))
            })?;
            rows.push((config.raw("labeler.tokens").parse()?, report));
        }
        other => return Err(Error::Config(format!("labeler.source must be builtin or external, got `{other}`"))),
    }
    write(&out.join("labeler_report.csv"), labeler_report(&rows))?;
    Ok(rows)
}

/// Scores a saved speech or θs model on a manifest, writing the metric
/// report and predictions into `out`.
pub fn cmd_eval(model_path: &Path, manifest: &Path, out: &Path) -> Result<MetricsReport> {
    let model = load_model(model_path)?;
    let ds = load_manifest(manifest)?;
    let examples = match model.stage() {
        StageTag::TextBaseline => {
            let vocab = Vocabulary::from_model(&model)?;
            let source = model.meta.get("token_source").map_or(Ok(TokenSource::Gt), |s| s.parse())?;
            token_examples(&ds, source, &vocab)?
        }
        StageTag::FineTuned => gold_examples(&ds)?,
        other => {
            return Err(Error::Stage(format!(
                "eval expects a fine-tuned or theta_s model, got {other}; contextual models need embeddings (use run)"
            )))
        }
    };
    let name = model_path.file_stem().map_or("model".into(), |s| s.to_string_lossy().into_owned());
    save_evaluation(out, &name, &ds.name, &model, &examples)
}

/// The checked fragments for one seed: each layer on its own plus a small
/// full classifier. Every fragment has at least 100 parameter coordinates.
pub fn gradcheck_fragments(seed: u64) -> Result<Vec<Box<dyn GradFragment>>> {
    let cfg = crate::model::ClassifierConfig {
        fc_dim: 4,
        blstm_hidden: 3,
        attention_dim: 3,
        ..crate::model::ClassifierConfig::e2e(4, 3, seed)
    };
    Ok(vec![
        Box::new(AffineFragment::random(5, 10, 8, seed)),
        Box::new(LstmFragment::random(1, 4, 5, seed)),
        Box::new(BlstmFragment::random(5, 4, 5, seed)),
        Box::new(AttentionFragment::random(6, 8, 8, seed)),
        Box::new(CrossEntropyFragment::random(40, 3, seed)),
        Box::new(crate::model::ClassifierFragment::random(cfg, 4, seed)?),
    ])
}

pub fn cmd_gradcheck(seeds: u64, samples: usize, tolerance: f64) -> Result<Vec<GradCheckReport>> {
    let mut reports = Vec::new();
    for seed in 0..seeds {
        for mut f in gradcheck_fragments(seed)? {
            reports.push(grad_check(f.as_mut(), tolerance, samples, seed));
        }
    }
    Ok(reports)
}

pub fn synth_spec(config: &Config) -> Result<SynthSpec> {
    Ok(SynthSpec {
        n_train: config.get("synth.n_train")?,
        n_val: config.get("synth.n_val")?,
        n_eval: config.get("synth.n_eval")?,
        n_unlabeled: config.get("synth.n_unlabeled")?,
        n_text: config.get("synth.n_text")?,
        feature_dim: config.get("synth.feature_dim")?,
        frames_min: config.get("synth.frames_min")?,
        frames_max: config.get("synth.frames_max")?,
        separation: config.get("synth.separation")?,
        token_noise: config.get("synth.token_noise")?,
        asr_noise: config.get("synth.asr_noise")?,
        annotator_noise: config.get("synth.annotator_noise")?,
        embedding_dim: config.get("synth.embedding_dim")?,
        speaker_std: config.get("synth.speaker_std")?,
        salience: config.get("synth.salience")?,
        seed: config.get("run.seed")?,
        ..SynthSpec::default()
    })
}

pub fn cmd_synth(config: &Config) -> Result<SynthSummary> {
    let spec = synth_spec(config)?;
    let out = output_dir(config)?;
    generate_synthetic_corpus(&spec, &out)
}

/// Config for a corpus written by [`cmd_synth`] into `dir`, with the small
/// reference model dimensions.
pub fn synthetic_run_config(dir: &Path) -> Config {
    let mut c = Config::default();
    for k in ["model.fc_dim", "model.blstm_hidden", "model.attention_dim"] {
        c.set(k, "16").expect("known key");
    }
    let p = |name: &str| dir.join(name).to_string_lossy().into_owned();
    for (k, v) in [
        ("data.train", p("train.jsonl")),
        ("data.val", p("val.jsonl")),
        ("data.eval", p("eval.jsonl")),
        ("data.pretrain", format!("{},{}", p("unlabeled.jsonl"), p("train.jsonl"))),
        ("data.text_corpus", p("text_corpus.jsonl")),
        ("data.train_embeddings", p("embeddings/train_gt.sfe")),
        ("data.val_embeddings", p("embeddings/val_gt.sfe")),
        ("data.eval_embeddings", p("embeddings/eval_gt.sfe")),
    ] {
        c.set(k, &v).expect("known key");
    }
    c
}
