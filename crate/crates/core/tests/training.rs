use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use semisent::data::{load_manifest, Dataset, Utterance};
use semisent::data::synth::{generate, generate_synthetic_corpus, SynthSpec, SynthUtterance};
use semisent::model::{build_classifier, ClassifierConfig, StageTag};
use semisent::numkernel::Tensor;
use semisent::pipeline2step::{contextual_examples, contextual_plan, train_text_contextual, TextConfig};
use semisent::pseudolab::{train_labeler, LabelerHyper, TokenSequence, TokenSource};
use semisent::SentimentLabel;
use semisent::trainer::{
    builtin_pseudo_labels, evaluate, finetune, pretrain_pseudo, pseudo_examples, Example, Features, PseudoSource,
    StageKind, TokenSourceName, TrainingPlan,
};

fn clean_spec(seed: u64) -> SynthSpec {
    SynthSpec {
        n_train: 240,
        n_val: 240,
        n_eval: 4,
        n_unlabeled: 0,
        n_text: 50,
        annotator_noise: 0.0,
        token_noise: 0.0,
        asr_noise: 0.0,
        seed,
        ..SynthSpec::default()
    }
}

/// Negative/Positive utterances with their true binary class as target.
fn binary_examples(utts: &[SynthUtterance]) -> Vec<Example> {
    utts.iter()
        .filter_map(|s| {
            s.class.binary().map(|b| Example {
                id: s.utterance.id.clone(),
                features: Features::Frames(s.frames.clone()),
                target: b.index(),
            })
        })
        .collect()
}

fn pretrain_plan(seed: u64) -> TrainingPlan {
    TrainingPlan {
        epochs: 12,
        lr: 0.05,
        pseudo_source: PseudoSource::External("test".into()),
        ..TrainingPlan::new(StageKind::PseudoPretrain, seed)
    }
}

fn small(classes: usize, seed: u64) -> ClassifierConfig {
    ClassifierConfig { fc_dim: 8, blstm_hidden: 8, attention_dim: 8, ..ClassifierConfig::e2e(16, classes, seed) }
}

#[test]
fn pretraining_on_true_binary_labels_separates_classes() {
    let corpus = generate(&SynthSpec { separation: 2.0, speaker_std: 0.0, ..clean_spec(21) }).unwrap();
    let mut model = build_classifier(small(2, 21)).unwrap();
    let log = pretrain_pseudo(&mut model, &binary_examples(&corpus.train), None, &pretrain_plan(21)).unwrap();
    assert_eq!(model.stage(), StageTag::PseudoPretrained);
    assert!(log.best().mean_loss < log.epochs[0].mean_loss);
    let rec = evaluate(&model, &binary_examples(&corpus.val)).unwrap().unweighted.recall;
    assert!(rec >= 0.9, "binary validation REC {rec}");
}

/// A single run's argmax can line up with the polarity direction in either
/// sign, so chance is checked as the median over independent runs.
#[test]
fn randomly_flipped_pseudo_labels_give_chance() {
    let corpus = generate(&SynthSpec { separation: 2.0, speaker_std: 0.0, n_val: 800, ..clean_spec(22) }).unwrap();
    let val = binary_examples(&corpus.val);
    let mut runs: Vec<f64> = (0..8)
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut train = binary_examples(&corpus.train);
            let classes: Vec<usize> = train.iter().map(|e| e.target).collect();
            // Half of each class, chosen at random, so the flipped targets
            // carry no information about the class in this sample.
            for class in 0..2 {
                let mut idx: Vec<usize> = (0..train.len()).filter(|&i| classes[i] == class).collect();
                idx.shuffle(&mut rng);
                for &i in &idx[..idx.len() / 2] {
                    train[i].target = 1 - class;
                }
            }
            let mut model = build_classifier(small(2, seed)).unwrap();
            pretrain_pseudo(&mut model, &train, None, &pretrain_plan(seed)).unwrap();
            evaluate(&model, &val).unwrap().unweighted.recall
        })
        .collect();
    runs.sort_by(f64::total_cmp);
    let median = 0.5 * (runs[3] + runs[4]);
    assert!((median - 0.5).abs() <= 0.05, "binary validation REC per run {runs:?}");
}

#[test]
fn gold_labels_do_not_reach_pretraining() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec { n_train: 40, n_val: 4, n_eval: 4, n_unlabeled: 0, n_text: 200, seed: 23, ..SynthSpec::default() };
    let summary = generate_synthetic_corpus(&spec, dir.path()).unwrap();
    let ds = load_manifest(&dir.path().join("train.jsonl")).unwrap();
    let mut permuted = ds.clone();
    let n = permuted.utterances.len();
    for i in 0..n {
        permuted.utterances[i].gold = ds.utterances[(i + 7) % n].gold;
        permuted.utterances[i].annotator_labels = ds.utterances[(i + 7) % n].annotator_labels;
    }
    assert_ne!(
        ds.utterances.iter().map(|u| u.gold).collect::<Vec<_>>(),
        permuted.utterances.iter().map(|u| u.gold).collect::<Vec<_>>()
    );
    let corpus = semisent::pseudolab::load_text_corpus(&summary.text_corpus).unwrap();
    let labeler = train_labeler(&corpus, &LabelerHyper::default()).unwrap();
    let mut plan = pretrain_plan(23);
    plan.epochs = 2;
    plan.pseudo_source = PseudoSource::Builtin(TokenSourceName::Gt);
    let hashes: Vec<String> = [&ds, &permuted]
        .into_iter()
        .map(|d| {
            let labels = builtin_pseudo_labels(d, &labeler, TokenSource::Gt).unwrap();
            let examples = pseudo_examples(d, &labels).unwrap();
            let mut model = build_classifier(small(2, 23)).unwrap();
            pretrain_pseudo(&mut model, &examples, None, &plan).unwrap();
            model.content_hash()
        })
        .collect();
    assert_eq!(hashes[0], hashes[1]);
}

#[test]
fn finetune_lineage_and_stage_checks() {
    let corpus = generate(&SynthSpec { n_train: 30, ..clean_spec(24) }).unwrap();
    let fresh = build_classifier(small(2, 24)).unwrap();
    let gold: Vec<Example> = corpus
        .train
        .iter()
        .map(|s| Example { id: s.utterance.id.clone(), features: Features::Frames(s.frames.clone()), target: s.class.index() })
        .collect();
    let ft_plan = TrainingPlan { epochs: 2, ..TrainingPlan::new(StageKind::FineTune, 24) };
    assert!(matches!(finetune(&fresh, &gold, &gold, &ft_plan), Err(semisent::Error::Stage(_))));

    let mut theta_p = fresh;
    let mut plan = pretrain_plan(24);
    plan.epochs = 2;
    pretrain_pseudo(&mut theta_p, &binary_examples(&corpus.train), None, &plan).unwrap();
    let (theta_f, log) = finetune(&theta_p, &gold, &gold, &ft_plan).unwrap();
    assert_eq!(theta_f.stage(), StageTag::FineTuned);
    assert_eq!(theta_f.num_classes(), 3);
    assert_eq!(log.lineage.parent_hash.as_deref(), Some(theta_p.content_hash().as_str()));
    assert_eq!(log.lineage.seed, 24);
    assert!(finetune(&theta_p, &[], &gold, &ft_plan).is_err());
}

fn mean_row(z: &Tensor) -> Vec<f64> {
    let mut m = vec![0.0; z.cols()];
    for i in 0..z.rows() {
        for (a, v) in m.iter_mut().zip(z.row(i)) {
            *a += v / z.rows() as f64;
        }
    }
    m
}

/// Rows are unit noise plus a class-specific offset, so the class can be read
/// off the mean row.
fn decodable_corpus(n: usize, seed: u64) -> (Dataset, BTreeMap<String, Tensor>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut utts = Vec::new();
    let mut embeddings = BTreeMap::new();
    for i in 0..n {
        let class = SentimentLabel::ALL[i % 3];
        let len = rng.random_range(4..12);
        let id = format!("u{i:03}");
        let tokens = TokenSequence::new((0..len).map(|j| format!("w{j}")).collect(), TokenSource::Gt);
        utts.push(Utterance::labeled(&id, 1.0, tokens, [class; 3]));
        let data = (0..len * 6)
            .map(|k| normal.sample(&mut rng) + if k % 6 == class.index() { 1.5 } else { 0.0 })
            .collect();
        embeddings.insert(id, Tensor::from_vec(&[len, 6], data).unwrap());
    }
    (Dataset::new("train", utts), embeddings)
}

/// Nearest class centroid of the mean row, fit and scored on the same data.
fn linear_probe_accuracy(ds: &Dataset, embeddings: &BTreeMap<String, Tensor>) -> f64 {
    let means: Vec<(usize, Vec<f64>)> =
        ds.utterances.iter().map(|u| (u.gold.unwrap().index(), mean_row(&embeddings[&u.id]))).collect();
    let mut centroids = vec![vec![0.0; 6]; 3];
    let mut counts = [0usize; 3];
    for (k, m) in &means {
        for (a, v) in centroids[*k].iter_mut().zip(m) {
            *a += v;
        }
        counts[*k] += 1;
    }
    for (c, n) in centroids.iter_mut().zip(counts) {
        c.iter_mut().for_each(|v| *v /= n as f64);
    }
    let dist = |c: &[f64], m: &[f64]| c.iter().zip(m).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    let correct = means
        .iter()
        .filter(|(k, m)| (0..3).min_by(|&a, &b| dist(&centroids[a], m).total_cmp(&dist(&centroids[b], m))) == Some(*k))
        .count();
    correct as f64 / means.len() as f64
}

#[test]
fn contextual_classifier_fits_linearly_decodable_embeddings() {
    let (ds, embeddings) = decodable_corpus(150, 25);
    let probe = linear_probe_accuracy(&ds, &embeddings);
    assert!(probe >= 0.95, "linear probe accuracy {probe}");

    let cfg = TextConfig { embedding_dim: 0, blstm_hidden: 8, blstm_layers: 1, attention_dim: 8, seed: 25 };
    let plan = TrainingPlan { epochs: 40, early_stop_patience: 40, ..contextual_plan(25) };
    let (model, _) = train_text_contextual(&ds, &embeddings, None, TokenSource::Gt, &cfg, &plan).unwrap();
    assert_eq!(model.stage(), StageTag::TextContextual);
    let examples = contextual_examples(&ds, TokenSource::Gt, &embeddings).unwrap();
    let acc = evaluate(&model, &examples).unwrap().accuracy;
    assert!(acc >= 0.95, "training accuracy {acc}");
}
