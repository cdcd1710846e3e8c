//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. `SEMISENT_ACCEPTANCE=1,2,9` runs a subset.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use semisent::data::majority_vote;
use semisent::data::synth::{generate, generate_synthetic_corpus, SynthSpec};
use semisent::harness::{
    cmd_run, gradcheck_fragments, synthetic_run_config, synthetic_splits, sweep_point, Experiment, SplitData,
    SweepRow,
};
use semisent::metrics::{derive_metrics, ConfusionMatrix};
use semisent::model::{build_classifier, load_model, save_model, ClassifierConfig, Input, SentimentClassifier, StageTag};
use semisent::numkernel::{grad_check, Tensor};
use semisent::pseudolab::{
    evaluate_labeler, pseudo_label, train_labeler, LabelerHyper, NgramLabeler, PseudoLabel, TokenSource,
};
use semisent::trainer::{evaluate, pretrain_pseudo, train_baseline, Example, Features, PseudoSource};
use semisent::{PseudoClass, Result, SentimentLabel};

const BENCH_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const BUDGETS: [f64; 8] = [0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.75, 1.0];

struct Outcome {
    pass: bool,
    detail: String,
    /// Time attributed to the criterion when it reuses shared work.
    elapsed: Option<Duration>,
}

impl Outcome {
    fn new(pass: bool, detail: String) -> Self {
        Outcome { pass, detail, elapsed: None }
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn c1_gradients() -> Result<Outcome> {
    let (mut worst, mut worst_name, mut min_checked, mut failures) = (0.0f64, String::new(), usize::MAX, 0);
    for seed in 0..20 {
        for mut f in gradcheck_fragments(seed)? {
            let r = grad_check(f.as_mut(), 1e-4, 100, seed);
            min_checked = min_checked.min(r.checked);
            failures += usize::from(!r.passed());
            if r.max_rel_error() > worst {
                worst = r.max_rel_error();
                worst_name = r.fragment.clone();
            }
        }
    }
    Ok(Outcome::new(
        failures == 0 && min_checked >= 100,
        format!("20 seeds x 6 fragments, >= {min_checked} coords each, worst rel err {worst:.2e} ({worst_name}), {failures} failing"),
    ))
}

/// Expands the matrix into individual (gold, predicted) samples and counts
/// them again from scratch.
fn oracle(counts: &[Vec<u64>]) -> ([f64; 3], [f64; 3], f64, f64) {
    let c = counts.len();
    let mut samples = Vec::new();
    for (g, row) in counts.iter().enumerate() {
        for (p, &n) in row.iter().enumerate() {
            samples.extend(std::iter::repeat_n((g, p), n as usize));
        }
    }
    let n = samples.len() as f64;
    let (mut macro_, mut weighted) = ([0.0; 3], [0.0; 3]);
    let mut correct = 0usize;
    let mut balanced = 0.0;
    for k in 0..c {
        let tp = samples.iter().filter(|&&(g, p)| g == k && p == k).count() as f64;
        let gold = samples.iter().filter(|&&(g, _)| g == k).count() as f64;
        let pred = samples.iter().filter(|&&(_, p)| p == k).count() as f64;
        let rec = if gold > 0.0 { tp / gold } else { 0.0 };
        let pre = if pred > 0.0 { tp / pred } else { 0.0 };
        let f1 = if rec + pre > 0.0 { 2.0 * rec * pre / (rec + pre) } else { 0.0 };
        for (i, v) in [rec, pre, f1].into_iter().enumerate() {
            macro_[i] += v / c as f64;
            weighted[i] += gold / n * v;
        }
        balanced += rec;
        correct += tp as usize;
    }
    (macro_, weighted, correct as f64 / n, balanced / c as f64)
}

fn c2_metric_oracle() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut worst, mut identity_failures) = (0.0f64, 0);
    for _ in 0..1000 {
        let c = rng.random_range(2..=6);
        let counts: Vec<Vec<u64>> = (0..c)
            .map(|g| {
                let mut row: Vec<u64> = (0..c).map(|_| rng.random_range(0..40)).collect();
                // every class needs gold support for balanced accuracy
                row[g] += u64::from(row.iter().sum::<u64>() == 0);
                row
            })
            .collect();
        let names = (0..c).map(|i| format!("c{i}")).collect();
        let r = derive_metrics(&ConfusionMatrix::from_counts(names, &counts)?)?;
        let (m, w, acc, bal) = oracle(&counts);
        let got = [
            r.unweighted.recall,
            r.unweighted.precision,
            r.unweighted.f1,
            r.weighted.recall,
            r.weighted.precision,
            r.weighted.f1,
        ];
        let want = [m[0], m[1], m[2], w[0], w[1], w[2]];
        for (g, e) in got.iter().zip(want) {
            worst = worst.max((g - e).abs());
        }
        let per_class_mean = r.per_class.iter().map(|s| s.scores.recall).sum::<f64>() / c as f64;
        if r.weighted.recall != acc || r.unweighted.recall != per_class_mean || (per_class_mean - bal).abs() > 1e-12 {
            identity_failures += 1;
        }
    }
    Ok(Outcome::new(
        worst <= 1e-12 && identity_failures == 0,
        format!("1000 matrices, max |diff| {worst:.1e}, identity failures {identity_failures}"),
    ))
}

fn c3_votes() -> Result<Outcome> {
    let mut discarded = Vec::new();
    let mut wrong = 0;
    for a in SentimentLabel::ALL {
        for b in SentimentLabel::ALL {
            for c in SentimentLabel::ALL {
                let votes = [a, b, c];
                let expected = SentimentLabel::ALL
                    .into_iter()
                    .find(|l| votes.iter().filter(|v| *v == l).count() >= 2);
                let got = majority_vote(votes);
                wrong += usize::from(got != expected);
                if got.is_none() {
                    discarded.push(votes);
                }
            }
        }
    }
    let all_distinct = discarded.iter().all(|v| v[0] != v[1] && v[1] != v[2] && v[0] != v[2]);
    Ok(Outcome::new(
        wrong == 0 && discarded.len() == 6 && all_distinct,
        format!("27 triples, {wrong} wrong, {} discarded", discarded.len()),
    ))
}

fn c4_overfit() -> Result<Outcome> {
    let spec = SynthSpec {
        n_train: 40,
        n_val: 4,
        n_eval: 4,
        n_unlabeled: 0,
        n_text: 10,
        seed: 4,
        ..SynthSpec::default()
    };
    let corpus = generate(&spec)?;
    let train: Vec<Example> = corpus
        .train
        .iter()
        .filter_map(|s| {
            s.utterance.gold.map(|g| Example {
                id: s.utterance.id.clone(),
                features: Features::Frames(s.frames.clone()),
                target: g.index(),
            })
        })
        .take(32)
        .collect();
    let exp = Experiment::reference(4);
    let mut plan = exp.baseline.clone();
    plan.epochs = 500;
    plan.early_stop_patience = 50;
    plan.lr_patience = 500;
    let mut model = build_classifier(exp.classifier_config(spec.feature_dim, 3))?;
    let log = train_baseline(&mut model, &train, &train, &plan)?;
    let rec = evaluate(&model, &train)?.unweighted.recall;
    Ok(Outcome::new(
        train.len() == 32 && rec == 1.0,
        format!("{} utterances, training uw REC {rec:.4} at epoch {}", train.len(), log.best_epoch),
    ))
}

struct SeedRun {
    pretrain_time: Duration,
    /// One row per entry of `BUDGETS`, with its wall-clock time.
    rows: Vec<(SweepRow, Duration)>,
}

struct Benchmark {
    runs: Vec<SeedRun>,
}

impl Benchmark {
    fn run() -> Result<Self> {
        let mut runs = Vec::new();
        for seed in BENCH_SEEDS {
            let corpus = generate(&SynthSpec { seed, ..SynthSpec::default() })?;
            let labeler = train_labeler(&corpus.text, &LabelerHyper::default())?;
            let data: SplitData = synthetic_splits(&corpus, &labeler, TokenSource::Gt)?;
            let exp = Experiment::reference(seed);
            let t = Instant::now();
            let (theta_p, _) = exp.run_pretrain(&data.pretrain)?;
            let pretrain_time = t.elapsed();
            let mut rows = Vec::new();
            for b in BUDGETS {
                let t = Instant::now();
                let row = sweep_point(&exp, &data, &theta_p, b)?;
                eprintln!(
                    "  seed {seed} budget {b}: baseline {:.4} semisup {:.4}",
                    row.baseline.unweighted.f1, row.semisup.unweighted.f1
                );
                rows.push((row, t.elapsed()));
            }
            runs.push(SeedRun { pretrain_time, rows });
        }
        Ok(Benchmark { runs })
    }

    fn budget_index(fraction: f64) -> usize {
        BUDGETS.iter().position(|&b| b == fraction).expect("budget in grid")
    }

    /// Median over seeds of (baseline, semisup) uw F1 at one budget.
    fn medians(&self, fraction: f64) -> (f64, f64) {
        let i = Self::budget_index(fraction);
        let base = self.runs.iter().map(|r| r.rows[i].0.baseline.unweighted.f1).collect();
        let semi = self.runs.iter().map(|r| r.rows[i].0.semisup.unweighted.f1).collect();
        (median(base), median(semi))
    }

    fn time_for(&self, fractions: &[f64]) -> Duration {
        self.runs
            .iter()
            .map(|r| r.pretrain_time + fractions.iter().map(|&f| r.rows[Self::budget_index(f)].1).sum::<Duration>())
            .sum()
    }
}

fn per_seed(bench: &Benchmark, fraction: f64) -> String {
    let i = Benchmark::budget_index(fraction);
    bench
        .runs
        .iter()
        .map(|r| format!("{:.3}/{:.3}", r.rows[i].0.baseline.unweighted.f1, r.rows[i].0.semisup.unweighted.f1))
        .collect::<Vec<_>>()
        .join(" ")
}

fn c5_low_resource(bench: &Benchmark) -> Result<Outcome> {
    let (base, semi) = bench.medians(0.05);
    Ok(Outcome {
        pass: semi - base >= 0.05,
        detail: format!(
            "5% budget median uw F1 baseline {base:.4}, semisup {semi:.4} (gain {:+.1} pts; per seed {})",
            100.0 * (semi - base),
            per_seed(bench, 0.05)
        ),
        elapsed: Some(bench.time_for(&[0.05])),
    })
}

fn c6_full_resource(bench: &Benchmark) -> Result<Outcome> {
    let (base, semi) = bench.medians(1.0);
    Ok(Outcome {
        pass: semi >= base - 0.01,
        detail: format!(
            "100% budget median uw F1 baseline {base:.4}, semisup {semi:.4} ({:+.1} pts; per seed {})",
            100.0 * (semi - base),
            per_seed(bench, 1.0)
        ),
        elapsed: Some(bench.time_for(&[1.0])),
    })
}

fn c7_crossover(bench: &Benchmark) -> Result<Outcome> {
    let (full, _) = bench.medians(1.0);
    let curve: Vec<(f64, f64)> = BUDGETS.iter().map(|&b| (b, bench.medians(b).1)).collect();
    let crossover = curve.iter().find(|(_, semi)| *semi >= full).map(|(b, _)| *b);
    let shown = curve.iter().map(|(b, s)| format!("{b}:{s:.3}")).collect::<Vec<_>>().join(" ");
    Ok(Outcome {
        pass: crossover.is_some_and(|c| c <= 0.5),
        detail: format!(
            "full baseline {full:.4}, crossover {}, semisup medians {shown}",
            crossover.map_or("none".into(), |c| format!("{c}"))
        ),
        elapsed: Some(bench.time_for(&BUDGETS)),
    })
}

fn c8_labeler() -> Result<Outcome> {
    // Crafted dataset: the predictor refuses Neutral gold, so any leak fails.
    let corpus = generate(&SynthSpec { n_unlabeled: 0, n_train: 0, n_val: 0, n_eval: 60, n_text: 40, seed: 8, ..SynthSpec::default() })?;
    let eval = semisent::data::synth::SyntheticCorpus::dataset("eval", &corpus.eval, Path::new(""));
    let neutral = eval.utterances.iter().filter(|u| u.gold == Some(SentimentLabel::Neutral)).count();
    let binary = eval.utterances.iter().filter(|u| u.gold.and_then(|g| g.binary()).is_some()).count();
    let mut seen_neutral = 0;
    let crafted = evaluate_labeler(&eval, |u| {
        seen_neutral += usize::from(u.gold == Some(SentimentLabel::Neutral));
        Ok(PseudoLabel { label: PseudoClass::Pos, confidence: 1.0 })
    })?;
    let excluded = neutral > 0 && seen_neutral == 0 && crafted.total as usize == binary;

    let corpus = generate(&SynthSpec { seed: 0, ..SynthSpec::default() })?;
    let labeler = train_labeler(&corpus.text, &LabelerHyper::default())?;
    let held_out = semisent::data::synth::SyntheticCorpus::dataset("eval", &corpus.eval, Path::new(""));
    let score = |labeler: &NgramLabeler, source| {
        evaluate_labeler(&held_out, |u| Ok(pseudo_label(labeler, u.tokens(source)?))).map(|r| r.unweighted.recall)
    };
    let gt = score(&labeler, TokenSource::Gt)?;
    let asr = score(&labeler, TokenSource::Asr)?;
    Ok(Outcome::new(
        excluded && gt >= 0.80 && (gt - asr).abs() <= 0.05,
        format!(
            "{neutral} Neutral-gold utterances excluded: {excluded}; held-out uw REC GT {gt:.4}, ASR {asr:.4} (gap {:+.1} pts)",
            100.0 * (gt - asr)
        ),
    ))
}

fn c9_head_replacement() -> Result<Outcome> {
    let cfg = ClassifierConfig { fc_dim: 6, blstm_hidden: 5, attention_dim: 4, ..ClassifierConfig::e2e(4, 2, 9) };
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let pool: Vec<Example> = (0..6)
        .map(|i| Example {
            id: format!("u{i}"),
            features: Features::Frames(Tensor::uniform(&[5, 4], 1.0, &mut rng)),
            target: i % 2,
        })
        .collect();
    let mut theta_p = build_classifier(cfg)?;
    let mut plan = Experiment::reference(9).pretrain;
    plan.epochs = 2;
    plan.pseudo_source = PseudoSource::External("crafted".into());
    pretrain_pseudo(&mut theta_p, &pool, None, &plan)?;

    let dir = tempfile::tempdir().map_err(|e| semisent::Error::Io { context: "tempdir".into(), source: e })?;
    let path = dir.path().join("theta_p.sfm");
    save_model(&theta_p, &path)?;
    let probe = Tensor::uniform(&[7, 4], 1.0, &mut rng);
    let before = theta_p.forward(Input::Frames(&probe))?;

    let replaced = theta_p.replace_output_head(3, 10)?;
    let bits = |m: &SentimentClassifier| -> BTreeMap<String, Vec<u64>> {
        m.params()
            .into_iter()
            .filter(|p| !SentimentClassifier::is_head_param(&p.name))
            .map(|p| (p.name.clone(), p.value.data().iter().map(|v| v.to_bits()).collect()))
            .collect()
    };
    let preserved = bits(&theta_p) == bits(&replaced) && !bits(&replaced).is_empty();

    let reloaded: SentimentClassifier = load_model(&path)?;
    let after = reloaded.forward(Input::Frames(&probe))?;
    let same_bits = |a: &[f64], b: &[f64]| a.iter().map(|v| v.to_bits()).eq(b.iter().map(|v| v.to_bits()));
    let reproducible =
        reloaded.stage() == StageTag::PseudoPretrained && same_bits(&before.0, &after.0) && same_bits(&before.1, &after.1);
    Ok(Outcome::new(
        preserved && reproducible && replaced.num_classes() == 3,
        format!("non-head params bit-identical: {preserved}; reloaded theta_p forward bit-identical: {reproducible}"),
    ))
}

fn c10_determinism() -> Result<Outcome> {
    let io = |e: std::io::Error| semisent::Error::Io { context: "determinism scratch".into(), source: e };
    let dir = tempfile::tempdir().map_err(io)?;
    let spec = SynthSpec { n_train: 60, n_val: 20, n_eval: 20, n_unlabeled: 60, n_text: 200, seed: 10, ..SynthSpec::default() };
    generate_synthetic_corpus(&spec, &dir.path().join("corpus"))?;
    let mut config = synthetic_run_config(&dir.path().join("corpus"));
    for (k, v) in [
        ("run.seed", "10"),
        ("run.stages", "baseline,semisup,text,contextual"),
        ("baseline.epochs", "3"),
        ("pretrain.epochs", "2"),
        ("finetune.epochs", "3"),
        ("text.embedding_dim", "8"),
        ("text.blstm_hidden", "8"),
        ("text.attention_dim", "8"),
        ("text.epochs", "2"),
        ("contextual.blstm_hidden", "8"),
        ("contextual.attention_dim", "8"),
        ("contextual.epochs", "2"),
    ] {
        config.set(k, v)?;
    }
    let mut outputs = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        config.set("run.out", &out.to_string_lossy())?;
        cmd_run(&config)?;
        outputs.push(out);
    }
    // Everything except config.conf, which records the output directory.
    let mut files = vec![std::path::PathBuf::from("pseudo_labels.csv")];
    for sub in ["reports", "models", "predictions", "logs", "runs"] {
        for entry in std::fs::read_dir(outputs[0].join(sub)).map_err(io)? {
            files.push(Path::new(sub).join(entry.map_err(io)?.file_name()));
        }
    }
    files.sort();
    let differing: Vec<String> = files
        .iter()
        .filter(|f| std::fs::read(outputs[0].join(f)).ok() != std::fs::read(outputs[1].join(f)).ok())
        .map(|f| f.display().to_string())
        .collect();
    let compared = files.len();
    Ok(Outcome::new(
        compared > 0 && differing.is_empty(),
        format!("{compared} files compared (reports, models, predictions, logs, run manifests, pseudo labels), differing: {differing:?}"),
    ))
}

fn main() -> ExitCode {
    let selected: Option<Vec<usize>> = std::env::var("SEMISENT_ACCEPTANCE")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let wants = |i: usize| selected.as_ref().is_none_or(|s| s.contains(&i));
    // (number, name, runtime limit in seconds)
    let criteria: [(usize, &str, u64); 10] = [
        (1, "gradient integrity", 120),
        (2, "metric oracle equivalence", 5),
        (3, "vote exhaustiveness", 1),
        (4, "overfit sanity", 120),
        (5, "semi-supervised gain at 5% budget", 1200),
        (6, "no harm at 100% budget", 1200),
        (7, "annotation-savings crossover", 2700),
        (8, "pseudo-labeler protocol", 60),
        (9, "head-replacement preservation", 1),
        (10, "end-to-end determinism", 600),
    ];

    let mut bench: Option<Result<Benchmark>> = None;
    let mut failed = 0;
    for (i, name, limit) in criteria {
        if !wants(i) {
            continue;
        }
        let t = Instant::now();
        let result = match i {
            1 => c1_gradients(),
            2 => c2_metric_oracle(),
            3 => c3_votes(),
            4 => c4_overfit(),
            5..=7 => match bench.get_or_insert_with(Benchmark::run) {
                Ok(b) => match i {
                    5 => c5_low_resource(b),
                    6 => c6_full_resource(b),
                    _ => c7_crossover(b),
                },
                Err(e) => Err(semisent::Error::Data(format!("benchmark failed: {e}"))),
            },
            8 => c8_labeler(),
            9 => c9_head_replacement(),
            _ => c10_determinism(),
        };
        let (mut pass, detail, elapsed) = match result {
            Ok(o) => {
                let elapsed = o.elapsed.unwrap_or_else(|| t.elapsed());
                (o.pass, o.detail, elapsed)
            }
            Err(e) => (false, format!("error: {e}"), t.elapsed()),
        };
        let in_time = elapsed.as_secs_f64() < limit as f64;
        pass &= in_time;
        failed += usize::from(!pass);
        println!(
            "{} [{i:>2}] {name}: {detail}; {:.1}s (limit {limit}s{})",
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            if in_time { "" } else { ", exceeded" }
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    }
}
