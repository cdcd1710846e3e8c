//! Binary text-sentiment pseudo labeler: a 1-/2-gram logistic model trained on
//! any Neg/Pos-labeled text, plus ingestion of externally produced labels.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::labels::PseudoClass;
use crate::metrics::{derive_metrics, ConfusionMatrix, MetricsReport};
use crate::numkernel::tensor::sigmoid;

/// Tokens kept per transcript on ingestion.
pub const MAX_TOKENS: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TokenSource {
    Gt,
    Asr,
}

impl TokenSource {
    pub fn as_str(self) -> &'static str {
        match self {
            TokenSource::Gt => "gt",
            TokenSource::Asr => "asr",
        }
    }
}

impl std::str::FromStr for TokenSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gt" => Ok(TokenSource::Gt),
            "asr" => Ok(TokenSource::Asr),
            other => Err(Error::Config(format!("unknown token source `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    tokens: Vec<String>,
    pub source: TokenSource,
}

impl TokenSequence {
    /// Truncates to [`MAX_TOKENS`].
    pub fn new(mut tokens: Vec<String>, source: TokenSource) -> Self {
        tokens.truncate(MAX_TOKENS);
        TokenSequence { tokens, source }
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PseudoLabel {
    pub label: PseudoClass,
    /// Larger of the two class posteriors, in `[0.5, 1]`.
    pub confidence: f64,
}

impl PseudoLabel {
    /// Ties at exactly 0.5 resolve to `Neg`.
    pub fn from_positive_posterior(p_pos: f64) -> Self {
        if p_pos > 0.5 {
            PseudoLabel {
                label: PseudoClass::Pos,
                confidence: p_pos,
            }
        } else {
            PseudoLabel {
                label: PseudoClass::Neg,
                confidence: 1.0 - p_pos,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelerHyper {
    pub epochs: usize,
    pub lr: f64,
    pub l2: f64,
    pub seed: u64,
}

impl Default for LabelerHyper {
    fn default() -> Self {
        LabelerHyper {
            epochs: 10,
            lr: 0.1,
            l2: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
enum Ngram {
    Uni(String),
    Bi(String, String),
}

impl Ngram {
    fn key(&self) -> String {
        match self {
            Ngram::Uni(a) => a.clone(),
            Ngram::Bi(a, b) => format!("{a} {b}"),
        }
    }
}

fn ngrams(tokens: &[String]) -> impl Iterator<Item = Ngram> + '_ {
    tokens
        .iter()
        .map(|t| Ngram::Uni(t.clone()))
        .chain(tokens.windows(2).map(|w| Ngram::Bi(w[0].clone(), w[1].clone())))
}

/// Linear model over unigram and adjacent-bigram counts. Unseen n-grams
/// contribute nothing.
#[derive(Debug, Clone, PartialEq)]
pub struct NgramLabeler {
    weights: HashMap<Ngram, f64>,
    pub bias: f64,
    pub hyper: LabelerHyper,
}

impl NgramLabeler {
    /// Empty model; useful for fixtures.
    pub fn new(hyper: LabelerHyper) -> Self {
        NgramLabeler {
            weights: HashMap::new(),
            bias: 0.0,
            hyper,
        }
    }

    pub fn set_unigram(&mut self, token: &str, weight: f64) {
        self.weights.insert(Ngram::Uni(token.to_string()), weight);
    }

    pub fn set_bigram(&mut self, first: &str, second: &str, weight: f64) {
        self.weights
            .insert(Ngram::Bi(first.to_string(), second.to_string()), weight);
    }

    pub fn score(&self, tokens: &[String]) -> f64 {
        self.bias
            + ngrams(tokens)
                .map(|g| self.weights.get(&g).copied().unwrap_or(0.0))
                .sum::<f64>()
    }

    pub fn positive_posterior(&self, tokens: &[String]) -> f64 {
        sigmoid(self.score(tokens))
    }

    /// Sorted `ngram<TAB>weight` lines after a `bias` line.
    pub fn to_tsv(&self) -> String {
        let sorted: BTreeMap<String, f64> =
            self.weights.iter().map(|(k, v)| (k.key(), *v)).collect();
        let mut out = format!("<bias>\t{:e}\n", self.bias);
        for (k, v) in sorted {
            let _ = writeln!(out, "{k}\t{v:e}");
        }
        out
    }
}

pub fn train_labeler(corpus: &[(TokenSequence, PseudoClass)], hyper: &LabelerHyper) -> Result<NgramLabeler> {
    if corpus.is_empty() {
        return Err(Error::DegenerateCorpus("empty labeler corpus".into()));
    }
    let has = |c: PseudoClass| corpus.iter().any(|(_, l)| *l == c);
    if !has(PseudoClass::Neg) || !has(PseudoClass::Pos) {
        return Err(Error::DegenerateCorpus("labeler corpus has a single class".into()));
    }

    let mut index: HashMap<Ngram, usize> = HashMap::new();
    let mut order: Vec<Ngram> = Vec::new();
    let encoded: Vec<(Vec<usize>, f64)> = corpus
        .iter()
        .map(|(seq, label)| {
            let ids = ngrams(seq.tokens())
                .map(|g| {
                    *index.entry(g.clone()).or_insert_with(|| {
                        order.push(g);
                        order.len() - 1
                    })
                })
                .collect();
            (ids, if *label == PseudoClass::Pos { 1.0 } else { 0.0 })
        })
        .collect();

    let mut w = vec![0.0; order.len()];
    let mut bias = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut perm: Vec<usize> = (0..encoded.len()).collect();
    let decay = 1.0 - hyper.lr * hyper.l2;
    for _ in 0..hyper.epochs {
        perm.shuffle(&mut rng);
        for &i in &perm {
            let (ids, y) = &encoded[i];
            let z = bias + ids.iter().map(|&j| w[j]).sum::<f64>();
            let g = sigmoid(z) - y;
            for &j in ids {
                w[j] = w[j] * decay - hyper.lr * g;
            }
            bias -= hyper.lr * g;
        }
    }
    Ok(NgramLabeler {
        weights: order.into_iter().zip(w).collect(),
        bias,
        hyper: hyper.clone(),
    })
}

pub fn pseudo_label(labeler: &NgramLabeler, tokens: &TokenSequence) -> PseudoLabel {
    PseudoLabel::from_positive_posterior(labeler.positive_posterior(tokens.tokens()))
}

/// `id,label,confidence` CSV, ids in the given order.
pub fn pseudo_labels_to_csv<'a>(rows: impl IntoIterator<Item = (&'a str, PseudoLabel)>) -> String {
    let mut out = String::from("id,label,confidence\n");
    for (id, l) in rows {
        let _ = writeln!(out, "{id},{},{}", l.label, l.confidence);
    }
    out
}

#[derive(serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct TextRow {
    tokens: Vec<String>,
    label: String,
}

/// JSON lines of `{"tokens": [...], "label": "Neg"|"Pos"}`.
pub fn save_text_corpus(path: &Path, corpus: &[(TokenSequence, PseudoClass)]) -> Result<()> {
    let mut out = String::new();
    for (seq, label) in corpus {
        let row = TextRow { tokens: seq.tokens().to_vec(), label: label.as_str().to_string() };
        out.push_str(&serde_json::to_string(&row).expect("serializable row"));
        out.push('\n');
    }
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
    }
    std::fs::write(path, out).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn load_text_corpus(path: &Path) -> Result<Vec<(TokenSequence, PseudoClass)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let row: TextRow = serde_json::from_str(raw).map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        let label: PseudoClass = row
            .label
            .parse()
            .map_err(|_| Error::parse(path, i + 1, format!("unknown label `{}`", row.label)))?;
        out.push((TokenSequence::new(row.tokens, TokenSource::Gt), label));
    }
    Ok(out)
}

pub fn load_external_pseudo_labels(path: &Path) -> Result<BTreeMap<String, PseudoLabel>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::parse(path, 1, e.to_string()))?
        .clone();
    if headers.iter().collect::<Vec<_>>() != ["id", "label", "confidence"] {
        return Err(Error::parse(path, 1, "header must be `id,label,confidence`"));
    }
    let mut out = BTreeMap::new();
    let mut first_seen: HashMap<String, usize> = HashMap::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| Error::parse(path, line, e.to_string()))?;
        if record.len() != 3 {
            return Err(Error::parse(path, line, format!("expected 3 fields, got {}", record.len())));
        }
        let id = record[0].to_string();
        if id.is_empty() {
            return Err(Error::parse(path, line, "empty id"));
        }
        let label: PseudoClass = record[1]
            .parse()
            .map_err(|_| Error::parse(path, line, format!("unknown label `{}`", &record[1])))?;
        let confidence: f64 = record[2]
            .parse()
            .map_err(|_| Error::parse(path, line, format!("bad confidence `{}`", &record[2])))?;
        if !(0.5..=1.0).contains(&confidence) {
            return Err(Error::parse(path, line, format!("confidence {confidence} outside [0.5, 1]")));
        }
        if let Some(prev) = first_seen.insert(id.clone(), line) {
            return Err(Error::parse(path, line, format!("duplicate id `{id}` (first on line {prev})")));
        }
        out.insert(id, PseudoLabel { label, confidence });
    }
    Ok(out)
}

/// Binary REC evaluation over the Negative/Positive gold utterances only;
/// Neutral-gold and unlabeled utterances are skipped.
pub fn evaluate_labeler<F>(dataset: &Dataset, mut predict: F) -> Result<MetricsReport>
where
    F: FnMut(&crate::data::Utterance) -> Result<PseudoLabel>,
{
    let mut cm = ConfusionMatrix::new(PseudoClass::class_names());
    for utt in &dataset.utterances {
        let Some(gold) = utt.gold.and_then(|g| g.binary()) else {
            continue;
        };
        let predicted = predict(utt)?;
        cm.accumulate_index(gold.index(), predicted.label.index())?;
    }
    if cm.total() == 0 {
        return Err(Error::EmptyEvaluation(format!(
            "dataset `{}` has no Negative/Positive utterances",
            dataset.name
        )));
    }
    derive_metrics(&cm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Utterance;
    use crate::labels::SentimentLabel;

    fn seq(s: &str) -> TokenSequence {
        TokenSequence::new(s.split_whitespace().map(String::from).collect(), TokenSource::Gt)
    }

    fn toy_corpus() -> Vec<(TokenSequence, PseudoClass)> {
        let pos = ["this is great", "great fun", "what a great day", "simply great stuff"];
        let neg = ["this is awful", "awful fun", "what an awful day", "simply awful stuff"];
        pos.iter()
            .map(|s| (seq(s), PseudoClass::Pos))
            .chain(neg.iter().map(|s| (seq(s), PseudoClass::Neg)))
            .collect()
    }

    #[test]
    fn separable_corpus_is_fit_exactly() {
        let corpus = toy_corpus();
        let lab = train_labeler(&corpus, &LabelerHyper::default()).unwrap();
        for (s, l) in &corpus {
            assert_eq!(pseudo_label(&lab, s).label, *l);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let h = LabelerHyper { seed: 5, ..Default::default() };
        let a = train_labeler(&toy_corpus(), &h).unwrap();
        let b = train_labeler(&toy_corpus(), &h).unwrap();
        assert_eq!(a.to_tsv(), b.to_tsv());
    }

    #[test]
    fn degenerate_corpora_rejected() {
        assert!(matches!(train_labeler(&[], &LabelerHyper::default()), Err(Error::DegenerateCorpus(_))));
        let single = vec![(seq("great"), PseudoClass::Pos)];
        assert!(matches!(train_labeler(&single, &LabelerHyper::default()), Err(Error::DegenerateCorpus(_))));
    }

    #[test]
    fn empty_sequence_ties_to_neg() {
        let lab = NgramLabeler::new(LabelerHyper::default());
        let l = pseudo_label(&lab, &seq(""));
        assert_eq!(l.label, PseudoClass::Neg);
        assert_eq!(l.confidence, 0.5);
    }

    #[test]
    fn fixture_weight_gives_closed_form_confidence() {
        let mut lab = NgramLabeler::new(LabelerHyper::default());
        lab.set_unigram("great", 2.0);
        let l = pseudo_label(&lab, &seq("great"));
        assert_eq!(l.label, PseudoClass::Pos);
        let expected = 1.0 / (1.0 + (-2.0f64).exp());
        assert!((l.confidence - expected).abs() < 1e-15);
        assert!((l.confidence - 0.8808).abs() < 1e-4);
    }

    #[test]
    fn bigram_weights_only_see_adjacent_pairs() {
        let mut lab = NgramLabeler::new(LabelerHyper::default());
        lab.set_bigram("not", "bad", 3.0);
        assert_eq!(lab.score(&seq("not bad").tokens), 3.0);
        assert_eq!(lab.score(&seq("bad not").tokens), 0.0);
    }

    #[test]
    fn truncation_to_max_tokens() {
        let long = TokenSequence::new(vec!["x".to_string(); 800], TokenSource::Asr);
        assert_eq!(long.len(), MAX_TOKENS);
    }

    fn write(dir: &Path, body: &str) -> std::path::PathBuf {
        let p = dir.join("labels.csv");
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn external_labels_parse() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "id,label,confidence\nutt42,Pos,0.93\n");
        let m = load_external_pseudo_labels(&p).unwrap();
        assert_eq!(m["utt42"], PseudoLabel { label: PseudoClass::Pos, confidence: 0.93 });
    }

    #[test]
    fn external_label_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let dup = write(dir.path(), "id,label,confidence\nutt42,Pos,0.93\nutt42,Neg,0.6\n");
        let e = load_external_pseudo_labels(&dup).unwrap_err().to_string();
        assert!(e.contains(":3:") && e.contains("duplicate"), "{e}");

        let range = write(dir.path(), "id,label,confidence\nutt1,Pos,1.2\n");
        let e = load_external_pseudo_labels(&range).unwrap_err().to_string();
        assert!(e.contains(":2:") && e.contains("outside"), "{e}");

        let unknown = write(dir.path(), "id,label,confidence\nutt1,Neutral,0.7\n");
        assert!(load_external_pseudo_labels(&unknown).unwrap_err().to_string().contains("unknown label"));

        let malformed = write(dir.path(), "id,label,confidence\nutt1,Pos\n");
        assert!(matches!(load_external_pseudo_labels(&malformed), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let labels = [
            ("a", PseudoLabel { label: PseudoClass::Neg, confidence: 0.5 }),
            ("b", PseudoLabel { label: PseudoClass::Pos, confidence: 0.8807970779778823 }),
        ];
        let p = write(dir.path(), &pseudo_labels_to_csv(labels.iter().copied()));
        let back = load_external_pseudo_labels(&p).unwrap();
        assert_eq!(back["a"], labels[0].1);
        assert_eq!(back["b"], labels[1].1);
    }

    fn utt(id: &str, gold: SentimentLabel) -> Utterance {
        Utterance::labeled(id, 1.0, seq(""), [gold; 3])
    }

    #[test]
    fn evaluation_counts_only_neg_and_pos() {
        let mut utts = Vec::new();
        for i in 0..5 {
            utts.push(utt(&format!("n{i}"), SentimentLabel::Negative));
            utts.push(utt(&format!("p{i}"), SentimentLabel::Positive));
        }
        utts.push(utt("u0", SentimentLabel::Neutral));
        let ds = Dataset::new("eval", utts);
        let mut seen = Vec::new();
        let r = evaluate_labeler(&ds, |u| {
            seen.push(u.id.clone());
            let correct = matches!(u.id.as_str(), "n0" | "n1" | "n2" | "n3" | "p0" | "p1" | "p2");
            let truth = if u.id.starts_with('n') { PseudoClass::Neg } else { PseudoClass::Pos };
            let label = match (correct, truth) {
                (true, t) => t,
                (false, PseudoClass::Neg) => PseudoClass::Pos,
                (false, PseudoClass::Pos) => PseudoClass::Neg,
            };
            Ok(PseudoLabel { label, confidence: 0.9 })
        })
        .unwrap();
        assert!(!seen.contains(&"u0".to_string()));
        assert_eq!(r.total, 10);
        assert!((r.unweighted.recall - 0.7).abs() < 1e-12);
        assert!((r.weighted.recall - 0.7).abs() < 1e-12);
    }

    #[test]
    fn all_neutral_dataset_is_empty_evaluation() {
        let ds = Dataset::new("n", vec![utt("a", SentimentLabel::Neutral)]);
        assert!(matches!(
            evaluate_labeler(&ds, |_| Ok(PseudoLabel::from_positive_posterior(0.9))),
            Err(Error::EmptyEvaluation(_))
        ));
    }
}
