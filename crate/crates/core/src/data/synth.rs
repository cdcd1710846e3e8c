//! Desk-scale synthetic corpus: class-conditional speech-encoder frames,
//! marker-word transcripts with GT and ASR variants, noisy annotator triples,
//! contextual token embeddings and a separate binary text corpus for training
//! the pseudo labeler.
//!
//! Frames: every utterance gets a speaker offset and unit frame noise. A
//! randomly placed sentiment-bearing segment is shifted by `separation` along
//! a fixed polarity direction (−1, 0, +1 for Negative, Neutral, Positive) and
//! by `salience` along a fixed arousal direction.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::{write_embeddings, write_frames, Dataset, Utterance};
use crate::error::{Error, Result};
use crate::labels::{PseudoClass, SentimentLabel};
use crate::numkernel::Tensor;
use crate::pseudolab::{TokenSequence, TokenSource};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub class_priors: [f64; 3],
    pub frames_min: usize,
    pub frames_max: usize,
    pub feature_dim: usize,
    /// Distance between adjacent class means, in frame-noise units.
    pub separation: f64,
    /// Probability that a marker phrase is swapped for another class's.
    pub token_noise: f64,
    /// Extra per-token substitution rate of the ASR transcript.
    pub asr_noise: f64,
    /// Probability that an annotator reports a different class.
    pub annotator_noise: f64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_eval: usize,
    pub n_unlabeled: usize,
    /// Size of the binary text corpus the labeler is trained on.
    pub n_text: usize,
    pub embedding_dim: usize,
    pub speaker_std: f64,
    /// Sentiment segment length as a fraction of `T`, sampled in this range.
    pub segment_fraction: (f64, f64),
    pub salience: f64,
    pub frame_seconds: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            class_priors: [1.0 / 3.0; 3],
            frames_min: 20,
            frames_max: 60,
            feature_dim: 16,
            separation: 1.0,
            token_noise: 0.15,
            asr_noise: 0.10,
            annotator_noise: 0.10,
            n_train: 2000,
            n_val: 400,
            n_eval: 400,
            n_unlabeled: 6000,
            n_text: 2000,
            embedding_dim: 16,
            speaker_std: 0.5,
            segment_fraction: (0.25, 0.5),
            salience: 1.0,
            frame_seconds: 0.25,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.class_priors.iter().any(|p| !(p.is_finite() && *p >= 0.0))
            || self.class_priors.iter().sum::<f64>() <= 0.0
        {
            return bad(format!("class priors must be non-negative with positive sum: {:?}", self.class_priors));
        }
        if self.frames_min == 0 || self.frames_max < self.frames_min {
            return bad(format!("frame range [{}, {}] invalid", self.frames_min, self.frames_max));
        }
        if self.feature_dim < 2 || self.embedding_dim < 3 {
            return bad("feature_dim must be >= 2 and embedding_dim >= 3".into());
        }
        for (name, p) in [
            ("token_noise", self.token_noise),
            ("asr_noise", self.asr_noise),
            ("annotator_noise", self.annotator_noise),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must be in [0, 1], got {p}"));
            }
        }
        let (lo, hi) = self.segment_fraction;
        if !(0.0 < lo && lo <= hi && hi <= 1.0) {
            return bad(format!("segment fraction range ({lo}, {hi}) invalid"));
        }
        if !(self.separation >= 0.0 && self.speaker_std >= 0.0 && self.frame_seconds > 0.0) {
            return bad("separation, speaker_std must be >= 0 and frame_seconds > 0".into());
        }
        Ok(())
    }
}

const FILLERS: usize = 200;
const POS_MARKERS: [&[&str]; 6] = [&["great"], &["love"], &["wonderful"], &["nice"], &["happy"], &["not", "bad"]];
const NEG_MARKERS: [&[&str]; 6] = [&["awful"], &["hate"], &["terrible"], &["bad"], &["sad"], &["not", "good"]];
const NEU_MARKERS: [&[&str]; 4] = [&["okay"], &["fine"], &["maybe"], &["guess"]];

fn markers(class: SentimentLabel) -> &'static [&'static [&'static str]] {
    match class {
        SentimentLabel::Negative => &NEG_MARKERS,
        SentimentLabel::Neutral => &NEU_MARKERS,
        SentimentLabel::Positive => &POS_MARKERS,
    }
}

fn filler(i: usize) -> String {
    format!("w{i:03}")
}

fn polarity(token: &str) -> (f64, f64) {
    if POS_MARKERS.iter().any(|m| m.len() == 1 && m[0] == token) || token == "good" {
        (1.0, 0.0)
    } else if NEG_MARKERS.iter().any(|m| m.len() == 1 && m[0] == token) {
        (-1.0, 0.0)
    } else if NEU_MARKERS.iter().any(|m| m[0] == token) {
        (0.0, 1.0)
    } else {
        (0.0, 0.0)
    }
}

/// One generated utterance with everything derived from it.
#[derive(Debug, Clone)]
pub struct SynthUtterance {
    pub utterance: Utterance,
    pub class: SentimentLabel,
    pub frames: Tensor,
    pub embedding_gt: Tensor,
    pub embedding_asr: Tensor,
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub train: Vec<SynthUtterance>,
    pub val: Vec<SynthUtterance>,
    pub eval: Vec<SynthUtterance>,
    pub unlabeled: Vec<SynthUtterance>,
    pub text: Vec<(TokenSequence, PseudoClass)>,
}

struct World {
    polarity_dir: Vec<f64>,
    arousal_dir: Vec<f64>,
    embed_polarity: Vec<f64>,
    embed_neutral: Vec<f64>,
    token_vectors: std::collections::HashMap<String, Vec<f64>>,
}

fn unit_vector<R: Rng>(dim: usize, rng: &mut R) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

/// Gram-Schmidt against `base`.
fn orthogonal_unit<R: Rng>(base: &[f64], rng: &mut R) -> Vec<f64> {
    let mut v = unit_vector(base.len(), rng);
    let d: f64 = v.iter().zip(base).map(|(a, b)| a * b).sum();
    v.iter_mut().zip(base).for_each(|(a, b)| *a -= d * b);
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

impl World {
    fn new(spec: &SynthSpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(0);
        let polarity_dir = unit_vector(spec.feature_dim, &mut rng);
        let arousal_dir = orthogonal_unit(&polarity_dir, &mut rng);
        let embed_polarity = unit_vector(spec.embedding_dim, &mut rng);
        let embed_neutral = orthogonal_unit(&embed_polarity, &mut rng);
        let mut vocab: Vec<String> = (0..FILLERS).map(filler).collect();
        for m in POS_MARKERS.iter().chain(&NEG_MARKERS).chain(&NEU_MARKERS) {
            vocab.extend(m.iter().map(|s| s.to_string()));
        }
        let scale = 1.0 / (spec.embedding_dim as f64).sqrt();
        let token_vectors = vocab
            .into_iter()
            .map(|t| {
                let v = (0..spec.embedding_dim)
                    .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                (t, v)
            })
            .collect();
        World {
            polarity_dir,
            arousal_dir,
            embed_polarity,
            embed_neutral,
            token_vectors,
        }
    }

    fn frames<R: Rng>(&self, spec: &SynthSpec, class: SentimentLabel, rng: &mut R) -> Tensor {
        let d = spec.feature_dim;
        let t_len = rng.random_range(spec.frames_min..=spec.frames_max);
        let speaker = Normal::new(0.0, spec.speaker_std).expect("valid std");
        let offset: Vec<f64> = (0..d).map(|_| speaker.sample(rng)).collect();
        let (lo, hi) = spec.segment_fraction;
        let frac = if hi > lo { rng.random_range(lo..=hi) } else { lo };
        let seg_len = ((t_len as f64 * frac).round() as usize).clamp(1, t_len);
        let start = rng.random_range(0..=t_len - seg_len);
        let sign = class.index() as f64 - 1.0;

        let mut m = Tensor::zeros(&[t_len, d]);
        for t in 0..t_len {
            let in_segment = (start..start + seg_len).contains(&t);
            for (k, v) in m.row_mut(t).iter_mut().enumerate() {
                let mut x = offset[k] + rng.sample::<f64, _>(StandardNormal);
                if in_segment {
                    x += sign * spec.separation * self.polarity_dir[k] + spec.salience * self.arousal_dir[k];
                }
                // stored as f32 on disk
                *v = x as f32 as f64;
            }
        }
        m
    }

    fn embedding<R: Rng>(&self, spec: &SynthSpec, tokens: &[String], rng: &mut R) -> Tensor {
        let e = spec.embedding_dim;
        let rows = tokens.len().max(1);
        let mut z = Tensor::zeros(&[rows, e]);
        for (t, tok) in tokens.iter().enumerate() {
            let (mut pol, neu) = polarity(tok);
            if t > 0 && tokens[t - 1] == "not" {
                pol = -pol;
            }
            let base = self.token_vectors.get(tok);
            for (k, v) in z.row_mut(t).iter_mut().enumerate() {
                let noise: f64 = rng.sample(StandardNormal);
                let x = base.map_or(0.0, |b| b[k])
                    + pol * self.embed_polarity[k]
                    + neu * self.embed_neutral[k]
                    + 0.1 * noise;
                *v = x as f32 as f64;
            }
        }
        z
    }
}

fn draw_class<R: Rng>(priors: &[f64; 3], rng: &mut R) -> SentimentLabel {
    let total: f64 = priors.iter().sum();
    let mut u = rng.random_range(0.0..total);
    for (k, p) in priors.iter().enumerate() {
        if u < *p {
            return SentimentLabel::ALL[k];
        }
        u -= p;
    }
    SentimentLabel::Positive
}

fn other_class<R: Rng>(class: SentimentLabel, rng: &mut R) -> SentimentLabel {
    let shift = rng.random_range(1..=2);
    SentimentLabel::ALL[(class.index() + shift) % 3]
}

/// Filler words with 1–3 marker phrases of `class`, each swapped for another
/// class's marker with probability `noise`.
fn transcript<R: Rng>(class: SentimentLabel, noise: f64, rng: &mut R) -> Vec<String> {
    let mut tokens: Vec<String> = (0..rng.random_range(6..=14))
        .map(|_| filler(rng.random_range(0..FILLERS)))
        .collect();
    for _ in 0..rng.random_range(1..=3) {
        let source = if rng.random_bool(noise) { other_class(class, rng) } else { class };
        let set = markers(source);
        let phrase = set[rng.random_range(0..set.len())];
        let at = rng.random_range(0..=tokens.len());
        for (j, w) in phrase.iter().enumerate() {
            tokens.insert(at + j, w.to_string());
        }
    }
    tokens
}

fn asr_variant<R: Rng>(gt: &[String], noise: f64, rng: &mut R) -> Vec<String> {
    gt.iter()
        .map(|t| {
            if rng.random_bool(noise) {
                filler(rng.random_range(0..FILLERS))
            } else {
                t.clone()
            }
        })
        .collect()
}

fn split<R: Rng>(
    world: &World,
    spec: &SynthSpec,
    prefix: &str,
    n: usize,
    annotated: bool,
    rng: &mut R,
) -> Vec<SynthUtterance> {
    (0..n)
        .map(|i| {
            let class = draw_class(&spec.class_priors, rng);
            let frames = world.frames(spec, class, rng);
            let gt = transcript(class, spec.token_noise, rng);
            let asr = asr_variant(&gt, spec.asr_noise, rng);
            let embedding_gt = world.embedding(spec, &gt, rng);
            let embedding_asr = world.embedding(spec, &asr, rng);
            let id = format!("{prefix}{i:05}");
            let mut utterance = Utterance {
                id: id.clone(),
                duration_seconds: frames.rows() as f64 * spec.frame_seconds,
                features: Some(PathBuf::from(format!("features/{id}.sfh"))),
                tokens_gt: TokenSequence::new(gt, TokenSource::Gt),
                tokens_asr: Some(TokenSequence::new(asr, TokenSource::Asr)),
                annotator_labels: None,
                gold: None,
            };
            if annotated {
                let mut labels = [class; 3];
                for l in labels.iter_mut() {
                    if rng.random_bool(spec.annotator_noise) {
                        *l = other_class(class, rng);
                    }
                }
                utterance.annotator_labels = Some(labels);
                utterance.gold = super::majority_vote(labels);
            }
            SynthUtterance {
                utterance,
                class,
                frames,
                embedding_gt,
                embedding_asr,
            }
        })
        .collect()
}

/// In-memory generation; every split draws from its own seeded stream.
pub fn generate(spec: &SynthSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let world = World::new(spec);
    let stream = |k: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(k);
        rng
    };
    let mut text_rng = stream(5);
    let text = (0..spec.n_text)
        .map(|_| {
            let label = if text_rng.random_bool(0.5) { PseudoClass::Pos } else { PseudoClass::Neg };
            let class = match label {
                PseudoClass::Neg => SentimentLabel::Negative,
                PseudoClass::Pos => SentimentLabel::Positive,
            };
            (TokenSequence::new(transcript(class, spec.token_noise, &mut text_rng), TokenSource::Gt), label)
        })
        .collect();
    Ok(SyntheticCorpus {
        train: split(&world, spec, "train", spec.n_train, true, &mut stream(1)),
        val: split(&world, spec, "val", spec.n_val, true, &mut stream(2)),
        eval: split(&world, spec, "eval", spec.n_eval, true, &mut stream(3)),
        unlabeled: split(&world, spec, "unl", spec.n_unlabeled, false, &mut stream(4)),
        text,
    })
}

impl SyntheticCorpus {
    /// Labeled datasets keep only utterances with a resolved gold label;
    /// 3-way disagreements go to `discarded` as a manifest load would.
    pub fn dataset(name: &str, utts: &[SynthUtterance], root: &Path) -> Dataset {
        let mut ds = Dataset::new(name, Vec::new());
        ds.root = root.to_path_buf();
        for (i, s) in utts.iter().enumerate() {
            if s.utterance.annotator_labels.is_some() && s.utterance.gold.is_none() {
                ds.discarded.push(super::Discard { id: s.utterance.id.clone(), line: i + 1 });
            } else {
                ds.utterances.push(s.utterance.clone());
            }
        }
        ds
    }
}

/// Paths written by [`generate_synthetic_corpus`].
#[derive(Debug, Clone)]
pub struct SynthSummary {
    pub root: PathBuf,
    pub manifests: Vec<(String, PathBuf)>,
    pub text_corpus: PathBuf,
    pub discarded: usize,
}

pub const SPLITS: [&str; 4] = ["train", "val", "eval", "unlabeled"];

/// Writes manifests, per-utterance `SFH1` feature files, per-split `SFE1`
/// embedding files (GT and ASR tokens) and the labeler text corpus.
pub fn generate_synthetic_corpus(spec: &SynthSpec, out: &Path) -> Result<SynthSummary> {
    let corpus = generate(spec)?;
    let mut manifests = Vec::new();
    let mut discarded = 0;
    for (name, utts) in SPLITS.iter().zip([&corpus.train, &corpus.val, &corpus.eval, &corpus.unlabeled]) {
        for s in utts.iter() {
            write_frames(&out.join(s.utterance.features.as_ref().expect("synthetic features")), &s.frames)?;
            if s.utterance.annotator_labels.is_some() && s.utterance.gold.is_none() {
                discarded += 1;
            }
        }
        let all = Dataset {
            utterances: utts.iter().map(|s| s.utterance.clone()).collect(),
            ..Dataset::new(name, Vec::new())
        };
        let path = out.join(format!("{name}.jsonl"));
        super::save_manifest(&all, &path)?;
        write_embeddings(
            &out.join(format!("embeddings/{name}_gt.sfe")),
            utts.iter().map(|s| (s.utterance.id.as_str(), &s.embedding_gt)),
        )?;
        write_embeddings(
            &out.join(format!("embeddings/{name}_asr.sfe")),
            utts.iter().map(|s| (s.utterance.id.as_str(), &s.embedding_asr)),
        )?;
        manifests.push((name.to_string(), path));
    }
    let text_corpus = out.join("text_corpus.jsonl");
    crate::pseudolab::save_text_corpus(&text_corpus, &corpus.text)?;
    Ok(SynthSummary {
        root: out.to_path_buf(),
        manifests,
        text_corpus,
        discarded,
    })
}
