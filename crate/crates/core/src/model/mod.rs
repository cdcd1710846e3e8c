//! The attention-pooled BLSTM sentiment classifier.
//!
//! Layer chain: front (FC + tanh, token embedding, or pass-through) →
//! stacked BLSTM → additive attention pooling → affine output head.

mod persist;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numkernel::affine::{tanh_backward, tanh_forward};
use crate::numkernel::attention::AttentionCache;
use crate::numkernel::gradcheck::GradFragment;
use crate::numkernel::lstm::BlstmCache;
use crate::numkernel::{
    softmax, softmax_cross_entropy, Affine, AttentionPool, Blstm, ClassWeights, Embedding, Param,
    Tensor,
};

pub use persist::{load_model, save_model};

/// How per-frame inputs enter the recurrent stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Front {
    /// Fully connected layer with tanh over dense frames.
    Dense,
    /// Learned token embedding over token ids.
    Embedding,
    /// Dense frames fed straight into the first BLSTM.
    Direct,
}

impl Front {
    pub fn as_str(self) -> &'static str {
        match self {
            Front::Dense => "dense",
            Front::Embedding => "embedding",
            Front::Direct => "direct",
        }
    }
}

impl FromStr for Front {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dense" => Ok(Front::Dense),
            "embedding" => Ok(Front::Embedding),
            "direct" => Ok(Front::Direct),
            other => Err(Error::Config(format!("unknown front `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierConfig {
    pub front: Front,
    /// Features per frame, or vocabulary size for [`Front::Embedding`].
    pub input_dim: usize,
    /// Width of the FC layer or embedding; unused for [`Front::Direct`].
    pub fc_dim: usize,
    pub blstm_hidden: usize,
    pub blstm_layers: usize,
    pub attention_dim: usize,
    pub num_classes: usize,
    pub seed: u64,
}

impl ClassifierConfig {
    /// Speech-feature classifier: FC → 2×BLSTM → attention → head.
    pub fn e2e(input_dim: usize, num_classes: usize, seed: u64) -> Self {
        ClassifierConfig {
            front: Front::Dense,
            input_dim,
            fc_dim: 64,
            blstm_hidden: 64,
            blstm_layers: 2,
            attention_dim: 32,
            num_classes,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("input_dim", self.input_dim),
            ("blstm_hidden", self.blstm_hidden),
            ("blstm_layers", self.blstm_layers),
            ("attention_dim", self.attention_dim),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        if self.front != Front::Direct && self.fc_dim == 0 {
            return Err(Error::Config("fc_dim must be >= 1".into()));
        }
        if self.front == Front::Dense && self.blstm_layers != 2 {
            return Err(Error::Config(format!(
                "speech classifier uses exactly 2 BLSTM layers, got {}",
                self.blstm_layers
            )));
        }
        if !(2..=3).contains(&self.num_classes) {
            return Err(Error::Config(format!(
                "num_classes must be 2 or 3, got {}",
                self.num_classes
            )));
        }
        Ok(())
    }

    fn recurrent_input_dim(&self) -> usize {
        match self.front {
            Front::Dense | Front::Embedding => self.fc_dim,
            Front::Direct => self.input_dim,
        }
    }
}

/// Which objective produced a set of weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageTag {
    Fresh,
    /// Transcript tokens, trained from scratch.
    TextBaseline,
    /// Precomputed contextual embeddings.
    TextContextual,
    /// Pretrained on binary pseudo labels.
    PseudoPretrained,
    /// Trained on 3-class human labels (fine-tuned or from scratch).
    FineTuned,
}

impl StageTag {
    pub fn as_str(self) -> &'static str {
        match self {
            StageTag::Fresh => "fresh",
            StageTag::TextBaseline => "theta_s",
            StageTag::TextContextual => "theta_b",
            StageTag::PseudoPretrained => "theta_p",
            StageTag::FineTuned => "theta_f",
        }
    }

    pub fn can_advance_to(self, next: StageTag) -> bool {
        use StageTag::*;
        matches!(
            (self, next),
            (Fresh, TextBaseline)
                | (Fresh, TextContextual)
                | (Fresh, PseudoPretrained)
                | (Fresh, FineTuned)
                | (PseudoPretrained, FineTuned)
        )
    }
}

impl fmt::Display for StageTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StageTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "fresh" => StageTag::Fresh,
            "theta_s" => StageTag::TextBaseline,
            "theta_b" => StageTag::TextContextual,
            "theta_p" => StageTag::PseudoPretrained,
            "theta_f" => StageTag::FineTuned,
            other => return Err(Error::Config(format!("unknown stage `{other}`"))),
        })
    }
}

/// Model input: dense frames or token ids.
#[derive(Debug, Clone, Copy)]
pub enum Input<'a> {
    Frames(&'a Tensor),
    Tokens(&'a [usize]),
}

#[derive(Debug, Clone, PartialEq)]
enum FrontLayer {
    Dense(Affine),
    Embedding(Embedding),
    Direct,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SentimentClassifier {
    config: ClassifierConfig,
    stage: StageTag,
    front: FrontLayer,
    blstms: Vec<Blstm>,
    attention: AttentionPool,
    head: Affine,
    /// Free-form provenance persisted with the weights (lineage, vocabulary).
    pub meta: BTreeMap<String, String>,
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    front_out: Tensor,
    blstm: Vec<BlstmCache>,
    attention: AttentionCache,
    logits: Vec<f64>,
}

impl ForwardCache {
    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn attention_weights(&self) -> &[f64] {
        self.attention.weights()
    }
}

/// Seeded construction with `stage = fresh`.
pub fn build_classifier(config: ClassifierConfig) -> Result<SentimentClassifier> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let front = match config.front {
        Front::Dense => FrontLayer::Dense(Affine::new("fc", config.input_dim, config.fc_dim, &mut rng)),
        Front::Embedding => {
            FrontLayer::Embedding(Embedding::new("embedding", config.input_dim, config.fc_dim, &mut rng))
        }
        Front::Direct => FrontLayer::Direct,
    };
    let mut blstms = Vec::with_capacity(config.blstm_layers);
    let mut width = config.recurrent_input_dim();
    for l in 0..config.blstm_layers {
        blstms.push(Blstm::new(&format!("blstm{l}"), width, config.blstm_hidden, &mut rng));
        width = 2 * config.blstm_hidden;
    }
    let attention = AttentionPool::new("attention", width, config.attention_dim, &mut rng);
    let head = Affine::new("head", width, config.num_classes, &mut rng);
    Ok(SentimentClassifier {
        config,
        stage: StageTag::Fresh,
        front,
        blstms,
        attention,
        head,
        meta: BTreeMap::new(),
    })
}

impl SentimentClassifier {
    pub fn config(&self) -> &ClassifierConfig {
        &self.config
    }

    pub fn stage(&self) -> StageTag {
        self.stage
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    /// Moves to `next`; stages never regress.
    pub fn advance_stage(&mut self, next: StageTag) -> Result<()> {
        if !self.stage.can_advance_to(next) {
            return Err(Error::Stage(format!("{} -> {}", self.stage, next)));
        }
        self.stage = next;
        Ok(())
    }

    pub fn forward_cached(&self, input: Input<'_>) -> Result<ForwardCache> {
        let front_out = match (&self.front, input) {
            (FrontLayer::Dense(fc), Input::Frames(x)) => {
                self.check_frames(x)?;
                tanh_forward(&fc.forward(x)?)
            }
            (FrontLayer::Direct, Input::Frames(x)) => {
                self.check_frames(x)?;
                x.clone()
            }
            (FrontLayer::Embedding(emb), Input::Tokens(ids)) => emb.forward(ids)?,
            (_, Input::Frames(_)) => {
                return Err(Error::Dimension("token model given dense frames".into()))
            }
            (_, Input::Tokens(_)) => {
                return Err(Error::Dimension("frame model given token ids".into()))
            }
        };
        let mut caches: Vec<BlstmCache> = Vec::with_capacity(self.blstms.len());
        for layer in &self.blstms {
            let x = caches.last().map_or(&front_out, |c| c.output());
            let cache = layer.forward(x)?;
            caches.push(cache);
        }
        let last = caches.last().map_or(&front_out, |c| c.output());
        let attention = self.attention.forward(last)?;
        let pooled = Tensor::from_vec(&[1, attention.pooled().len()], attention.pooled().to_vec())?;
        let logits = self.head.forward(&pooled)?.into_data();
        Ok(ForwardCache {
            front_out,
            blstm: caches,
            attention,
            logits,
        })
    }

    fn check_frames(&self, x: &Tensor) -> Result<()> {
        if x.rows() == 0 {
            return Err(Error::EmptySequence);
        }
        if x.shape().len() != 2 || x.cols() != self.config.input_dim {
            return Err(Error::Dimension(format!(
                "input frames {:?}, model expects {} features per frame",
                x.shape(),
                self.config.input_dim
            )));
        }
        Ok(())
    }

    /// Returns `(logits, attention_weights)`.
    pub fn forward(&self, input: Input<'_>) -> Result<(Vec<f64>, Vec<f64>)> {
        let cache = self.forward_cached(input)?;
        let weights = cache.attention.weights().to_vec();
        Ok((cache.logits, weights))
    }

    pub fn posteriors(&self, input: Input<'_>) -> Result<Vec<f64>> {
        Ok(softmax(&self.forward(input)?.0))
    }

    /// Accumulates gradients of a loss whose gradient w.r.t. the logits is
    /// `dlogits`.
    pub fn backward(&mut self, input: Input<'_>, cache: &ForwardCache, dlogits: &[f64]) -> Result<()> {
        let width = self.head.input_dim();
        let pooled = Tensor::from_vec(&[1, width], cache.attention.pooled().to_vec())?;
        let dlog = Tensor::from_vec(&[1, dlogits.len()], dlogits.to_vec())?;
        let dpooled = self.head.backward(&pooled, &dlog);

        let last = cache.blstm.last().map_or(&cache.front_out, |c| c.output());
        let mut dseq = self.attention.backward(last, &cache.attention, dpooled.data());
        for l in (0..self.blstms.len()).rev() {
            let x = if l == 0 {
                &cache.front_out
            } else {
                cache.blstm[l - 1].output()
            };
            dseq = self.blstms[l].backward(x, &cache.blstm[l], &dseq);
        }
        match (&mut self.front, input) {
            (FrontLayer::Dense(fc), Input::Frames(x)) => {
                let da = tanh_backward(&cache.front_out, &dseq);
                fc.backward(x, &da);
            }
            (FrontLayer::Embedding(emb), Input::Tokens(ids)) => emb.backward(ids, &dseq),
            (FrontLayer::Direct, _) => {}
            _ => return Err(Error::Dimension("input kind changed between passes".into())),
        }
        Ok(())
    }

    /// Forward, weighted cross-entropy and backward for one example.
    pub fn accumulate_example(
        &mut self,
        input: Input<'_>,
        target: usize,
        weights: &ClassWeights,
    ) -> Result<f64> {
        let cache = self.forward_cached(input)?;
        let (loss, dlogits) = softmax_cross_entropy(&cache.logits, target, weights)?;
        self.backward(input, &cache, &dlogits)?;
        Ok(loss)
    }

    /// All trainable parameters in declared layer order.
    pub fn params(&self) -> Vec<&Param> {
        let mut p: Vec<&Param> = match &self.front {
            FrontLayer::Dense(fc) => fc.params(),
            FrontLayer::Embedding(e) => vec![&e.table],
            FrontLayer::Direct => Vec::new(),
        };
        for b in &self.blstms {
            p.extend(b.params());
        }
        p.extend(self.attention.params());
        p.extend(self.head.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p: Vec<&mut Param> = match &mut self.front {
            FrontLayer::Dense(fc) => fc.params_mut(),
            FrontLayer::Embedding(e) => vec![&mut e.table],
            FrontLayer::Direct => Vec::new(),
        };
        for b in &mut self.blstms {
            p.extend(b.params_mut());
        }
        p.extend(self.attention.params_mut());
        p.extend(self.head.params_mut());
        p
    }

    pub fn zero_grads(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }

    pub fn is_head_param(name: &str) -> bool {
        name.starts_with("head.")
    }

    /// Discards the output layer and attaches a freshly initialized one.
    /// Every other parameter is carried over unchanged.
    pub fn replace_output_head(&self, new_num_classes: usize, seed: u64) -> Result<SentimentClassifier> {
        if self.stage != StageTag::PseudoPretrained {
            return Err(Error::Stage(format!(
                "head replacement needs a theta_p model, got {}",
                self.stage
            )));
        }
        let mut config = self.config.clone();
        config.num_classes = new_num_classes;
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut next = self.clone();
        next.head = Affine::new("head", self.head.input_dim(), new_num_classes, &mut rng);
        next.config = config;
        next.zero_grads();
        next.meta.insert("head_seed".into(), seed.to_string());
        Ok(next)
    }

    /// Borrowed view of the layers, for straight-line recomposition.
    pub fn layers(&self) -> LayerView<'_> {
        LayerView {
            fc: match &self.front {
                FrontLayer::Dense(fc) => Some(fc),
                _ => None,
            },
            embedding: match &self.front {
                FrontLayer::Embedding(e) => Some(e),
                _ => None,
            },
            blstms: &self.blstms,
            attention: &self.attention,
            head: &self.head,
        }
    }
}

pub struct LayerView<'a> {
    pub fc: Option<&'a Affine>,
    pub embedding: Option<&'a Embedding>,
    pub blstms: &'a [Blstm],
    pub attention: &'a AttentionPool,
    pub head: &'a Affine,
}

/// Full classifier under weighted cross-entropy, for gradient checking.
pub struct ClassifierFragment {
    pub model: SentimentClassifier,
    pub input: Tensor,
    pub target: usize,
    pub weights: ClassWeights,
}

impl ClassifierFragment {
    pub fn random(config: ClassifierConfig, frames: usize, seed: u64) -> Result<Self> {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
        let input = Tensor::uniform(&[frames, config.input_dim], 1.5, &mut rng);
        let classes = config.num_classes;
        let weights = (0..classes).map(|_| rng.random_range(0.5..2.0)).collect();
        Ok(ClassifierFragment {
            target: rng.random_range(0..classes),
            model: build_classifier(config)?,
            input,
            weights: ClassWeights::new(weights)?,
        })
    }
}

impl GradFragment for ClassifierFragment {
    fn name(&self) -> String {
        "classifier".into()
    }

    fn loss(&self) -> f64 {
        let cache = self
            .model
            .forward_cached(Input::Frames(&self.input))
            .expect("valid fragment");
        softmax_cross_entropy(cache.logits(), self.target, &self.weights)
            .expect("valid fragment")
            .0
    }

    fn compute_grads(&mut self) -> f64 {
        self.model.zero_grads();
        self.model
            .accumulate_example(Input::Frames(&self.input), self.target, &self.weights)
            .expect("valid fragment")
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.model.params_mut()
    }
}
