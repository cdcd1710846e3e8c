//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::affine::Affine;
use super::attention::AttentionPool;
use super::loss::{softmax_cross_entropy, ClassWeights};
use super::lstm::{Blstm, LstmDirection};
use super::tensor::{dot, Param, Tensor};

/// Finite-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Denominator floor of the relative error, so coordinates whose true
/// gradient is numerically zero are judged on an absolute scale.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

/// Something with a scalar loss whose parameters can be perturbed.
pub trait GradFragment {
    fn name(&self) -> String;
    /// Forward pass only.
    fn loss(&self) -> f64;
    /// Zeroes gradients, runs forward and backward, returns the loss.
    fn compute_grads(&mut self) -> f64;
    fn params_mut(&mut self) -> Vec<&mut Param>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoordinateError {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub fragment: String,
    pub checked: usize,
    pub tolerance: f64,
    pub worst: Option<CoordinateError>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.worst.as_ref().is_none_or(|w| w.rel_error <= self.tolerance) && self.checked > 0
    }

    pub fn max_rel_error(&self) -> f64 {
        self.worst.as_ref().map_or(0.0, |w| w.rel_error)
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Checks every coordinate when there are at most `min_samples` of them,
/// otherwise a uniform sample of `min_samples` coordinates.
pub fn grad_check<F: GradFragment + ?Sized>(
    fragment: &mut F,
    tolerance: f64,
    min_samples: usize,
    seed: u64,
) -> GradCheckReport {
    fragment.compute_grads();
    let analytic: Vec<Vec<f64>> = fragment
        .params_mut()
        .iter()
        .map(|p| p.grad.data().to_vec())
        .collect();
    let sizes: Vec<usize> = analytic.iter().map(Vec::len).collect();
    let total: usize = sizes.iter().sum();

    let coords: Vec<usize> = if total <= min_samples {
        (0..total).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked = sample(&mut rng, total, min_samples).into_vec();
        picked.sort_unstable();
        picked
    };

    let mut worst: Option<CoordinateError> = None;
    for flat in &coords {
        let (mut p_idx, mut idx) = (0, *flat);
        while idx >= sizes[p_idx] {
            idx -= sizes[p_idx];
            p_idx += 1;
        }
        let original = fragment.params_mut()[p_idx].value.data()[idx];
        fragment.params_mut()[p_idx].value.data_mut()[idx] = original + FD_STEP;
        let plus = fragment.loss();
        fragment.params_mut()[p_idx].value.data_mut()[idx] = original - FD_STEP;
        let minus = fragment.loss();
        fragment.params_mut()[p_idx].value.data_mut()[idx] = original;

        let numeric = (plus - minus) / (2.0 * FD_STEP);
        let a = analytic[p_idx][idx];
        let err = relative_error(a, numeric);
        if worst.as_ref().is_none_or(|w| err > w.rel_error) {
            worst = Some(CoordinateError {
                param: fragment.params_mut()[p_idx].name.clone(),
                index: idx,
                analytic: a,
                numeric,
                rel_error: err,
            });
        }
    }

    GradCheckReport {
        fragment: fragment.name(),
        checked: coords.len(),
        tolerance,
        worst,
    }
}

fn projection<R: Rng>(shape: &[usize], rng: &mut R) -> Tensor {
    Tensor::uniform(shape, 1.0, rng)
}

/// Affine layer under the loss `sum(out * R)`; the input is checked too.
pub struct AffineFragment {
    pub layer: Affine,
    pub input: Param,
    projection: Tensor,
    /// Multiplies the analytic weight gradient; 1 for a correct backward.
    pub corrupt_factor: f64,
}

impl AffineFragment {
    pub fn random(n: usize, i: usize, o: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        AffineFragment {
            layer: Affine::new("affine", i, o, &mut rng),
            input: Param::new("affine.x", projection(&[n, i], &mut rng)),
            projection: projection(&[n, o], &mut rng),
            corrupt_factor: 1.0,
        }
    }
}

impl GradFragment for AffineFragment {
    fn name(&self) -> String {
        "affine".into()
    }

    fn loss(&self) -> f64 {
        let out = self.layer.forward(&self.input.value).expect("valid fragment");
        dot(out.data(), self.projection.data())
    }

    fn compute_grads(&mut self) -> f64 {
        self.layer.w.zero_grad();
        self.layer.b.zero_grad();
        let loss = self.loss();
        self.input.grad = self.layer.backward(&self.input.value, &self.projection);
        if self.corrupt_factor != 1.0 {
            let f = self.corrupt_factor;
            self.layer.w.grad.data_mut().iter_mut().for_each(|g| *g *= f);
        }
        loss
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.layer.w, &mut self.layer.b, &mut self.input]
    }
}

/// Single LSTM direction over a short sequence.
pub struct LstmFragment {
    pub layer: LstmDirection,
    pub input: Param,
    projection: Tensor,
}

impl LstmFragment {
    pub fn random(t: usize, i: usize, h: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        LstmFragment {
            layer: LstmDirection::new("lstm", i, h, false, &mut rng),
            input: Param::new("lstm.x", projection(&[t, i], &mut rng)),
            projection: projection(&[t, h], &mut rng),
        }
    }
}

impl GradFragment for LstmFragment {
    fn name(&self) -> String {
        "lstm_cell".into()
    }

    fn loss(&self) -> f64 {
        let cache = self.layer.forward(&self.input.value).expect("valid fragment");
        dot(cache.output().data(), self.projection.data())
    }

    fn compute_grads(&mut self) -> f64 {
        self.layer.params_mut().into_iter().for_each(Param::zero_grad);
        let cache = self.layer.forward(&self.input.value).expect("valid fragment");
        let loss = dot(cache.output().data(), self.projection.data());
        self.input.grad = self.layer.backward(&self.input.value, &cache, &self.projection);
        loss
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.layer.params_mut();
        p.push(&mut self.input);
        p
    }
}

pub struct BlstmFragment {
    pub layer: Blstm,
    pub input: Param,
    projection: Tensor,
}

impl BlstmFragment {
    pub fn random(t: usize, i: usize, h: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        BlstmFragment {
            layer: Blstm::new("blstm", i, h, &mut rng),
            input: Param::new("blstm.x", projection(&[t, i], &mut rng)),
            projection: projection(&[t, 2 * h], &mut rng),
        }
    }
}

impl GradFragment for BlstmFragment {
    fn name(&self) -> String {
        "blstm".into()
    }

    fn loss(&self) -> f64 {
        let cache = self.layer.forward(&self.input.value).expect("valid fragment");
        dot(cache.output().data(), self.projection.data())
    }

    fn compute_grads(&mut self) -> f64 {
        self.layer.params_mut().into_iter().for_each(Param::zero_grad);
        let cache = self.layer.forward(&self.input.value).expect("valid fragment");
        let loss = dot(cache.output().data(), self.projection.data());
        self.input.grad = self.layer.backward(&self.input.value, &cache, &self.projection);
        loss
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.layer.params_mut();
        p.push(&mut self.input);
        p
    }
}

pub struct AttentionFragment {
    pub layer: AttentionPool,
    pub input: Param,
    projection: Vec<f64>,
}

impl AttentionFragment {
    pub fn random(t: usize, d: usize, a: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        AttentionFragment {
            layer: AttentionPool::new("attention", d, a, &mut rng),
            input: Param::new("attention.x", projection(&[t, d], &mut rng)),
            projection: projection(&[d], &mut rng).into_data(),
        }
    }
}

impl GradFragment for AttentionFragment {
    fn name(&self) -> String {
        "attention".into()
    }

    fn loss(&self) -> f64 {
        let cache = self.layer.forward(&self.input.value).expect("valid fragment");
        dot(cache.pooled(), &self.projection)
    }

    fn compute_grads(&mut self) -> f64 {
        self.layer.params_mut().into_iter().for_each(Param::zero_grad);
        let cache = self.layer.forward(&self.input.value).expect("valid fragment");
        let loss = dot(cache.pooled(), &self.projection);
        self.input.grad = self.layer.backward(&self.input.value, &cache, &self.projection);
        loss
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.layer.params_mut();
        p.push(&mut self.input);
        p
    }
}

/// Weighted cross-entropy summed over a batch of logit rows, with the logits
/// as the checked parameter.
pub struct CrossEntropyFragment {
    pub logits: Param,
    pub classes: Vec<usize>,
    pub weights: ClassWeights,
}

impl CrossEntropyFragment {
    pub fn random(rows: usize, classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let logits = Tensor::uniform(&[rows, classes], 3.0, &mut rng);
        let weights = (0..classes).map(|_| rng.random_range(0.5..2.0)).collect();
        CrossEntropyFragment {
            logits: Param::new("logits", logits),
            classes: (0..rows).map(|_| rng.random_range(0..classes)).collect(),
            weights: ClassWeights::new(weights).expect("positive"),
        }
    }

    fn rows(&self) -> impl Iterator<Item = (&[f64], usize)> {
        let width = self.weights.len();
        self.logits.value.data().chunks(width).zip(self.classes.iter().copied())
    }
}

impl GradFragment for CrossEntropyFragment {
    fn name(&self) -> String {
        "weighted_cross_entropy".into()
    }

    fn loss(&self) -> f64 {
        self.rows()
            .map(|(z, y)| softmax_cross_entropy(z, y, &self.weights).expect("valid fragment").0)
            .sum()
    }

    fn compute_grads(&mut self) -> f64 {
        let mut loss = 0.0;
        let mut grad = Vec::with_capacity(self.logits.value.len());
        for (z, y) in self.rows() {
            let (l, g) = softmax_cross_entropy(z, y, &self.weights).expect("valid fragment");
            loss += l;
            grad.extend(g);
        }
        self.logits.grad = Tensor::from_vec(self.logits.value.shape(), grad).expect("same shape");
        loss
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.logits]
    }
}
