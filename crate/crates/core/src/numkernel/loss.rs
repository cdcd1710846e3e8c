use super::tensor::softmax;
use crate::error::{Error, Result};

/// Per-class multipliers for the cross-entropy loss.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassWeights(Vec<f64>);

impl ClassWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() || weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::Config(format!(
                "class weights must be finite and positive, got {weights:?}"
            )));
        }
        Ok(ClassWeights(weights))
    }

    pub fn uniform(classes: usize) -> Self {
        ClassWeights(vec![1.0; classes])
    }

    /// `w_c = N / (C * n_c)`; classes absent from `counts` get weight 1.
    pub fn inverse_frequency(counts: &[usize]) -> Self {
        let total: usize = counts.iter().sum();
        let c = counts.len() as f64;
        ClassWeights(
            counts
                .iter()
                .map(|&n| if n == 0 { 1.0 } else { total as f64 / (c * n as f64) })
                .collect(),
        )
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Weighted softmax cross-entropy. Returns the loss and its gradient w.r.t.
/// the logits.
pub fn softmax_cross_entropy(
    logits: &[f64],
    true_class: usize,
    weights: &ClassWeights,
) -> Result<(f64, Vec<f64>)> {
    let classes = logits.len();
    if true_class >= classes {
        return Err(Error::ClassIndex {
            index: true_class,
            classes,
        });
    }
    if weights.len() != classes {
        return Err(Error::Dimension(format!(
            "{} class weights for {} logits",
            weights.len(),
            classes
        )));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_z = max + logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln();
    let w = weights.as_slice()[true_class];
    let loss = w * (log_z - logits[true_class]);
    let mut grad = softmax(logits);
    grad[true_class] -= 1.0;
    grad.iter_mut().for_each(|g| *g *= w);
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln3() {
        for c in 0..3 {
            let (l, _) = softmax_cross_entropy(&[0.0; 3], c, &ClassWeights::uniform(3)).unwrap();
            assert!((l - 3f64.ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn weight_scales_loss() {
        let w = ClassWeights::new(vec![2.0, 1.0, 1.0]).unwrap();
        let (l, _) = softmax_cross_entropy(&[0.0; 3], 0, &w).unwrap();
        assert!((l - 2.0 * 3f64.ln()).abs() < 1e-15);
        assert!((l - 2.197225).abs() < 1e-6);
    }

    #[test]
    fn large_logit_does_not_overflow() {
        let (l, g) =
            softmax_cross_entropy(&[1000.0, 0.0, 0.0], 0, &ClassWeights::uniform(3)).unwrap();
        assert!(l.is_finite() && l.abs() < 1e-12);
        assert!(g.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn out_of_range_class_is_an_error() {
        assert!(matches!(
            softmax_cross_entropy(&[0.0; 3], 3, &ClassWeights::uniform(3)),
            Err(Error::ClassIndex { index: 3, classes: 3 })
        ));
    }

    #[test]
    fn nonpositive_weights_rejected() {
        assert!(ClassWeights::new(vec![1.0, 0.0]).is_err());
        assert!(ClassWeights::new(vec![1.0, -1.0]).is_err());
    }

    #[test]
    fn inverse_frequency_balances_support() {
        let w = ClassWeights::inverse_frequency(&[10, 30, 60]);
        let eff: Vec<f64> = [10.0, 30.0, 60.0]
            .iter()
            .zip(w.as_slice())
            .map(|(n, w)| n * w)
            .collect();
        assert!((eff[0] - eff[1]).abs() < 1e-9 && (eff[1] - eff[2]).abs() < 1e-9);
    }
}
