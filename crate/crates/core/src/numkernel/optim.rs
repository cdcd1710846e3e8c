use super::tensor::Param;
use crate::error::{Error, Result};

/// Plain SGD with global gradient-norm clipping. Gradients are zeroed after
/// the update. Returns the pre-clipping gradient norm.
pub fn sgd_step(params: &mut [&mut Param], lr: f64, clip: f64) -> Result<f64> {
    let mut sq = 0.0;
    for p in params.iter() {
        if !p.grad.is_finite() {
            return Err(Error::NonFinite(p.name.clone()));
        }
        sq += p.grad.data().iter().map(|g| g * g).sum::<f64>();
    }
    let norm = sq.sqrt();
    let scale = if norm > clip { clip / norm } else { 1.0 };
    let step = lr * scale;
    for p in params.iter_mut() {
        let Param { value, grad, .. } = &mut **p;
        for (v, g) in value.data_mut().iter_mut().zip(grad.data_mut().iter_mut()) {
            *v -= step * *g;
            *g = 0.0;
        }
    }
    Ok(norm)
}
