use rand::Rng;

use super::tensor::{dot, matmul_a_bt_acc, matmul_acc, matmul_at_b_acc, softmax, Param, Tensor};
use crate::error::{Error, Result};

/// Additive attention pooling: `e_t = v . tanh(W_a h_t + b_a)`,
/// `alpha = softmax(e)`, `pooled = sum_t alpha_t h_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionPool {
    /// Projection, `D x A`.
    pub w: Param,
    /// Projection bias, `A`.
    pub b: Param,
    /// Context vector, `A`.
    pub v: Param,
}

#[derive(Debug, Clone)]
pub struct AttentionCache {
    projected: Tensor,
    weights: Vec<f64>,
    pooled: Vec<f64>,
}

impl AttentionCache {
    pub fn pooled(&self) -> &[f64] {
        &self.pooled
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

impl AttentionPool {
    pub fn new<R: Rng + ?Sized>(name: &str, input: usize, attention: usize, rng: &mut R) -> Self {
        let bound_in = 1.0 / (input as f64).sqrt();
        let bound_v = 1.0 / (attention as f64).sqrt();
        AttentionPool {
            w: Param::new(format!("{name}.w"), Tensor::uniform(&[input, attention], bound_in, rng)),
            b: Param::new(format!("{name}.b"), Tensor::uniform(&[attention], bound_in, rng)),
            v: Param::new(format!("{name}.v"), Tensor::uniform(&[attention], bound_v, rng)),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w.value.rows()
    }

    pub fn attention_dim(&self) -> usize {
        self.w.value.cols()
    }

    pub fn forward(&self, hs: &Tensor) -> Result<AttentionCache> {
        if hs.rows() == 0 {
            return Err(Error::EmptySequence);
        }
        let (d, a) = (self.input_dim(), self.attention_dim());
        hs.expect_matrix("attention input", None, d)?;
        let t_len = hs.rows();

        let mut projected = Tensor::zeros(&[t_len, a]);
        for row in projected.data_mut().chunks_exact_mut(a) {
            row.copy_from_slice(self.b.value.data());
        }
        matmul_acc(projected.data_mut(), hs.data(), self.w.value.data(), d, a);
        projected.data_mut().iter_mut().for_each(|u| *u = u.tanh());

        let scores: Vec<f64> = (0..t_len)
            .map(|t| dot(projected.row(t), self.v.value.data()))
            .collect();
        let weights = softmax(&scores);

        let mut pooled = vec![0.0; d];
        for (t, &alpha) in weights.iter().enumerate() {
            for (p, h) in pooled.iter_mut().zip(hs.row(t)) {
                *p += alpha * h;
            }
        }
        Ok(AttentionCache {
            projected,
            weights,
            pooled,
        })
    }

    /// Accumulates parameter gradients and returns the gradient w.r.t. `hs`.
    pub fn backward(&mut self, hs: &Tensor, cache: &AttentionCache, dpooled: &[f64]) -> Tensor {
        let (d, a) = (self.input_dim(), self.attention_dim());
        let t_len = hs.rows();
        let mut dhs = Tensor::zeros(&[t_len, d]);

        let dalpha: Vec<f64> = (0..t_len).map(|t| dot(dpooled, hs.row(t))).collect();
        let mean: f64 = cache.weights.iter().zip(&dalpha).map(|(w, g)| w * g).sum();
        let mut dproj = Tensor::zeros(&[t_len, a]);
        for t in 0..t_len {
            let alpha = cache.weights[t];
            for (dh, dp) in dhs.row_mut(t).iter_mut().zip(dpooled) {
                *dh = alpha * dp;
            }
            let de = alpha * (dalpha[t] - mean);
            let u = cache.projected.row(t);
            for (k, dv) in self.v.grad.data_mut().iter_mut().enumerate() {
                *dv += de * u[k];
            }
            let v = self.v.value.data();
            for (k, dz) in dproj.row_mut(t).iter_mut().enumerate() {
                *dz = de * v[k] * (1.0 - u[k] * u[k]);
            }
        }
        matmul_at_b_acc(self.w.grad.data_mut(), hs.data(), dproj.data(), d, a);
        for row in dproj.data().chunks_exact(a) {
            for (g, dz) in self.b.grad.data_mut().iter_mut().zip(row) {
                *g += dz;
            }
        }
        matmul_a_bt_acc(dhs.data_mut(), dproj.data(), self.w.value.data(), d, a);
        dhs
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.w, &self.b, &self.v]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.w, &mut self.b, &mut self.v]
    }
}

/// Returns `(pooled, weights)`.
pub fn attention_pool(hs: &Tensor, att: &AttentionPool) -> Result<(Tensor, Tensor)> {
    let cache = att.forward(hs)?;
    Ok((Tensor::vector(cache.pooled), Tensor::vector(cache.weights)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identical_rows_pool_to_that_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let att = AttentionPool::new("a", 3, 5, &mut rng);
        let u = vec![0.3, -1.2, 2.5];
        let hs = Tensor::from_rows(&vec![u.clone(); 7]).unwrap();
        let (pooled, _) = attention_pool(&hs, &att).unwrap();
        for (p, e) in pooled.data().iter().zip(&u) {
            assert!((p - e).abs() < 1e-12);
        }
    }

    #[test]
    fn single_frame_has_unit_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let att = AttentionPool::new("a", 4, 3, &mut rng);
        let hs = Tensor::uniform(&[1, 4], 1.0, &mut rng);
        let (pooled, weights) = attention_pool(&hs, &att).unwrap();
        assert_eq!(weights.data(), &[1.0]);
        assert_eq!(pooled.data(), hs.row(0));
    }

    #[test]
    fn straight_line_recomputation_matches() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let att = AttentionPool::new("a", 4, 3, &mut rng);
        let hs = Tensor::uniform(&[6, 4], 2.0, &mut rng);
        let (pooled, weights) = attention_pool(&hs, &att).unwrap();

        let w = att.w.value.data();
        let mut e = Vec::new();
        for t in 0..6 {
            let mut s = 0.0;
            for k in 0..3 {
                let mut z = att.b.value.data()[k];
                for j in 0..4 {
                    z += hs.row(t)[j] * w[j * 3 + k];
                }
                s += att.v.value.data()[k] * z.tanh();
            }
            e.push(s);
        }
        let m = e.iter().cloned().fold(f64::MIN, f64::max);
        let z: f64 = e.iter().map(|x| (x - m).exp()).sum();
        let alpha: Vec<f64> = e.iter().map(|x| (x - m).exp() / z).collect();
        for t in 0..6 {
            assert!((alpha[t] - weights.data()[t]).abs() < 1e-12);
        }
        for j in 0..4 {
            let p: f64 = (0..6).map(|t| alpha[t] * hs.row(t)[j]).sum();
            assert!((p - pooled.data()[j]).abs() < 1e-12);
        }
        let total: f64 = weights.data().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_sequence_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let att = AttentionPool::new("a", 4, 3, &mut rng);
        assert!(matches!(
            attention_pool(&Tensor::zeros(&[0, 4]), &att),
            Err(Error::EmptySequence)
        ));
    }
}
