use rand::Rng;

use super::tensor::{Param, Tensor};
use crate::error::{Error, Result};

/// Token lookup table, `V x E`.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub table: Param,
}

impl Embedding {
    pub fn new<R: Rng + ?Sized>(name: &str, vocab: usize, dim: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (dim as f64).sqrt();
        Embedding {
            table: Param::new(format!("{name}.table"), Tensor::uniform(&[vocab, dim], bound, rng)),
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.table.value.rows()
    }

    pub fn dim(&self) -> usize {
        self.table.value.cols()
    }

    pub fn forward(&self, ids: &[usize]) -> Result<Tensor> {
        if ids.is_empty() {
            return Err(Error::EmptySequence);
        }
        let e = self.dim();
        let mut out = Tensor::zeros(&[ids.len(), e]);
        for (t, &id) in ids.iter().enumerate() {
            if id >= self.vocab_size() {
                return Err(Error::Dimension(format!(
                    "token id {id} outside vocabulary of {}",
                    self.vocab_size()
                )));
            }
            out.row_mut(t).copy_from_slice(self.table.value.row(id));
        }
        Ok(out)
    }

    pub fn backward(&mut self, ids: &[usize], dout: &Tensor) {
        for (t, &id) in ids.iter().enumerate() {
            for (g, d) in self.table.grad.row_mut(id).iter_mut().zip(dout.row(t)) {
                *g += d;
            }
        }
    }
}
