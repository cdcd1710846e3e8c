use rand::Rng;

use super::tensor::{matmul_a_bt_acc, matmul_acc, matmul_at_b_acc, Param, Tensor};
use crate::error::{Error, Result};

/// `out = x . W + b` for `x: N x I`, `W: I x O`, `b: O`.
pub fn affine_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    if w.shape().len() != 2 || x.shape().len() != 2 || x.cols() != w.rows() {
        return Err(Error::Dimension(format!(
            "affine input {:?} vs weight {:?}",
            x.shape(),
            w.shape()
        )));
    }
    let (n, i, o) = (x.rows(), w.rows(), w.cols());
    if b.len() != o {
        return Err(Error::Dimension(format!(
            "affine bias {:?} vs weight {:?}",
            b.shape(),
            w.shape()
        )));
    }
    let mut out = Tensor::zeros(&[n, o]);
    for row in out.data_mut().chunks_exact_mut(o) {
        row.copy_from_slice(b.data());
    }
    matmul_acc(out.data_mut(), x.data(), w.data(), i, o);
    Ok(out)
}

/// Fully connected layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub w: Param,
    pub b: Param,
}

impl Affine {
    /// Uniform init in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn new<R: Rng + ?Sized>(name: &str, input: usize, output: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        Affine {
            w: Param::new(format!("{name}.w"), Tensor::uniform(&[input, output], bound, rng)),
            b: Param::new(format!("{name}.b"), Tensor::uniform(&[output], bound, rng)),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w.value.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.w.value.cols()
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        affine_forward(x, &self.w.value, &self.b.value)
    }

    /// Accumulates parameter gradients and returns the gradient w.r.t. `x`.
    pub fn backward(&mut self, x: &Tensor, dout: &Tensor) -> Tensor {
        let (i, o) = (self.input_dim(), self.output_dim());
        matmul_at_b_acc(self.w.grad.data_mut(), x.data(), dout.data(), i, o);
        for row in dout.data().chunks_exact(o) {
            for (g, d) in self.b.grad.data_mut().iter_mut().zip(row) {
                *g += d;
            }
        }
        let mut dx = Tensor::zeros(&[x.rows(), i]);
        matmul_a_bt_acc(dx.data_mut(), dout.data(), self.w.value.data(), i, o);
        dx
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.w, &self.b]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.w, &mut self.b]
    }
}

pub fn tanh_forward(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|v| v.tanh()).collect();
    Tensor::from_vec(x.shape(), data).expect("same shape")
}

/// Gradient through `y = tanh(x)` given the forward output `y`.
pub fn tanh_backward(y: &Tensor, dy: &Tensor) -> Tensor {
    let data = y
        .data()
        .iter()
        .zip(dy.data())
        .map(|(y, d)| d * (1.0 - y * y))
        .collect();
    Tensor::from_vec(y.shape(), data).expect("same shape")
}
