//! Unidirectional and bidirectional LSTM layers with backpropagation through
//! time.
//!
//! Gate layout inside every `4H` block is `[input, forget, cell, output]`.
//! Initial hidden and cell states are zero.

use rand::Rng;

use super::tensor::{
    matmul_a_bt_acc, matmul_acc, matmul_at_b_acc, sigmoid, Param, Tensor,
};
use crate::error::{Error, Result};

/// One LSTM direction.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmDirection {
    /// Input weights, `I x 4H`.
    pub w_x: Param,
    /// Recurrent weights, `H x 4H`.
    pub w_h: Param,
    /// Gate biases, `4H`.
    pub b: Param,
    /// Processes the sequence from the last step to the first.
    pub reverse: bool,
}

/// Activations retained by [`LstmDirection::forward`] for the backward pass.
/// Rows are indexed by sequence position, not processing order.
#[derive(Debug, Clone)]
pub struct LstmCache {
    gates: Vec<f64>,
    cells: Vec<f64>,
    cell_tanh: Vec<f64>,
    hidden: Tensor,
}

impl LstmCache {
    pub fn output(&self) -> &Tensor {
        &self.hidden
    }
}

impl LstmDirection {
    /// Uniform init in `[-1/sqrt(I), 1/sqrt(I)]`, forget-gate bias 1.
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        input: usize,
        hidden: usize,
        reverse: bool,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        let mut b = Tensor::zeros(&[4 * hidden]);
        b.data_mut()[hidden..2 * hidden].fill(1.0);
        LstmDirection {
            w_x: Param::new(format!("{name}.w_x"), Tensor::uniform(&[input, 4 * hidden], bound, rng)),
            w_h: Param::new(format!("{name}.w_h"), Tensor::uniform(&[hidden, 4 * hidden], bound, rng)),
            b: Param::new(format!("{name}.b"), b),
            reverse,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_x.value.rows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_h.value.rows()
    }

    fn position(&self, step: usize, len: usize) -> usize {
        if self.reverse {
            len - 1 - step
        } else {
            step
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<LstmCache> {
        let (i_dim, h) = (self.input_dim(), self.hidden_dim());
        if x.rows() == 0 {
            return Err(Error::EmptySequence);
        }
        x.expect_matrix("lstm input", None, i_dim)?;
        let t_len = x.rows();
        let g4 = 4 * h;

        let mut gates = vec![0.0; t_len * g4];
        for row in gates.chunks_exact_mut(g4) {
            row.copy_from_slice(self.b.value.data());
        }
        matmul_acc(&mut gates, x.data(), self.w_x.value.data(), i_dim, g4);

        let mut cells = vec![0.0; t_len * h];
        let mut cell_tanh = vec![0.0; t_len * h];
        let mut hidden = Tensor::zeros(&[t_len, h]);
        let mut h_prev = vec![0.0; h];
        let mut c_prev = vec![0.0; h];

        for step in 0..t_len {
            let t = self.position(step, t_len);
            let z = &mut gates[t * g4..(t + 1) * g4];
            matmul_acc(z, &h_prev, self.w_h.value.data(), h, g4);
            let (zi, rest) = z.split_at_mut(h);
            let (zf, rest) = rest.split_at_mut(h);
            let (zg, zo) = rest.split_at_mut(h);
            let c = &mut cells[t * h..(t + 1) * h];
            let ct = &mut cell_tanh[t * h..(t + 1) * h];
            let h_out = hidden.row_mut(t);
            for k in 0..h {
                let ig = sigmoid(zi[k]);
                let fg = sigmoid(zf[k]);
                let gg = zg[k].tanh();
                let og = sigmoid(zo[k]);
                zi[k] = ig;
                zf[k] = fg;
                zg[k] = gg;
                zo[k] = og;
                c[k] = fg * c_prev[k] + ig * gg;
                ct[k] = c[k].tanh();
                h_out[k] = og * ct[k];
            }
            h_prev.copy_from_slice(h_out);
            c_prev.copy_from_slice(c);
        }

        Ok(LstmCache {
            gates,
            cells,
            cell_tanh,
            hidden,
        })
    }

    /// Backpropagation through time. Accumulates parameter gradients and
    /// returns the gradient w.r.t. the input sequence.
    pub fn backward(&mut self, x: &Tensor, cache: &LstmCache, dhidden: &Tensor) -> Tensor {
        let (i_dim, h) = (self.input_dim(), self.hidden_dim());
        let t_len = x.rows();
        let g4 = 4 * h;
        let mut dz_all = vec![0.0; t_len * g4];
        let mut dh_next = vec![0.0; h];
        let mut dc_next = vec![0.0; h];
        let zeros = vec![0.0; h];

        for step in (0..t_len).rev() {
            let t = self.position(step, t_len);
            let (h_prev, c_prev) = if step == 0 {
                (&zeros[..], &zeros[..])
            } else {
                let tp = self.position(step - 1, t_len);
                (cache.hidden.row(tp), &cache.cells[tp * h..(tp + 1) * h])
            };
            let gate = &cache.gates[t * g4..(t + 1) * g4];
            let ct = &cache.cell_tanh[t * h..(t + 1) * h];
            let dh_out = dhidden.row(t);
            let dz = &mut dz_all[t * g4..(t + 1) * g4];
            for k in 0..h {
                let (ig, fg, gg, og) = (gate[k], gate[h + k], gate[2 * h + k], gate[3 * h + k]);
                let dh = dh_out[k] + dh_next[k];
                let dc = dc_next[k] + dh * og * (1.0 - ct[k] * ct[k]);
                dz[k] = dc * gg * ig * (1.0 - ig);
                dz[h + k] = dc * c_prev[k] * fg * (1.0 - fg);
                dz[2 * h + k] = dc * ig * (1.0 - gg * gg);
                dz[3 * h + k] = dh * ct[k] * og * (1.0 - og);
                dc_next[k] = dc * fg;
            }
            dh_next.iter_mut().for_each(|v| *v = 0.0);
            matmul_a_bt_acc(&mut dh_next, dz, self.w_h.value.data(), h, g4);
            matmul_at_b_acc(self.w_h.grad.data_mut(), h_prev, dz, h, g4);
        }

        matmul_at_b_acc(self.w_x.grad.data_mut(), x.data(), &dz_all, i_dim, g4);
        for row in dz_all.chunks_exact(g4) {
            for (g, d) in self.b.grad.data_mut().iter_mut().zip(row) {
                *g += d;
            }
        }
        let mut dx = Tensor::zeros(&[t_len, i_dim]);
        matmul_a_bt_acc(dx.data_mut(), &dz_all, self.w_x.value.data(), i_dim, g4);
        dx
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.w_x, &self.w_h, &self.b]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.w_x, &mut self.w_h, &mut self.b]
    }
}

/// Bidirectional LSTM: output row `t` is `[forward h_t, backward h_t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Blstm {
    pub fwd: LstmDirection,
    pub bwd: LstmDirection,
}

#[derive(Debug, Clone)]
pub struct BlstmCache {
    fwd: LstmCache,
    bwd: LstmCache,
    output: Tensor,
}

impl BlstmCache {
    pub fn output(&self) -> &Tensor {
        &self.output
    }
}

impl Blstm {
    pub fn new<R: Rng + ?Sized>(name: &str, input: usize, hidden: usize, rng: &mut R) -> Self {
        Blstm {
            fwd: LstmDirection::new(&format!("{name}.fwd"), input, hidden, false, rng),
            bwd: LstmDirection::new(&format!("{name}.bwd"), input, hidden, true, rng),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.fwd.hidden_dim()
    }

    pub fn output_dim(&self) -> usize {
        2 * self.hidden_dim()
    }

    pub fn forward(&self, x: &Tensor) -> Result<BlstmCache> {
        let fwd = self.fwd.forward(x)?;
        let bwd = self.bwd.forward(x)?;
        let h = self.hidden_dim();
        let t_len = x.rows();
        let mut output = Tensor::zeros(&[t_len, 2 * h]);
        for t in 0..t_len {
            let row = output.row_mut(t);
            row[..h].copy_from_slice(fwd.hidden.row(t));
            row[h..].copy_from_slice(bwd.hidden.row(t));
        }
        Ok(BlstmCache { fwd, bwd, output })
    }

    pub fn backward(&mut self, x: &Tensor, cache: &BlstmCache, dout: &Tensor) -> Tensor {
        let h = self.hidden_dim();
        let t_len = x.rows();
        let mut d_fwd = Tensor::zeros(&[t_len, h]);
        let mut d_bwd = Tensor::zeros(&[t_len, h]);
        for t in 0..t_len {
            let row = dout.row(t);
            d_fwd.row_mut(t).copy_from_slice(&row[..h]);
            d_bwd.row_mut(t).copy_from_slice(&row[h..]);
        }
        let mut dx = self.fwd.backward(x, &cache.fwd, &d_fwd);
        let dx_b = self.bwd.backward(x, &cache.bwd, &d_bwd);
        for (a, b) in dx.data_mut().iter_mut().zip(dx_b.data()) {
            *a += b;
        }
        dx
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut p = self.fwd.params();
        p.extend(self.bwd.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.fwd.params_mut();
        p.extend(self.bwd.params_mut());
        p
    }
}

/// Free-function form over explicit direction parameters.
pub fn blstm_forward(x: &Tensor, fwd: &LstmDirection, bwd: &LstmDirection) -> Result<Tensor> {
    let layer = Blstm {
        fwd: LstmDirection {
            reverse: false,
            ..fwd.clone()
        },
        bwd: LstmDirection {
            reverse: true,
            ..bwd.clone()
        },
    };
    Ok(layer.forward(x)?.output)
}
