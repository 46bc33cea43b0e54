//! Stacked LSTM with exact backpropagation through time.
//!
//! Standard cell: gates (input, forget, cell, output) packed in that order
//! along the 4H axis. Initial hidden and cell states are zero.

use crate::tensor::Tensor;

use super::NetError;

/// Weights of one LSTM layer.
///
/// `w_x` is `[4H, c_in]`, `w_h` is `[4H, H]`, `bias` is `[4H]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayerParams {
    pub w_x: Tensor,
    pub w_h: Tensor,
    pub bias: Tensor,
}

impl LstmLayerParams {
    pub fn zeros(c_in: usize, hidden: usize) -> Self {
        LstmLayerParams {
            w_x: Tensor::zeros(&[4 * hidden, c_in]),
            w_h: Tensor::zeros(&[4 * hidden, hidden]),
            bias: Tensor::zeros(&[4 * hidden]),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_h.shape()[1]
    }

    pub fn input_dim(&self) -> usize {
        self.w_x.shape()[1]
    }
}

/// Everything the backward pass needs from one layer's forward run.
#[derive(Debug, Clone)]
pub struct LstmLayerCache {
    /// Gate activations per step, `[T, 4H]`: sigma(i), sigma(f), tanh(g),
    /// sigma(o).
    gates: Tensor,
    /// Cell states `[T, H]`.
    cells: Tensor,
    /// tanh of cell states `[T, H]`.
    tanh_cells: Tensor,
    /// Hidden states `[T, H]`; also the input of the next layer.
    pub hidden: Tensor,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn matvec_into(out: &mut [f64], m: &Tensor, v: &[f64]) {
    let cols = m.shape()[1];
    debug_assert_eq!(cols, v.len());
    let data = m.data();
    for (r, o) in out.iter_mut().enumerate() {
        let row = &data[r * cols..(r + 1) * cols];
        let mut acc = 0.0;
        for (a, b) in row.iter().zip(v) {
            acc += a * b;
        }
        *o += acc;
    }
}

/// Runs one layer over the sequence `[T, c_in]`, producing hidden states
/// `[T, H]` plus the cache for BPTT.
pub fn lstm_forward(seq: &Tensor, params: &LstmLayerParams) -> Result<LstmLayerCache, NetError> {
    let &[t_len, c_in] = seq.shape() else {
        return Err(NetError::ShapeMismatch(format!(
            "lstm input must be 2-D, got {:?}",
            seq.shape()
        )));
    };
    if params.input_dim() != c_in {
        return Err(NetError::ShapeMismatch(format!(
            "lstm expects input dim {}, got {}",
            params.input_dim(),
            c_in
        )));
    }
    let h_dim = params.hidden();
    let g4 = 4 * h_dim;

    let mut gates = Tensor::zeros(&[t_len, g4]);
    let mut cells = Tensor::zeros(&[t_len, h_dim]);
    let mut tanh_cells = Tensor::zeros(&[t_len, h_dim]);
    let mut hidden = Tensor::zeros(&[t_len, h_dim]);

    let mut h_prev = vec![0.0; h_dim];
    let mut c_prev = vec![0.0; h_dim];
    let mut pre = vec![0.0; g4];

    for t in 0..t_len {
        pre.copy_from_slice(params.bias.data());
        matvec_into(&mut pre, &params.w_x, seq.row(t));
        matvec_into(&mut pre, &params.w_h, &h_prev);

        let g_row = gates.row_mut(t);
        for j in 0..h_dim {
            g_row[j] = sigmoid(pre[j]); // input gate
            g_row[h_dim + j] = sigmoid(pre[h_dim + j]); // forget gate
            g_row[2 * h_dim + j] = pre[2 * h_dim + j].tanh(); // cell gate
            g_row[3 * h_dim + j] = sigmoid(pre[3 * h_dim + j]); // output gate
        }
        for j in 0..h_dim {
            let i_g = gates.row(t)[j];
            let f_g = gates.row(t)[h_dim + j];
            let g_g = gates.row(t)[2 * h_dim + j];
            let o_g = gates.row(t)[3 * h_dim + j];
            let c = f_g * c_prev[j] + i_g * g_g;
            let tc = c.tanh();
            cells.row_mut(t)[j] = c;
            tanh_cells.row_mut(t)[j] = tc;
            hidden.row_mut(t)[j] = o_g * tc;
        }
        h_prev.copy_from_slice(hidden.row(t));
        c_prev.copy_from_slice(cells.row(t));
    }

    if !hidden.all_finite() || !cells.all_finite() {
        return Err(NetError::NonFiniteActivation);
    }

    Ok(LstmLayerCache {
        gates,
        cells,
        tanh_cells,
        hidden,
    })
}

/// Backpropagates through one layer.
///
/// `d_hidden` is the gradient w.r.t. every hidden state `[T, H]`. Gradients
/// are accumulated into the `d_*` parameter tensors; the return value is
/// the gradient w.r.t. the layer's input sequence `[T, c_in]`.
pub fn lstm_backward(
    seq: &Tensor,
    params: &LstmLayerParams,
    cache: &LstmLayerCache,
    d_hidden: &Tensor,
    d_wx: &mut Tensor,
    d_wh: &mut Tensor,
    d_bias: &mut Tensor,
) -> Tensor {
    let t_len = seq.shape()[0];
    let c_in = seq.shape()[1];
    let h_dim = params.hidden();
    let g4 = 4 * h_dim;

    let mut d_seq = Tensor::zeros(&[t_len, c_in]);
    let mut dh_next = vec![0.0; h_dim];
    let mut dc_next = vec![0.0; h_dim];
    let mut da = vec![0.0; g4];

    for t in (0..t_len).rev() {
        let gates = cache.gates.row(t);
        let tanh_c = cache.tanh_cells.row(t);
        for j in 0..h_dim {
            let i_g = gates[j];
            let f_g = gates[h_dim + j];
            let g_g = gates[2 * h_dim + j];
            let o_g = gates[3 * h_dim + j];
            let c_prev = if t == 0 { 0.0 } else { cache.cells.row(t - 1)[j] };

            let dh = d_hidden.row(t)[j] + dh_next[j];
            let d_o = dh * tanh_c[j];
            let dc = dc_next[j] + dh * o_g * (1.0 - tanh_c[j] * tanh_c[j]);
            let d_f = dc * c_prev;
            let d_i = dc * g_g;
            let d_g = dc * i_g;

            da[j] = d_i * i_g * (1.0 - i_g);
            da[h_dim + j] = d_f * f_g * (1.0 - f_g);
            da[2 * h_dim + j] = d_g * (1.0 - g_g * g_g);
            da[3 * h_dim + j] = d_o * o_g * (1.0 - o_g);

            dc_next[j] = dc * f_g;
        }

        // Parameter gradients: da outer x_t and h_{t-1}.
        let x_t = seq.row(t);
        {
            let dwx = d_wx.data_mut();
            for r in 0..g4 {
                let dar = da[r];
                if dar == 0.0 {
                    continue;
                }
                let row = &mut dwx[r * c_in..(r + 1) * c_in];
                for (slot, xv) in row.iter_mut().zip(x_t) {
                    *slot += dar * xv;
                }
            }
        }
        if t > 0 {
            let h_prev = cache.hidden.row(t - 1);
            let dwh = d_wh.data_mut();
            for r in 0..g4 {
                let dar = da[r];
                if dar == 0.0 {
                    continue;
                }
                let row = &mut dwh[r * h_dim..(r + 1) * h_dim];
                for (slot, hv) in row.iter_mut().zip(h_prev) {
                    *slot += dar * hv;
                }
            }
        }
        for (slot, dar) in d_bias.data_mut().iter_mut().zip(&da) {
            *slot += dar;
        }

        // dx_t = W_x^T da ; dh_{t-1} = W_h^T da
        let dx = d_seq.row_mut(t);
        let wx = params.w_x.data();
        for r in 0..g4 {
            let dar = da[r];
            if dar == 0.0 {
                continue;
            }
            let row = &wx[r * c_in..(r + 1) * c_in];
            for (slot, wv) in dx.iter_mut().zip(row) {
                *slot += dar * wv;
            }
        }
        dh_next.iter_mut().for_each(|v| *v = 0.0);
        let wh = params.w_h.data();
        for r in 0..g4 {
            let dar = da[r];
            if dar == 0.0 {
                continue;
            }
            let row = &wh[r * h_dim..(r + 1) * h_dim];
            for (slot, wv) in dh_next.iter_mut().zip(row) {
                *slot += dar * wv;
            }
        }
    }
    d_seq
}
