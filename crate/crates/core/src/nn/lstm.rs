//! LSTM cell built from graph primitives. Gate order in the stacked weight
//! matrices is input, forget, candidate, output.

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use super::Scalar;
use crate::error::{Error, Result};

/// Graph handles for one LSTM layer.
#[derive(Clone, Copy, Debug)]
pub struct LstmParams {
    /// `(4H, In)`
    pub w_ih: Var,
    /// `(4H, H)`
    pub w_hh: Var,
    /// `(4H)`
    pub bias: Var,
    pub hidden: usize,
}

impl LstmParams {
    pub fn new<F: Scalar>(g: &Graph<F>, w_ih: Var, w_hh: Var, bias: Var) -> Result<Self> {
        let (four_h, _) = g.value(w_ih).rc()?;
        if four_h % 4 != 0 || four_h == 0 {
            return Err(Error::Shape(format!("lstm w_ih has {four_h} rows, not a multiple of 4")));
        }
        let hidden = four_h / 4;
        if g.value(w_hh).shape() != [four_h, hidden] || g.value(bias).shape() != [four_h] {
            return Err(Error::Shape(format!(
                "lstm recurrent weights {:?} / bias {:?} do not match hidden size {hidden}",
                g.value(w_hh).shape(),
                g.value(bias).shape()
            )));
        }
        Ok(Self { w_ih, w_hh, bias, hidden })
    }
}

/// One time step. `x: (B, In)`, `h_prev`, `c_prev: (B, H)`; returns `(h, c)`.
pub fn lstm_step<F: Scalar>(g: &mut Graph<F>, p: &LstmParams, x: Var, h_prev: Var, c_prev: Var) -> Result<(Var, Var)> {
    let h = p.hidden;
    let (batch, hh) = g.value(h_prev).rc()?;
    if hh != h || g.value(c_prev).shape() != [batch, h] || g.value(x).rc()?.0 != batch {
        return Err(Error::Shape(format!(
            "lstm state {:?}/{:?} vs hidden {h}",
            g.value(h_prev).shape(),
            g.value(c_prev).shape()
        )));
    }
    let zero_bias = g.input(Tensor::zeros(&[4 * h]));
    let from_x = g.linear(x, p.w_ih, p.bias)?;
    let from_h = g.linear(h_prev, p.w_hh, zero_bias)?;
    let gates = g.add(from_x, from_h)?;
    let i = g.slice_cols(gates, 0, h)?;
    let f = g.slice_cols(gates, h, h)?;
    let c_hat = g.slice_cols(gates, 2 * h, h)?;
    let o = g.slice_cols(gates, 3 * h, h)?;
    let i = g.sigmoid(i);
    let f = g.sigmoid(f);
    let c_hat = g.tanh(c_hat);
    let o = g.sigmoid(o);
    let keep = g.mul(f, c_prev)?;
    let write = g.mul(i, c_hat)?;
    let c = g.add(keep, write)?;
    let tc = g.tanh(c);
    let h_new = g.mul(o, tc)?;
    Ok((h_new, c))
}
