//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every op applied during a forward pass. Calling
//! [`Graph::backward`] on a scalar node walks the tape in reverse and returns
//! the gradient of every node that depends on a parameter.

use super::conv::{col2im, conv_out_dim, im2col};
use super::tensor::Tensor;
use super::{gemm, Layout, Scalar};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<F> {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        pad: usize,
        cols: Vec<Vec<F>>,
    },
    MaxPool2 {
        input: Var,
        argmax: Vec<usize>,
    },
    Upsample2(Var),
    Concat(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, F),
    SliceCols {
        input: Var,
        start: usize,
    },
    Score {
        map: Var,
        vecs: Var,
    },
    WeightedSse {
        pred: Var,
        target: Tensor<F>,
        weights: Tensor<F>,
    },
    Sum(Var),
    /// Recorded without a gradient rule; backward through it fails.
    Opaque {
        name: String,
        inputs: Vec<Var>,
    },
}

struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    needs_grad: bool,
}

pub struct Graph<F: Scalar> {
    nodes: Vec<Node<F>>,
}

impl<F: Scalar> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients indexed by node.
pub struct Gradients<F> {
    grads: Vec<Option<Tensor<F>>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn get(&self, v: Var) -> Option<&Tensor<F>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<F>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn shape_err(what: &str, a: &[usize], b: &[usize]) -> Error {
    Error::Shape(format!("{what}: {a:?} vs {b:?}"))
}

impl<F: Scalar> Graph<F> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Constant input; no gradient is propagated into it.
    pub fn input(&mut self, t: Tensor<F>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor<F>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    /// Records the result of an op with no gradient rule.
    pub fn opaque(&mut self, name: &str, inputs: &[Var], value: Tensor<F>) -> Var {
        let ng = self.ng(inputs);
        self.push(
            value,
            Op::Opaque {
                name: name.to_string(),
                inputs: inputs.to_vec(),
            },
            ng,
        )
    }

    /// 2-D cross-correlation over an `(N, Cin, H, W)` input with an
    /// `(Cout, Cin, kh, kw)` weight and `(Cout)` bias.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, stride: usize, pad: usize) -> Result<Var> {
        let (n, cin, h, w) = self.value(input).nchw()?;
        let (cout, wcin, kh, kw) = self.value(weight).nchw()?;
        if wcin != cin {
            return Err(shape_err("conv2d channels", self.value(input).shape(), self.value(weight).shape()));
        }
        if self.value(bias).shape() != [cout] {
            return Err(shape_err("conv2d bias", self.value(bias).shape(), &[cout]));
        }
        let (oh, ow) = match (conv_out_dim(h, kh, stride, pad), conv_out_dim(w, kw, stride, pad)) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(Error::Shape(format!("conv2d kernel {kh}x{kw} does not fit {h}x{w}"))),
        };
        let k = cin * kh * kw;
        let p = oh * ow;
        let x = self.value(input).data();
        let wt = self.value(weight).data();
        let b = self.value(bias).data();
        let mut out = vec![F::ZERO; n * cout * p];
        let mut all_cols = Vec::with_capacity(n);
        for ni in 0..n {
            let mut cols = vec![F::ZERO; k * p];
            im2col(&x[ni * cin * h * w..(ni + 1) * cin * h * w], cin, h, w, kh, kw, stride, pad, oh, ow, &mut cols);
            let o = &mut out[ni * cout * p..(ni + 1) * cout * p];
            for co in 0..cout {
                o[co * p..(co + 1) * p].fill(b[co]);
            }
            gemm(cout, k, p, F::ONE, wt, Layout::N, &cols, Layout::N, F::ONE, o);
            all_cols.push(cols);
        }
        let ng = self.ng(&[input, weight, bias]);
        let value = Tensor::new(&[n, cout, oh, ow], out)?;
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                pad,
                cols: all_cols,
            },
            ng,
        ))
    }

    /// 2×2 max-pooling with stride 2; spatial dims must be even.
    pub fn max_pool2(&mut self, input: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(input).nchw()?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::Shape(format!("max_pool2 needs even dims, got {h}x{w}")));
        }
        let (oh, ow) = (h / 2, w / 2);
        let x = self.value(input).data();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let i0 = base + 2 * oy * w + 2 * ox;
                    let mut best = i0;
                    for cand in [i0 + 1, i0 + w, i0 + w + 1] {
                        if x[cand] > x[best] {
                            best = cand;
                        }
                    }
                    out.push(x[best]);
                    argmax.push(best);
                }
            }
        }
        let ng = self.ng(&[input]);
        Ok(self.push(Tensor::new(&[n, c, oh, ow], out)?, Op::MaxPool2 { input, argmax }, ng))
    }

    /// Nearest-neighbour ×2 upsampling.
    pub fn upsample2(&mut self, input: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(input).nchw()?;
        let (oh, ow) = (2 * h, 2 * w);
        let x = self.value(input).data();
        let mut out = vec![F::ZERO; n * c * oh * ow];
        for plane in 0..n * c {
            let src = &x[plane * h * w..(plane + 1) * h * w];
            let dst = &mut out[plane * oh * ow..(plane + 1) * oh * ow];
            for oy in 0..oh {
                let srow = &src[(oy / 2) * w..(oy / 2 + 1) * w];
                let drow = &mut dst[oy * ow..(oy + 1) * ow];
                for (ox, d) in drow.iter_mut().enumerate() {
                    *d = srow[ox / 2];
                }
            }
        }
        let ng = self.ng(&[input]);
        Ok(self.push(Tensor::new(&[n, c, oh, ow], out)?, Op::Upsample2(input), ng))
    }

    /// Concatenation along the channel dimension.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, ca, h, w) = self.value(a).nchw()?;
        let (nb, cb, hb, wb) = self.value(b).nchw()?;
        if (n, h, w) != (nb, hb, wb) {
            return Err(shape_err("concat", self.value(a).shape(), self.value(b).shape()));
        }
        let plane = h * w;
        let (xa, xb) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(n * (ca + cb) * plane);
        for ni in 0..n {
            out.extend_from_slice(&xa[ni * ca * plane..(ni + 1) * ca * plane]);
            out.extend_from_slice(&xb[ni * cb * plane..(ni + 1) * cb * plane]);
        }
        let ng = self.ng(&[a, b]);
        Ok(self.push(Tensor::new(&[n, ca + cb, h, w], out)?, Op::Concat(a, b), ng))
    }

    fn unary(&mut self, input: Var, f: impl Fn(F) -> F, op: Op<F>) -> Var {
        let t = self.value(input);
        let out = Tensor::new(t.shape(), t.data().iter().map(|&v| f(v)).collect()).expect("same shape");
        let ng = self.ng(&[input]);
        self.push(out, op, ng)
    }

    pub fn relu(&mut self, input: Var) -> Var {
        self.unary(input, |v| v.max_s(F::ZERO), Op::Relu(input))
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        self.unary(input, |v| v.sigmoid(), Op::Sigmoid(input))
    }

    pub fn tanh(&mut self, input: Var) -> Var {
        self.unary(input, |v| v.tanh(), Op::Tanh(input))
    }

    pub fn scale(&mut self, input: Var, s: F) -> Var {
        self.unary(input, |v| v * s, Op::Scale(input, s))
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(F, F) -> F, op: Op<F>) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err("elementwise", ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(ta.shape(), data)?;
        let ng = self.ng(&[a, b]);
        Ok(self.push(out, op, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// `x·wᵀ + b` for `x: (B, In)`, `w: (Out, In)`, `b: (Out)`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (batch, inp) = self.value(x).rc()?;
        let (out, win) = self.value(w).rc()?;
        if win != inp || self.value(b).shape() != [out] {
            return Err(shape_err("linear", self.value(x).shape(), self.value(w).shape()));
        }
        let mut y = Vec::with_capacity(batch * out);
        for _ in 0..batch {
            y.extend_from_slice(self.value(b).data());
        }
        gemm(batch, inp, out, F::ONE, self.value(x).data(), Layout::N, self.value(w).data(), Layout::T, F::ONE, &mut y);
        let ng = self.ng(&[x, w, b]);
        Ok(self.push(Tensor::new(&[batch, out], y)?, Op::Linear { x, w, b }, ng))
    }

    /// Columns `start..start + len` of a `(B, N)` matrix.
    pub fn slice_cols(&mut self, input: Var, start: usize, len: usize) -> Result<Var> {
        let (batch, n) = self.value(input).rc()?;
        if start + len > n {
            return Err(Error::Shape(format!("slice {start}+{len} exceeds {n} columns")));
        }
        let x = self.value(input).data();
        let mut out = Vec::with_capacity(batch * len);
        for b in 0..batch {
            out.extend_from_slice(&x[b * n + start..b * n + start + len]);
        }
        let ng = self.ng(&[input]);
        Ok(self.push(Tensor::new(&[batch, len], out)?, Op::SliceCols { input, start }, ng))
    }

    /// Per-cell dot products between a `(1, C, H, W)` map tensor and each row
    /// of a `(B, C)` matrix, giving `(B, H, W)`.
    pub fn score(&mut self, map: Var, vecs: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(map).nchw()?;
        let (batch, vc) = self.value(vecs).rc()?;
        if n != 1 || vc != c {
            return Err(shape_err("score", self.value(map).shape(), self.value(vecs).shape()));
        }
        let p = h * w;
        let mut out = vec![F::ZERO; batch * p];
        gemm(batch, c, p, F::ONE, self.value(vecs).data(), Layout::N, self.value(map).data(), Layout::N, F::ZERO, &mut out);
        let ng = self.ng(&[map, vecs]);
        Ok(self.push(Tensor::new(&[batch, h, w], out)?, Op::Score { map, vecs }, ng))
    }

    /// `(1/B) Σ weights · (pred − target)²` where `B` is the leading dimension.
    pub fn weighted_sse(&mut self, pred: Var, target: Tensor<F>, weights: Tensor<F>) -> Result<Var> {
        let p = self.value(pred);
        if p.shape() != target.shape() || p.shape() != weights.shape() {
            return Err(shape_err("weighted_sse", p.shape(), target.shape()));
        }
        let batch = F::from_f64(p.shape()[0] as f64);
        let mut acc = 0.0f64;
        for ((&s, &t), &w) in p.data().iter().zip(target.data()).zip(weights.data()) {
            let d = (s - t).to_f64();
            acc += w.to_f64() * d * d;
        }
        let loss = F::from_f64(acc) / batch;
        let ng = self.ng(&[pred]);
        Ok(self.push(Tensor::scalar(loss), Op::WeightedSse { pred, target, weights }, ng))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let s: f64 = self.value(input).data().iter().map(|v| v.to_f64()).sum();
        let ng = self.ng(&[input]);
        self.push(Tensor::scalar(F::from_f64(s)), Op::Sum(input), ng)
    }

    /// Reverse pass from a single-element node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<F>> {
        if self.value(loss).len() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar, got {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), F::ONE));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<F>>], v: Var, g: Tensor<F>) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node<F>, g: &Tensor<F>, grads: &mut [Option<Tensor<F>>]) -> Result<()> {
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Opaque { name, inputs } => {
                if self.ng(inputs) {
                    return Err(Error::UnsupportedOp(name.clone()));
                }
            }
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                pad,
                cols,
            } => {
                let (n, cin, h, w) = self.value(*input).nchw()?;
                let (cout, _, kh, kw) = self.value(*weight).nchw()?;
                let (_, _, oh, ow) = node.value.nchw()?;
                let (k, p) = (cin * kh * kw, oh * ow);
                let wt = self.value(*weight).data();
                let need_w = self.nodes[weight.0].needs_grad;
                let need_b = self.nodes[bias.0].needs_grad;
                let need_x = self.nodes[input.0].needs_grad;
                let mut dw = vec![F::ZERO; cout * k];
                let mut db = vec![F::ZERO; cout];
                let mut dx = if need_x { vec![F::ZERO; n * cin * h * w] } else { Vec::new() };
                let mut dcols = if need_x { vec![F::ZERO; k * p] } else { Vec::new() };
                for ni in 0..n {
                    let gn = &gd[ni * cout * p..(ni + 1) * cout * p];
                    if need_w {
                        gemm(cout, p, k, F::ONE, gn, Layout::N, &cols[ni], Layout::T, F::ONE, &mut dw);
                    }
                    if need_b {
                        for co in 0..cout {
                            db[co] += gn[co * p..(co + 1) * p].iter().copied().sum::<F>();
                        }
                    }
                    if need_x {
                        gemm(k, cout, p, F::ONE, wt, Layout::T, gn, Layout::N, F::ZERO, &mut dcols);
                        col2im(&dcols, cin, h, w, kh, kw, *stride, *pad, oh, ow, &mut dx[ni * cin * h * w..(ni + 1) * cin * h * w]);
                    }
                }
                if need_w {
                    self.accumulate(grads, *weight, Tensor::new(self.value(*weight).shape(), dw)?);
                }
                if need_b {
                    self.accumulate(grads, *bias, Tensor::new(&[cout], db)?);
                }
                if need_x {
                    self.accumulate(grads, *input, Tensor::new(&[n, cin, h, w], dx)?);
                }
            }
            Op::MaxPool2 { input, argmax } => {
                let mut dx = Tensor::zeros(self.value(*input).shape());
                let d = dx.data_mut();
                for (j, &src) in argmax.iter().enumerate() {
                    d[src] += gd[j];
                }
                self.accumulate(grads, *input, dx);
            }
            Op::Upsample2(input) => {
                let (n, c, h, w) = self.value(*input).nchw()?;
                let ow = 2 * w;
                let mut dx = vec![F::ZERO; n * c * h * w];
                for plane in 0..n * c {
                    let src = &gd[plane * 4 * h * w..(plane + 1) * 4 * h * w];
                    let dst = &mut dx[plane * h * w..(plane + 1) * h * w];
                    for oy in 0..2 * h {
                        for ox in 0..ow {
                            dst[(oy / 2) * w + ox / 2] += src[oy * ow + ox];
                        }
                    }
                }
                self.accumulate(grads, *input, Tensor::new(&[n, c, h, w], dx)?);
            }
            Op::Concat(a, b) => {
                let (n, ca, h, w) = self.value(*a).nchw()?;
                let (_, cb, _, _) = self.value(*b).nchw()?;
                let plane = h * w;
                let mut da = Vec::with_capacity(n * ca * plane);
                let mut dbv = Vec::with_capacity(n * cb * plane);
                for ni in 0..n {
                    let base = ni * (ca + cb) * plane;
                    da.extend_from_slice(&gd[base..base + ca * plane]);
                    dbv.extend_from_slice(&gd[base + ca * plane..base + (ca + cb) * plane]);
                }
                self.accumulate(grads, *a, Tensor::new(&[n, ca, h, w], da)?);
                self.accumulate(grads, *b, Tensor::new(&[n, cb, h, w], dbv)?);
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                let d = xv.iter().zip(gd).map(|(&v, &gg)| if v > F::ZERO { gg } else { F::ZERO }).collect();
                self.accumulate(grads, *x, Tensor::new(g.shape(), d)?);
            }
            Op::Sigmoid(x) => {
                let y = node.value.data();
                let d = y.iter().zip(gd).map(|(&s, &gg)| gg * s * (F::ONE - s)).collect();
                self.accumulate(grads, *x, Tensor::new(g.shape(), d)?);
            }
            Op::Tanh(x) => {
                let y = node.value.data();
                let d = y.iter().zip(gd).map(|(&t, &gg)| gg * (F::ONE - t * t)).collect();
                self.accumulate(grads, *x, Tensor::new(g.shape(), d)?);
            }
            Op::Scale(x, s) => {
                let d = gd.iter().map(|&gg| gg * *s).collect();
                self.accumulate(grads, *x, Tensor::new(g.shape(), d)?);
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                let da = gd.iter().zip(vb).map(|(&gg, &y)| gg * y).collect();
                let dbv = gd.iter().zip(va).map(|(&gg, &x)| gg * x).collect();
                self.accumulate(grads, *a, Tensor::new(g.shape(), da)?);
                self.accumulate(grads, *b, Tensor::new(g.shape(), dbv)?);
            }
            Op::Linear { x, w, b } => {
                let (batch, inp) = self.value(*x).rc()?;
                let (out, _) = self.value(*w).rc()?;
                if self.nodes[x.0].needs_grad {
                    let mut dx = vec![F::ZERO; batch * inp];
                    gemm(batch, out, inp, F::ONE, gd, Layout::N, self.value(*w).data(), Layout::N, F::ZERO, &mut dx);
                    self.accumulate(grads, *x, Tensor::new(&[batch, inp], dx)?);
                }
                if self.nodes[w.0].needs_grad {
                    let mut dw = vec![F::ZERO; out * inp];
                    gemm(out, batch, inp, F::ONE, gd, Layout::T, self.value(*x).data(), Layout::N, F::ZERO, &mut dw);
                    self.accumulate(grads, *w, Tensor::new(&[out, inp], dw)?);
                }
                if self.nodes[b.0].needs_grad {
                    let mut dbv = vec![F::ZERO; out];
                    for row in gd.chunks(out) {
                        for (acc, &v) in dbv.iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                    self.accumulate(grads, *b, Tensor::new(&[out], dbv)?);
                }
            }
            Op::SliceCols { input, start } => {
                let (batch, n) = self.value(*input).rc()?;
                let len = g.shape()[1];
                let mut dx = vec![F::ZERO; batch * n];
                for bi in 0..batch {
                    dx[bi * n + start..bi * n + start + len].copy_from_slice(&gd[bi * len..(bi + 1) * len]);
                }
                self.accumulate(grads, *input, Tensor::new(&[batch, n], dx)?);
            }
            Op::Score { map, vecs } => {
                let (_, c, h, w) = self.value(*map).nchw()?;
                let (batch, _) = self.value(*vecs).rc()?;
                let p = h * w;
                if self.nodes[map.0].needs_grad {
                    let mut dm = vec![F::ZERO; c * p];
                    gemm(c, batch, p, F::ONE, self.value(*vecs).data(), Layout::T, gd, Layout::N, F::ZERO, &mut dm);
                    self.accumulate(grads, *map, Tensor::new(&[1, c, h, w], dm)?);
                }
                if self.nodes[vecs.0].needs_grad {
                    let mut dv = vec![F::ZERO; batch * c];
                    gemm(batch, p, c, F::ONE, gd, Layout::N, self.value(*map).data(), Layout::T, F::ZERO, &mut dv);
                    self.accumulate(grads, *vecs, Tensor::new(&[batch, c], dv)?);
                }
            }
            Op::WeightedSse { pred, target, weights } => {
                let pv = self.value(*pred);
                let scale = F::from_f64(2.0 / pv.shape()[0] as f64) * gd[0];
                let d = pv
                    .data()
                    .iter()
                    .zip(target.data())
                    .zip(weights.data())
                    .map(|((&s, &t), &w)| scale * w * (s - t))
                    .collect();
                self.accumulate(grads, *pred, Tensor::new(pv.shape(), d)?);
            }
            Op::Sum(x) => {
                let shape = self.value(*x).shape().to_vec();
                self.accumulate(grads, *x, Tensor::full(&shape, gd[0]));
            }
        }
        Ok(())
    }
}
