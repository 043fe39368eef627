//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation eagerly: node values are computed when the
//! node is created, and [`Graph::backward`] walks the tape in reverse. Parameters
//! enter the graph by value from a [`ParamStore`]; their gradients come back keyed
//! by `(store uid, index)` so several networks can share one graph while only the
//! trainable ones receive gradients.

use crate::conv::{conv2d_backward, conv2d_forward, gemm, ConvGeom};
use crate::params::ParamStore;
use crate::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param { store: u64, index: usize },
    Conv2d { x: usize, w: usize, b: Option<usize>, geom: ConvGeom },
    Linear { x: usize, w: usize, b: usize },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f32),
    AddScalar(usize),
    LeakyRelu(usize, f32),
    Sigmoid(usize),
    Tanh(usize),
    Exp(usize),
    Clamp01(usize),
    Abs(usize),
    Square(usize),
    Mean(usize),
    Sum(usize),
    ConcatChannels(usize, usize),
    Upsample2x(usize),
    Reshape(usize),
    BceWithLogits { logits: usize, target: Tensor },
    GaussianKl { mu: usize, logvar: usize },
    Custom { x: usize, grad: Tensor },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients of the trainable parameters reached by a backward pass.
#[derive(Debug, Default)]
pub struct Gradients {
    entries: Vec<(u64, usize, Tensor)>,
}

impl Gradients {
    /// Gradient for parameter `index` of the store with `uid`, summed over all uses.
    pub fn get(&self, uid: u64, index: usize) -> Option<Tensor> {
        let mut acc: Option<Tensor> = None;
        for (s, i, g) in &self.entries {
            if *s == uid && *i == index {
                match acc.as_mut() {
                    Some(a) => a.add_assign(g),
                    None => acc = Some(g.clone()),
                }
            }
        }
        acc
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, i: usize) -> bool {
        self.nodes[i].requires_grad
    }

    /// Constant input; no gradient flows into it.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Constant copy of another node's value (stops gradients).
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.nodes[v.0].value.clone();
        self.input(t)
    }

    pub fn param(&mut self, store: &ParamStore, index: usize, trainable: bool) -> Var {
        let t = store.value(index).clone();
        self.push(
            t,
            Op::Param {
                store: store.uid(),
                index,
            },
            trainable,
        )
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeom) -> Var {
        let out = conv2d_forward(self.value(x), self.value(w), b.map(|b| self.value(b)), geom);
        let rg = self.rg(x.0) || self.rg(w.0) || b.is_some_and(|b| self.rg(b.0));
        self.push(
            out,
            Op::Conv2d {
                x: x.0,
                w: w.0,
                b: b.map(|b| b.0),
                geom,
            },
            rg,
        )
    }

    /// `x[n×in] · w[in×out] + b[out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let (n, k) = self.value(x).dims2();
        let (k2, m) = self.value(w).dims2();
        assert_eq!(k, k2, "linear: input width {k} does not match weight rows {k2}");
        let mut out = Tensor::zeros(&[n, m]);
        for row in out.data_mut().chunks_mut(m) {
            row.copy_from_slice(self.value(b).data());
        }
        gemm(
            n,
            k,
            m,
            self.value(x).data(),
            (k as isize, 1),
            self.value(w).data(),
            (m as isize, 1),
            1.0,
            out.data_mut(),
        );
        let rg = self.rg(x.0) || self.rg(w.0) || self.rg(b.0);
        self.push(out, Op::Linear { x: x.0, w: w.0, b: b.0 }, rg)
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f32, f32) -> f32, op: Op) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape(), tb.shape(), "elementwise op on mismatched shapes");
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::from_vec(ta.shape(), data);
        let rg = self.rg(a.0) || self.rg(b.0);
        self.push(out, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x + y, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x - y, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x * y, Op::Mul(a.0, b.0))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f32) -> f32, op: Op) -> Var {
        let out = self.value(a).map(f);
        let rg = self.rg(a.0);
        self.push(out, op, rg)
    }

    pub fn scale(&mut self, a: Var, k: f32) -> Var {
        self.unary(a, |x| x * k, Op::Scale(a.0, k))
    }

    pub fn add_scalar(&mut self, a: Var, k: f32) -> Var {
        self.unary(a, |x| x + k, Op::AddScalar(a.0))
    }

    /// `1 - a`.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let neg = self.scale(a, -1.0);
        self.add_scalar(neg, 1.0)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f32) -> Var {
        self.unary(a, |x| if x > 0.0 { x } else { slope * x }, Op::LeakyRelu(a.0, slope))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a.0))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f32::tanh, Op::Tanh(a.0))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f32::exp, Op::Exp(a.0))
    }

    /// Clamp to `[0, 1]`; gradient passes only where the input is inside the range.
    pub fn clamp01(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.clamp(0.0, 1.0), Op::Clamp01(a.0))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, f32::abs, Op::Abs(a.0))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a.0))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let m = (t.data().iter().map(|&v| v as f64).sum::<f64>() / t.len() as f64) as f32;
        let rg = self.rg(a.0);
        self.push(Tensor::scalar(m), Op::Mean(a.0), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().map(|&v| v as f64).sum::<f64>() as f32;
        let rg = self.rg(a.0);
        self.push(Tensor::scalar(s), Op::Sum(a.0), rg)
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Var {
        let (n, ca, h, w) = self.value(a).dims4();
        let (nb, cb, hb, wb) = self.value(b).dims4();
        assert_eq!((n, h, w), (nb, hb, wb), "concat_channels: batch/spatial mismatch");
        let mut data = Vec::with_capacity(n * (ca + cb) * h * w);
        let (ia, ib) = (ca * h * w, cb * h * w);
        for i in 0..n {
            data.extend_from_slice(&self.value(a).data()[i * ia..(i + 1) * ia]);
            data.extend_from_slice(&self.value(b).data()[i * ib..(i + 1) * ib]);
        }
        let out = Tensor::from_vec(&[n, ca + cb, h, w], data);
        let rg = self.rg(a.0) || self.rg(b.0);
        self.push(out, Op::ConcatChannels(a.0, b.0), rg)
    }

    /// Nearest-neighbour 2× spatial upsampling.
    pub fn upsample2x(&mut self, a: Var) -> Var {
        let (n, c, h, w) = self.value(a).dims4();
        let src = self.value(a).data();
        let mut out = Tensor::zeros(&[n, c, 2 * h, 2 * w]);
        let dst = out.data_mut();
        for p in 0..n * c {
            for y in 0..2 * h {
                for x in 0..2 * w {
                    dst[(p * 2 * h + y) * 2 * w + x] = src[(p * h + y / 2) * w + x / 2];
                }
            }
        }
        let rg = self.rg(a.0);
        self.push(out, Op::Upsample2x(a.0), rg)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let out = self.value(a).clone().reshaped(shape);
        let rg = self.rg(a.0);
        self.push(out, Op::Reshape(a.0), rg)
    }

    /// Binary cross-entropy from logits, summed over pixels and averaged over the batch.
    pub fn bce_with_logits(&mut self, logits: Var, target: &Tensor) -> Var {
        let l = self.value(logits);
        assert_eq!(l.shape(), target.shape(), "bce target shape mismatch");
        let n = l.shape()[0].max(1);
        let total: f64 = l
            .data()
            .iter()
            .zip(target.data())
            .map(|(&x, &t)| {
                let x = x as f64;
                x.max(0.0) - x * t as f64 + (-x.abs()).exp().ln_1p()
            })
            .sum();
        let rg = self.rg(logits.0);
        self.push(
            Tensor::scalar((total / n as f64) as f32),
            Op::BceWithLogits {
                logits: logits.0,
                target: target.clone(),
            },
            rg,
        )
    }

    /// KL divergence of a diagonal Gaussian to N(0, I), summed over latents, averaged over the batch.
    pub fn gaussian_kl(&mut self, mu: Var, logvar: Var) -> Var {
        let (m, lv) = (self.value(mu), self.value(logvar));
        assert_eq!(m.shape(), lv.shape());
        let n = m.shape()[0].max(1);
        let total: f64 = m
            .data()
            .iter()
            .zip(lv.data())
            .map(|(&u, &l)| {
                let (u, l) = (u as f64, l as f64);
                0.5 * (u * u + l.exp() - l - 1.0)
            })
            .sum();
        let rg = self.rg(mu.0) || self.rg(logvar.0);
        self.push(
            Tensor::scalar((total / n as f64) as f32),
            Op::GaussianKl {
                mu: mu.0,
                logvar: logvar.0,
            },
            rg,
        )
    }

    /// Scalar node whose value and input gradient were computed externally.
    ///
    /// `grad` must have the shape of `x` and hold `d value / d x`.
    pub fn custom_scalar(&mut self, x: Var, value: f32, grad: Tensor) -> Var {
        assert_eq!(self.value(x).shape(), grad.shape(), "custom_scalar gradient shape mismatch");
        let rg = self.rg(x.0);
        self.push(Tensor::scalar(value), Op::Custom { x: x.0, grad }, rg)
    }

    /// Backpropagate from a scalar node.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).len(), 1, "backward() needs a scalar loss");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));
        let mut out = Gradients::default();

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let send = |grads: &mut Vec<Option<Tensor>>, to: usize, t: Tensor| {
                if !self.nodes[to].requires_grad {
                    return;
                }
                match grads[to].as_mut() {
                    Some(acc) => acc.add_assign(&t),
                    None => grads[to] = Some(t),
                }
            };
            match &node.op {
                Op::Leaf => {}
                Op::Param { store, index } => out.entries.push((*store, *index, g)),
                Op::Conv2d { x, w, b, geom } => {
                    let (dx, dw, db) = conv2d_backward(
                        &self.nodes[*x].value,
                        &self.nodes[*w].value,
                        &g,
                        *geom,
                        self.rg(*x),
                        self.rg(*w),
                    );
                    if let Some(dx) = dx {
                        send(&mut grads, *x, dx);
                    }
                    if let Some(dw) = dw {
                        send(&mut grads, *w, dw);
                    }
                    if let Some(b) = b {
                        send(&mut grads, *b, db);
                    }
                }
                Op::Linear { x, w, b } => {
                    let xv = &self.nodes[*x].value;
                    let wv = &self.nodes[*w].value;
                    let (n, k) = xv.dims2();
                    let m = wv.dims2().1;
                    if self.rg(*x) {
                        let mut dx = Tensor::zeros(&[n, k]);
                        gemm(n, m, k, g.data(), (m as isize, 1), wv.data(), (1, m as isize), 0.0, dx.data_mut());
                        send(&mut grads, *x, dx);
                    }
                    if self.rg(*w) {
                        let mut dw = Tensor::zeros(&[k, m]);
                        gemm(k, n, m, xv.data(), (1, k as isize), g.data(), (m as isize, 1), 0.0, dw.data_mut());
                        send(&mut grads, *w, dw);
                    }
                    let mut db = Tensor::zeros(&[m]);
                    for row in g.data().chunks(m) {
                        for (d, v) in db.data_mut().iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    send(&mut grads, *b, db);
                }
                Op::Add(a, b) => {
                    send(&mut grads, *a, g.clone());
                    send(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    send(&mut grads, *a, g.clone());
                    send(&mut grads, *b, g.map(|v| -v));
                }
                Op::Mul(a, b) => {
                    if self.rg(*a) {
                        send(&mut grads, *a, zip(&g, &self.nodes[*b].value, |g, y| g * y));
                    }
                    if self.rg(*b) {
                        send(&mut grads, *b, zip(&g, &self.nodes[*a].value, |g, x| g * x));
                    }
                }
                Op::Scale(a, k) => send(&mut grads, *a, g.map(|v| v * k)),
                Op::AddScalar(a) => send(&mut grads, *a, g),
                Op::LeakyRelu(a, slope) => {
                    let s = *slope;
                    let d = zip(&g, &self.nodes[*a].value, |g, x| if x > 0.0 { g } else { g * s });
                    send(&mut grads, *a, d);
                }
                Op::Sigmoid(a) => send(&mut grads, *a, zip(&g, &node.value, |g, y| g * y * (1.0 - y))),
                Op::Tanh(a) => send(&mut grads, *a, zip(&g, &node.value, |g, y| g * (1.0 - y * y))),
                Op::Exp(a) => send(&mut grads, *a, zip(&g, &node.value, |g, y| g * y)),
                Op::Clamp01(a) => {
                    let d = zip(&g, &self.nodes[*a].value, |g, x| if (0.0..=1.0).contains(&x) { g } else { 0.0 });
                    send(&mut grads, *a, d);
                }
                Op::Abs(a) => {
                    let d = zip(&g, &self.nodes[*a].value, |g, x| {
                        if x > 0.0 {
                            g
                        } else if x < 0.0 {
                            -g
                        } else {
                            0.0
                        }
                    });
                    send(&mut grads, *a, d);
                }
                Op::Square(a) => send(&mut grads, *a, zip(&g, &self.nodes[*a].value, |g, x| 2.0 * g * x)),
                Op::Mean(a) => {
                    let t = &self.nodes[*a].value;
                    send(&mut grads, *a, Tensor::full(t.shape(), g.item() / t.len() as f32));
                }
                Op::Sum(a) => {
                    let t = &self.nodes[*a].value;
                    send(&mut grads, *a, Tensor::full(t.shape(), g.item()));
                }
                Op::ConcatChannels(a, b) => {
                    let (n, ca, h, w) = self.nodes[*a].value.dims4();
                    let cb = self.nodes[*b].value.dims4().1;
                    let (ia, ib) = (ca * h * w, cb * h * w);
                    let mut da = Vec::with_capacity(n * ia);
                    let mut db = Vec::with_capacity(n * ib);
                    for i in 0..n {
                        let item = &g.data()[i * (ia + ib)..(i + 1) * (ia + ib)];
                        da.extend_from_slice(&item[..ia]);
                        db.extend_from_slice(&item[ia..]);
                    }
                    send(&mut grads, *a, Tensor::from_vec(&[n, ca, h, w], da));
                    send(&mut grads, *b, Tensor::from_vec(&[n, cb, h, w], db));
                }
                Op::Upsample2x(a) => {
                    let (n, c, h, w) = self.nodes[*a].value.dims4();
                    let mut d = Tensor::zeros(&[n, c, h, w]);
                    let dd = d.data_mut();
                    for p in 0..n * c {
                        for y in 0..2 * h {
                            for x in 0..2 * w {
                                dd[(p * h + y / 2) * w + x / 2] += g.data()[(p * 2 * h + y) * 2 * w + x];
                            }
                        }
                    }
                    send(&mut grads, *a, d);
                }
                Op::Reshape(a) => {
                    let shape = self.nodes[*a].value.shape().to_vec();
                    send(&mut grads, *a, g.reshaped(&shape));
                }
                Op::BceWithLogits { logits, target } => {
                    let l = &self.nodes[*logits].value;
                    let k = g.item() / l.shape()[0].max(1) as f32;
                    send(&mut grads, *logits, zip(l, target, |x, t| k * (sigmoid(x) - t)));
                }
                Op::GaussianKl { mu, logvar } => {
                    let k = g.item() / self.nodes[*mu].value.shape()[0].max(1) as f32;
                    send(&mut grads, *mu, self.nodes[*mu].value.map(|u| k * u));
                    send(&mut grads, *logvar, self.nodes[*logvar].value.map(|l| k * 0.5 * (l.exp() - 1.0)));
                }
                Op::Custom { x, grad } => {
                    let k = g.item();
                    send(&mut grads, *x, grad.map(|v| v * k));
                }
            }
        }
        out
    }
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f32, f32) -> f32) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.shape(), data)
}

pub fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
