//! Minimal tape-free reverse-mode autodiff. Every op result keeps handles to
//! its inputs only when some input needs a gradient, so inference-only
//! graphs free intermediates as soon as they go out of scope.

use std::cell::RefCell;
use std::collections::HashSet;
use std::rc::Rc;

use crate::kernels;
use crate::tensor::Tensor;

const NORM_EPS: f32 = 1e-5;

#[derive(Clone)]
pub struct Var(Rc<Node>);

struct Node {
    value: Tensor,
    grad: RefCell<Option<Vec<f32>>>,
    requires_grad: bool,
    op: Op,
}

enum Op {
    Leaf,
    Conv2d { x: Var, w: Var, b: Option<Var>, k: usize },
    Linear { x: Var, w: Var, b: Option<Var> },
    Elu(Var),
    EluDeriv(Var),
    Sigmoid(Var),
    AvgPool(Var, usize),
    Upsample(Var, usize),
    Concat(Vec<Var>),
    InstanceNorm { x: Var, inv: Vec<f32>, ratio: Vec<f32> },
    Modulate { x: Var, gamma: Var, beta: Var },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f32),
    MulConst(Var, Vec<f32>),
    Sum(Var),
    Reshape(Var),
}

impl std::fmt::Debug for Var {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var{:?}", self.0.value.shape)
    }
}

fn any_grad(vs: &[&Var]) -> bool {
    vs.iter().any(|v| v.0.requires_grad)
}

impl Var {
    fn from_op(value: Tensor, op: Op, requires_grad: bool) -> Var {
        let op = if requires_grad { op } else { Op::Leaf };
        Var(Rc::new(Node {
            value,
            grad: RefCell::new(None),
            requires_grad,
            op,
        }))
    }

    /// A leaf; `requires_grad` leaves receive gradients on `backward`.
    pub fn leaf(value: Tensor, requires_grad: bool) -> Var {
        Self::from_op(value, Op::Leaf, requires_grad)
    }

    pub fn constant(value: Tensor) -> Var {
        Self::leaf(value, false)
    }

    pub fn value(&self) -> &Tensor {
        &self.0.value
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.value.shape
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Gradient accumulated by the last `backward`, if any reached this node.
    pub fn grad(&self) -> Option<Vec<f32>> {
        self.0.grad.borrow().clone()
    }

    /// A constant holding the same value.
    pub fn detach(&self) -> Var {
        Var::constant(self.0.value.clone())
    }

    fn ptr(&self) -> *const Node {
        Rc::as_ptr(&self.0)
    }

    fn parents(&self) -> Vec<&Var> {
        match &self.0.op {
            Op::Leaf => vec![],
            Op::Conv2d { x, w, b, .. } | Op::Linear { x, w, b } => {
                let mut p = vec![x, w];
                p.extend(b.iter());
                p
            }
            Op::Elu(x)
            | Op::EluDeriv(x)
            | Op::Sigmoid(x)
            | Op::AvgPool(x, _)
            | Op::Upsample(x, _)
            | Op::Scale(x, _)
            | Op::MulConst(x, _)
            | Op::Sum(x)
            | Op::Reshape(x)
            | Op::InstanceNorm { x, .. } => vec![x],
            Op::Concat(xs) => xs.iter().collect(),
            Op::Modulate { x, gamma, beta } => vec![x, gamma, beta],
            Op::Add(a, b) | Op::Mul(a, b) => vec![a, b],
        }
    }

    /// Reverse-mode sweep from a scalar. Gradients accumulate into every
    /// reachable node that requires them.
    pub fn backward(&self) {
        assert_eq!(self.0.value.len(), 1, "backward needs a scalar, got {:?}", self.shape());
        let order = self.topo_order();
        for v in &order {
            *v.0.grad.borrow_mut() = None;
        }
        *self.0.grad.borrow_mut() = Some(vec![1.0]);
        for v in order.iter().rev() {
            let g = v.0.grad.borrow().clone();
            if let Some(g) = g {
                v.propagate(&g);
            }
        }
    }

    fn topo_order(&self) -> Vec<Var> {
        let mut order = Vec::new();
        let mut seen: HashSet<*const Node> = HashSet::new();
        let mut stack: Vec<(Var, bool)> = vec![(self.clone(), false)];
        while let Some((v, expanded)) = stack.pop() {
            if expanded {
                order.push(v);
                continue;
            }
            if !v.0.requires_grad || !seen.insert(v.ptr()) {
                continue;
            }
            stack.push((v.clone(), true));
            for p in v.parents() {
                if p.0.requires_grad && !seen.contains(&p.ptr()) {
                    stack.push((p.clone(), false));
                }
            }
        }
        order
    }

    fn accumulate(&self, f: impl FnOnce(&mut [f32])) {
        if !self.0.requires_grad {
            return;
        }
        let mut slot = self.0.grad.borrow_mut();
        let g = slot.get_or_insert_with(|| vec![0.0; self.0.value.len()]);
        f(g);
    }

    fn propagate(&self, g: &[f32]) {
        let y = &self.0.value;
        match &self.0.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, k } => {
                let (bn, c, h, wd) = x.value().dims4();
                let o = w.shape()[0];
                let mut dx = x.requires_grad().then(|| vec![0.0; x.value().len()]);
                let mut dw = w.requires_grad().then(|| vec![0.0; w.value().len()]);
                let mut db = b.as_ref().filter(|b| b.requires_grad()).map(|b| vec![0.0; b.value().len()]);
                kernels::conv2d_backward(
                    &x.value().data,
                    bn,
                    c,
                    h,
                    wd,
                    &w.value().data,
                    o,
                    *k,
                    g,
                    dx.as_deref_mut(),
                    dw.as_deref_mut(),
                    db.as_deref_mut(),
                );
                add_into(x, dx);
                add_into(w, dw);
                if let Some(b) = b {
                    add_into(b, db);
                }
            }
            Op::Linear { x, w, b } => {
                let (bn, f) = (x.shape()[0], x.shape()[1]);
                let o = w.shape()[0];
                if x.requires_grad() {
                    x.accumulate(|dx| kernels::gemm(bn, o, f, g, false, &w.value().data, false, dx, 1.0));
                }
                if w.requires_grad() {
                    w.accumulate(|dw| kernels::gemm(o, bn, f, g, true, &x.value().data, false, dw, 1.0));
                }
                if let Some(b) = b {
                    b.accumulate(|db| {
                        for row in g.chunks(o) {
                            for (d, v) in db.iter_mut().zip(row) {
                                *d += v;
                            }
                        }
                    });
                }
            }
            Op::Elu(x) => x.accumulate(|dx| {
                for ((d, &gv), &xv) in dx.iter_mut().zip(g).zip(&x.value().data) {
                    *d += if xv > 0.0 { gv } else { gv * xv.exp() };
                }
            }),
            Op::EluDeriv(x) => x.accumulate(|dx| {
                for ((d, &gv), &xv) in dx.iter_mut().zip(g).zip(&x.value().data) {
                    if xv <= 0.0 {
                        *d += gv * xv.exp();
                    }
                }
            }),
            Op::Sigmoid(x) => x.accumulate(|dx| {
                for ((d, &gv), &yv) in dx.iter_mut().zip(g).zip(&y.data) {
                    *d += gv * yv * (1.0 - yv);
                }
            }),
            Op::AvgPool(x, p) => {
                let (bn, c, h, w) = x.value().dims4();
                let (oh, ow) = (h / p, w / p);
                let s = 1.0 / (p * p) as f32;
                x.accumulate(|dx| {
                    for pl in 0..bn * c {
                        for yy in 0..h {
                            for xx in 0..w {
                                dx[(pl * h + yy) * w + xx] += g[(pl * oh + yy / p) * ow + xx / p] * s;
                            }
                        }
                    }
                });
            }
            Op::Upsample(x, p) => {
                let (bn, c, h, w) = x.value().dims4();
                let (oh, ow) = (h * p, w * p);
                x.accumulate(|dx| {
                    for pl in 0..bn * c {
                        for yy in 0..oh {
                            for xx in 0..ow {
                                dx[(pl * h + yy / p) * w + xx / p] += g[(pl * oh + yy) * ow + xx];
                            }
                        }
                    }
                });
            }
            Op::Concat(xs) => {
                let (bn, ctot, h, w) = y.dims4();
                let hw = h * w;
                let mut off = 0;
                for x in xs {
                    let c = x.shape()[1];
                    x.accumulate(|dx| {
                        for bi in 0..bn {
                            let src = &g[(bi * ctot + off) * hw..(bi * ctot + off + c) * hw];
                            for (d, v) in dx[bi * c * hw..(bi + 1) * c * hw].iter_mut().zip(src) {
                                *d += v;
                            }
                        }
                    });
                    off += c;
                }
            }
            Op::InstanceNorm { x, inv, ratio } => {
                let (bn, c, h, w) = x.value().dims4();
                let hw = h * w;
                x.accumulate(|dx| {
                    for pl in 0..bn * c {
                        let r = pl * hw..(pl + 1) * hw;
                        let (gs, ys) = (&g[r.clone()], &y.data[r.clone()]);
                        let mg = gs.iter().sum::<f32>() / hw as f32;
                        let mgy = gs.iter().zip(ys).map(|(a, b)| a * b).sum::<f32>() / hw as f32;
                        for ((d, &gv), &yv) in dx[r].iter_mut().zip(gs).zip(ys) {
                            *d += inv[pl] * (gv - mg - ratio[pl] * yv * mgy);
                        }
                    }
                });
            }
            Op::Modulate { x, gamma, beta } => {
                let (bn, c, h, w) = x.value().dims4();
                let hw = h * w;
                x.accumulate(|dx| {
                    for pl in 0..bn * c {
                        let gm = gamma.value().data[pl];
                        for (d, &gv) in dx[pl * hw..(pl + 1) * hw].iter_mut().zip(&g[pl * hw..(pl + 1) * hw]) {
                            *d += gv * gm;
                        }
                    }
                });
                gamma.accumulate(|dg| {
                    for pl in 0..bn * c {
                        let r = pl * hw..(pl + 1) * hw;
                        dg[pl] += g[r.clone()].iter().zip(&x.value().data[r]).map(|(a, b)| a * b).sum::<f32>();
                    }
                });
                beta.accumulate(|dbeta| {
                    for pl in 0..bn * c {
                        dbeta[pl] += g[pl * hw..(pl + 1) * hw].iter().sum::<f32>();
                    }
                });
            }
            Op::Add(a, b) => {
                a.accumulate(|d| add_slice(d, g));
                b.accumulate(|d| add_slice(d, g));
            }
            Op::Mul(a, b) => {
                a.accumulate(|d| {
                    for ((dv, &gv), &bv) in d.iter_mut().zip(g).zip(&b.value().data) {
                        *dv += gv * bv;
                    }
                });
                b.accumulate(|d| {
                    for ((dv, &gv), &av) in d.iter_mut().zip(g).zip(&a.value().data) {
                        *dv += gv * av;
                    }
                });
            }
            Op::Scale(x, s) => x.accumulate(|d| {
                for (dv, &gv) in d.iter_mut().zip(g) {
                    *dv += gv * s;
                }
            }),
            Op::MulConst(x, c) => x.accumulate(|d| {
                for ((dv, &gv), &cv) in d.iter_mut().zip(g).zip(c) {
                    *dv += gv * cv;
                }
            }),
            Op::Sum(x) => x.accumulate(|d| {
                for dv in d.iter_mut() {
                    *dv += g[0];
                }
            }),
            Op::Reshape(x) => x.accumulate(|d| add_slice(d, g)),
        }
    }
}

fn add_slice(d: &mut [f32], g: &[f32]) {
    for (dv, gv) in d.iter_mut().zip(g) {
        *dv += gv;
    }
}

fn add_into(v: &Var, g: Option<Vec<f32>>) {
    if let Some(g) = g {
        v.accumulate(|d| add_slice(d, &g));
    }
}

/// Same-padded, stride-1 `k x k` convolution. `w` is `[out, in * k * k]`.
pub fn conv2d(x: &Var, w: &Var, b: Option<&Var>, k: usize) -> Var {
    let (bn, c, h, wd) = x.value().dims4();
    let o = w.shape()[0];
    assert_eq!(w.shape()[1], c * k * k, "conv weight {:?} for {c} input channels", w.shape());
    let mut out = vec![0.0; bn * o * h * wd];
    kernels::conv2d_forward(
        &x.value().data,
        bn,
        c,
        h,
        wd,
        &w.value().data,
        b.map(|b| &b.value().data[..]),
        o,
        k,
        &mut out,
    );
    let mut deps = vec![x, w];
    deps.extend(b);
    let rg = any_grad(&deps);
    Var::from_op(
        Tensor::new(vec![bn, o, h, wd], out),
        Op::Conv2d {
            x: x.clone(),
            w: w.clone(),
            b: b.cloned(),
            k,
        },
        rg,
    )
}

/// `x [batch, in] -> [batch, out]` with `w [out, in]`.
pub fn linear(x: &Var, w: &Var, b: Option<&Var>) -> Var {
    let (bn, f) = (x.shape()[0], x.shape()[1]);
    let o = w.shape()[0];
    assert_eq!(w.shape()[1], f, "linear weight {:?} for {f} features", w.shape());
    let mut out = vec![0.0; bn * o];
    if let Some(b) = b {
        for row in out.chunks_mut(o) {
            row.copy_from_slice(&b.value().data);
        }
    }
    kernels::gemm(bn, f, o, &x.value().data, false, &w.value().data, true, &mut out, 1.0);
    let mut deps = vec![x, w];
    deps.extend(b);
    let rg = any_grad(&deps);
    Var::from_op(
        Tensor::new(vec![bn, o], out),
        Op::Linear {
            x: x.clone(),
            w: w.clone(),
            b: b.cloned(),
        },
        rg,
    )
}

fn unary(x: &Var, f: impl Fn(f32) -> f32, op: Op) -> Var {
    let data = x.value().data.iter().map(|&v| f(v)).collect();
    Var::from_op(Tensor::new(x.shape().to_vec(), data), op, x.requires_grad())
}

pub fn elu(x: &Var) -> Var {
    unary(x, |v| if v > 0.0 { v } else { v.exp_m1() }, Op::Elu(x.clone()))
}

/// Derivative of ELU, itself differentiable (used for tangent propagation).
pub fn elu_deriv(x: &Var) -> Var {
    unary(x, |v| if v > 0.0 { 1.0 } else { v.exp() }, Op::EluDeriv(x.clone()))
}

pub fn sigmoid(x: &Var) -> Var {
    unary(x, |v| 1.0 / (1.0 + (-v).exp()), Op::Sigmoid(x.clone()))
}

/// Non-overlapping `p x p` average pooling.
pub fn avg_pool(x: &Var, p: usize) -> Var {
    let (bn, c, h, w) = x.value().dims4();
    assert!(h % p == 0 && w % p == 0, "{h}x{w} not divisible by pool {p}");
    let (oh, ow) = (h / p, w / p);
    let mut out = vec![0.0; bn * c * oh * ow];
    let s = 1.0 / (p * p) as f32;
    let xd = &x.value().data;
    for pl in 0..bn * c {
        for yy in 0..h {
            for xx in 0..w {
                out[(pl * oh + yy / p) * ow + xx / p] += xd[(pl * h + yy) * w + xx] * s;
            }
        }
    }
    Var::from_op(Tensor::new(vec![bn, c, oh, ow], out), Op::AvgPool(x.clone(), p), x.requires_grad())
}

/// Nearest-neighbour upsampling by `p`.
pub fn upsample(x: &Var, p: usize) -> Var {
    let (bn, c, h, w) = x.value().dims4();
    let (oh, ow) = (h * p, w * p);
    let xd = &x.value().data;
    let mut out = vec![0.0; bn * c * oh * ow];
    for pl in 0..bn * c {
        for yy in 0..oh {
            for xx in 0..ow {
                out[(pl * oh + yy) * ow + xx] = xd[(pl * h + yy / p) * w + xx / p];
            }
        }
    }
    Var::from_op(Tensor::new(vec![bn, c, oh, ow], out), Op::Upsample(x.clone(), p), x.requires_grad())
}

/// Channel concatenation of equally sized 4-d tensors.
pub fn concat(xs: &[&Var]) -> Var {
    let parts: Vec<&Tensor> = xs.iter().map(|v| v.value()).collect();
    let t = Tensor::cat_channels(&parts);
    let rg = any_grad(xs);
    Var::from_op(t, Op::Concat(xs.iter().map(|&v| v.clone()).collect()), rg)
}

/// Per-(sample, channel) normalization over space; `NORM_EPS` is added to the
/// standard deviation so constant channels map to zero.
pub fn instance_norm(x: &Var) -> Var {
    let (bn, c, h, w) = x.value().dims4();
    let hw = h * w;
    let mut out = vec![0.0; x.value().len()];
    let mut inv = vec![0.0; bn * c];
    let mut ratio = vec![0.0; bn * c];
    for pl in 0..bn * c {
        let xs = &x.value().data[pl * hw..(pl + 1) * hw];
        let mean = xs.iter().map(|&v| v as f64).sum::<f64>() / hw as f64;
        let var = xs.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / hw as f64;
        let std = var.sqrt();
        let s = std + NORM_EPS as f64;
        inv[pl] = (1.0 / s) as f32;
        ratio[pl] = if std > 0.0 { (s / std) as f32 } else { 0.0 };
        for (o, &v) in out[pl * hw..(pl + 1) * hw].iter_mut().zip(xs) {
            *o = ((v as f64 - mean) / s) as f32;
        }
    }
    Var::from_op(
        Tensor::new(x.shape().to_vec(), out),
        Op::InstanceNorm {
            x: x.clone(),
            inv,
            ratio,
        },
        x.requires_grad(),
    )
}

/// `x * gamma + beta` with per-(sample, channel) `gamma`, `beta` of shape `[batch, channels]`.
pub fn modulate(x: &Var, gamma: &Var, beta: &Var) -> Var {
    let (bn, c, h, w) = x.value().dims4();
    assert_eq!(gamma.shape(), &[bn, c]);
    assert_eq!(beta.shape(), &[bn, c]);
    let hw = h * w;
    let mut out = x.value().data.clone();
    for pl in 0..bn * c {
        let (gm, bt) = (gamma.value().data[pl], beta.value().data[pl]);
        for v in &mut out[pl * hw..(pl + 1) * hw] {
            *v = *v * gm + bt;
        }
    }
    let rg = any_grad(&[x, gamma, beta]);
    Var::from_op(
        Tensor::new(x.shape().to_vec(), out),
        Op::Modulate {
            x: x.clone(),
            gamma: gamma.clone(),
            beta: beta.clone(),
        },
        rg,
    )
}

fn binary(a: &Var, b: &Var, f: impl Fn(f32, f32) -> f32, op: Op) -> Var {
    assert_eq!(a.shape(), b.shape(), "elementwise shape mismatch");
    let data = a.value().data.iter().zip(&b.value().data).map(|(&x, &y)| f(x, y)).collect();
    let rg = any_grad(&[a, b]);
    Var::from_op(Tensor::new(a.shape().to_vec(), data), op, rg)
}

pub fn add(a: &Var, b: &Var) -> Var {
    binary(a, b, |x, y| x + y, Op::Add(a.clone(), b.clone()))
}

pub fn mul(a: &Var, b: &Var) -> Var {
    binary(a, b, |x, y| x * y, Op::Mul(a.clone(), b.clone()))
}

pub fn scale(x: &Var, s: f32) -> Var {
    unary(x, |v| v * s, Op::Scale(x.clone(), s))
}

/// Elementwise product with a constant of the same length.
pub fn mul_const(x: &Var, c: Vec<f32>) -> Var {
    assert_eq!(c.len(), x.value().len());
    let data = x.value().data.iter().zip(&c).map(|(a, b)| a * b).collect();
    Var::from_op(Tensor::new(x.shape().to_vec(), data), Op::MulConst(x.clone(), c), x.requires_grad())
}

pub fn sum(x: &Var) -> Var {
    let s = x.value().data.iter().map(|&v| v as f64).sum::<f64>() as f32;
    Var::from_op(Tensor::scalar(s), Op::Sum(x.clone()), x.requires_grad())
}

pub fn mean(x: &Var) -> Var {
    let n = x.value().len() as f32;
    scale(&sum(x), 1.0 / n)
}

pub fn reshape(x: &Var, shape: Vec<usize>) -> Var {
    let t = Tensor::new(shape, x.value().data.clone());
    Var::from_op(t, Op::Reshape(x.clone()), x.requires_grad())
}

/// `[batch, ...] -> [batch, rest]`.
pub fn flatten(x: &Var) -> Var {
    let b = x.shape()[0];
    let n = x.value().len() / b;
    reshape(x, vec![b, n])
}
