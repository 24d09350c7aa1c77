use std::sync::Arc;

use super::kernels::{self, ConvGeom};
use super::{dot, LinearOp, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MulScalar {
        s: Var,
        a: Var,
    },
    Matvec {
        a: Var,
        x: Var,
        m: usize,
        n: usize,
    },
    Matmul {
        a: Var,
        b: Var,
        m: usize,
        k: usize,
        n: usize,
    },
    Sum(Var),
    Mean(Var),
    L2NormSq(Var),
    Inner(Var, Var),
    Relu(Var),
    Gelu(Var),
    SoftThreshold {
        x: Var,
        tau: f64,
    },
    Cosine {
        a: Var,
        b: Var,
        na: f64,
        nb: f64,
        s: f64,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
        depthwise: bool,
    },
    ChannelBias {
        x: Var,
        b: Var,
        channels: usize,
    },
    Linear {
        x: Var,
        op: Arc<dyn LinearOp>,
    },
    Reshape(Var),
    Select {
        a: Var,
        index: usize,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// Arena of recorded operations in creation (hence topological) order.
///
/// A tape lives for one forward pass and is consumed by [`Tape::backward`].
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// d(loss)/d(v); zeros when `v` was unreachable or not tracked.
    pub fn grad(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => Tensor {
                shape: self.shapes[v.0].clone(),
                data: g.clone(),
            },
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dims(op, a.shape(), b.shape()));
    }
    Ok(())
}

fn image_dims(op: &'static str, t: &Tensor) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(Error::dims(op, t.shape(), &[0, 0, 0])),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, inputs: &[Var], op: Op) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a value that never receives gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad: false,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf that accumulates gradient.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad: true,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// Copies `v` into a new constant, cutting the gradient path.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn v(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn zip_map(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.v(a), self.v(b));
        same_shape(op, ta, tb)?;
        let data = ta.data.iter().zip(&tb.data).map(|(x, y)| f(*x, *y)).collect();
        Ok(Tensor {
            shape: ta.shape.clone(),
            data,
        })
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let t = self.v(a);
        Tensor {
            shape: t.shape.clone(),
            data: t.data.iter().map(|x| f(*x)).collect(),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_map("add", a, b, |x, y| x + y)?;
        Ok(self.push(out, &[a, b], Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_map("sub", a, b, |x, y| x - y)?;
        Ok(self.push(out, &[a, b], Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_map("mul", a, b, |x, y| x * y)?;
        Ok(self.push(out, &[a, b], Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.map(a, |x| s * x);
        self.push(out, &[a], Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let out = self.map(a, |x| x + s);
        self.push(out, &[a], Op::AddScalar(a))
    }

    /// `s * a` where `s` is a single-element tensor.
    pub fn mul_scalar(&mut self, s: Var, a: Var) -> Result<Var> {
        let sv = self.v(s);
        if sv.len() != 1 {
            return Err(Error::dims("mul_scalar", sv.shape(), &[1]));
        }
        let sv = sv.data[0];
        let out = self.map(a, |x| sv * x);
        Ok(self.push(out, &[s, a], Op::MulScalar { s, a }))
    }

    /// `a + c * (b - a)`-style helper: returns `a + c * b` with `c` fixed.
    pub fn axpy(&mut self, c: f64, x: Var, y: Var) -> Result<Var> {
        let cx = self.scale(x, c);
        self.add(y, cx)
    }

    /// `A x` for `A` of shape `[m, n]` and `x` of length `n`.
    pub fn matvec(&mut self, a: Var, x: Var) -> Result<Var> {
        let (ta, tx) = (self.v(a), self.v(x));
        let (m, n) = match *ta.shape() {
            [m, n] if n == tx.len() => (m, n),
            _ => return Err(Error::dims("matvec", ta.shape(), tx.shape())),
        };
        let data = (0..m).map(|i| dot(&ta.data[i * n..(i + 1) * n], &tx.data)).collect();
        Ok(self.push(Tensor { shape: vec![m], data }, &[a, x], Op::Matvec { a, x, m, n }))
    }

    /// `A B` for `A: [m, k]`, `B: [k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.v(a), self.v(b));
        let (m, k, n) = match (ta.shape(), tb.shape()) {
            (&[m, k], &[k2, n]) if k == k2 => (m, k, n),
            _ => return Err(Error::dims("matmul", ta.shape(), tb.shape())),
        };
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let av = ta.data[i * k + p];
                for j in 0..n {
                    data[i * n + j] += av * tb.data[p * n + j];
                }
            }
        }
        Ok(self.push(
            Tensor {
                shape: vec![m, n],
                data,
            },
            &[a, b],
            Op::Matmul { a, b, m, k, n },
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.v(a).data.iter().sum();
        self.push(Tensor::scalar(s), &[a], Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.v(a);
        let s = t.data.iter().sum::<f64>() / t.len() as f64;
        self.push(Tensor::scalar(s), &[a], Op::Mean(a))
    }

    pub fn l2_norm_squared(&mut self, a: Var) -> Var {
        let d = &self.v(a).data;
        let s = dot(d, d);
        self.push(Tensor::scalar(s), &[a], Op::L2NormSq(a))
    }

    pub fn inner(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.v(a), self.v(b));
        if ta.len() != tb.len() {
            return Err(Error::dims("inner", ta.shape(), tb.shape()));
        }
        let s = dot(&ta.data, &tb.data);
        Ok(self.push(Tensor::scalar(s), &[a, b], Op::Inner(a, b)))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.map(a, |x| x.max(0.0));
        self.push(out, &[a], Op::Relu(a))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.map(a, kernels::gelu);
        self.push(out, &[a], Op::Gelu(a))
    }

    /// `sign(x) * max(|x| - tau, 0)`; derivative 0 on `|x| <= tau`.
    pub fn soft_threshold(&mut self, x: Var, tau: f64) -> Var {
        let out = self.map(x, |v| v.signum() * (v.abs() - tau).max(0.0));
        self.push(out, &[x], Op::SoftThreshold { x, tau })
    }

    /// `a.b / (|a| |b|)` over flattened tensors.
    pub fn cosine_similarity(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.v(a), self.v(b));
        if ta.len() != tb.len() {
            return Err(Error::dims("cosine_similarity", ta.shape(), tb.shape()));
        }
        let (na, nb) = (ta.norm(), tb.norm());
        if na == 0.0 || nb == 0.0 {
            return Err(Error::Degenerate("cosine similarity of a zero-norm vector".into()));
        }
        let s = dot(&ta.data, &tb.data) / (na * nb);
        Ok(self.push(Tensor::scalar(s), &[a, b], Op::Cosine { a, b, na, nb, s }))
    }

    /// Layer norm over the channel axis of a `[C, H, W]` tensor.
    pub fn channel_layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let tx = self.v(x);
        let (c, _, _) = image_dims("channel_layer_norm", tx)?;
        let (tg, tb) = (self.v(gamma), self.v(beta));
        if tg.len() != c || tb.len() != c {
            return Err(Error::dims("channel_layer_norm", tx.shape(), tg.shape()));
        }
        let (out, xhat, rstd) = kernels::channel_layer_norm_forward(&tx.data, &tg.data, &tb.data, c, eps);
        let shape = tx.shape.clone();
        Ok(self.push(
            Tensor { shape, data: out },
            &[x, gamma, beta],
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
        ))
    }

    /// Same-padded 2-D convolution: `x: [Cin, H, W]`, `w: [Cout, Cin, kh, kw]`, `b: [Cout]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (tx, tw) = (self.v(x), self.v(w));
        let (c_in, h, wd) = image_dims("conv2d", tx)?;
        let geom = match *tw.shape() {
            [c_out, ci, kh, kw] if ci == c_in && kh % 2 == 1 && kw % 2 == 1 => ConvGeom {
                c_in,
                c_out,
                h,
                w: wd,
                kh,
                kw,
            },
            _ => return Err(Error::dims("conv2d", tx.shape(), tw.shape())),
        };
        let bias = match b {
            Some(b) => {
                let tb = self.v(b);
                if tb.len() != geom.c_out {
                    return Err(Error::dims("conv2d bias", tw.shape(), tb.shape()));
                }
                Some(tb.data.as_slice())
            }
            None => None,
        };
        let out = kernels::conv2d_forward(&tx.data, &tw.data, bias, &geom);
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(
            Tensor {
                shape: vec![geom.c_out, h, wd],
                data: out,
            },
            &inputs,
            Op::Conv2d {
                x,
                w,
                b,
                geom,
                depthwise: false,
            },
        ))
    }

    /// Depthwise same-padded convolution: `x: [C, H, W]`, `w: [C, 1, kh, kw]`, `b: [C]`.
    pub fn depthwise_conv2d(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (tx, tw) = (self.v(x), self.v(w));
        let (c, h, wd) = image_dims("depthwise_conv2d", tx)?;
        let geom = match *tw.shape() {
            [c2, 1, kh, kw] if c2 == c && kh % 2 == 1 && kw % 2 == 1 => ConvGeom {
                c_in: c,
                c_out: c,
                h,
                w: wd,
                kh,
                kw,
            },
            _ => return Err(Error::dims("depthwise_conv2d", tx.shape(), tw.shape())),
        };
        let bias = match b {
            Some(b) => {
                let tb = self.v(b);
                if tb.len() != c {
                    return Err(Error::dims("depthwise_conv2d bias", tw.shape(), tb.shape()));
                }
                Some(tb.data.as_slice())
            }
            None => None,
        };
        let out = kernels::depthwise_forward(&tx.data, &tw.data, bias, &geom);
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(
            Tensor {
                shape: vec![c, h, wd],
                data: out,
            },
            &inputs,
            Op::Conv2d {
                x,
                w,
                b,
                geom,
                depthwise: true,
            },
        ))
    }

    /// Adds `b[c]` to every pixel of channel `c` of a `[C, H, W]` tensor.
    pub fn add_channel_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (tx, tb) = (self.v(x), self.v(b));
        let (c, h, w) = image_dims("add_channel_bias", tx)?;
        if tb.len() != c {
            return Err(Error::dims("add_channel_bias", tx.shape(), tb.shape()));
        }
        let plane = h * w;
        let mut data = tx.data.clone();
        for (ch, chunk) in data.chunks_mut(plane).enumerate() {
            let bv = tb.data[ch];
            chunk.iter_mut().for_each(|v| *v += bv);
        }
        let shape = tx.shape.clone();
        Ok(self.push(Tensor { shape, data }, &[x, b], Op::ChannelBias { x, b, channels: c }))
    }

    /// Applies a linear map to the flattened value; the result is 1-D.
    pub fn linear(&mut self, x: Var, op: Arc<dyn LinearOp>) -> Result<Var> {
        let tx = self.v(x);
        if tx.len() != op.input_len() {
            return Err(Error::dims("linear", tx.shape(), &[op.input_len()]));
        }
        let data = op.apply(&tx.data)?;
        Ok(self.push(Tensor::from_vec(data), &[x], Op::Linear { x, op }))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.v(a).clone().reshape(shape)?;
        Ok(self.push(out, &[a], Op::Reshape(a)))
    }

    /// Slice `index` along the leading axis.
    pub fn select(&mut self, a: Var, index: usize) -> Result<Var> {
        let ta = self.v(a);
        let (lead, rest) = match ta.shape().split_first() {
            Some((&lead, rest)) => (lead, rest.to_vec()),
            None => return Err(Error::dims("select", ta.shape(), &[index])),
        };
        if index >= lead {
            return Err(Error::Index {
                index: index + 1,
                max: lead,
            });
        }
        let stride: usize = rest.iter().product();
        let data = ta.data[index * stride..(index + 1) * stride].to_vec();
        let shape = if rest.is_empty() { vec![1] } else { rest };
        Ok(self.push(Tensor { shape, data }, &[a], Op::Select { a, index }))
    }

    /// Reverse sweep from a single-element `loss`.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        let nodes = self.nodes;
        if nodes[loss.0].value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        if nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }

        let acc = |grads: &mut Vec<Option<Vec<f64>>>, v: Var, g: Vec<f64>| {
            if !nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.iter_mut().zip(&g).for_each(|(e, x)| *e += x),
                slot @ None => *slot = Some(g),
            }
        };
        let rg = |v: Var| nodes[v.0].requires_grad;
        let val = |v: Var| &nodes[v.0].value.data;

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            match &nodes[i].op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    acc(&mut grads, *b, g.clone());
                    acc(&mut grads, *a, g.clone());
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, g.iter().map(|x| -x).collect());
                    acc(&mut grads, *a, g.clone());
                }
                Op::Mul(a, b) => {
                    if rg(*a) {
                        acc(&mut grads, *a, g.iter().zip(val(*b)).map(|(x, y)| x * y).collect());
                    }
                    if rg(*b) {
                        acc(&mut grads, *b, g.iter().zip(val(*a)).map(|(x, y)| x * y).collect());
                    }
                }
                Op::Scale(a, s) => acc(&mut grads, *a, g.iter().map(|x| s * x).collect()),
                Op::AddScalar(a) => acc(&mut grads, *a, g.clone()),
                Op::MulScalar { s, a } => {
                    let sv = val(*s)[0];
                    if rg(*s) {
                        acc(&mut grads, *s, vec![dot(&g, val(*a))]);
                    }
                    if rg(*a) {
                        acc(&mut grads, *a, g.iter().map(|x| sv * x).collect());
                    }
                }
                Op::Matvec { a, x, m, n } => {
                    let (av, xv) = (val(*a), val(*x));
                    if rg(*a) {
                        let mut ga = vec![0.0; m * n];
                        for r in 0..*m {
                            for c in 0..*n {
                                ga[r * n + c] = g[r] * xv[c];
                            }
                        }
                        acc(&mut grads, *a, ga);
                    }
                    if rg(*x) {
                        let mut gx = vec![0.0; *n];
                        for r in 0..*m {
                            let gr = g[r];
                            for c in 0..*n {
                                gx[c] += av[r * n + c] * gr;
                            }
                        }
                        acc(&mut grads, *x, gx);
                    }
                }
                Op::Matmul { a, b, m, k, n } => {
                    let (av, bv) = (val(*a), val(*b));
                    if rg(*a) {
                        let mut ga = vec![0.0; m * k];
                        for r in 0..*m {
                            for p in 0..*k {
                                ga[r * k + p] = dot(&g[r * n..(r + 1) * n], &bv[p * n..(p + 1) * n]);
                            }
                        }
                        acc(&mut grads, *a, ga);
                    }
                    if rg(*b) {
                        let mut gb = vec![0.0; k * n];
                        for r in 0..*m {
                            for p in 0..*k {
                                let ap = av[r * k + p];
                                for j in 0..*n {
                                    gb[p * n + j] += ap * g[r * n + j];
                                }
                            }
                        }
                        acc(&mut grads, *b, gb);
                    }
                }
                Op::Sum(a) => acc(&mut grads, *a, vec![g[0]; val(*a).len()]),
                Op::Mean(a) => {
                    let len = val(*a).len();
                    acc(&mut grads, *a, vec![g[0] / len as f64; len]);
                }
                Op::L2NormSq(a) => acc(&mut grads, *a, val(*a).iter().map(|x| 2.0 * x * g[0]).collect()),
                Op::Inner(a, b) => {
                    if rg(*a) {
                        acc(&mut grads, *a, val(*b).iter().map(|x| x * g[0]).collect());
                    }
                    if rg(*b) {
                        acc(&mut grads, *b, val(*a).iter().map(|x| x * g[0]).collect());
                    }
                }
                Op::Relu(a) => acc(
                    &mut grads,
                    *a,
                    g.iter()
                        .zip(val(*a))
                        .map(|(gv, x)| if *x > 0.0 { *gv } else { 0.0 })
                        .collect(),
                ),
                Op::Gelu(a) => acc(
                    &mut grads,
                    *a,
                    g.iter()
                        .zip(val(*a))
                        .map(|(gv, x)| gv * kernels::gelu_grad(*x))
                        .collect(),
                ),
                Op::SoftThreshold { x, tau } => acc(
                    &mut grads,
                    *x,
                    g.iter()
                        .zip(val(*x))
                        .map(|(gv, v)| if v.abs() > *tau { *gv } else { 0.0 })
                        .collect(),
                ),
                Op::Cosine { a, b, na, nb, s } => {
                    let (av, bv) = (val(*a), val(*b));
                    // d s / d a = b / (|a||b|) - s a / |a|^2
                    if rg(*a) {
                        let ga = av
                            .iter()
                            .zip(bv)
                            .map(|(x, y)| g[0] * (y / (na * nb) - s * x / (na * na)))
                            .collect();
                        acc(&mut grads, *a, ga);
                    }
                    if rg(*b) {
                        let gb = bv
                            .iter()
                            .zip(av)
                            .map(|(y, x)| g[0] * (x / (na * nb) - s * y / (nb * nb)))
                            .collect();
                        acc(&mut grads, *b, gb);
                    }
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    rstd,
                } => {
                    let gv = val(*gamma);
                    let (dx, dg, db) = kernels::channel_layer_norm_backward(&g, xhat, rstd, gv, gv.len());
                    acc(&mut grads, *beta, db);
                    acc(&mut grads, *gamma, dg);
                    acc(&mut grads, *x, dx);
                }
                Op::Conv2d {
                    x,
                    w,
                    b,
                    geom,
                    depthwise,
                } => {
                    let backward = if *depthwise {
                        kernels::depthwise_backward
                    } else {
                        kernels::conv2d_backward
                    };
                    let (dx, dw, db) = backward(val(*x), val(*w), &g, geom, rg(*x), rg(*w));
                    if let Some(b) = b {
                        acc(&mut grads, *b, db);
                    }
                    if let Some(dw) = dw {
                        acc(&mut grads, *w, dw);
                    }
                    if let Some(dx) = dx {
                        acc(&mut grads, *x, dx);
                    }
                }
                Op::ChannelBias { x, b, channels } => {
                    if rg(*b) {
                        let plane = g.len() / channels;
                        let db = g.chunks(plane).map(|c| c.iter().sum()).collect();
                        acc(&mut grads, *b, db);
                    }
                    acc(&mut grads, *x, g.clone());
                }
                Op::Linear { x, op } => acc(&mut grads, *x, op.adjoint(&g)?),
                Op::Reshape(a) => acc(&mut grads, *a, g.clone()),
                Op::Select { a, index } => {
                    let len = val(*a).len();
                    let stride = g.len();
                    let mut ga = vec![0.0; len];
                    ga[index * stride..(index + 1) * stride].copy_from_slice(&g);
                    acc(&mut grads, *a, ga);
                }
            }
            grads[i] = Some(g);
        }
        let shapes = nodes.into_iter().map(|n| n.value.shape).collect();
        Ok(Gradients { grads, shapes })
    }
}
