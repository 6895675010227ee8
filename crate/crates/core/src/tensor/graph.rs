use super::kernels::{self, NormStats};
use super::{split_axis, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Softplus,
    Sigmoid,
    Exp,
    Log,
    Relu,
    Neg,
    Abs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    },
    Upsample {
        input: Var,
    },
    LayerNorm {
        input: Var,
        gain: Var,
        shift: Var,
        stats: NormStats,
    },
    Unary {
        input: Var,
        kind: Unary,
    },
    Binary {
        a: Var,
        b: Var,
        kind: Binary,
    },
    Scale {
        input: Var,
        factor: f64,
    },
    AddScalar {
        input: Var,
    },
    Softmax {
        input: Var,
        axis: usize,
    },
    LogSoftmax {
        input: Var,
        axis: usize,
    },
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Slice {
        input: Var,
        axis: usize,
        start: usize,
    },
    Expand {
        input: Var,
        axis: usize,
    },
    SumAxis {
        input: Var,
        axis: usize,
    },
    SumAll {
        input: Var,
    },
    Pick {
        input: Var,
        labels: Vec<Option<usize>>,
    },
    Diff {
        input: Var,
        axis: usize,
    },
    Detach,
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

/// Ordered record of primitive applications.
///
/// Nodes are appended in evaluation order, so every node's inputs precede
/// it and a reverse sweep over the node list is a valid backward order.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Leaf whose gradient is tracked.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf treated as a constant.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a tracked node, if a backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let node = &self.nodes[v.0];
        node.grad
            .as_ref()
            .map(|g| Tensor::new(node.value.shape(), g.clone()).expect("grad matches value shape"))
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let out = kernels::conv2d_forward(
            self.value(input),
            self.value(kernel),
            bias.map(|b| self.value(b)),
            stride,
            pad,
        )?;
        let mut deps = vec![input, kernel];
        deps.extend(bias);
        let rg = self.tracked(&deps);
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                kernel,
                bias,
                stride,
                pad,
            },
            rg,
        ))
    }

    pub fn upsample_bilinear(&mut self, input: Var, th: usize, tw: usize) -> Result<Var> {
        let out = kernels::upsample_bilinear(self.value(input), th, tw)?;
        let rg = self.tracked(&[input]);
        Ok(self.push(out, Op::Upsample { input }, rg))
    }

    pub fn layer_norm(&mut self, input: Var, gain: Var, shift: Var, eps: f64) -> Result<Var> {
        let (out, stats) =
            kernels::layer_norm(self.value(input), self.value(gain), self.value(shift), eps)?;
        let rg = self.tracked(&[input, gain, shift]);
        Ok(self.push(
            out,
            Op::LayerNorm {
                input,
                gain,
                shift,
                stats,
            },
            rg,
        ))
    }

    pub fn unary(&mut self, input: Var, kind: Unary) -> Result<Var> {
        let x = self.value(input);
        if kind == Unary::Log {
            if let Some(bad) = x.data().iter().find(|&&v| v <= 0.0 || v.is_nan()) {
                return Err(Error::Domain(format!("log of non-positive value {bad}")));
            }
        }
        let f: fn(f64) -> f64 = match kind {
            Unary::Softplus => kernels::softplus,
            Unary::Sigmoid => kernels::sigmoid,
            Unary::Exp => f64::exp,
            Unary::Log => f64::ln,
            Unary::Relu => |v| v.max(0.0),
            Unary::Neg => |v| -v,
            Unary::Abs => f64::abs,
        };
        let out = Tensor::new(x.shape(), x.data().iter().map(|&v| f(v)).collect())?;
        let rg = self.tracked(&[input]);
        Ok(self.push(out, Op::Unary { input, kind }, rg))
    }

    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Softplus)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Sigmoid)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Exp)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Log)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Relu)
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Neg)
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Abs)
    }

    fn binary(&mut self, a: Var, b: Var, kind: Binary) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(format!(
                "{kind:?} of mismatched shapes {:?} and {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        if kind == Binary::Div && tb.data().contains(&0.0) {
            return Err(Error::Domain("division by zero".into()));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| match kind {
                Binary::Add => x + y,
                Binary::Sub => x - y,
                Binary::Mul => x * y,
                Binary::Div => x / y,
            })
            .collect();
        let out = Tensor::new(ta.shape(), data)?;
        let rg = self.tracked(&[a, b]);
        Ok(self.push(out, Op::Binary { a, b, kind }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Mul)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Div)
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Var {
        let x = self.value(input);
        let out = Tensor::new(x.shape(), x.data().iter().map(|v| v * factor).collect())
            .expect("same shape");
        let rg = self.tracked(&[input]);
        self.push(out, Op::Scale { input, factor }, rg)
    }

    pub fn add_scalar(&mut self, input: Var, c: f64) -> Var {
        let x = self.value(input);
        let out =
            Tensor::new(x.shape(), x.data().iter().map(|v| v + c).collect()).expect("same shape");
        let rg = self.tracked(&[input]);
        self.push(out, Op::AddScalar { input }, rg)
    }

    /// Multiply by a constant tensor of the same shape.
    pub fn mul_const(&mut self, input: Var, c: &Tensor) -> Result<Var> {
        let k = self.constant(c.clone());
        self.mul(input, k)
    }

    pub fn softmax(&mut self, input: Var, axis: usize) -> Result<Var> {
        let out = kernels::softmax(self.value(input), axis)?;
        let rg = self.tracked(&[input]);
        Ok(self.push(out, Op::Softmax { input, axis }, rg))
    }

    pub fn log_softmax(&mut self, input: Var, axis: usize) -> Result<Var> {
        let out = kernels::log_softmax(self.value(input), axis)?;
        let rg = self.tracked(&[input]);
        Ok(self.push(out, Op::LogSoftmax { input, axis }, rg))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::invalid("concat of zero tensors"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::shape(format!(
                "concat axis {axis} out of range for {base:?}"
            )));
        }
        let mut total = 0;
        for v in inputs {
            let s = self.shape(*v);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::shape(format!(
                    "concat along {axis}: shape {s:?} incompatible with {base:?}"
                )));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = split_axis(&shape, axis)?;
        let mut data = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for v in inputs {
                let t = self.value(*v);
                let len = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * len..(o + 1) * len]);
            }
        }
        let out = Tensor::new(&shape, data)?;
        let rg = self.tracked(inputs);
        Ok(self.push(
            out,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            rg,
        ))
    }

    pub fn slice(&mut self, input: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let x = self.value(input);
        let (outer, alen, inner) = split_axis(x.shape(), axis)?;
        if start + len > alen || len == 0 {
            return Err(Error::shape(format!(
                "slice [{start}, {}) out of range for axis of length {alen}",
                start + len
            )));
        }
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * alen + start) * inner;
            data.extend_from_slice(&x.data()[base..base + len * inner]);
        }
        let mut shape = x.shape().to_vec();
        shape[axis] = len;
        let out = Tensor::new(&shape, data)?;
        let rg = self.tracked(&[input]);
        Ok(self.push(out, Op::Slice { input, axis, start }, rg))
    }

    /// Repeat a length-1 axis `n` times.
    pub fn expand(&mut self, input: Var, axis: usize, n: usize) -> Result<Var> {
        let x = self.value(input);
        let (outer, alen, inner) = split_axis(x.shape(), axis)?;
        if alen != 1 {
            return Err(Error::shape(format!(
                "expand needs a length-1 axis, axis {axis} has length {alen}"
            )));
        }
        let mut data = Vec::with_capacity(outer * n * inner);
        for o in 0..outer {
            let src = &x.data()[o * inner..(o + 1) * inner];
            for _ in 0..n {
                data.extend_from_slice(src);
            }
        }
        let mut shape = x.shape().to_vec();
        shape[axis] = n;
        let out = Tensor::new(&shape, data)?;
        let rg = self.tracked(&[input]);
        Ok(self.push(out, Op::Expand { input, axis }, rg))
    }

    /// Sum along `axis`, keeping it with length 1.
    pub fn sum_axis(&mut self, input: Var, axis: usize) -> Result<Var> {
        let x = self.value(input);
        let (outer, alen, inner) = split_axis(x.shape(), axis)?;
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for a in 0..alen {
                let src = &x.data()[(o * alen + a) * inner..(o * alen + a + 1) * inner];
                for (d, s) in data[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        let mut shape = x.shape().to_vec();
        shape[axis] = 1;
        let out = Tensor::new(&shape, data)?;
        let rg = self.tracked(&[input]);
        Ok(self.push(out, Op::SumAxis { input, axis }, rg))
    }

    pub fn mean_axis(&mut self, input: Var, axis: usize) -> Result<Var> {
        let len = *self
            .shape(input)
            .get(axis)
            .ok_or_else(|| Error::shape(format!("axis {axis} out of range")))?;
        let s = self.sum_axis(input, axis)?;
        Ok(self.scale(s, 1.0 / len as f64))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let total = self.value(input).data().iter().sum();
        let rg = self.tracked(&[input]);
        self.push(Tensor::scalar(total), Op::SumAll { input }, rg)
    }

    /// Gather one channel per pixel from an N×C×H×W tensor, giving N×1×H×W.
    /// `None` labels produce 0 and receive no gradient.
    pub fn pick(&mut self, input: Var, labels: &[Option<usize>]) -> Result<Var> {
        let x = self.value(input);
        let (n, c, h, w) = x.dims4()?;
        if labels.len() != n * h * w {
            return Err(Error::shape(format!(
                "pick: {} labels for {}×{}×{} pixels",
                labels.len(),
                n,
                h,
                w
            )));
        }
        let hw = h * w;
        let mut data = vec![0.0; n * hw];
        for (p, lab) in labels.iter().enumerate() {
            if let Some(k) = *lab {
                if k >= c {
                    return Err(Error::invalid(format!(
                        "label {k} out of range for {c} channels"
                    )));
                }
                let (i, j) = (p / hw, p % hw);
                data[p] = x.data()[(i * c + k) * hw + j];
            }
        }
        let out = Tensor::new(&[n, 1, h, w], data)?;
        let rg = self.tracked(&[input]);
        Ok(self.push(
            out,
            Op::Pick {
                input,
                labels: labels.to_vec(),
            },
            rg,
        ))
    }

    /// Forward difference `x[i+1] - x[i]` along `axis`; the last entry is 0.
    pub fn diff(&mut self, input: Var, axis: usize) -> Result<Var> {
        let x = self.value(input);
        let (outer, alen, inner) = split_axis(x.shape(), axis)?;
        let mut data = vec![0.0; x.numel()];
        for o in 0..outer {
            for a in 0..alen.saturating_sub(1) {
                for i in 0..inner {
                    let here = (o * alen + a) * inner + i;
                    data[here] = x.data()[here + inner] - x.data()[here];
                }
            }
        }
        let out = Tensor::new(x.shape(), data)?;
        let rg = self.tracked(&[input]);
        Ok(self.push(out, Op::Diff { input, axis }, rg))
    }

    /// Same values, no gradient flow.
    pub fn detach(&mut self, input: Var) -> Var {
        let v = self.value(input).clone();
        self.push(v, Op::Detach, false)
    }

    /// Propagate gradients from a scalar root. Gradients accumulate into
    /// tracked leaves across calls until [`Graph::zero_grad`].
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.value(root).numel() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar root, got shape {:?}",
                self.shape(root)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![1.0]);
        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            if matches!(self.nodes[idx].op, Op::Leaf) {
                let node = &mut self.nodes[idx];
                match &mut node.grad {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    None => node.grad = Some(g),
                }
                continue;
            }
            for (dep, dg) in self.local_grads(idx, &g)? {
                if !self.nodes[dep.0].requires_grad {
                    continue;
                }
                match &mut grads[dep.0] {
                    Some(acc) => acc.iter_mut().zip(&dg).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(dg),
                }
            }
        }
        Ok(())
    }

    fn local_grads(&self, idx: usize, g: &[f64]) -> Result<Vec<(Var, Vec<f64>)>> {
        let node = &self.nodes[idx];
        let out = &node.value;
        let grads = match &node.op {
            Op::Leaf | Op::Detach => Vec::new(),
            Op::Conv2d {
                input,
                kernel,
                bias,
                stride,
                pad,
            } => {
                let (gx, gw, gb) = kernels::conv2d_backward(
                    self.value(*input),
                    self.value(*kernel),
                    *stride,
                    *pad,
                    g,
                )?;
                let mut v = vec![(*input, gx), (*kernel, gw)];
                if let Some(b) = bias {
                    v.push((*b, gb));
                }
                v
            }
            Op::Upsample { input } => {
                let s = out.shape();
                let gx = kernels::upsample_bilinear_backward(self.shape(*input), s[2], s[3], g)?;
                vec![(*input, gx)]
            }
            Op::LayerNorm {
                input,
                gain,
                shift,
                stats,
            } => {
                let (gx, gg, gs) =
                    kernels::layer_norm_backward(self.value(*input), self.value(*gain), stats, g)?;
                vec![(*input, gx), (*gain, gg), (*shift, gs)]
            }
            Op::Unary { input, kind } => {
                let x = self.value(*input).data();
                let y = out.data();
                let gx = (0..g.len())
                    .map(|i| {
                        let d = match kind {
                            Unary::Softplus => kernels::sigmoid(x[i]),
                            Unary::Sigmoid => y[i] * (1.0 - y[i]),
                            Unary::Exp => y[i],
                            Unary::Log => 1.0 / x[i],
                            Unary::Relu => {
                                if x[i] > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            Unary::Neg => -1.0,
                            Unary::Abs => {
                                if x[i] > 0.0 {
                                    1.0
                                } else if x[i] < 0.0 {
                                    -1.0
                                } else {
                                    0.0
                                }
                            }
                        };
                        g[i] * d
                    })
                    .collect();
                vec![(*input, gx)]
            }
            Op::Binary { a, b, kind } => {
                let (xa, xb) = (self.value(*a).data(), self.value(*b).data());
                let (ga, gb): (Vec<f64>, Vec<f64>) = match kind {
                    Binary::Add => (g.to_vec(), g.to_vec()),
                    Binary::Sub => (g.to_vec(), g.iter().map(|v| -v).collect()),
                    Binary::Mul => (
                        g.iter().zip(xb).map(|(g, y)| g * y).collect(),
                        g.iter().zip(xa).map(|(g, x)| g * x).collect(),
                    ),
                    Binary::Div => (
                        g.iter().zip(xb).map(|(g, y)| g / y).collect(),
                        (0..g.len())
                            .map(|i| -g[i] * xa[i] / (xb[i] * xb[i]))
                            .collect(),
                    ),
                };
                vec![(*a, ga), (*b, gb)]
            }
            Op::Scale { input, factor } => vec![(*input, g.iter().map(|v| v * factor).collect())],
            Op::AddScalar { input } => vec![(*input, g.to_vec())],
            Op::Softmax { input, axis } => {
                let (outer, len, inner) = split_axis(out.shape(), *axis)?;
                let y = out.data();
                let mut gx = vec![0.0; g.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |a: usize| (o * len + a) * inner + i;
                        let dot: f64 = (0..len).map(|a| g[idx(a)] * y[idx(a)]).sum();
                        for a in 0..len {
                            gx[idx(a)] = y[idx(a)] * (g[idx(a)] - dot);
                        }
                    }
                }
                vec![(*input, gx)]
            }
            Op::LogSoftmax { input, axis } => {
                let (outer, len, inner) = split_axis(out.shape(), *axis)?;
                let y = out.data();
                let mut gx = vec![0.0; g.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |a: usize| (o * len + a) * inner + i;
                        let total: f64 = (0..len).map(|a| g[idx(a)]).sum();
                        for a in 0..len {
                            gx[idx(a)] = g[idx(a)] - y[idx(a)].exp() * total;
                        }
                    }
                }
                vec![(*input, gx)]
            }
            Op::Concat { inputs, axis } => {
                let (outer, _, inner) = split_axis(out.shape(), *axis)?;
                let lens: Vec<usize> = inputs
                    .iter()
                    .map(|v| self.shape(*v)[*axis] * inner)
                    .collect();
                let mut parts: Vec<Vec<f64>> =
                    lens.iter().map(|l| Vec::with_capacity(l * outer)).collect();
                let row: usize = lens.iter().sum();
                for o in 0..outer {
                    let mut off = o * row;
                    for (p, l) in parts.iter_mut().zip(&lens) {
                        p.extend_from_slice(&g[off..off + l]);
                        off += l;
                    }
                }
                inputs.iter().copied().zip(parts).collect()
            }
            Op::Slice { input, axis, start } => {
                let xs = self.shape(*input);
                let (outer, alen, inner) = split_axis(xs, *axis)?;
                let len = out.shape()[*axis];
                let mut gx = vec![0.0; xs.iter().product()];
                for o in 0..outer {
                    let dst = (o * alen + start) * inner;
                    gx[dst..dst + len * inner]
                        .copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                vec![(*input, gx)]
            }
            Op::Expand { input, axis } => {
                let (outer, n, inner) = split_axis(out.shape(), *axis)?;
                let mut gx = vec![0.0; outer * inner];
                for o in 0..outer {
                    for r in 0..n {
                        let src = &g[(o * n + r) * inner..(o * n + r + 1) * inner];
                        for (d, s) in gx[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
                vec![(*input, gx)]
            }
            Op::SumAxis { input, axis } => {
                let (outer, alen, inner) = split_axis(self.shape(*input), *axis)?;
                let mut gx = Vec::with_capacity(outer * alen * inner);
                for o in 0..outer {
                    for _ in 0..alen {
                        gx.extend_from_slice(&g[o * inner..(o + 1) * inner]);
                    }
                }
                vec![(*input, gx)]
            }
            Op::SumAll { input } => vec![(*input, vec![g[0]; self.value(*input).numel()])],
            Op::Pick { input, labels } => {
                let (n, c, h, w) = self.value(*input).dims4()?;
                let hw = h * w;
                let mut gx = vec![0.0; n * c * hw];
                for (p, lab) in labels.iter().enumerate() {
                    if let Some(k) = *lab {
                        gx[((p / hw) * c + k) * hw + p % hw] = g[p];
                    }
                }
                vec![(*input, gx)]
            }
            Op::Diff { input, axis } => {
                let (outer, alen, inner) = split_axis(out.shape(), *axis)?;
                let mut gx = vec![0.0; g.len()];
                for o in 0..outer {
                    for a in 0..alen.saturating_sub(1) {
                        for i in 0..inner {
                            let here = (o * alen + a) * inner + i;
                            gx[here + inner] += g[here];
                            gx[here] -= g[here];
                        }
                    }
                }
                vec![(*input, gx)]
            }
        };
        Ok(grads)
    }
}
