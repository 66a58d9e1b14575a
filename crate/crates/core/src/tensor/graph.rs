//! Wengert-list style tape: every operation appends a node holding its value
//! and enough information to push a vector-Jacobian product to its inputs.

use std::f64::consts::PI;
use std::str::FromStr;

use super::ops::{self, axis_split, broadcast_shape, for_each_broadcast, ConvGeom};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum UnaryKind {
    Neg,
    Scale(f64),
    Offset(f64),
    Tanh,
    Sigmoid,
    Exp,
    Log,
    Log1p,
    Sqrt,
    Square,
    Powf(f64),
    Abs,
    Sin,
    Cos,
    WrapPhase,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum ReduceKind {
    Sum,
    Mean,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Binary {
        kind: BinaryKind,
        a: Var,
        b: Var,
    },
    Unary {
        kind: UnaryKind,
        x: Var,
    },
    Atan2 {
        y: Var,
        x: Var,
    },
    MatMul {
        a: Var,
        b: Var,
        m: usize,
        k: usize,
        n: usize,
    },
    Conv1d {
        x: Var,
        w: Var,
        geom: ConvGeom,
    },
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    Concat {
        xs: Vec<Var>,
        axis: usize,
    },
    Reshape {
        x: Var,
    },
    Permute {
        x: Var,
        axes: Vec<usize>,
    },
    Reduce {
        kind: ReduceKind,
        x: Var,
        axis: usize,
    },
    Max {
        x: Var,
        argmax: Vec<usize>,
    },
    LogSumExp {
        x: Var,
        axis: usize,
    },
    Softmax {
        x: Var,
        axis: usize,
    },
    Gather {
        x: Var,
        index: Vec<usize>,
    },
    Frames {
        x: Var,
        frame: usize,
        hop: usize,
    },
    SincKernels {
        low: Var,
        high: Var,
        taps: usize,
    },
    SoftQuantile(Box<SoftQuantileTape>),
    HardQuantile {
        x: Var,
        picks: Vec<(usize, usize, f64)>,
    },
}

#[derive(Debug)]
struct SoftQuantileTape {
    x: Var,
    levels: Vec<f64>,
    tau: f64,
    /// Solver trace per (row, level); `None` when the pair fell back.
    traces: Vec<Option<QuantileTrace>>,
}

/// Where a bisection endpoint came from.
#[derive(Clone, Copy, Debug)]
enum BracketEnd {
    /// `min(x) + τ·logit(p)`.
    Low,
    /// `max(x) + τ·logit(p)`.
    High,
    Iterate(usize),
}

#[derive(Clone, Copy, Debug)]
enum QuantileStep {
    Newton,
    Bisect(BracketEnd, BracketEnd),
}

/// Iterates `q_0..q_S` and how each `q_{j+1}` was produced from `q_j`.
#[derive(Debug)]
struct QuantileTrace {
    qs: Vec<f64>,
    steps: Vec<QuantileStep>,
    argmin: usize,
    argmax: usize,
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Number of unrolled Newton steps in the soft quantile solver.
pub const SOFT_QUANTILE_STEPS: usize = 20;
/// Newton updates below this fraction of the row range skip the bracket test.
const SOFT_QUANTILE_SETTLED: f64 = 1e-9;

/// Records tensor operations for a single forward/backward pass.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    backward_done: bool,
    quantile_fallbacks: usize,
}

/// Gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient with respect to `v`; zero-filled when the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(t) => t.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }
}

/// Operation kinds reachable through the generic [`Graph::op`] dispatcher.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpKind {
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Tanh,
    Sigmoid,
    Exp,
    Log,
    Log1p,
    Sqrt,
    Square,
    Pow,
    Abs,
    Sin,
    Cos,
    Atan2,
    MatMul,
    Conv1d,
    Slice,
    Concat,
    Reshape,
    Transpose,
    Permute,
    Sum,
    Mean,
    Max,
    LogSumExp,
    Softmax,
}

impl OpKind {
    pub const ALL: [OpKind; 29] = [
        OpKind::Add,
        OpKind::Sub,
        OpKind::Mul,
        OpKind::Div,
        OpKind::Neg,
        OpKind::Tanh,
        OpKind::Sigmoid,
        OpKind::Exp,
        OpKind::Log,
        OpKind::Log1p,
        OpKind::Sqrt,
        OpKind::Square,
        OpKind::Pow,
        OpKind::Abs,
        OpKind::Sin,
        OpKind::Cos,
        OpKind::Atan2,
        OpKind::MatMul,
        OpKind::Conv1d,
        OpKind::Slice,
        OpKind::Concat,
        OpKind::Reshape,
        OpKind::Transpose,
        OpKind::Permute,
        OpKind::Sum,
        OpKind::Mean,
        OpKind::Max,
        OpKind::LogSumExp,
        OpKind::Softmax,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Div => "div",
            OpKind::Neg => "neg",
            OpKind::Tanh => "tanh",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Exp => "exp",
            OpKind::Log => "log",
            OpKind::Log1p => "log1p",
            OpKind::Sqrt => "sqrt",
            OpKind::Square => "square",
            OpKind::Pow => "pow",
            OpKind::Abs => "abs",
            OpKind::Sin => "sin",
            OpKind::Cos => "cos",
            OpKind::Atan2 => "atan2",
            OpKind::MatMul => "matmul",
            OpKind::Conv1d => "conv1d",
            OpKind::Slice => "slice",
            OpKind::Concat => "concat",
            OpKind::Reshape => "reshape",
            OpKind::Transpose => "transpose",
            OpKind::Permute => "permute",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
            OpKind::Max => "max",
            OpKind::LogSumExp => "logsumexp",
            OpKind::Softmax => "softmax",
        }
    }
}

impl FromStr for OpKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OpKind::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::UnknownOp(s.to_string()))
    }
}

/// Attributes for [`Graph::op`]; unused fields are ignored.
#[derive(Clone, Debug, Default)]
pub struct Attrs {
    pub axis: Option<usize>,
    pub start: Option<usize>,
    pub end: Option<usize>,
    pub shape: Option<Vec<usize>>,
    pub axes: Option<Vec<usize>>,
    pub exponent: Option<f64>,
    pub stride: Option<usize>,
    pub padding: Option<usize>,
    pub groups: Option<usize>,
    pub keepdim: bool,
}

fn attr_err<T>(kind: &'static str, msg: impl Into<String>) -> Result<T> {
    Err(Error::Attr { kind, msg: msg.into() })
}

fn check_axis(kind: &'static str, shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return attr_err(kind, format!("axis {axis} out of range for shape {shape:?}"));
    }
    Ok(())
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

    /// Soft-quantile (row, level) pairs that fell back to the hard value.
    pub fn quantile_fallbacks(&self) -> usize {
        self.quantile_fallbacks
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
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

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    // ---------------------------------------------------------------- binary

    fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        let name = match kind {
            BinaryKind::Add => "add",
            BinaryKind::Sub => "sub",
            BinaryKind::Mul => "mul",
            BinaryKind::Div => "div",
        };
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let out_shape = broadcast_shape(name, &sa, &sb)?;
        let n: usize = out_shape.iter().product();
        let mut out = vec![0.0; n];
        {
            let (va, vb) = (self.value(a).data(), self.value(b).data());
            let f: fn(f64, f64) -> f64 = match kind {
                BinaryKind::Add => |x, y| x + y,
                BinaryKind::Sub => |x, y| x - y,
                BinaryKind::Mul => |x, y| x * y,
                BinaryKind::Div => |x, y| x / y,
            };
            for_each_broadcast(&sa, &sb, &out_shape, |o, ia, ib| out[o] = f(va[ia], vb[ib]));
        }
        Ok(self.push(Tensor::from_parts(out_shape, out), Op::Binary { kind, a, b }, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Div, a, b)
    }

    // ----------------------------------------------------------------- unary

    fn unary(&mut self, kind: UnaryKind, x: Var) -> Var {
        let f: Box<dyn Fn(f64) -> f64> = match kind {
            UnaryKind::Neg => Box::new(|v: f64| -v),
            UnaryKind::Scale(c) => Box::new(move |v| v * c),
            UnaryKind::Offset(c) => Box::new(move |v| v + c),
            UnaryKind::Tanh => Box::new(f64::tanh),
            UnaryKind::Sigmoid => Box::new(ops::sigmoid),
            UnaryKind::Exp => Box::new(f64::exp),
            UnaryKind::Log => Box::new(f64::ln),
            UnaryKind::Log1p => Box::new(f64::ln_1p),
            UnaryKind::Sqrt => Box::new(f64::sqrt),
            UnaryKind::Square => Box::new(|v| v * v),
            UnaryKind::Powf(p) => Box::new(move |v: f64| v.powf(p)),
            UnaryKind::Abs => Box::new(f64::abs),
            UnaryKind::Sin => Box::new(f64::sin),
            UnaryKind::Cos => Box::new(f64::cos),
            UnaryKind::WrapPhase => Box::new(ops::wrap_phase),
        };
        let value = self.value(x).map(f);
        self.push(value, Op::Unary { kind, x }, &[x])
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Neg, x)
    }
    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(UnaryKind::Scale(c), x)
    }
    pub fn offset(&mut self, x: Var, c: f64) -> Var {
        self.unary(UnaryKind::Offset(c), x)
    }
    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Tanh, x)
    }
    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Sigmoid, x)
    }
    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Exp, x)
    }
    pub fn log(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Log, x)
    }
    pub fn log1p(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Log1p, x)
    }
    /// Square root; the gradient at exactly zero is taken as zero.
    pub fn sqrt(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Sqrt, x)
    }
    pub fn square(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Square, x)
    }
    pub fn powf(&mut self, x: Var, p: f64) -> Var {
        self.unary(UnaryKind::Powf(p), x)
    }
    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Abs, x)
    }
    pub fn sin(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Sin, x)
    }
    pub fn cos(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Cos, x)
    }
    /// Wraps angles into (-π, π]; treated as identity by the backward pass.
    pub fn wrap_phase(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::WrapPhase, x)
    }

    /// Elementwise `atan2(y, x)`; both operands must share a shape.
    pub fn atan2(&mut self, y: Var, x: Var) -> Result<Var> {
        if self.shape(y) != self.shape(x) {
            return Err(Error::Shape {
                kind: "atan2",
                lhs: self.shape(y).to_vec(),
                rhs: self.shape(x).to_vec(),
            });
        }
        let data = self
            .value(y)
            .data()
            .iter()
            .zip(self.value(x).data())
            .map(|(&a, &b)| a.atan2(b))
            .collect();
        let value = Tensor::from_parts(self.shape(y).to_vec(), data);
        Ok(self.push(value, Op::Atan2 { y, x }, &[y, x]))
    }

    // ---------------------------------------------------------- linear algebra

    /// `a[..., k] @ b[k, n] -> [..., n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sb.len() != 2 || sa.is_empty() || sa[sa.len() - 1] != sb[0] {
            return Err(Error::Shape {
                kind: "matmul",
                lhs: sa,
                rhs: sb,
            });
        }
        let k = sb[0];
        let n = sb[1];
        let m = self.value(a).numel() / k;
        let out = ops::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        let mut shape = sa;
        *shape.last_mut().unwrap() = n;
        Ok(self.push(Tensor::from_parts(shape, out), Op::MatMul { a, b, m, k, n }, &[a, b]))
    }

    /// Grouped 1-D convolution: `x[B, Cin, L]`, `w[Cout, Cin/groups, K]`.
    pub fn conv1d(&mut self, x: Var, w: Var, stride: usize, padding: usize, groups: usize) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        let shape_err = || Error::Shape {
            kind: "conv1d",
            lhs: sx.clone(),
            rhs: sw.clone(),
        };
        if stride == 0 {
            return attr_err("conv1d", "stride must be >= 1");
        }
        if groups == 0 {
            return attr_err("conv1d", "groups must be >= 1");
        }
        if sx.len() != 3 || sw.len() != 3 {
            return Err(shape_err());
        }
        let (batch, c_in, len) = (sx[0], sx[1], sx[2]);
        let (c_out, cin_g, kernel) = (sw[0], sw[1], sw[2]);
        if c_in % groups != 0 || c_out % groups != 0 || cin_g * groups != c_in {
            return Err(shape_err());
        }
        if len + 2 * padding < kernel {
            return Err(shape_err());
        }
        let len_out = (len + 2 * padding - kernel) / stride + 1;
        let geom = ConvGeom {
            batch,
            c_in,
            len,
            c_out,
            kernel,
            stride,
            padding,
            groups,
            len_out,
        };
        let out = ops::conv1d(self.value(x).data(), self.value(w).data(), &geom);
        let value = Tensor::from_parts(vec![batch, c_out, len_out], out);
        Ok(self.push(value, Op::Conv1d { x, w, geom }, &[x, w]))
    }

    // ----------------------------------------------------------- restructuring

    /// Elements `start..end` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        check_axis("slice", &shape, axis)?;
        if start >= end || end > shape[axis] {
            return attr_err(
                "slice",
                format!("range {start}..{end} invalid for extent {}", shape[axis]),
            );
        }
        let (outer, len, inner) = axis_split(&shape, axis);
        let w = end - start;
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(outer * w * inner);
        for o in 0..outer {
            let base = o * len * inner;
            out.extend_from_slice(&src[base + start * inner..base + end * inner]);
        }
        let mut oshape = shape;
        oshape[axis] = w;
        Ok(self.push(Tensor::from_parts(oshape, out), Op::Slice { x, axis, start }, &[x]))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = match xs.first() {
            Some(v) => self.shape(*v).to_vec(),
            None => return attr_err("concat", "no inputs"),
        };
        check_axis("concat", &first, axis)?;
        let mut total = 0;
        for &v in xs {
            let s = self.shape(v);
            let ok = s.len() == first.len() && s.iter().zip(&first).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(Error::Shape {
                    kind: "concat",
                    lhs: first.clone(),
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let (outer, _, inner) = axis_split(&first, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in xs {
                let len = self.shape(v)[axis];
                let src = self.value(v).data();
                out.extend_from_slice(&src[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut oshape = first;
        oshape[axis] = total;
        Ok(self.push(
            Tensor::from_parts(oshape, out),
            Op::Concat { xs: xs.to_vec(), axis },
            xs,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != self.value(x).numel() || shape.contains(&0) {
            return Err(Error::Shape {
                kind: "reshape",
                lhs: self.shape(x).to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let value = Tensor::from_parts(shape.to_vec(), self.value(x).data().to_vec());
        Ok(self.push(value, Op::Reshape { x }, &[x]))
    }

    /// Reorders axes so that output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len()
            || axes
                .iter()
                .any(|&a| a >= shape.len() || std::mem::replace(&mut seen[a], true))
        {
            return attr_err("permute", format!("axes {axes:?} invalid for shape {shape:?}"));
        }
        let out = permute_data(self.value(x).data(), &shape, axes);
        let oshape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
        Ok(self.push(
            Tensor::from_parts(oshape, out),
            Op::Permute { x, axes: axes.to_vec() },
            &[x],
        ))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let r = self.shape(x).len();
        if r < 2 {
            return attr_err("transpose", "rank must be >= 2");
        }
        let mut axes: Vec<usize> = (0..r).collect();
        axes.swap(r - 1, r - 2);
        self.permute(x, &axes)
    }

    // -------------------------------------------------------------- reductions

    fn reduce(&mut self, kind: ReduceKind, x: Var, axis: usize, keepdim: bool) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        check_axis("reduce", &shape, axis)?;
        let (outer, len, inner) = axis_split(&shape, axis);
        let src = self.value(x).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..len {
                let row = &src[(o * len + j) * inner..(o * len + j + 1) * inner];
                for (acc, v) in out[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *acc += v;
                }
            }
        }
        if kind == ReduceKind::Mean {
            let inv = 1.0 / len as f64;
            out.iter_mut().for_each(|v| *v *= inv);
        }
        let oshape = reduced_shape(&shape, axis, keepdim);
        Ok(self.push(Tensor::from_parts(oshape, out), Op::Reduce { kind, x, axis }, &[x]))
    }

    pub fn sum(&mut self, x: Var, axis: usize, keepdim: bool) -> Result<Var> {
        self.reduce(ReduceKind::Sum, x, axis, keepdim)
    }

    pub fn mean(&mut self, x: Var, axis: usize, keepdim: bool) -> Result<Var> {
        self.reduce(ReduceKind::Mean, x, axis, keepdim)
    }

    /// Sum of every element as a rank-0 tensor.
    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).numel();
        let flat = self.reshape(x, &[n])?;
        self.sum(flat, 0, false)
    }

    pub fn mean_all(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).numel();
        let flat = self.reshape(x, &[n])?;
        self.mean(flat, 0, false)
    }

    /// Exact maximum along `axis`; the gradient flows to the first maximiser.
    pub fn max(&mut self, x: Var, axis: usize, keepdim: bool) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        check_axis("max", &shape, axis)?;
        let (outer, len, inner) = axis_split(&shape, axis);
        let src = self.value(x).data();
        let mut out = vec![f64::NEG_INFINITY; outer * inner];
        let mut argmax = vec![0usize; outer * inner];
        for o in 0..outer {
            for j in 0..len {
                for i in 0..inner {
                    let idx = (o * len + j) * inner + i;
                    if src[idx] > out[o * inner + i] {
                        out[o * inner + i] = src[idx];
                        argmax[o * inner + i] = idx;
                    }
                }
            }
        }
        let oshape = reduced_shape(&shape, axis, keepdim);
        Ok(self.push(Tensor::from_parts(oshape, out), Op::Max { x, argmax }, &[x]))
    }

    pub fn min(&mut self, x: Var, axis: usize, keepdim: bool) -> Result<Var> {
        let n = self.neg(x);
        let m = self.max(n, axis, keepdim)?;
        Ok(self.neg(m))
    }

    pub fn logsumexp(&mut self, x: Var, axis: usize, keepdim: bool) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        check_axis("logsumexp", &shape, axis)?;
        let (outer, len, inner) = axis_split(&shape, axis);
        let src = self.value(x).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| src[(o * len + j) * inner + i];
                let m = (0..len).map(at).fold(f64::NEG_INFINITY, f64::max);
                let s: f64 = (0..len).map(|j| (at(j) - m).exp()).sum();
                out[o * inner + i] = m + s.ln();
            }
        }
        let oshape = reduced_shape(&shape, axis, keepdim);
        Ok(self.push(Tensor::from_parts(oshape, out), Op::LogSumExp { x, axis }, &[x]))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        check_axis("softmax", &shape, axis)?;
        let (outer, len, inner) = axis_split(&shape, axis);
        let src = self.value(x).data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * len + j) * inner + i;
                let m = (0..len).map(|j| src[idx(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut s = 0.0;
                for j in 0..len {
                    let e = (src[idx(j)] - m).exp();
                    out[idx(j)] = e;
                    s += e;
                }
                for j in 0..len {
                    out[idx(j)] /= s;
                }
            }
        }
        Ok(self.push(Tensor::from_parts(shape, out), Op::Softmax { x, axis }, &[x]))
    }

    // ------------------------------------------------------------- specialised

    /// Picks `index[j]` from the last axis for every output position `j`.
    pub fn gather_last(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let last = *shape.last().ok_or_else(|| Error::Invalid("gather on scalar".into()))?;
        if index.is_empty() || index.iter().any(|&i| i >= last) {
            return attr_err("gather", format!("index out of range for last extent {last}"));
        }
        let rows = self.value(x).numel() / last;
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(rows * index.len());
        for r in 0..rows {
            out.extend(index.iter().map(|&i| src[r * last + i]));
        }
        let mut oshape = shape;
        *oshape.last_mut().unwrap() = index.len();
        Ok(self.push(
            Tensor::from_parts(oshape, out),
            Op::Gather {
                x,
                index: index.to_vec(),
            },
            &[x],
        ))
    }

    /// Sliding frames over the last axis: `[..., L] -> [..., T, frame]`,
    /// `T = (L - frame) / hop + 1`.
    pub fn frames(&mut self, x: Var, frame: usize, hop: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let len = *shape.last().ok_or_else(|| Error::Invalid("frames on scalar".into()))?;
        if hop == 0 || frame == 0 || frame > len {
            return attr_err("frames", format!("frame {frame} hop {hop} invalid for length {len}"));
        }
        let t = (len - frame) / hop + 1;
        let rows = self.value(x).numel() / len;
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(rows * t * frame);
        for r in 0..rows {
            for f in 0..t {
                let s = r * len + f * hop;
                out.extend_from_slice(&src[s..s + frame]);
            }
        }
        let mut oshape = shape;
        *oshape.last_mut().unwrap() = t;
        oshape.push(frame);
        Ok(self.push(Tensor::from_parts(oshape, out), Op::Frames { x, frame, hop }, &[x]))
    }

    /// Hamming-windowed sinc band-pass kernels `[F, taps]` from band edges
    /// (normalised frequency, cycles/sample) `low[F] < high[F]`.
    pub fn sinc_kernels(&mut self, low: Var, high: Var, taps: usize) -> Result<Var> {
        let (sl, sh) = (self.shape(low).to_vec(), self.shape(high).to_vec());
        if sl.len() != 1 || sl != sh {
            return Err(Error::Shape {
                kind: "sinc_kernels",
                lhs: sl,
                rhs: sh,
            });
        }
        if taps.is_multiple_of(2) {
            return attr_err("sinc_kernels", "tap count must be odd");
        }
        let (lo, hi) = (self.value(low).data(), self.value(high).data());
        let mut out = Vec::with_capacity(lo.len() * taps);
        for (&fl, &fh) in lo.iter().zip(hi) {
            for j in 0..taps {
                let (t, win) = sinc_tap(j, taps);
                out.push((lowpass(fh, t) - lowpass(fl, t)) * win);
            }
        }
        let value = Tensor::from_parts(vec![sl[0], taps], out);
        Ok(self.push(value, Op::SincKernels { low, high, taps }, &[low, high]))
    }

    /// Soft quantiles of each row of `x[R, m]` at `levels`: solves
    /// `mean_i σ((q - x_i)/τ) = p` with unrolled Newton steps from the row mean.
    /// Pairs whose iteration diverges fall back to the hard quantile with zero gradient.
    pub fn soft_quantile(&mut self, x: Var, levels: &[f64], tau: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 2 {
            return attr_err("soft_quantile", format!("expected [rows, m], got {shape:?}"));
        }
        if !(tau > 0.0) {
            return attr_err("soft_quantile", "temperature must be positive");
        }
        check_levels(levels)?;
        let (rows, m) = (shape[0], shape[1]);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(rows * levels.len());
        let mut traces = Vec::with_capacity(rows * levels.len());
        let mut fallbacks = 0;
        for r in 0..rows {
            let row = &src[r * m..(r + 1) * m];
            let mut sorted = row.to_vec();
            sorted.sort_by(f64::total_cmp);
            let range = sorted[m - 1] - sorted[0];
            for &p in levels {
                if range == 0.0 {
                    out.push(row[0]);
                    traces.push(None);
                    continue;
                }
                match solve_soft_quantile(row, p, tau) {
                    Some(trace) => {
                        out.push(*trace.qs.last().unwrap());
                        traces.push(Some(trace));
                    }
                    None => {
                        fallbacks += 1;
                        out.push(hazen_quantile(&sorted, p));
                        traces.push(None);
                    }
                }
            }
        }
        self.quantile_fallbacks += fallbacks;
        let value = Tensor::from_parts(vec![rows, levels.len()], out);
        let tape = SoftQuantileTape {
            x,
            levels: levels.to_vec(),
            tau,
            traces,
        };
        Ok(self.push(value, Op::SoftQuantile(Box::new(tape)), &[x]))
    }

    /// Linearly interpolated empirical quantiles of each row of `x[R, m]`
    /// (position `p·m − 0.5` among the sorted values, clamped to the ends).
    pub fn hard_quantile(&mut self, x: Var, levels: &[f64]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 2 {
            return attr_err("hard_quantile", format!("expected [rows, m], got {shape:?}"));
        }
        check_levels(levels)?;
        let (rows, m) = (shape[0], shape[1]);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(rows * levels.len());
        let mut picks = Vec::with_capacity(rows * levels.len());
        for r in 0..rows {
            let row = &src[r * m..(r + 1) * m];
            let mut order: Vec<usize> = (0..m).collect();
            order.sort_by(|&a, &b| row[a].total_cmp(&row[b]));
            for &p in levels {
                let (lo, hi, frac) = hazen_position(m, p);
                let (a, b) = (r * m + order[lo], r * m + order[hi]);
                out.push(src[a] + frac * (src[b] - src[a]));
                picks.push((a, b, frac));
            }
        }
        let value = Tensor::from_parts(vec![rows, levels.len()], out);
        Ok(self.push(value, Op::HardQuantile { x, picks }, &[x]))
    }

    // ----------------------------------------------------------------- generic

    /// Dispatches an operation by kind; used by tooling that names ops at runtime.
    pub fn op(&mut self, kind: OpKind, inputs: &[Var], attrs: &Attrs) -> Result<Var> {
        let arity = |n: usize| -> Result<()> {
            if inputs.len() != n {
                return attr_err(kind.name(), format!("expected {n} inputs, got {}", inputs.len()));
            }
            Ok(())
        };
        let axis = || {
            attrs.axis.ok_or(Error::Attr {
                kind: kind.name(),
                msg: "missing axis".into(),
            })
        };
        match kind {
            OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::Div | OpKind::Atan2 | OpKind::MatMul => {
                arity(2)?;
                let (a, b) = (inputs[0], inputs[1]);
                match kind {
                    OpKind::Add => self.add(a, b),
                    OpKind::Sub => self.sub(a, b),
                    OpKind::Mul => self.mul(a, b),
                    OpKind::Div => self.div(a, b),
                    OpKind::Atan2 => self.atan2(a, b),
                    _ => self.matmul(a, b),
                }
            }
            OpKind::Conv1d => {
                arity(2)?;
                self.conv1d(
                    inputs[0],
                    inputs[1],
                    attrs.stride.unwrap_or(1),
                    attrs.padding.unwrap_or(0),
                    attrs.groups.unwrap_or(1),
                )
            }
            OpKind::Concat => self.concat(inputs, axis()?),
            _ => {
                arity(1)?;
                let x = inputs[0];
                match kind {
                    OpKind::Neg => Ok(self.neg(x)),
                    OpKind::Tanh => Ok(self.tanh(x)),
                    OpKind::Sigmoid => Ok(self.sigmoid(x)),
                    OpKind::Exp => Ok(self.exp(x)),
                    OpKind::Log => Ok(self.log(x)),
                    OpKind::Log1p => Ok(self.log1p(x)),
                    OpKind::Sqrt => Ok(self.sqrt(x)),
                    OpKind::Square => Ok(self.square(x)),
                    OpKind::Abs => Ok(self.abs(x)),
                    OpKind::Sin => Ok(self.sin(x)),
                    OpKind::Cos => Ok(self.cos(x)),
                    OpKind::Pow => {
                        let p = attrs.exponent.ok_or(Error::Attr {
                            kind: "pow",
                            msg: "missing exponent".into(),
                        })?;
                        Ok(self.powf(x, p))
                    }
                    OpKind::Slice => {
                        let (s, e) = match (attrs.start, attrs.end) {
                            (Some(s), Some(e)) => (s, e),
                            _ => return attr_err("slice", "missing start/end"),
                        };
                        self.slice(x, axis()?, s, e)
                    }
                    OpKind::Reshape => match &attrs.shape {
                        Some(s) => self.reshape(x, s),
                        None => attr_err("reshape", "missing shape"),
                    },
                    OpKind::Transpose => self.transpose(x),
                    OpKind::Permute => match &attrs.axes {
                        Some(a) => self.permute(x, a),
                        None => attr_err("permute", "missing axes"),
                    },
                    OpKind::Sum => self.sum(x, axis()?, attrs.keepdim),
                    OpKind::Mean => self.mean(x, axis()?, attrs.keepdim),
                    OpKind::Max => self.max(x, axis()?, attrs.keepdim),
                    OpKind::LogSumExp => self.logsumexp(x, axis()?, attrs.keepdim),
                    OpKind::Softmax => self.softmax(x, axis()?),
                    _ => unreachable!(),
                }
            }
        }
    }

    // ---------------------------------------------------------------- backward

    /// Reverse pass from a scalar `loss`. A graph supports exactly one backward pass.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.backward_done {
            return Err(Error::Backward(
                "graph already differentiated; record a new forward pass".into(),
            ));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::Backward(format!(
                "loss must be scalar, got shape {:?}",
                self.shape(loss)
            )));
        }
        if !self.nodes[loss.0].requires_grad {
            return Err(Error::Backward("loss does not depend on any requires_grad leaf".into()));
        }
        self.backward_done = true;
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let g = match &self.nodes[i].op {
                Op::Leaf => continue,
                _ => match grads[i].take() {
                    Some(g) => g,
                    None => continue,
                },
            };
            self.node_backward(i, &g, &mut grads);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| match (&self.nodes[i].op, g) {
                (Op::Leaf, Some(g)) if self.nodes[i].requires_grad => {
                    Some(Tensor::from_parts(self.nodes[i].value.shape().to_vec(), g))
                }
                _ => None,
            })
            .collect();
        Ok(Gradients { grads, shapes })
    }

    fn node_backward(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Binary { kind, a, b } => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                let os = node.value.shape();
                if self.needs(*a) {
                    let ga = slot(grads, *a, va.len());
                    for_each_broadcast(sa, sb, os, |o, ia, ib| {
                        ga[ia] += match kind {
                            BinaryKind::Add | BinaryKind::Sub => g[o],
                            BinaryKind::Mul => g[o] * vb[ib],
                            BinaryKind::Div => g[o] / vb[ib],
                        }
                    });
                }
                if self.needs(*b) {
                    let gb = slot(grads, *b, vb.len());
                    for_each_broadcast(sa, sb, os, |o, ia, ib| {
                        gb[ib] += match kind {
                            BinaryKind::Add => g[o],
                            BinaryKind::Sub => -g[o],
                            BinaryKind::Mul => g[o] * va[ia],
                            BinaryKind::Div => -g[o] * va[ia] / (vb[ib] * vb[ib]),
                        }
                    });
                }
            }
            Op::Unary { kind, x } => {
                let xv = self.value(*x).data();
                let gx = slot(grads, *x, xv.len());
                for j in 0..g.len() {
                    let (xi, yi) = (xv[j], out[j]);
                    let d = match kind {
                        UnaryKind::Neg => -1.0,
                        UnaryKind::Scale(c) => *c,
                        UnaryKind::Offset(_) | UnaryKind::WrapPhase => 1.0,
                        UnaryKind::Tanh => 1.0 - yi * yi,
                        UnaryKind::Sigmoid => yi * (1.0 - yi),
                        UnaryKind::Exp => yi,
                        UnaryKind::Log => 1.0 / xi,
                        UnaryKind::Log1p => 1.0 / (1.0 + xi),
                        UnaryKind::Sqrt => {
                            if yi > 0.0 {
                                0.5 / yi
                            } else {
                                0.0
                            }
                        }
                        UnaryKind::Square => 2.0 * xi,
                        UnaryKind::Powf(p) => p * xi.powf(p - 1.0),
                        UnaryKind::Abs => {
                            if xi > 0.0 {
                                1.0
                            } else if xi < 0.0 {
                                -1.0
                            } else {
                                0.0
                            }
                        }
                        UnaryKind::Sin => xi.cos(),
                        UnaryKind::Cos => -xi.sin(),
                    };
                    gx[j] += g[j] * d;
                }
            }
            Op::Atan2 { y, x } => {
                let (yv, xv) = (self.value(*y).data(), self.value(*x).data());
                let denom = |j: usize| xv[j] * xv[j] + yv[j] * yv[j];
                if self.needs(*y) {
                    let gy = slot(grads, *y, yv.len());
                    for j in 0..g.len() {
                        let d = denom(j);
                        if d > 0.0 {
                            gy[j] += g[j] * xv[j] / d;
                        }
                    }
                }
                if self.needs(*x) {
                    let gx = slot(grads, *x, xv.len());
                    for j in 0..g.len() {
                        let d = denom(j);
                        if d > 0.0 {
                            gx[j] -= g[j] * yv[j] / d;
                        }
                    }
                }
            }
            Op::MatMul { a, b, m, k, n } => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if self.needs(*a) {
                    let da = ops::matmul_bt(g, vb, *m, *k, *n);
                    add_into(slot(grads, *a, va.len()), &da);
                }
                if self.needs(*b) {
                    let db = ops::matmul_at(va, g, *m, *k, *n);
                    add_into(slot(grads, *b, vb.len()), &db);
                }
            }
            Op::Conv1d { x, w, geom } => {
                let (vx, vw) = (self.value(*x).data(), self.value(*w).data());
                let (nx, nw) = (self.needs(*x), self.needs(*w));
                let (dx, dw) = ops::conv1d_backward(vx, vw, g, geom, nx, nw);
                if nx {
                    add_into(slot(grads, *x, vx.len()), &dx);
                }
                if nw {
                    add_into(slot(grads, *w, vw.len()), &dw);
                }
            }
            Op::Slice { x, axis, start } => {
                let shape = self.shape(*x);
                let (outer, len, inner) = axis_split(shape, *axis);
                let w = node.value.shape()[*axis];
                let gx = slot(grads, *x, outer * len * inner);
                for o in 0..outer {
                    let dst = o * len * inner + start * inner;
                    let src = o * w * inner;
                    add_into(&mut gx[dst..dst + w * inner], &g[src..src + w * inner]);
                }
            }
            Op::Concat { xs, axis } => {
                let (outer, _, inner) = axis_split(node.value.shape(), *axis);
                let mut offset = 0;
                let total = node.value.shape()[*axis];
                for &v in xs {
                    let len = self.shape(v)[*axis];
                    if self.needs(v) {
                        let gv = slot(grads, v, outer * len * inner);
                        for o in 0..outer {
                            let src = (o * total + offset) * inner;
                            add_into(
                                &mut gv[o * len * inner..(o + 1) * len * inner],
                                &g[src..src + len * inner],
                            );
                        }
                    }
                    offset += len;
                }
            }
            Op::Reshape { x } => add_into(slot(grads, *x, g.len()), g),
            Op::Permute { x, axes } => {
                let mut inv = vec![0; axes.len()];
                for (i, &a) in axes.iter().enumerate() {
                    inv[a] = i;
                }
                let back = permute_data(g, node.value.shape(), &inv);
                add_into(slot(grads, *x, g.len()), &back);
            }
            Op::Reduce { kind, x, axis } => {
                let (outer, len, inner) = axis_split(self.shape(*x), *axis);
                let scale = if *kind == ReduceKind::Mean {
                    1.0 / len as f64
                } else {
                    1.0
                };
                let gx = slot(grads, *x, outer * len * inner);
                for o in 0..outer {
                    for j in 0..len {
                        for i in 0..inner {
                            gx[(o * len + j) * inner + i] += g[o * inner + i] * scale;
                        }
                    }
                }
            }
            Op::Max { x, argmax } => {
                let gx = slot(grads, *x, self.value(*x).numel());
                for (o, &idx) in argmax.iter().enumerate() {
                    gx[idx] += g[o];
                }
            }
            Op::LogSumExp { x, axis } => {
                let xv = self.value(*x).data();
                let (outer, len, inner) = axis_split(self.shape(*x), *axis);
                let gx = slot(grads, *x, xv.len());
                for o in 0..outer {
                    for i in 0..inner {
                        let y = out[o * inner + i];
                        for j in 0..len {
                            let idx = (o * len + j) * inner + i;
                            gx[idx] += g[o * inner + i] * (xv[idx] - y).exp();
                        }
                    }
                }
            }
            Op::Softmax { x, axis } => {
                let (outer, len, inner) = axis_split(node.value.shape(), *axis);
                let gx = slot(grads, *x, out.len());
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |j: usize| (o * len + j) * inner + i;
                        let dot: f64 = (0..len).map(|j| g[idx(j)] * out[idx(j)]).sum();
                        for j in 0..len {
                            gx[idx(j)] += out[idx(j)] * (g[idx(j)] - dot);
                        }
                    }
                }
            }
            Op::Gather { x, index } => {
                let last = *self.shape(*x).last().unwrap();
                let gx = slot(grads, *x, self.value(*x).numel());
                let w = index.len();
                for r in 0..g.len() / w {
                    for (j, &src) in index.iter().enumerate() {
                        gx[r * last + src] += g[r * w + j];
                    }
                }
            }
            Op::Frames { x, frame, hop } => {
                let len = *self.shape(*x).last().unwrap();
                let t = node.value.shape()[node.value.rank() - 2];
                let gx = slot(grads, *x, self.value(*x).numel());
                let rows = gx.len() / len;
                for r in 0..rows {
                    for f in 0..t {
                        let s = r * len + f * hop;
                        let src = (r * t + f) * frame;
                        add_into(&mut gx[s..s + frame], &g[src..src + frame]);
                    }
                }
            }
            Op::SincKernels { low, high, taps } => {
                let (lo, hi) = (self.value(*low).data(), self.value(*high).data());
                for (var, freqs, sign) in [(*low, lo, -1.0), (*high, hi, 1.0)] {
                    if !self.needs(var) {
                        continue;
                    }
                    let gv = slot(grads, var, freqs.len());
                    for (f, &fv) in freqs.iter().enumerate() {
                        let mut acc = 0.0;
                        for j in 0..*taps {
                            let (t, win) = sinc_tap(j, *taps);
                            acc += g[f * taps + j] * sign * 2.0 * (2.0 * PI * fv * t).cos() * win;
                        }
                        gv[f] += acc;
                    }
                }
            }
            Op::SoftQuantile(tape) => {
                let xv = self.value(tape.x).data();
                let m = self.shape(tape.x)[1];
                let nl = tape.levels.len();
                let gx = slot(grads, tape.x, xv.len());
                for (pair, trace) in tape.traces.iter().enumerate() {
                    let Some(trace) = trace else { continue };
                    let (r, l) = (pair / nl, pair % nl);
                    let row = &xv[r * m..(r + 1) * m];
                    let grow = &mut gx[r * m..(r + 1) * m];
                    soft_quantile_vjp(row, trace, tape.levels[l], tape.tau, g[pair], grow);
                }
            }
            Op::HardQuantile { x, picks } => {
                let gx = slot(grads, *x, self.value(*x).numel());
                for (o, &(a, b, frac)) in picks.iter().enumerate() {
                    gx[a] += g[o] * (1.0 - frac);
                    gx[b] += g[o] * frac;
                }
            }
        }
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn reduced_shape(shape: &[usize], axis: usize, keepdim: bool) -> Vec<usize> {
    let mut s = shape.to_vec();
    if keepdim {
        s[axis] = 1;
    } else {
        s.remove(axis);
    }
    s
}

fn permute_data(src: &[f64], shape: &[usize], axes: &[usize]) -> Vec<f64> {
    let rank = shape.len();
    let mut in_strides = vec![1; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let oshape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let ostrides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let mut out = Vec::with_capacity(src.len());
    let mut idx = vec![0usize; rank];
    let mut pos = 0usize;
    for _ in 0..src.len() {
        out.push(src[pos]);
        for d in (0..rank).rev() {
            idx[d] += 1;
            pos += ostrides[d];
            if idx[d] < oshape[d] {
                break;
            }
            pos -= ostrides[d] * oshape[d];
            idx[d] = 0;
        }
    }
    out
}

fn check_levels(levels: &[f64]) -> Result<()> {
    if levels.is_empty() || levels.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
        return attr_err("quantile", format!("levels must lie in (0, 1), got {levels:?}"));
    }
    Ok(())
}

/// `2f·sinc(2f·t) = sin(2πft)/(πt)`, with the `t = 0` limit `2f`.
fn lowpass(f: f64, t: f64) -> f64 {
    if t == 0.0 {
        2.0 * f
    } else {
        (2.0 * PI * f * t).sin() / (PI * t)
    }
}

/// Centred tap position and Hamming weight for tap `j` of `taps`.
fn sinc_tap(j: usize, taps: usize) -> (f64, f64) {
    let half = (taps / 2) as f64;
    let t = j as f64 - half;
    let win = 0.54 - 0.46 * (2.0 * PI * j as f64 / (taps - 1) as f64).cos();
    (t, win)
}

pub(crate) fn hazen_position(m: usize, p: f64) -> (usize, usize, f64) {
    let pos = (p * m as f64 - 0.5).clamp(0.0, (m - 1) as f64);
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(m - 1);
    (lo, hi, pos - lo as f64)
}

pub(crate) fn hazen_quantile(sorted: &[f64], p: f64) -> f64 {
    let (lo, hi, frac) = hazen_position(sorted.len(), p);
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Smoothed empirical CDF and its derivative at `q`.
fn cdf_and_density(row: &[f64], q: f64, tau: f64) -> (f64, f64) {
    let m = row.len() as f64;
    let (mut f, mut g) = (0.0, 0.0);
    for &x in row {
        let s = ops::sigmoid((q - x) / tau);
        f += s;
        g += s * (1.0 - s);
    }
    (f / m, g / (m * tau))
}

/// Unrolled solve of `mean_i σ((q − x_i)/τ) = p` from the row mean.
/// The root lies in `[min x + τ·logit p, max x + τ·logit p]`; a Newton step
/// leaving the current bracket is replaced by bisection unless it is already
/// negligible. `None` when the
/// last update still exceeds the row range.
fn solve_soft_quantile(row: &[f64], p: f64, tau: f64) -> Option<QuantileTrace> {
    let m = row.len();
    let (mut argmin, mut argmax) = (0, 0);
    for (i, &v) in row.iter().enumerate() {
        if v < row[argmin] {
            argmin = i;
        }
        if v > row[argmax] {
            argmax = i;
        }
    }
    let range = row[argmax] - row[argmin];
    let shift = tau * (p / (1.0 - p)).ln();
    let (mut lo, mut hi) = (
        (BracketEnd::Low, row[argmin] + shift),
        (BracketEnd::High, row[argmax] + shift),
    );
    let mut qs = Vec::with_capacity(SOFT_QUANTILE_STEPS + 1);
    let mut steps = Vec::with_capacity(SOFT_QUANTILE_STEPS);
    let mut q = row.iter().sum::<f64>() / m as f64;
    qs.push(q);
    let mut last_update = 0.0;
    for j in 0..SOFT_QUANTILE_STEPS {
        let (f, g) = cdf_and_density(row, q, tau);
        let resid = f - p;
        if resid < 0.0 && q > lo.1 {
            lo = (BracketEnd::Iterate(j), q);
        } else if resid > 0.0 && q < hi.1 {
            hi = (BracketEnd::Iterate(j), q);
        }
        let newton = q - resid / g;
        let settled = (newton - q).abs() <= SOFT_QUANTILE_SETTLED * range;
        let next = if newton.is_finite() && (settled || (newton > lo.1 && newton < hi.1)) {
            steps.push(QuantileStep::Newton);
            newton
        } else {
            steps.push(QuantileStep::Bisect(lo.0, hi.0));
            0.5 * (lo.1 + hi.1)
        };
        last_update = next - q;
        q = next;
        qs.push(q);
    }
    (last_update.abs() <= range && q.is_finite()).then_some(QuantileTrace {
        qs,
        steps,
        argmin,
        argmax,
    })
}

/// Backpropagates `gq` through the recorded iterations into `gx`.
fn soft_quantile_vjp(row: &[f64], trace: &QuantileTrace, p: f64, tau: f64, gq: f64, gx: &mut [f64]) {
    let m = row.len() as f64;
    let n = trace.qs.len();
    let mut qbar = vec![0.0; n];
    let (mut lo_bar, mut hi_bar) = (0.0, 0.0);
    qbar[n - 1] = gq;
    for j in (0..n - 1).rev() {
        let gbar = qbar[j + 1];
        if gbar == 0.0 {
            continue;
        }
        match trace.steps[j] {
            QuantileStep::Bisect(a, b) => {
                for end in [a, b] {
                    match end {
                        BracketEnd::Low => lo_bar += 0.5 * gbar,
                        BracketEnd::High => hi_bar += 0.5 * gbar,
                        BracketEnd::Iterate(k) => qbar[k] += 0.5 * gbar,
                    }
                }
            }
            QuantileStep::Newton => {
                // q' = q − (F − p)/G with F, G the cdf and density at q
                let q = trace.qs[j];
                let (mut f, mut g, mut dg) = (0.0, 0.0, 0.0);
                for &x in row {
                    let s = ops::sigmoid((q - x) / tau);
                    let s1 = s * (1.0 - s);
                    f += s;
                    g += s1;
                    dg += s1 * (1.0 - 2.0 * s);
                }
                let f = f / m - p;
                let g = g / (m * tau);
                let dg_dq = dg / (m * tau * tau);
                for (i, &x) in row.iter().enumerate() {
                    let s = ops::sigmoid((q - x) / tau);
                    let s1 = s * (1.0 - s);
                    let df_dx = -s1 / (m * tau);
                    let dg_dx = -s1 * (1.0 - 2.0 * s) / (m * tau * tau);
                    gx[i] += gbar * (-df_dx / g + f * dg_dx / (g * g));
                }
                qbar[j] += gbar * f * dg_dq / (g * g);
            }
        }
    }
    let share = qbar[0] / m;
    for v in gx.iter_mut() {
        *v += share;
    }
    gx[trace.argmin] += lo_bar;
    gx[trace.argmax] += hi_bar;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_uniform() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(vec![1.0, 1.0, 1.0]));
        let y = g.softmax(x, 0).unwrap();
        for &v in g.value(y).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn matmul_identity() {
        let mut g = Graph::new();
        let a = Tensor::new(vec![3, 3], (0..9).map(|v| v as f64 * 0.7 - 2.0).collect()).unwrap();
        let i = g.constant(Tensor::eye(3));
        let av = g.constant(a.clone());
        let y = g.matmul(i, av).unwrap();
        assert_eq!(g.value(y), &a);
    }

    #[test]
    fn conv_sliding_dot_product() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![1, 1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let w = g.constant(Tensor::new(vec![1, 1, 2], vec![1.0, 1.0]).unwrap());
        let y = g.conv1d(x, w, 1, 0, 1).unwrap();
        assert_eq!(g.value(y).data(), &[3.0, 5.0, 7.0]);
        assert!(matches!(g.conv1d(x, w, 0, 0, 1), Err(Error::Attr { .. })));
    }

    #[test]
    fn shape_errors_name_the_kind() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[4]));
        let err = g.add(a, b).unwrap_err().to_string();
        assert!(
            err.contains("add") && err.contains("[2, 3]") && err.contains("[4]"),
            "{err}"
        );
        assert!(matches!("frobnicate".parse::<OpKind>(), Err(Error::UnknownOp(_))));
    }

    #[test]
    fn square_sum_gradient() {
        let mut g = Graph::new();
        let x = g.param(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let y = g.square(x);
        let l = g.sum_all(y).unwrap();
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.wrt(x).data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn tanh_gradient_at_zero() {
        let mut g = Graph::new();
        let x = g.param(Tensor::zeros(&[4]));
        let y = g.tanh(x);
        let l = g.sum_all(y).unwrap();
        assert_eq!(g.backward(l).unwrap().wrt(x).data(), &[1.0; 4]);
    }

    #[test]
    fn softmax_sum_has_zero_gradient() {
        let mut g = Graph::new();
        let x = g.param(Tensor::vector(vec![0.3, -1.2, 2.0, 0.1]));
        let y = g.softmax(x, 0).unwrap();
        let l = g.sum_all(y).unwrap();
        for v in g.backward(l).unwrap().wrt(x).data() {
            assert!(v.abs() < 1e-15);
        }
    }

    #[test]
    fn unused_leaf_gets_zero_gradient() {
        let mut g = Graph::new();
        let x = g.param(Tensor::vector(vec![1.0, 2.0]));
        let unused = g.param(Tensor::zeros(&[3, 2]));
        let l = g.sum_all(x).unwrap();
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.wrt(unused), Tensor::zeros(&[3, 2]));
    }

    #[test]
    fn backward_rules() {
        let mut g = Graph::new();
        let x = g.param(Tensor::vector(vec![1.0, 2.0]));
        assert!(g.backward(x).is_err(), "non-scalar loss");
        let l = g.sum_all(x).unwrap();
        g.backward(l).unwrap();
        assert!(matches!(g.backward(l), Err(Error::Backward(_))), "second backward");
    }

    #[test]
    fn hard_quantile_median_of_range() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![1, 100], (1..=100).map(f64::from).collect()).unwrap());
        let q = g.hard_quantile(x, &[0.5]).unwrap();
        assert_eq!(g.value(q).item(), 50.5);
    }

    #[test]
    fn permute_round_trip() {
        let mut g = Graph::new();
        let t = Tensor::new(vec![2, 3, 4], (0..24).map(f64::from).collect()).unwrap();
        let x = g.constant(t.clone());
        let p = g.permute(x, &[2, 0, 1]).unwrap();
        assert_eq!(g.shape(p), &[4, 2, 3]);
        let back = g.permute(p, &[1, 2, 0]).unwrap();
        assert_eq!(g.value(back), &t);
    }
}
