use crate::error::{Error, Result};

use super::tensor::Tensor;

/// Recorded operation; holds the parent handles and whatever the backward
/// rule needs beyond the output value itself.
pub(crate) enum Op {
    Add(Tensor, Tensor),
    Sub(Tensor, Tensor),
    Mul(Tensor, Tensor),
    Div(Tensor, Tensor),
    Matmul(Tensor, Tensor),
    Max(Tensor, Tensor),
    Tanh(Tensor),
    Sigmoid(Tensor),
    Softplus(Tensor),
    Exp(Tensor),
    Log(Tensor),
    Abs(Tensor),
    Sqrt(Tensor),
    Sum(Tensor),
    Mean(Tensor),
    Concat {
        inputs: Vec<Tensor>,
        axis: usize,
    },
    Slice {
        input: Tensor,
        axis: usize,
        start: usize,
    },
    Broadcast(Tensor),
}

impl Op {
    pub(crate) fn parents(&self) -> Vec<&Tensor> {
        match self {
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Div(a, b)
            | Op::Matmul(a, b)
            | Op::Max(a, b) => vec![a, b],
            Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::Softplus(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Abs(a)
            | Op::Sqrt(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::Slice { input: a, .. }
            | Op::Broadcast(a) => vec![a],
            Op::Concat { inputs, .. } => inputs.iter().collect(),
        }
    }
}

/// Operation selector for the uniform [`apply`] entry point.
#[derive(Clone, Debug, PartialEq)]
pub enum OpKind {
    Add,
    Sub,
    Mul,
    Div,
    Matmul,
    Max,
    Tanh,
    Sigmoid,
    Softplus,
    Exp,
    Log,
    Abs,
    Sqrt,
    Sum,
    Mean,
    Concat { axis: usize },
    Slice { axis: usize, start: usize, len: usize },
    Broadcast { shape: Vec<usize> },
}

/// Apply `kind` to `inputs`, recording a graph node when any input requires
/// gradients.
pub fn apply(kind: &OpKind, inputs: &[&Tensor]) -> Result<Tensor> {
    let arity = |n: usize, op: &'static str| -> Result<()> {
        if inputs.len() != n {
            return Err(Error::ShapeMismatch {
                op,
                detail: format!("expected {n} inputs, got {}", inputs.len()),
            });
        }
        Ok(())
    };
    match kind {
        OpKind::Add => {
            arity(2, "add")?;
            inputs[0].add(inputs[1])
        }
        OpKind::Sub => {
            arity(2, "sub")?;
            inputs[0].sub(inputs[1])
        }
        OpKind::Mul => {
            arity(2, "mul")?;
            inputs[0].mul(inputs[1])
        }
        OpKind::Div => {
            arity(2, "div")?;
            inputs[0].div(inputs[1])
        }
        OpKind::Matmul => {
            arity(2, "matmul")?;
            inputs[0].matmul(inputs[1])
        }
        OpKind::Max => {
            arity(2, "max")?;
            inputs[0].maximum(inputs[1])
        }
        OpKind::Tanh => {
            arity(1, "tanh")?;
            inputs[0].tanh()
        }
        OpKind::Sigmoid => {
            arity(1, "sigmoid")?;
            inputs[0].sigmoid()
        }
        OpKind::Softplus => {
            arity(1, "softplus")?;
            inputs[0].softplus()
        }
        OpKind::Exp => {
            arity(1, "exp")?;
            inputs[0].exp()
        }
        OpKind::Log => {
            arity(1, "log")?;
            inputs[0].log()
        }
        OpKind::Abs => {
            arity(1, "abs")?;
            inputs[0].abs()
        }
        OpKind::Sqrt => {
            arity(1, "sqrt")?;
            inputs[0].sqrt()
        }
        OpKind::Sum => {
            arity(1, "sum")?;
            inputs[0].sum()
        }
        OpKind::Mean => {
            arity(1, "mean")?;
            inputs[0].mean()
        }
        OpKind::Concat { axis } => Tensor::concat(inputs, *axis),
        OpKind::Slice { axis, start, len } => {
            arity(1, "slice")?;
            inputs[0].slice(*axis, *start, *len)
        }
        OpKind::Broadcast { shape } => {
            arity(1, "broadcast")?;
            inputs[0].broadcast(shape)
        }
    }
}

fn record(any_grad: bool, op: Op) -> Option<Op> {
    if any_grad {
        Some(op)
    } else {
        None
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op,
            detail: format!("{:?} vs {:?}", a.shape(), b.shape()),
        });
    }
    Ok(())
}

pub(crate) fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

// Overflow-safe softplus: max(x, 0) + log1p(exp(-|x|)).
pub(crate) fn stable_softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl Tensor {
    fn binary_elementwise(
        &self,
        other: &Tensor,
        op_name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: impl FnOnce(Tensor, Tensor) -> Op,
    ) -> Result<Tensor> {
        same_shape(op_name, self, other)?;
        let data = {
            let a = self.data();
            let b = other.data();
            a.iter().zip(b.iter()).map(|(&x, &y)| f(x, y)).collect()
        };
        let any_grad = self.requires_grad() || other.requires_grad();
        Ok(Tensor::make(
            self.shape().to_vec(),
            data,
            any_grad,
            record(any_grad, op(self.clone(), other.clone())),
        ))
    }

    fn unary_elementwise(
        &self,
        f: impl Fn(f64) -> f64,
        op: impl FnOnce(Tensor) -> Op,
    ) -> Tensor {
        let data = self.data().iter().map(|&x| f(x)).collect();
        let any_grad = self.requires_grad();
        Tensor::make(
            self.shape().to_vec(),
            data,
            any_grad,
            record(any_grad, op(self.clone())),
        )
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.binary_elementwise(other, "add", |x, y| x + y, Op::Add)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.binary_elementwise(other, "sub", |x, y| x - y, Op::Sub)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.binary_elementwise(other, "mul", |x, y| x * y, Op::Mul)
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        if other.data().iter().any(|&y| y == 0.0) {
            return Err(Error::Domain {
                op: "div",
                detail: "division by zero".into(),
            });
        }
        self.binary_elementwise(other, "div", |x, y| x / y, Op::Div)
    }

    /// Elementwise maximum. Exact ties split the gradient evenly, matching
    /// the central-difference limit.
    pub fn maximum(&self, other: &Tensor) -> Result<Tensor> {
        self.binary_elementwise(other, "max", f64::max, Op::Max)
    }

    pub fn tanh(&self) -> Result<Tensor> {
        Ok(self.unary_elementwise(f64::tanh, Op::Tanh))
    }

    pub fn sigmoid(&self) -> Result<Tensor> {
        Ok(self.unary_elementwise(stable_sigmoid, Op::Sigmoid))
    }

    pub fn softplus(&self) -> Result<Tensor> {
        Ok(self.unary_elementwise(stable_softplus, Op::Softplus))
    }

    pub fn exp(&self) -> Result<Tensor> {
        Ok(self.unary_elementwise(f64::exp, Op::Exp))
    }

    pub fn log(&self) -> Result<Tensor> {
        if self.data().iter().any(|&x| x <= 0.0) {
            return Err(Error::Domain {
                op: "log",
                detail: "log of non-positive value".into(),
            });
        }
        Ok(self.unary_elementwise(f64::ln, Op::Log))
    }

    pub fn abs(&self) -> Result<Tensor> {
        Ok(self.unary_elementwise(f64::abs, Op::Abs))
    }

    pub fn sqrt(&self) -> Result<Tensor> {
        if self.data().iter().any(|&x| x < 0.0) {
            return Err(Error::Domain {
                op: "sqrt",
                detail: "sqrt of negative value".into(),
            });
        }
        Ok(self.unary_elementwise(f64::sqrt, Op::Sqrt))
    }

    /// Matrix product. Accepts `[m,k]x[k,n] -> [m,n]` and the matrix-vector
    /// case `[m,k]x[k] -> [m]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = match self.shape() {
            [m, k] => (*m, *k),
            s => {
                return Err(Error::ShapeMismatch {
                    op: "matmul",
                    detail: format!("lhs must be rank 2, got {s:?}"),
                })
            }
        };
        let (k2, n, vec_rhs) = match other.shape() {
            [k2, n] => (*k2, *n, false),
            [k2] => (*k2, 1, true),
            s => {
                return Err(Error::ShapeMismatch {
                    op: "matmul",
                    detail: format!("rhs must be rank 1 or 2, got {s:?}"),
                })
            }
        };
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                detail: format!("inner dims differ: {:?} x {:?}", self.shape(), other.shape()),
            });
        }
        let mut out = vec![0.0; m * n];
        {
            let a = self.data();
            let b = other.data();
            if n == 1 {
                // matrix-vector: contiguous dot products
                for i in 0..m {
                    let row = &a[i * k..(i + 1) * k];
                    out[i] = row.iter().zip(b.iter()).map(|(&x, &y)| x * y).sum();
                }
            } else {
                for i in 0..m {
                    let arow = &a[i * k..(i + 1) * k];
                    let orow = &mut out[i * n..(i + 1) * n];
                    for (p, &aip) in arow.iter().enumerate() {
                        if aip == 0.0 {
                            continue;
                        }
                        let brow = &b[p * n..(p + 1) * n];
                        for (o, &bv) in orow.iter_mut().zip(brow) {
                            *o += aip * bv;
                        }
                    }
                }
            }
        }
        let shape = if vec_rhs { vec![m] } else { vec![m, n] };
        let any_grad = self.requires_grad() || other.requires_grad();
        Ok(Tensor::make(
            shape,
            out,
            any_grad,
            record(any_grad, Op::Matmul(self.clone(), other.clone())),
        ))
    }

    /// Sum of all elements, as a `[1]` scalar.
    pub fn sum(&self) -> Result<Tensor> {
        let total: f64 = self.data().iter().sum();
        let any_grad = self.requires_grad();
        Ok(Tensor::make(
            vec![1],
            vec![total],
            any_grad,
            record(any_grad, Op::Sum(self.clone())),
        ))
    }

    /// Mean of all elements, as a `[1]` scalar.
    pub fn mean(&self) -> Result<Tensor> {
        let total: f64 = self.data().iter().sum();
        let n = self.numel() as f64;
        let any_grad = self.requires_grad();
        Ok(Tensor::make(
            vec![1],
            vec![total / n],
            any_grad,
            record(any_grad, Op::Mean(self.clone())),
        ))
    }

    /// Concatenate along `axis`; all other dims must match.
    pub fn concat(inputs: &[&Tensor], axis: usize) -> Result<Tensor> {
        if inputs.is_empty() {
            return Err(Error::ShapeMismatch {
                op: "concat",
                detail: "no inputs".into(),
            });
        }
        let rank = inputs[0].shape().len();
        if axis >= rank {
            return Err(Error::ShapeMismatch {
                op: "concat",
                detail: format!("axis {axis} out of range for rank {rank}"),
            });
        }
        for t in inputs {
            if t.shape().len() != rank
                || t.shape()
                    .iter()
                    .zip(inputs[0].shape())
                    .enumerate()
                    .any(|(d, (a, b))| d != axis && a != b)
            {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    detail: format!("incompatible shapes {:?} vs {:?}", inputs[0].shape(), t.shape()),
                });
            }
        }
        let mut shape = inputs[0].shape().to_vec();
        shape[axis] = inputs.iter().map(|t| t.shape()[axis]).sum();
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for t in inputs {
                let d = t.shape()[axis];
                let src = t.data();
                data.extend_from_slice(&src[o * d * inner..(o + 1) * d * inner]);
            }
        }
        let any_grad = inputs.iter().any(|t| t.requires_grad());
        Ok(Tensor::make(
            shape,
            data,
            any_grad,
            record(
                any_grad,
                Op::Concat {
                    inputs: inputs.iter().map(|&t| t.clone()).collect(),
                    axis,
                },
            ),
        ))
    }

    /// Contiguous range `[start, start+len)` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        let rank = self.shape().len();
        if axis >= rank {
            return Err(Error::ShapeMismatch {
                op: "slice",
                detail: format!("axis {axis} out of range for rank {rank}"),
            });
        }
        let dim = self.shape()[axis];
        if len == 0 || start + len > dim {
            return Err(Error::ShapeMismatch {
                op: "slice",
                detail: format!("range {start}..{} out of bounds for dim {dim}", start + len),
            });
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = len;
        let outer: usize = self.shape()[..axis].iter().product();
        let inner: usize = self.shape()[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * len * inner);
        {
            let src = self.data();
            for o in 0..outer {
                let base = o * dim * inner + start * inner;
                data.extend_from_slice(&src[base..base + len * inner]);
            }
        }
        let any_grad = self.requires_grad();
        Ok(Tensor::make(
            shape,
            data,
            any_grad,
            record(
                any_grad,
                Op::Slice {
                    input: self.clone(),
                    axis,
                    start,
                },
            ),
        ))
    }

    /// Expand size-1 axes to the target shape (same rank).
    pub fn broadcast(&self, shape: &[usize]) -> Result<Tensor> {
        if shape.len() != self.shape().len() {
            return Err(Error::ShapeMismatch {
                op: "broadcast",
                detail: format!("rank mismatch: {:?} -> {:?}", self.shape(), shape),
            });
        }
        for (&s, &t) in self.shape().iter().zip(shape) {
            if s != t && s != 1 {
                return Err(Error::ShapeMismatch {
                    op: "broadcast",
                    detail: format!("only size-1 axes expand: {:?} -> {:?}", self.shape(), shape),
                });
            }
        }
        let numel: usize = shape.iter().product();
        let mut data = vec![0.0; numel];
        {
            let src = self.data();
            let src_shape = self.shape();
            let rank = shape.len();
            // Row-major strides of the (virtual) expanded source.
            let mut src_strides = vec![0usize; rank];
            let mut acc = 1;
            for d in (0..rank).rev() {
                src_strides[d] = if src_shape[d] == 1 { 0 } else { acc };
                acc *= src_shape[d];
            }
            let mut idx = vec![0usize; rank];
            for slot in data.iter_mut() {
                let mut off = 0;
                for d in 0..rank {
                    off += idx[d] * src_strides[d];
                }
                *slot = src[off];
                for d in (0..rank).rev() {
                    idx[d] += 1;
                    if idx[d] < shape[d] {
                        break;
                    }
                    idx[d] = 0;
                }
            }
        }
        let any_grad = self.requires_grad();
        Ok(Tensor::make(
            shape.to_vec(),
            data,
            any_grad,
            record(any_grad, Op::Broadcast(self.clone())),
        ))
    }

    pub fn add_scalar(&self, v: f64) -> Result<Tensor> {
        self.add(&Tensor::full(self.shape(), v))
    }

    pub fn mul_scalar(&self, v: f64) -> Result<Tensor> {
        self.mul(&Tensor::full(self.shape(), v))
    }

    pub fn neg(&self) -> Result<Tensor> {
        self.mul_scalar(-1.0)
    }

    /// Dot product of two equal-length rank-1 tensors, as a `[1]` scalar.
    pub fn dot(&self, other: &Tensor) -> Result<Tensor> {
        self.mul(other)?.sum()
    }

    pub fn square(&self) -> Result<Tensor> {
        self.mul(self)
    }
}
