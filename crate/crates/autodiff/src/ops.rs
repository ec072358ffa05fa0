//! Differentiable primitives. Each backward rule is expressed with these same
//! primitives so gradients stay differentiable.

use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::kernels::{self, ConvGeometry};
use crate::tensor::{numel, BackwardOp, Tensor};

fn reduce_like(g: Tensor, shape: &[usize]) -> Tensor {
    if g.shape() == shape {
        g
    } else {
        g.sum_to(shape)
    }
}

// ---------------------------------------------------------------------------
// Elementwise binary ops with broadcasting

#[derive(Clone, Copy)]
enum BinKind {
    Add,
    Sub,
    Mul,
    Div,
}

struct Binary(BinKind);

impl BackwardOp for Binary {
    fn name(&self) -> &'static str {
        match self.0 {
            BinKind::Add => "add",
            BinKind::Sub => "sub",
            BinKind::Mul => "mul",
            BinKind::Div => "div",
        }
    }

    fn backward(&self, inputs: &[Tensor], output: &Tensor, g: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let (a, b) = (&inputs[0], &inputs[1]);
        let ga = needs[0].then(|| {
            let raw = match self.0 {
                BinKind::Add | BinKind::Sub => g.clone(),
                BinKind::Mul => g * b,
                BinKind::Div => g / b,
            };
            reduce_like(raw, a.shape())
        });
        let gb = needs[1].then(|| {
            let raw = match self.0 {
                BinKind::Add => g.clone(),
                BinKind::Sub => -g,
                BinKind::Mul => g * a,
                BinKind::Div => -(&(g * output) / b),
            };
            reduce_like(raw, b.shape())
        });
        vec![ga, gb]
    }
}

fn binary(a: &Tensor, b: &Tensor, kind: BinKind) -> Tensor {
    let out_shape = kernels::broadcast_shape(a.shape(), b.shape()).unwrap_or_else(|| {
        panic!("shapes {:?} and {:?} do not broadcast", a.shape(), b.shape())
    });
    let data = match kind {
        BinKind::Add => kernels::binary(a.data(), a.shape(), b.data(), b.shape(), &out_shape, |x, y| x + y),
        BinKind::Sub => kernels::binary(a.data(), a.shape(), b.data(), b.shape(), &out_shape, |x, y| x - y),
        BinKind::Mul => kernels::binary(a.data(), a.shape(), b.data(), b.shape(), &out_shape, |x, y| x * y),
        BinKind::Div => kernels::binary(a.data(), a.shape(), b.data(), b.shape(), &out_shape, |x, y| x / y),
    };
    Tensor::from_op(data, out_shape, Binary(kind), vec![a.clone(), b.clone()])
}

macro_rules! impl_binary_ops {
    ($trait:ident, $method:ident, $kind:expr) => {
        impl $trait<&Tensor> for &Tensor {
            type Output = Tensor;
            fn $method(self, rhs: &Tensor) -> Tensor {
                binary(self, rhs, $kind)
            }
        }
        impl $trait<Tensor> for Tensor {
            type Output = Tensor;
            fn $method(self, rhs: Tensor) -> Tensor {
                binary(&self, &rhs, $kind)
            }
        }
        impl $trait<&Tensor> for Tensor {
            type Output = Tensor;
            fn $method(self, rhs: &Tensor) -> Tensor {
                binary(&self, rhs, $kind)
            }
        }
        impl $trait<Tensor> for &Tensor {
            type Output = Tensor;
            fn $method(self, rhs: Tensor) -> Tensor {
                binary(self, &rhs, $kind)
            }
        }
    };
}

impl_binary_ops!(Add, add, BinKind::Add);
impl_binary_ops!(Sub, sub, BinKind::Sub);
impl_binary_ops!(Mul, mul, BinKind::Mul);
impl_binary_ops!(Div, div, BinKind::Div);

// ---------------------------------------------------------------------------
// Elementwise unary ops

#[derive(Clone, Copy)]
enum UnKind {
    Neg,
    Scale(f64),
    Offset,
    Exp,
    Ln,
    Sqrt,
    Square,
    Tanh,
    Sigmoid,
    LeakyRelu(f64),
}

struct Unary(UnKind);

impl BackwardOp for Unary {
    fn name(&self) -> &'static str {
        match self.0 {
            UnKind::Neg => "neg",
            UnKind::Scale(_) => "scale",
            UnKind::Offset => "add_scalar",
            UnKind::Exp => "exp",
            UnKind::Ln => "ln",
            UnKind::Sqrt => "sqrt",
            UnKind::Square => "square",
            UnKind::Tanh => "tanh",
            UnKind::Sigmoid => "sigmoid",
            UnKind::LeakyRelu(_) => "leaky_relu",
        }
    }

    fn backward(&self, inputs: &[Tensor], y: &Tensor, g: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        if !needs[0] {
            return vec![None];
        }
        let x = &inputs[0];
        let gx = match self.0 {
            UnKind::Neg => -g,
            UnKind::Scale(c) => g.scale(c),
            UnKind::Offset => g.clone(),
            UnKind::Exp => g * y,
            UnKind::Ln => g / x,
            UnKind::Sqrt => (g / y).scale(0.5),
            UnKind::Square => (g * x).scale(2.0),
            UnKind::Tanh => g * &(-&y.square()).add_scalar(1.0),
            UnKind::Sigmoid => g * &(y * &(-y).add_scalar(1.0)),
            UnKind::LeakyRelu(slope) => {
                let mask: Vec<f64> = x.data().iter().map(|&v| if v > 0.0 { 1.0 } else { slope }).collect();
                g * &Tensor::from_vec(mask, x.shape())
            }
        };
        vec![Some(gx)]
    }
}

fn unary(x: &Tensor, kind: UnKind, f: impl Fn(f64) -> f64) -> Tensor {
    let data = x.data().iter().map(|&v| f(v)).collect();
    Tensor::from_op(data, x.shape().to_vec(), Unary(kind), vec![x.clone()])
}

impl Neg for &Tensor {
    type Output = Tensor;
    fn neg(self) -> Tensor {
        unary(self, UnKind::Neg, |v| -v)
    }
}

impl Neg for Tensor {
    type Output = Tensor;
    fn neg(self) -> Tensor {
        -&self
    }
}

// ---------------------------------------------------------------------------
// Shape ops

struct Reshape {
    in_shape: Vec<usize>,
}

impl BackwardOp for Reshape {
    fn name(&self) -> &'static str {
        "reshape"
    }
    fn backward(&self, _: &[Tensor], _: &Tensor, g: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        vec![needs[0].then(|| g.reshape(&self.in_shape))]
    }
}

struct Permute {
    inverse: Vec<usize>,
}

impl BackwardOp for Permute {
    fn name(&self) -> &'static str {
        "permute"
    }
    fn backward(&self, _: &[Tensor], _: &Tensor, g: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        vec![needs[0].then(|| g.permute(&self.inverse))]
    }
}

struct SumTo {
    in_shape: Vec<usize>,
}

impl BackwardOp for SumTo {
    fn name(&self) -> &'static str {
        "sum_to"
    }
    fn backward(&self, _: &[Tensor], _: &Tensor, g: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        vec![needs[0].then(|| g.broadcast_to(&self.in_shape))]
    }
}

struct BroadcastTo {
    in_shape: Vec<usize>,
}

impl BackwardOp for BroadcastTo {
    fn name(&self) -> &'static str {
        "broadcast_to"
    }
    fn backward(&self, _: &[Tensor], _: &Tensor, g: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        vec![needs[0].then(|| g.sum_to(&self.in_shape))]
    }
}

struct Narrow {
    axis: usize,
    start: usize,
    in_len: usize,
}

impl BackwardOp for Narrow {
    fn name(&self) -> &'static str {
        "narrow"
    }
    fn backward(&self, _: &[Tensor], out: &Tensor, g: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let len = out.dim(self.axis);
        vec![needs[0].then(|| g.pad_axis(self.axis, self.start, self.in_len - self.start - len))]
    }
}

struct PadAxis {
    axis: usize,
    before: usize,
    len: usize,
}

impl BackwardOp for PadAxis {
    fn name(&self) -> &'static str {
        "pad_axis"
    }
    fn backward(&self, _: &[Tensor], _: &Tensor, g: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        vec![needs[0].then(|| g.narrow(self.axis, self.before, self.len))]
    }
}

struct Concat {
    axis: usize,
    sizes: Vec<usize>,
}

impl BackwardOp for Concat {
    fn name(&self) -> &'static str {
        "concat"
    }
    fn backward(&self, _: &[Tensor], _: &Tensor, g: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let mut start = 0;
        self.sizes
            .iter()
            .zip(needs)
            .map(|(&len, &need)| {
                let piece = need.then(|| g.narrow(self.axis, start, len));
                start += len;
                piece
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Linear algebra and convolution plumbing

struct MatMul {
    ta: bool,
    tb: bool,
}

impl BackwardOp for MatMul {
    fn name(&self) -> &'static str {
        "matmul"
    }
    fn backward(&self, inputs: &[Tensor], _: &Tensor, g: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let (a, b) = (&inputs[0], &inputs[1]);
        let ga = needs[0].then(|| {
            if self.ta {
                b.matmul_t(g, self.tb, true)
            } else {
                g.matmul_t(b, false, !self.tb)
            }
        });
        let gb = needs[1].then(|| {
            if self.tb {
                g.matmul_t(a, true, self.ta)
            } else {
                a.matmul_t(g, !self.ta, false)
            }
        });
        vec![ga, gb]
    }
}

struct Im2col {
    geom: ConvGeometry,
}

impl BackwardOp for Im2col {
    fn name(&self) -> &'static str {
        "im2col"
    }
    fn backward(&self, _: &[Tensor], _: &Tensor, g: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        vec![needs[0].then(|| g.col2im(self.geom))]
    }
}

struct Col2im {
    geom: ConvGeometry,
}

impl BackwardOp for Col2im {
    fn name(&self) -> &'static str {
        "col2im"
    }
    fn backward(&self, _: &[Tensor], _: &Tensor, g: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        vec![needs[0].then(|| g.im2col(self.geom))]
    }
}

struct IndexSelectRows {
    indices: Vec<usize>,
    n_rows: usize,
}

impl BackwardOp for IndexSelectRows {
    fn name(&self) -> &'static str {
        "index_select_rows"
    }
    fn backward(&self, _: &[Tensor], _: &Tensor, g: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        vec![needs[0].then(|| g.scatter_add_rows(&self.indices, self.n_rows))]
    }
}

struct ScatterAddRows {
    indices: Vec<usize>,
}

impl BackwardOp for ScatterAddRows {
    fn name(&self) -> &'static str {
        "scatter_add_rows"
    }
    fn backward(&self, _: &[Tensor], _: &Tensor, g: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        vec![needs[0].then(|| g.index_select_rows(&self.indices))]
    }
}

impl Tensor {
    pub fn scale(&self, c: f64) -> Tensor {
        unary(self, UnKind::Scale(c), |v| c * v)
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        unary(self, UnKind::Offset, |v| v + c)
    }

    pub fn exp(&self) -> Tensor {
        unary(self, UnKind::Exp, f64::exp)
    }

    pub fn ln(&self) -> Tensor {
        unary(self, UnKind::Ln, f64::ln)
    }

    pub fn sqrt(&self) -> Tensor {
        unary(self, UnKind::Sqrt, f64::sqrt)
    }

    pub fn square(&self) -> Tensor {
        unary(self, UnKind::Square, |v| v * v)
    }

    pub fn tanh(&self) -> Tensor {
        unary(self, UnKind::Tanh, f64::tanh)
    }

    pub fn sigmoid(&self) -> Tensor {
        unary(self, UnKind::Sigmoid, |v| 1.0 / (1.0 + (-v).exp()))
    }

    pub fn relu(&self) -> Tensor {
        self.leaky_relu(0.0)
    }

    pub fn leaky_relu(&self, slope: f64) -> Tensor {
        unary(self, UnKind::LeakyRelu(slope), |v| if v > 0.0 { v } else { slope * v })
    }

    pub fn reshape(&self, shape: &[usize]) -> Tensor {
        assert_eq!(
            numel(shape),
            self.numel(),
            "cannot reshape {:?} into {:?}",
            self.shape(),
            shape
        );
        self.share_reshaped_op(
            shape.to_vec(),
            Reshape {
                in_shape: self.shape().to_vec(),
            },
        )
    }

    pub fn permute(&self, axes: &[usize]) -> Tensor {
        assert_eq!(axes.len(), self.rank(), "permute axes {:?} for rank {}", axes, self.rank());
        let mut inverse = vec![0; axes.len()];
        for (i, &a) in axes.iter().enumerate() {
            inverse[a] = i;
        }
        let (data, shape) = kernels::permute(self.data(), self.shape(), axes);
        Tensor::from_op(data, shape, Permute { inverse }, vec![self.clone()])
    }

    /// Swaps the last two axes.
    pub fn transpose(&self) -> Tensor {
        let r = self.rank();
        assert!(r >= 2);
        let mut axes: Vec<usize> = (0..r).collect();
        axes.swap(r - 2, r - 1);
        self.permute(&axes)
    }

    /// Sums over broadcast axes so the result has `shape`.
    pub fn sum_to(&self, shape: &[usize]) -> Tensor {
        if self.shape() == shape {
            return self.clone();
        }
        let check = kernels::broadcast_shape(shape, self.shape());
        assert_eq!(
            check.as_deref(),
            Some(self.shape()),
            "cannot sum {:?} down to {:?}",
            self.shape(),
            shape
        );
        // Leading axes absent from `shape` are summed and then dropped.
        let rank = self.rank();
        let mut padded = vec![1; rank - shape.len()];
        padded.extend_from_slice(shape);
        let data = kernels::sum_to(self.data(), self.shape(), &padded);
        Tensor::from_op(
            data,
            shape.to_vec(),
            SumTo {
                in_shape: self.shape().to_vec(),
            },
            vec![self.clone()],
        )
    }

    pub fn broadcast_to(&self, shape: &[usize]) -> Tensor {
        if self.shape() == shape {
            return self.clone();
        }
        let check = kernels::broadcast_shape(self.shape(), shape);
        assert_eq!(
            check.as_deref(),
            Some(shape),
            "cannot broadcast {:?} to {:?}",
            self.shape(),
            shape
        );
        let data = kernels::broadcast_to(self.data(), self.shape(), shape);
        Tensor::from_op(
            data,
            shape.to_vec(),
            BroadcastTo {
                in_shape: self.shape().to_vec(),
            },
            vec![self.clone()],
        )
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Tensor {
        let shape = self.shape();
        assert!(start + len <= shape[axis], "narrow {start}+{len} out of range for {:?}", shape);
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let full = shape[axis];
        let mut data = Vec::with_capacity(outer * len * inner);
        let src = self.data();
        for o in 0..outer {
            let base = (o * full + start) * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = shape.to_vec();
        out_shape[axis] = len;
        Tensor::from_op(
            data,
            out_shape,
            Narrow {
                axis,
                start,
                in_len: full,
            },
            vec![self.clone()],
        )
    }

    /// Zero-pads `before` and `after` entries along `axis`.
    pub fn pad_axis(&self, axis: usize, before: usize, after: usize) -> Tensor {
        let shape = self.shape();
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let len = shape[axis];
        let full = before + len + after;
        let mut data = vec![0.0; outer * full * inner];
        let src = self.data();
        for o in 0..outer {
            let dst = (o * full + before) * inner;
            data[dst..dst + len * inner].copy_from_slice(&src[o * len * inner..(o + 1) * len * inner]);
        }
        let mut out_shape = shape.to_vec();
        out_shape[axis] = full;
        Tensor::from_op(data, out_shape, PadAxis { axis, before, len }, vec![self.clone()])
    }

    pub fn concat(parts: &[Tensor], axis: usize) -> Tensor {
        assert!(!parts.is_empty(), "concat of zero tensors");
        let first = parts[0].shape();
        for p in parts {
            assert_eq!(p.rank(), first.len());
            for d in 0..first.len() {
                assert!(d == axis || p.dim(d) == first[d], "concat shape mismatch {:?} vs {:?}", p.shape(), first);
            }
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let sizes: Vec<usize> = parts.iter().map(|p| p.dim(axis)).collect();
        let total: usize = sizes.iter().sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (p, &len) in parts.iter().zip(&sizes) {
                data.extend_from_slice(&p.data()[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut out_shape = first.to_vec();
        out_shape[axis] = total;
        Tensor::from_op(data, out_shape, Concat { axis, sizes }, parts.to_vec())
    }

    /// 2-D matrix product.
    pub fn matmul(&self, other: &Tensor) -> Tensor {
        self.matmul_t(other, false, false)
    }

    /// `op(self) @ op(other)` with optional transposes, both operands 2-D.
    pub fn matmul_t(&self, other: &Tensor, ta: bool, tb: bool) -> Tensor {
        assert_eq!(self.rank(), 2, "matmul lhs must be 2-D, got {:?}", self.shape());
        assert_eq!(other.rank(), 2, "matmul rhs must be 2-D, got {:?}", other.shape());
        let (data, m, n) = kernels::matmul(
            self.data(),
            self.dim(0),
            self.dim(1),
            ta,
            other.data(),
            other.dim(0),
            other.dim(1),
            tb,
        );
        Tensor::from_op(data, vec![m, n], MatMul { ta, tb }, vec![self.clone(), other.clone()])
    }

    pub fn im2col(&self, geom: ConvGeometry) -> Tensor {
        assert_eq!(self.shape(), &[geom.n, geom.c, geom.h, geom.w], "im2col geometry mismatch");
        let data = kernels::im2col(self.data(), &geom);
        Tensor::from_op(data, vec![geom.col_rows(), geom.col_cols()], Im2col { geom }, vec![self.clone()])
    }

    pub fn col2im(&self, geom: ConvGeometry) -> Tensor {
        assert_eq!(self.shape(), &[geom.col_rows(), geom.col_cols()], "col2im geometry mismatch");
        let data = kernels::col2im(self.data(), &geom);
        Tensor::from_op(data, vec![geom.n, geom.c, geom.h, geom.w], Col2im { geom }, vec![self.clone()])
    }

    /// Gathers rows of a 2-D tensor.
    pub fn index_select_rows(&self, indices: &[usize]) -> Tensor {
        assert_eq!(self.rank(), 2);
        let (rows, cols) = (self.dim(0), self.dim(1));
        let mut data = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            assert!(i < rows, "row index {i} out of range {rows}");
            data.extend_from_slice(&self.data()[i * cols..(i + 1) * cols]);
        }
        Tensor::from_op(
            data,
            vec![indices.len(), cols],
            IndexSelectRows {
                indices: indices.to_vec(),
                n_rows: rows,
            },
            vec![self.clone()],
        )
    }

    /// Adds row `k` of `self` into row `indices[k]` of an `(n_rows, D)` zero tensor.
    pub fn scatter_add_rows(&self, indices: &[usize], n_rows: usize) -> Tensor {
        assert_eq!(self.rank(), 2);
        assert_eq!(self.dim(0), indices.len());
        let cols = self.dim(1);
        let mut data = vec![0.0; n_rows * cols];
        for (k, &i) in indices.iter().enumerate() {
            let src = &self.data()[k * cols..(k + 1) * cols];
            for (d, s) in data[i * cols..(i + 1) * cols].iter_mut().zip(src) {
                *d += s;
            }
        }
        Tensor::from_op(
            data,
            vec![n_rows, cols],
            ScatterAddRows {
                indices: indices.to_vec(),
            },
            vec![self.clone()],
        )
    }
}
