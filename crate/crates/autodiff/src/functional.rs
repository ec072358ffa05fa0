//! Composite ops built from the differentiable primitives.

use crate::kernels::ConvGeometry;
use crate::tensor::Tensor;

impl Tensor {
    pub fn sum_all(&self) -> Tensor {
        self.sum_to(&[])
    }

    pub fn mean_all(&self) -> Tensor {
        let n = self.numel().max(1) as f64;
        self.sum_all().scale(1.0 / n)
    }

    /// Sums over `axes`; the reduced axes are kept with size 1 when `keepdim`.
    pub fn sum_axes(&self, axes: &[usize], keepdim: bool) -> Tensor {
        let mut kept = self.shape().to_vec();
        for &a in axes {
            kept[a] = 1;
        }
        let s = self.sum_to(&kept);
        if keepdim {
            s
        } else {
            let squeezed: Vec<usize> = self
                .shape()
                .iter()
                .enumerate()
                .filter(|(i, _)| !axes.contains(i))
                .map(|(_, &d)| d)
                .collect();
            s.reshape(&squeezed)
        }
    }

    pub fn mean_axes(&self, axes: &[usize], keepdim: bool) -> Tensor {
        let count: usize = axes.iter().map(|&a| self.dim(a)).product();
        self.sum_axes(axes, keepdim).scale(1.0 / count.max(1) as f64)
    }

    /// Constant tensor of maxima along `axis` (kept with size 1).
    pub fn max_along(&self, axis: usize) -> Tensor {
        let shape = self.shape();
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let len = shape[axis];
        let mut out = vec![f64::NEG_INFINITY; outer * inner];
        let x = self.data();
        for o in 0..outer {
            for k in 0..len {
                let row = &x[(o * len + k) * inner..(o * len + k + 1) * inner];
                for (m, &v) in out[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    if v > *m {
                        *m = v;
                    }
                }
            }
        }
        let mut kept = shape.to_vec();
        kept[axis] = 1;
        Tensor::from_vec(out, &kept)
    }

    /// Index of the maximum along the last axis of a 2-D tensor; lowest index
    /// wins ties.
    pub fn argmax_rows(&self) -> Vec<usize> {
        assert_eq!(self.rank(), 2);
        let cols = self.dim(1);
        self.data()
            .chunks(cols)
            .map(|row| {
                let mut best = 0;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }

    pub fn log_softmax(&self, axis: usize) -> Tensor {
        let shifted = self - &self.max_along(axis);
        let lse = shifted.exp().sum_axes(&[axis], true).ln();
        &shifted - &lse
    }

    pub fn softmax(&self, axis: usize) -> Tensor {
        self.log_softmax(axis).exp()
    }

    /// Nearest-neighbour repetition of each entry `factor` times along `axis`.
    pub fn upsample_nearest(&self, axis: usize, factor: usize) -> Tensor {
        if factor == 1 {
            return self.clone();
        }
        let shape = self.shape();
        let mut expanded: Vec<usize> = shape[..=axis].to_vec();
        expanded.push(1);
        expanded.extend_from_slice(&shape[axis + 1..]);
        let mut target = expanded.clone();
        target[axis + 1] = factor;
        let mut out_shape = shape.to_vec();
        out_shape[axis] *= factor;
        self.reshape(&expanded).broadcast_to(&target).reshape(&out_shape)
    }

    /// Mean over consecutive groups of `factor` entries along `axis`.
    pub fn avg_pool_axis(&self, axis: usize, factor: usize) -> Tensor {
        if factor == 1 {
            return self.clone();
        }
        let shape = self.shape();
        assert_eq!(shape[axis] % factor, 0, "axis {axis} of {:?} not divisible by {factor}", shape);
        let mut grouped: Vec<usize> = shape[..axis].to_vec();
        grouped.push(shape[axis] / factor);
        grouped.push(factor);
        grouped.extend_from_slice(&shape[axis + 1..]);
        self.reshape(&grouped).mean_axes(&[axis + 1], false)
    }
}

/// `x @ w + b` for `x: (B, in)`, `w: (in, out)`, `b: (out)`.
pub fn linear(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Tensor {
    let y = x.matmul(w);
    match b {
        Some(b) => &y + b,
        None => y,
    }
}

/// 2-D cross-correlation of `x: (N, C, H, W)` with `w: (O, C, kh, kw)`.
pub fn conv2d(x: &Tensor, w: &Tensor, b: Option<&Tensor>, stride: (usize, usize), padding: (usize, usize)) -> Tensor {
    let (n, c, h, wd) = dims4(x);
    let (o, wc, kh, kw) = dims4(w);
    assert_eq!(c, wc, "conv2d channel mismatch: input {c}, weight {wc}");
    assert!(h + 2 * padding.0 >= kh && wd + 2 * padding.1 >= kw, "conv2d kernel larger than padded input");
    let geom = ConvGeometry {
        n,
        c,
        h,
        w: wd,
        kh,
        kw,
        sh: stride.0,
        sw: stride.1,
        ph: padding.0,
        pw: padding.1,
    };
    let (ho, wo) = (geom.out_h(), geom.out_w());
    let cols = x.im2col(geom);
    let y = w.reshape(&[o, c * kh * kw]).matmul(&cols);
    let y = if n == 1 {
        y.reshape(&[1, o, ho, wo])
    } else {
        y.reshape(&[o, n, ho, wo]).permute(&[1, 0, 2, 3])
    };
    match b {
        Some(b) => &y + &b.reshape(&[1, o, 1, 1]),
        None => y,
    }
}

fn dims4(t: &Tensor) -> (usize, usize, usize, usize) {
    let s = t.shape();
    assert_eq!(s.len(), 4, "expected a 4-D tensor, got {:?}", s);
    (s[0], s[1], s[2], s[3])
}

/// Mean cross-entropy of `logits: (B, K)` against integer targets.
pub fn cross_entropy(logits: &Tensor, targets: &[usize]) -> Tensor {
    assert_eq!(logits.rank(), 2);
    let (b, k) = (logits.dim(0), logits.dim(1));
    assert_eq!(b, targets.len(), "cross_entropy batch mismatch");
    let mut onehot = vec![0.0; b * k];
    for (i, &t) in targets.iter().enumerate() {
        assert!(t < k, "target {t} out of range {k}");
        onehot[i * k + t] = 1.0;
    }
    let picked = &logits.log_softmax(1) * &Tensor::from_vec(onehot, &[b, k]);
    -picked.sum_all().scale(1.0 / b.max(1) as f64)
}
