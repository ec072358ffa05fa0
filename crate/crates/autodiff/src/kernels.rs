//! Numeric kernels on flat row-major buffers. No graph bookkeeping here.

pub(crate) fn contiguous_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![0; shape.len()];
    let mut acc = 1;
    for d in (0..shape.len()).rev() {
        strides[d] = acc;
        acc *= shape[d];
    }
    strides
}

/// Numpy-style broadcast of two shapes.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides of `shape` viewed as broadcast into `out_shape` (zero on broadcast
/// axes). `shape` must be broadcast-compatible with `out_shape`.
pub(crate) fn broadcast_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let rank = out_shape.len();
    let own = contiguous_strides(shape);
    let mut strides = vec![0; rank];
    for i in 0..shape.len() {
        let o = i + rank - shape.len();
        strides[o] = if shape[i] == 1 { 0 } else { own[i] };
    }
    strides
}

/// Visits every element of `out_shape` in row-major order, passing the
/// offsets into two strided operands.
fn for_each_offset2(
    out_shape: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let n: usize = out_shape.iter().product();
    if n == 0 {
        return;
    }
    let rank = out_shape.len();
    if rank == 0 {
        f(0, 0, 0);
        return;
    }
    let inner = out_shape[rank - 1];
    let (ia, ib) = (sa[rank - 1], sb[rank - 1]);
    let outer = n / inner;
    let mut idx = vec![0usize; rank - 1];
    let (mut oa, mut ob) = (0usize, 0usize);
    let mut out = 0usize;
    for _ in 0..outer {
        for i in 0..inner {
            f(out + i, oa + i * ia, ob + i * ib);
        }
        out += inner;
        for d in (0..rank - 1).rev() {
            idx[d] += 1;
            oa += sa[d];
            ob += sb[d];
            if idx[d] < out_shape[d] {
                break;
            }
            oa -= sa[d] * out_shape[d];
            ob -= sb[d] * out_shape[d];
            idx[d] = 0;
        }
    }
}

pub(crate) fn binary(
    a: &[f64],
    a_shape: &[usize],
    b: &[f64],
    b_shape: &[usize],
    out_shape: &[usize],
    f: impl Fn(f64, f64) -> f64,
) -> Vec<f64> {
    if a_shape == b_shape {
        return a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect();
    }
    if b.len() == 1 {
        let y = b[0];
        if a_shape == out_shape {
            return a.iter().map(|&x| f(x, y)).collect();
        }
    }
    if a.len() == 1 {
        let x = a[0];
        if b_shape == out_shape {
            return b.iter().map(|&y| f(x, y)).collect();
        }
    }
    let n: usize = out_shape.iter().product();
    let mut out = vec![0.0; n];
    let sa = broadcast_strides(a_shape, out_shape);
    let sb = broadcast_strides(b_shape, out_shape);
    for_each_offset2(out_shape, &sa, &sb, |o, ia, ib| {
        out[o] = f(a[ia], b[ib]);
    });
    out
}

/// Sums `x` (shape `in_shape`) down to `target` by reducing broadcast axes.
pub(crate) fn sum_to(x: &[f64], in_shape: &[usize], target: &[usize]) -> Vec<f64> {
    let n: usize = target.iter().product();
    let mut out = vec![0.0; n];
    if in_shape == target {
        out.copy_from_slice(x);
        return out;
    }
    let st = broadcast_strides(target, in_shape);
    let unit = contiguous_strides(in_shape);
    for_each_offset2(in_shape, &unit, &st, |_, ix, it| {
        out[it] += x[ix];
    });
    out
}

pub(crate) fn broadcast_to(x: &[f64], in_shape: &[usize], target: &[usize]) -> Vec<f64> {
    let n: usize = target.iter().product();
    let mut out = vec![0.0; n];
    let sx = broadcast_strides(in_shape, target);
    let zero = vec![0; target.len()];
    for_each_offset2(target, &sx, &zero, |o, ix, _| {
        out[o] = x[ix];
    });
    out
}

pub(crate) fn permute(x: &[f64], shape: &[usize], axes: &[usize]) -> (Vec<f64>, Vec<usize>) {
    let in_strides = contiguous_strides(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let perm_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let n = x.len();
    let mut out = vec![0.0; n];
    let zero = vec![0; out_shape.len()];
    for_each_offset2(&out_shape, &perm_strides, &zero, |o, ix, _| {
        out[o] = x[ix];
    });
    (out, out_shape)
}

/// `out = op(a) * op(b)` where `op` optionally transposes a row-major matrix.
#[allow(clippy::too_many_arguments)]
pub(crate) fn matmul(
    a: &[f64],
    a_rows: usize,
    a_cols: usize,
    ta: bool,
    b: &[f64],
    b_rows: usize,
    b_cols: usize,
    tb: bool,
) -> (Vec<f64>, usize, usize) {
    let (m, k) = if ta { (a_cols, a_rows) } else { (a_rows, a_cols) };
    let (k2, n) = if tb { (b_cols, b_rows) } else { (b_rows, b_cols) };
    assert_eq!(k, k2, "matmul inner dimension mismatch: {k} vs {k2}");
    let mut out = vec![0.0; m * n];
    if m == 0 || n == 0 {
        return (out, m, n);
    }
    let (rsa, csa) = if ta { (1, a_cols as isize) } else { (a_cols as isize, 1) };
    let (rsb, csb) = if tb { (1, b_cols as isize) } else { (b_cols as isize, 1) };
    // SAFETY: pointers and strides describe the full extents of `a`, `b` and
    // `out`, whose lengths were checked by the caller's shapes.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            0.0,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    (out, m, n)
}

/// Geometry of a 2-D sliding window over `(N, C, H, W)` input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub ph: usize,
    pub pw: usize,
}

impl ConvGeometry {
    pub fn out_h(&self) -> usize {
        (self.h + 2 * self.ph - self.kh) / self.sh + 1
    }

    pub fn out_w(&self) -> usize {
        (self.w + 2 * self.pw - self.kw) / self.sw + 1
    }

    pub fn col_rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    pub fn col_cols(&self) -> usize {
        self.n * self.out_h() * self.out_w()
    }
}

/// Output positions `o` in `0..out_len` whose tap `o*stride + k - pad` lands
/// inside `0..in_len`. The valid set is always one contiguous range.
fn valid_span(k: usize, pad: usize, stride: usize, in_len: usize, out_len: usize) -> (usize, usize) {
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    let hi = if in_len + pad > k { ((in_len + pad - k - 1) / stride + 1).min(out_len) } else { 0 };
    (lo.min(hi), hi)
}

/// Unfolds patches into a `(C*kh*kw, N*Ho*Wo)` matrix.
pub(crate) fn im2col(x: &[f64], g: &ConvGeometry) -> Vec<f64> {
    let (ho, wo) = (g.out_h(), g.out_w());
    let cols = g.col_cols();
    let plane = g.h * g.w;
    let mut out = vec![0.0; g.col_rows() * cols];
    for c in 0..g.c {
        for ki in 0..g.kh {
            let (oh_lo, oh_hi) = valid_span(ki, g.ph, g.sh, g.h, ho);
            for kj in 0..g.kw {
                let (ow_lo, ow_hi) = valid_span(kj, g.pw, g.sw, g.w, wo);
                if ow_lo == ow_hi {
                    continue;
                }
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut out[row * cols..(row + 1) * cols];
                for n in 0..g.n {
                    let src = &x[(n * g.c + c) * plane..(n * g.c + c + 1) * plane];
                    for oh in oh_lo..oh_hi {
                        let ih = oh * g.sh + ki - g.ph;
                        let src_row = &src[ih * g.w..(ih + 1) * g.w];
                        let base = (n * ho + oh) * wo;
                        let iw0 = ow_lo * g.sw + kj - g.pw;
                        let d = &mut dst[base + ow_lo..base + ow_hi];
                        if g.sw == 1 {
                            d.copy_from_slice(&src_row[iw0..iw0 + d.len()]);
                        } else {
                            for (i, v) in d.iter_mut().enumerate() {
                                *v = src_row[iw0 + i * g.sw];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`im2col`]: scatters-and-adds columns back to `(N, C, H, W)`.
pub(crate) fn col2im(col: &[f64], g: &ConvGeometry) -> Vec<f64> {
    let (ho, wo) = (g.out_h(), g.out_w());
    let cols = g.col_cols();
    let plane = g.h * g.w;
    let mut out = vec![0.0; g.n * g.c * plane];
    for c in 0..g.c {
        for ki in 0..g.kh {
            let (oh_lo, oh_hi) = valid_span(ki, g.ph, g.sh, g.h, ho);
            for kj in 0..g.kw {
                let (ow_lo, ow_hi) = valid_span(kj, g.pw, g.sw, g.w, wo);
                if ow_lo == ow_hi {
                    continue;
                }
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &col[row * cols..(row + 1) * cols];
                for n in 0..g.n {
                    let dst = &mut out[(n * g.c + c) * plane..(n * g.c + c + 1) * plane];
                    for oh in oh_lo..oh_hi {
                        let ih = oh * g.sh + ki - g.ph;
                        let dst_row = &mut dst[ih * g.w..(ih + 1) * g.w];
                        let base = (n * ho + oh) * wo;
                        let iw0 = ow_lo * g.sw + kj - g.pw;
                        let s = &src[base + ow_lo..base + ow_hi];
                        if g.sw == 1 {
                            for (d, v) in dst_row[iw0..iw0 + s.len()].iter_mut().zip(s) {
                                *d += v;
                            }
                        } else {
                            for (i, v) in s.iter().enumerate() {
                                dst_row[iw0 + i * g.sw] += v;
                            }
                        }
                    }
                }
            }
        }
    }
    out
}
