//! Per-layer forward/backward kernels over raw slices.

use super::tensor::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn new(cin: usize, h: usize, w: usize, kh: usize, kw: usize, stride: usize, pad: usize) -> Option<Self> {
        if h + 2 * pad < kh || w + 2 * pad < kw || stride == 0 {
            return None;
        }
        Some(Self {
            cin,
            h,
            w,
            kh,
            kw,
            stride,
            pad,
            oh: (h + 2 * pad - kh) / stride + 1,
            ow: (w + 2 * pad - kw) / stride + 1,
        })
    }

    /// 1×1, stride 1, no padding: the input plane is already the column matrix.
    pub fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    pub fn col_rows(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    pub fn col_cols(&self) -> usize {
        self.oh * self.ow
    }
}

/// Output columns `ox` whose input column `ox·stride + kx − pad` lies inside `[0, w)`.
fn valid_span(g: &ConvGeom, kx: usize) -> (usize, usize) {
    let lo = g.pad.saturating_sub(kx).div_ceil(g.stride);
    let hi = if g.w + g.pad > kx {
        ((g.w + g.pad - kx - 1) / g.stride + 1).min(g.ow)
    } else {
        0
    };
    (lo.min(hi), hi)
}

/// Unfold one `(c, h, w)` image into a `(c·kh·kw) × (oh·ow)` matrix.
pub(crate) fn im2col<T: Scalar>(x: &[T], g: &ConvGeom, col: &mut [T]) {
    let n = g.col_cols();
    for c in 0..g.cin {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let dst = &mut col[row * n..(row + 1) * n];
                let (lo, hi) = valid_span(g, kx);
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let out_row = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        out_row.fill(T::ZERO);
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    out_row[..lo].fill(T::ZERO);
                    out_row[hi..].fill(T::ZERO);
                    if lo < hi {
                        let x0 = lo * g.stride + kx - g.pad;
                        if g.stride == 1 {
                            out_row[lo..hi].copy_from_slice(&src[x0..x0 + hi - lo]);
                        } else {
                            for (o, &v) in out_row[lo..hi].iter_mut().zip(src[x0..].iter().step_by(g.stride)) {
                                *o = v;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add columns back into the image gradient.
pub(crate) fn col2im<T: Scalar>(col: &[T], g: &ConvGeom, dx: &mut [T]) {
    let n = g.col_cols();
    for c in 0..g.cin {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let src = &col[row * n..(row + 1) * n];
                let (lo, hi) = valid_span(g, kx);
                if lo >= hi {
                    continue;
                }
                let x0 = lo * g.stride + kx - g.pad;
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let seg = &src[oy * g.ow + lo..oy * g.ow + hi];
                    if g.stride == 1 {
                        for (d, &v) in dst[x0..x0 + hi - lo].iter_mut().zip(seg) {
                            *d += v;
                        }
                    } else {
                        for (d, &v) in dst[x0..].iter_mut().step_by(g.stride).zip(seg) {
                            *d += v;
                        }
                    }
                }
            }
        }
    }
}

/// `y[b] = W · col(x[b]) + bias` for every image in the batch.
pub(crate) fn conv2d_forward<T: Scalar>(
    x: &[T],
    batch: usize,
    g: &ConvGeom,
    weight: &[T],
    bias: Option<&[T]>,
    cout: usize,
    y: &mut [T],
) {
    let k = g.col_rows();
    let n = g.col_cols();
    let in_len = g.cin * g.h * g.w;
    let mut col = if g.is_pointwise() { Vec::new() } else { vec![T::ZERO; k * n] };
    for b in 0..batch {
        let xb = &x[b * in_len..(b + 1) * in_len];
        let yb = &mut y[b * cout * n..(b + 1) * cout * n];
        let cols: &[T] = if g.is_pointwise() {
            xb
        } else {
            im2col(xb, g, &mut col);
            &col
        };
        // SAFETY: weight is cout×k, cols is k×n, yb is cout×n, all row-major and disjoint.
        unsafe {
            T::gemm(
                cout,
                k,
                n,
                T::ONE,
                weight.as_ptr(),
                k as isize,
                1,
                cols.as_ptr(),
                n as isize,
                1,
                T::ZERO,
                yb.as_mut_ptr(),
                n as isize,
                1,
            );
        }
        if let Some(bias) = bias {
            for (co, &bv) in bias.iter().enumerate() {
                for v in &mut yb[co * n..(co + 1) * n] {
                    *v += bv;
                }
            }
        }
    }
}

/// Accumulates weight/bias gradients and, when `dx` is given, the input gradient.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward<T: Scalar>(
    x: &[T],
    batch: usize,
    g: &ConvGeom,
    weight: &[T],
    cout: usize,
    dy: &[T],
    dweight: &mut [T],
    mut dbias: Option<&mut [T]>,
    mut dx: Option<&mut [T]>,
) {
    let k = g.col_rows();
    let n = g.col_cols();
    let in_len = g.cin * g.h * g.w;
    let mut col = vec![T::ZERO; k * n];
    let mut dcol = vec![T::ZERO; k * n];
    for b in 0..batch {
        let xb = &x[b * in_len..(b + 1) * in_len];
        let dyb = &dy[b * cout * n..(b + 1) * cout * n];
        let cols: &[T] = if g.is_pointwise() {
            xb
        } else {
            im2col(xb, g, &mut col);
            &col
        };
        // SAFETY: dyb is cout×n; cols viewed transposed is n×k; dweight is cout×k.
        unsafe {
            T::gemm(
                cout,
                n,
                k,
                T::ONE,
                dyb.as_ptr(),
                n as isize,
                1,
                cols.as_ptr(),
                1,
                n as isize,
                T::ONE,
                dweight.as_mut_ptr(),
                k as isize,
                1,
            );
        }
        if let Some(db) = dbias.as_deref_mut() {
            for (co, acc) in db.iter_mut().enumerate() {
                let mut s = T::ZERO;
                for &v in &dyb[co * n..(co + 1) * n] {
                    s += v;
                }
                *acc += s;
            }
        }
        if let Some(dx) = dx.as_deref_mut() {
            let dxb = &mut dx[b * in_len..(b + 1) * in_len];
            if g.is_pointwise() {
                // SAFETY: weightᵀ is k×cout, dyb is cout×n, dxb is k×n (k == cin).
                unsafe {
                    T::gemm(
                        k,
                        cout,
                        n,
                        T::ONE,
                        weight.as_ptr(),
                        1,
                        k as isize,
                        dyb.as_ptr(),
                        n as isize,
                        1,
                        T::ONE,
                        dxb.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            } else {
                // SAFETY: as above, writing into the scratch column buffer.
                unsafe {
                    T::gemm(
                        k,
                        cout,
                        n,
                        T::ONE,
                        weight.as_ptr(),
                        1,
                        k as isize,
                        dyb.as_ptr(),
                        n as isize,
                        1,
                        T::ZERO,
                        dcol.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
                col2im(&dcol, g, dxb);
            }
        }
    }
}

/// Average pooling that excludes padded positions from the divisor.
pub(crate) fn avg_pool_forward<T: Scalar>(x: &[T], planes: usize, g: &ConvGeom, y: &mut [T]) {
    let (h, w, oh, ow) = (g.h, g.w, g.oh, g.ow);
    let rows: Vec<(usize, usize)> = (0..oh).map(|o| window(o, g.stride, g.pad, g.kh, h)).collect();
    let cols: Vec<(usize, usize)> = (0..ow).map(|o| window(o, g.stride, g.pad, g.kw, w)).collect();
    let col_scale: Vec<T> = cols.iter().map(|&(a, b)| T::from_f64(1.0 / (b - a) as f64)).collect();
    let mut acc = vec![T::ZERO; w];
    for p in 0..planes {
        let xp = &x[p * h * w..(p + 1) * h * w];
        let yp = &mut y[p * oh * ow..(p + 1) * oh * ow];
        for (oy, &(y0, y1)) in rows.iter().enumerate() {
            // column sums over the window rows, then window sums along the row
            acc.copy_from_slice(&xp[y0 * w..(y0 + 1) * w]);
            for iy in y0 + 1..y1 {
                for (a, &v) in acc.iter_mut().zip(&xp[iy * w..(iy + 1) * w]) {
                    *a += v;
                }
            }
            let row_scale = T::from_f64(1.0 / (y1 - y0) as f64);
            for ((o, &(x0, x1)), &cs) in yp[oy * ow..(oy + 1) * ow].iter_mut().zip(&cols).zip(&col_scale) {
                let mut s = T::ZERO;
                for &v in &acc[x0..x1] {
                    s += v;
                }
                *o = s * row_scale * cs;
            }
        }
    }
}

pub(crate) fn avg_pool_backward<T: Scalar>(dy: &[T], planes: usize, g: &ConvGeom, dx: &mut [T]) {
    let (h, w, oh, ow) = (g.h, g.w, g.oh, g.ow);
    let rows: Vec<(usize, usize)> = (0..oh).map(|o| window(o, g.stride, g.pad, g.kh, h)).collect();
    let cols: Vec<(usize, usize)> = (0..ow).map(|o| window(o, g.stride, g.pad, g.kw, w)).collect();
    let col_scale: Vec<T> = cols.iter().map(|&(a, b)| T::from_f64(1.0 / (b - a) as f64)).collect();
    let mut spread = vec![T::ZERO; w];
    for p in 0..planes {
        let dyp = &dy[p * oh * ow..(p + 1) * oh * ow];
        let dxp = &mut dx[p * h * w..(p + 1) * h * w];
        for (oy, &(y0, y1)) in rows.iter().enumerate() {
            let row_scale = T::from_f64(1.0 / (y1 - y0) as f64);
            spread.fill(T::ZERO);
            for ((&d, &(x0, x1)), &cs) in dyp[oy * ow..(oy + 1) * ow].iter().zip(&cols).zip(&col_scale) {
                let share = d * row_scale * cs;
                for v in &mut spread[x0..x1] {
                    *v += share;
                }
            }
            for iy in y0..y1 {
                for (o, &v) in dxp[iy * w..(iy + 1) * w].iter_mut().zip(&spread) {
                    *o += v;
                }
            }
        }
    }
}

#[inline]
fn window(o: usize, stride: usize, pad: usize, k: usize, size: usize) -> (usize, usize) {
    let start = (o * stride) as isize - pad as isize;
    let end = (start + k as isize).min(size as isize);
    (start.max(0) as usize, end as usize)
}

/// Batch-statistics normalization; returns `(xhat, inv_std per channel)`.
pub(crate) fn batch_norm_forward<T: Scalar>(
    x: &[T],
    batch: usize,
    channels: usize,
    plane: usize,
    eps: f64,
    y: &mut [T],
) -> Vec<T> {
    let count = (batch * plane) as f64;
    let mut inv_stds = Vec::with_capacity(channels);
    for c in 0..channels {
        let slices = || (0..batch).map(|b| (b * channels + c) * plane);
        let sum: f64 = slices().map(|off| sum_f64(&x[off..off + plane], 0.0)).sum();
        let mean = sum / count;
        let sq: f64 = slices().map(|off| sum_sq_dev(&x[off..off + plane], mean)).sum();
        let inv_std = 1.0 / (sq / count + eps).sqrt();
        let (m, s) = (T::from_f64(mean), T::from_f64(inv_std));
        for off in slices() {
            for (o, &v) in y[off..off + plane].iter_mut().zip(&x[off..off + plane]) {
                *o = (v - m) * s;
            }
        }
        inv_stds.push(s);
    }
    inv_stds
}

const LANES: usize = 8;

/// `Σ (x − shift)` in double precision with fixed-lane partial sums.
fn sum_f64<T: Scalar>(xs: &[T], shift: f64) -> f64 {
    let mut acc = [0.0f64; LANES];
    let chunks = xs.chunks_exact(LANES);
    let rest = chunks.remainder();
    for ch in chunks {
        for (a, &v) in acc.iter_mut().zip(ch) {
            *a += v.to_f64() - shift;
        }
    }
    acc.iter().sum::<f64>() + rest.iter().map(|v| v.to_f64() - shift).sum::<f64>()
}

/// `Σ (x − mean)²` in double precision.
fn sum_sq_dev<T: Scalar>(xs: &[T], mean: f64) -> f64 {
    let mut acc = [0.0f64; LANES];
    let chunks = xs.chunks_exact(LANES);
    let rest = chunks.remainder();
    for ch in chunks {
        for (a, &v) in acc.iter_mut().zip(ch) {
            let d = v.to_f64() - mean;
            *a += d * d;
        }
    }
    acc.iter().sum::<f64>() + rest.iter().map(|v| (v.to_f64() - mean).powi(2)).sum::<f64>()
}

/// `(Σ a, Σ a·b)` in double precision.
fn sum_and_dot<T: Scalar>(a: &[T], b: &[T]) -> (f64, f64) {
    let mut s = [0.0f64; LANES];
    let mut d = [0.0f64; LANES];
    let n = a.len() / LANES * LANES;
    for (ca, cb) in a[..n].chunks_exact(LANES).zip(b[..n].chunks_exact(LANES)) {
        for l in 0..LANES {
            let x = ca[l].to_f64();
            s[l] += x;
            d[l] += x * cb[l].to_f64();
        }
    }
    let mut sum = s.iter().sum::<f64>();
    let mut dot = d.iter().sum::<f64>();
    for (x, y) in a[n..].iter().zip(&b[n..]) {
        sum += x.to_f64();
        dot += x.to_f64() * y.to_f64();
    }
    (sum, dot)
}

/// `dx = inv_std/M · (M·dy − Σdy − xhat·Σ(dy·xhat))` per channel.
pub(crate) fn batch_norm_backward<T: Scalar>(
    xhat: &[T],
    inv_std: &[T],
    dy: &[T],
    batch: usize,
    channels: usize,
    plane: usize,
    dx: &mut [T],
) {
    let m = (batch * plane) as f64;
    for c in 0..channels {
        let (mut sum_dy, mut sum_dy_xhat) = (0.0f64, 0.0f64);
        for b in 0..batch {
            let off = (b * channels + c) * plane;
            let (s, d) = sum_and_dot(&dy[off..off + plane], &xhat[off..off + plane]);
            sum_dy += s;
            sum_dy_xhat += d;
        }
        let mean_dy = T::from_f64(sum_dy / m);
        let mean_dy_xhat = T::from_f64(sum_dy_xhat / m);
        let s = inv_std[c];
        for b in 0..batch {
            let off = (b * channels + c) * plane;
            for ((o, &g), &xh) in dx[off..off + plane].iter_mut().zip(&dy[off..off + plane]).zip(&xhat[off..off + plane]) {
                *o += s * (g - mean_dy - xh * mean_dy_xhat);
            }
        }
    }
}

/// `y = x · Wᵀ + bias` with `x: rows×din`, `W: dout×din`.
pub(crate) fn linear_forward<T: Scalar>(
    x: &[T],
    rows: usize,
    din: usize,
    weight: &[T],
    bias: Option<&[T]>,
    dout: usize,
    y: &mut [T],
) {
    // SAFETY: x is rows×din, Wᵀ is din×dout via strides, y is rows×dout.
    unsafe {
        T::gemm(
            rows,
            din,
            dout,
            T::ONE,
            x.as_ptr(),
            din as isize,
            1,
            weight.as_ptr(),
            1,
            din as isize,
            T::ZERO,
            y.as_mut_ptr(),
            dout as isize,
            1,
        );
    }
    if let Some(bias) = bias {
        for r in 0..rows {
            for (o, &bv) in y[r * dout..(r + 1) * dout].iter_mut().zip(bias) {
                *o += bv;
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn linear_backward<T: Scalar>(
    x: &[T],
    rows: usize,
    din: usize,
    weight: &[T],
    dout: usize,
    dy: &[T],
    dweight: &mut [T],
    dbias: Option<&mut [T]>,
    dx: Option<&mut [T]>,
) {
    // SAFETY: dyᵀ is dout×rows, x is rows×din, dweight is dout×din.
    unsafe {
        T::gemm(
            dout,
            rows,
            din,
            T::ONE,
            dy.as_ptr(),
            1,
            dout as isize,
            x.as_ptr(),
            din as isize,
            1,
            T::ONE,
            dweight.as_mut_ptr(),
            din as isize,
            1,
        );
    }
    if let Some(db) = dbias {
        for r in 0..rows {
            for (acc, &g) in db.iter_mut().zip(&dy[r * dout..(r + 1) * dout]) {
                *acc += g;
            }
        }
    }
    if let Some(dx) = dx {
        // SAFETY: dy is rows×dout, W is dout×din, dx is rows×din.
        unsafe {
            T::gemm(
                rows,
                dout,
                din,
                T::ONE,
                dy.as_ptr(),
                dout as isize,
                1,
                weight.as_ptr(),
                din as isize,
                1,
                T::ONE,
                dx.as_mut_ptr(),
                din as isize,
                1,
            );
        }
    }
}
