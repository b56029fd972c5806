//! Forward and backward kernels on raw row-major buffers.
//!
//! Every kernel produces bitwise identical results for a given input,
//! independent of the rayon thread count: reductions are split into
//! fixed-size row chunks whose partial sums are combined in order.

use rayon::prelude::*;

use super::Element;
use crate::error::{Error, Result};

const ROW_BLOCK: usize = 256;
const REDUCE_ROWS: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Padding {
    #[default]
    Same,
    Valid,
}

/// Resolved geometry of one 1D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub in_len: usize,
    pub out_len: usize,
    pub cin: usize,
    pub cout: usize,
    pub width: usize,
    pub dilation: usize,
    pub pad_left: usize,
}

pub fn effective_width(width: usize, dilation: usize) -> usize {
    (width - 1) * dilation + 1
}

impl ConvGeom {
    pub fn new(
        batch: usize,
        in_len: usize,
        cin: usize,
        cout: usize,
        width: usize,
        dilation: usize,
        padding: Padding,
    ) -> Result<Self> {
        if width == 0 || dilation == 0 {
            return Err(Error::Parameter(format!(
                "kernel width ({width}) and dilation ({dilation}) must be positive"
            )));
        }
        let eff = effective_width(width, dilation);
        let (out_len, pad_left) = match padding {
            // An odd total pad puts the extra zero on the right.
            Padding::Same => (in_len, (eff - 1) / 2),
            Padding::Valid => {
                if in_len < eff {
                    return Err(Error::InsufficientLength {
                        len: in_len,
                        min: eff,
                    });
                }
                (in_len - eff + 1, 0)
            }
        };
        Ok(Self {
            batch,
            in_len,
            out_len,
            cin,
            cout,
            width,
            dilation,
            pad_left,
        })
    }

    #[inline]
    fn source(&self, out_pos: usize, tap: usize) -> Option<usize> {
        let src = (out_pos + tap * self.dilation) as isize - self.pad_left as isize;
        (src >= 0 && (src as usize) < self.in_len).then_some(src as usize)
    }
}

#[inline]
fn axpy<F: Element>(acc: &mut [F], a: F, x: &[F]) {
    for (o, &v) in acc.iter_mut().zip(x) {
        *o += a * v;
    }
}

/// Calls `$f::<N>` for common small channel counts so the inner
/// per-row loops run on fixed-size arrays; other sizes use `N = 0`.
macro_rules! dispatch_width {
    ($n:expr, $f:ident [$($g:tt)*], ($($arg:expr),*)) => {
        match $n {
            1 => $f::<F, 1, $($g)*>($($arg),*),
            2 => $f::<F, 2, $($g)*>($($arg),*),
            3 => $f::<F, 3, $($g)*>($($arg),*),
            4 => $f::<F, 4, $($g)*>($($arg),*),
            5 => $f::<F, 5, $($g)*>($($arg),*),
            6 => $f::<F, 6, $($g)*>($($arg),*),
            8 => $f::<F, 8, $($g)*>($($arg),*),
            12 => $f::<F, 12, $($g)*>($($arg),*),
            16 => $f::<F, 16, $($g)*>($($arg),*),
            24 => $f::<F, 24, $($g)*>($($arg),*),
            32 => $f::<F, 32, $($g)*>($($arg),*),
            64 => $f::<F, 64, $($g)*>($($arg),*),
            _ => $f::<F, 0, $($g)*>($($arg),*),
        }
    };
}

/// `acc += a * x` where `N`, when nonzero, is the known slice length.
#[inline(always)]
fn axpy_n<F: Element, const N: usize>(acc: &mut [F], a: F, x: &[F]) {
    if N == 0 {
        axpy(acc, a, x);
    } else {
        let acc: &mut [F; N] = acc.try_into().unwrap();
        let x: &[F; N] = x.try_into().unwrap();
        for i in 0..N {
            acc[i] += a * x[i];
        }
    }
}

/// Correlates `src` (`[b, src_len, cs]`) with `taps` (`[width, cs, n]`) into
/// `out` rows of width `n`. `offset(lo, k)` maps an output position and tap
/// to a source position.
#[allow(clippy::too_many_arguments)]
fn correlate_rows<F: Element, const N: usize, O: Fn(usize, usize) -> Option<usize> + Sync>(
    out: &mut [F],
    src: &[F],
    taps: &[F],
    bias: Option<&[F]>,
    (out_len, src_len, cs, n, width): (usize, usize, usize, usize, usize),
    offset: &O,
) {
    let kstride = cs * n;
    out.par_chunks_mut(ROW_BLOCK * n).enumerate().for_each(|(blk, chunk)| {
        let rows = chunk.len() / n;
        let mut r = 0;
        while r < rows {
            let row = blk * ROW_BLOCK + r;
            let (b, lo) = (row / out_len, row % out_len);
            let sb = &src[b * src_len * cs..(b + 1) * src_len * cs];
            // Four rows of one batch item whose taps are all in range run as
            // independent accumulation chains.
            if N > 0 && r + 4 <= rows && lo + 4 <= out_len && (0..width).all(|k| {
                matches!((offset(lo, k), offset(lo + 3, k)), (Some(a), Some(z)) if z == a + 3)
            }) {
                let mut a = [[F::zero(); N]; 4];
                if let Some(bias) = bias {
                    for acc in a.iter_mut() {
                        acc.copy_from_slice(bias);
                    }
                }
                for k in 0..width {
                    let sp = offset(lo, k).unwrap();
                    let wk = &taps[k * kstride..(k + 1) * kstride];
                    let s4 = &sb[sp * cs..(sp + 4) * cs];
                    for (c, wc) in wk.chunks_exact(N).enumerate() {
                        let v = [s4[c], s4[cs + c], s4[2 * cs + c], s4[3 * cs + c]];
                        for i in 0..N {
                            a[0][i] += v[0] * wc[i];
                            a[1][i] += v[1] * wc[i];
                            a[2][i] += v[2] * wc[i];
                            a[3][i] += v[3] * wc[i];
                        }
                    }
                }
                for (q, acc) in a.iter().enumerate() {
                    chunk[(r + q) * n..(r + q + 1) * n].copy_from_slice(acc);
                }
                r += 4;
                continue;
            }
            let acc = &mut chunk[r * n..(r + 1) * n];
            match bias {
                Some(bias) => acc.copy_from_slice(bias),
                None => acc.fill(F::zero()),
            }
            for k in 0..width {
                let Some(sp) = offset(lo, k) else { continue };
                let sr = &sb[sp * cs..(sp + 1) * cs];
                let wk = &taps[k * kstride..(k + 1) * kstride];
                for (c, &v) in sr.iter().enumerate() {
                    axpy(acc, v, &wk[c * n..(c + 1) * n]);
                }
            }
            r += 1;
        }
    });
}

/// `y[b, l, co] = bias[co] + sum_k sum_ci x[b, l + k*d - pad, ci] * w[k, ci, co]`
pub fn conv1d_forward<F: Element>(x: &[F], w: &[F], bias: Option<&[F]>, g: &ConvGeom) -> Vec<F> {
    let mut out = vec![F::zero(); g.batch * g.out_len * g.cout];
    let dims = (g.out_len, g.in_len, g.cin, g.cout, g.width);
    let offset = |lo: usize, k: usize| g.source(lo, k);
    dispatch_width!(g.cout, correlate_rows[_], (&mut out, x, w, bias, dims, &offset));
    out
}

pub fn conv1d_backward_input<F: Element>(dy: &[F], w: &[F], g: &ConvGeom) -> Vec<F> {
    let mut dx = vec![F::zero(); g.batch * g.in_len * g.cin];
    // Transposed taps `[k, co, ci]` turn the input gradient into another correlation.
    let mut wt = vec![F::zero(); w.len()];
    for k in 0..g.width {
        for ci in 0..g.cin {
            for co in 0..g.cout {
                wt[(k * g.cout + co) * g.cin + ci] = w[(k * g.cin + ci) * g.cout + co];
            }
        }
    }
    let dims = (g.in_len, g.out_len, g.cout, g.cin, g.width);
    let offset = |li: usize, k: usize| {
        let lo = (li + g.pad_left) as isize - (k * g.dilation) as isize;
        (lo >= 0 && (lo as usize) < g.out_len).then_some(lo as usize)
    };
    dispatch_width!(g.cin, correlate_rows[_], (&mut dx, dy, &wt, None, dims, &offset));
    dx
}

fn params_partials<F: Element, const N: usize>(x: &[F], dy: &[F], g: &ConvGeom) -> Vec<(Vec<F>, Vec<F>)> {
    let wlen = g.width * g.cin * g.cout;
    let (cin, cout) = (g.cin, g.cout);
    dy.par_chunks(REDUCE_ROWS * cout)
        .enumerate()
        .map(|(blk, chunk)| {
            let mut dw = vec![F::zero(); wlen];
            let mut db = vec![F::zero(); cout];
            for dyr in chunk.chunks(cout) {
                axpy_n::<F, N>(&mut db, F::one(), dyr);
            }
            // Split the chunk at batch boundaries, then give each tap the
            // contiguous output range whose source lies inside the input.
            let first = blk * REDUCE_ROWS;
            let last = first + chunk.len() / cout;
            let mut row = first;
            while row < last {
                let b = row / g.out_len;
                let seg_end = ((b + 1) * g.out_len).min(last);
                let (lo_a, lo_b) = (row - b * g.out_len, seg_end - b * g.out_len);
                let xb = &x[b * g.in_len * cin..(b + 1) * g.in_len * cin];
                let dyb = &chunk[(row - first) * cout..(seg_end - first) * cout];
                for k in 0..g.width {
                    let shift = (k * g.dilation) as isize - g.pad_left as isize;
                    let lo_min = (-shift).max(lo_a as isize) as usize;
                    let lo_max = ((g.in_len as isize - shift).min(lo_b as isize)).max(lo_min as isize) as usize;
                    for ci in 0..cin {
                        let dwk = &mut dw[(k * cin + ci) * cout..(k * cin + ci + 1) * cout];
                        if N == 0 {
                            for lo in lo_min..lo_max {
                                let xv = xb[(lo as isize + shift) as usize * cin + ci];
                                axpy(dwk, xv, &dyb[(lo - lo_a) * cout..(lo - lo_a + 1) * cout]);
                            }
                        } else {
                            let mut acc = [[F::zero(); N]; 4];
                            let xs = |lo: usize| xb[(lo as isize + shift) as usize * cin + ci];
                            let ds = |lo: usize| &dyb[(lo - lo_a) * N..(lo - lo_a + 1) * N];
                            let mut lo = lo_min;
                            while lo + 4 <= lo_max {
                                let v = [xs(lo), xs(lo + 1), xs(lo + 2), xs(lo + 3)];
                                let d = &dyb[(lo - lo_a) * N..(lo - lo_a + 4) * N];
                                for i in 0..N {
                                    acc[0][i] += v[0] * d[i];
                                    acc[1][i] += v[1] * d[N + i];
                                    acc[2][i] += v[2] * d[2 * N + i];
                                    acc[3][i] += v[3] * d[3 * N + i];
                                }
                                lo += 4;
                            }
                            while lo < lo_max {
                                let (v, d) = (xs(lo), ds(lo));
                                for i in 0..N {
                                    acc[0][i] += v * d[i];
                                }
                                lo += 1;
                            }
                            for i in 0..N {
                                dwk[i] += (acc[0][i] + acc[1][i]) + (acc[2][i] + acc[3][i]);
                            }
                        }
                    }
                }
                row = seg_end;
            }
            (dw, db)
        })
        .collect()
}

/// Returns `(d_weight, d_bias)`.
pub fn conv1d_backward_params<F: Element>(x: &[F], dy: &[F], g: &ConvGeom) -> (Vec<F>, Vec<F>) {
    let partials = dispatch_width!(g.cout, params_partials[], (x, dy, g));
    let mut dw = vec![F::zero(); g.width * g.cin * g.cout];
    let mut db = vec![F::zero(); g.cout];
    for (pw, pb) in partials {
        axpy(&mut dw, F::one(), &pw);
        axpy(&mut db, F::one(), &pb);
    }
    (dw, db)
}

/// Non-overlapping max pooling; returns the pooled values and the in-window
/// offset of the first maximal element of every output.
pub fn max_pool_forward<F: Element>(
    x: &[F],
    (b, l, c): (usize, usize, usize),
    window: usize,
) -> (Vec<F>, Vec<u32>) {
    let out_len = l / window;
    let mut out = vec![F::zero(); b * out_len * c];
    let mut arg = vec![0u32; b * out_len * c];
    out.par_chunks_mut(out_len * c)
        .zip(arg.par_chunks_mut(out_len * c))
        .enumerate()
        .for_each(|(bi, (ob, ab))| {
            let xb = &x[bi * l * c..(bi + 1) * l * c];
            for j in 0..out_len {
                let base = j * window;
                let orow = &mut ob[j * c..(j + 1) * c];
                let arow = &mut ab[j * c..(j + 1) * c];
                orow.copy_from_slice(&xb[base * c..(base + 1) * c]);
                arow.fill(0);
                for m in 1..window {
                    let xr = &xb[(base + m) * c..(base + m + 1) * c];
                    for ch in 0..c {
                        if xr[ch] > orow[ch] {
                            orow[ch] = xr[ch];
                            arow[ch] = m as u32;
                        }
                    }
                }
            }
        });
    (out, arg)
}

pub fn max_pool_backward<F: Element>(
    dy: &[F],
    arg: &[u32],
    (b, l, c): (usize, usize, usize),
    window: usize,
) -> Vec<F> {
    let out_len = l / window;
    let mut dx = vec![F::zero(); b * l * c];
    for bi in 0..b {
        for j in 0..out_len {
            for ch in 0..c {
                let o = (bi * out_len + j) * c + ch;
                let src = j * window + arg[o] as usize;
                dx[(bi * l + src) * c + ch] += dy[o];
            }
        }
    }
    dx
}

pub fn avg_pool_out_len(l: usize, window: usize, stride: usize) -> usize {
    (l - window) / stride + 1
}

pub fn avg_pool_forward<F: Element>(
    x: &[F],
    (b, l, c): (usize, usize, usize),
    window: usize,
    stride: usize,
) -> Vec<F> {
    let out_len = avg_pool_out_len(l, window, stride);
    let scale = F::one() / F::lit(window as f64);
    let mut out = vec![F::zero(); b * out_len * c];
    out.par_chunks_mut(c).enumerate().for_each(|(row, orow)| {
        let (bi, j) = (row / out_len, row % out_len);
        let start = bi * l + j * stride;
        for m in 0..window {
            axpy(orow, F::one(), &x[(start + m) * c..(start + m + 1) * c]);
        }
        for v in orow.iter_mut() {
            *v *= scale;
        }
    });
    out
}

pub fn avg_pool_backward<F: Element>(
    dy: &[F],
    (b, l, c): (usize, usize, usize),
    window: usize,
    stride: usize,
) -> Vec<F> {
    let out_len = avg_pool_out_len(l, window, stride);
    let scale = F::one() / F::lit(window as f64);
    let mut dx = vec![F::zero(); b * l * c];
    for bi in 0..b {
        for j in 0..out_len {
            let dyr = &dy[(bi * out_len + j) * c..(bi * out_len + j + 1) * c];
            let start = bi * l + j * stride;
            for m in 0..window {
                axpy(&mut dx[(start + m) * c..(start + m + 1) * c], scale, dyr);
            }
        }
    }
    dx
}

pub fn upsample_forward<F: Element>(x: &[F], (b, l, c): (usize, usize, usize), factor: usize) -> Vec<F> {
    let mut out = Vec::with_capacity(b * l * factor * c);
    for row in x.chunks(c.max(1)).take(b * l) {
        for _ in 0..factor {
            out.extend_from_slice(row);
        }
    }
    out
}

pub fn upsample_backward<F: Element>(dy: &[F], (b, l, c): (usize, usize, usize), factor: usize) -> Vec<F> {
    let mut dx = vec![F::zero(); b * l * c];
    for (i, drow) in dx.chunks_mut(c).enumerate() {
        for m in 0..factor {
            let r = i * factor + m;
            axpy(drow, F::one(), &dy[r * c..(r + 1) * c]);
        }
    }
    dx
}

fn moments_n<F: Element, const N: usize>(x: &[F], c: usize) -> (Vec<F>, Vec<F>) {
    let rows = x.len() / c;
    let n = F::lit(rows as f64);
    let mut mean = vec![F::zero(); c];
    for r in x.chunks_exact(c) {
        axpy_n::<F, N>(&mut mean, F::one(), r);
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![F::zero(); c];
    for r in x.chunks_exact(c) {
        for ch in 0..c {
            let d = r[ch] - mean[ch];
            var[ch] += d * d;
        }
    }
    var.iter_mut().for_each(|v| *v /= n);
    (mean, var)
}

/// Per-channel mean and biased variance over all `rows` of a `[rows, c]` buffer.
pub fn channel_moments<F: Element>(x: &[F], c: usize) -> (Vec<F>, Vec<F>) {
    dispatch_width!(c, moments_n[], (x, c))
}

/// `y = gamma * (x - mean) * inv_std + beta`; also returns the normalized input.
pub fn batch_norm_apply<F: Element>(
    x: &[F],
    c: usize,
    mean: &[F],
    inv_std: &[F],
    gamma: &[F],
    beta: &[F],
    keep_normalized: bool,
) -> (Vec<F>, Option<Vec<F>>) {
    let mut y = vec![F::zero(); x.len()];
    let mut xhat = keep_normalized.then(|| vec![F::zero(); x.len()]);
    let block = ROW_BLOCK * c;
    let body = |blk: usize, out: &mut [F], keep: Option<&mut [F]>| {
        let xs = &x[blk * block..blk * block + out.len()];
        match keep {
            Some(keep) => {
                for ((o, h), xr) in out.chunks_exact_mut(c).zip(keep.chunks_exact_mut(c)).zip(xs.chunks_exact(c)) {
                    for ch in 0..c {
                        h[ch] = (xr[ch] - mean[ch]) * inv_std[ch];
                        o[ch] = gamma[ch] * h[ch] + beta[ch];
                    }
                }
            }
            None => {
                for (o, xr) in out.chunks_exact_mut(c).zip(xs.chunks_exact(c)) {
                    for ch in 0..c {
                        o[ch] = gamma[ch] * ((xr[ch] - mean[ch]) * inv_std[ch]) + beta[ch];
                    }
                }
            }
        }
    };
    match xhat.as_mut() {
        Some(xh) => y
            .par_chunks_mut(block)
            .zip(xh.par_chunks_mut(block))
            .enumerate()
            .for_each(|(blk, (out, keep))| body(blk, out, Some(keep))),
        None => y
            .par_chunks_mut(block)
            .enumerate()
            .for_each(|(blk, out)| body(blk, out, None)),
    }
    (y, xhat)
}

pub fn crop_left(enc_len: usize, dec_len: usize) -> usize {
    (enc_len - dec_len) / 2
}

/// `[b, ld, cd] ++ crop([b, le, ce]) -> [b, ld, cd + ce]`, decoder channels first.
pub fn crop_concat_forward<F: Element>(
    enc: &[F],
    (b, le, ce): (usize, usize, usize),
    dec: &[F],
    (ld, cd): (usize, usize),
) -> Vec<F> {
    let left = crop_left(le, ld);
    let c = ce + cd;
    let mut out = vec![F::zero(); b * ld * c];
    for bi in 0..b {
        for l in 0..ld {
            let o = &mut out[(bi * ld + l) * c..(bi * ld + l + 1) * c];
            o[..cd].copy_from_slice(&dec[(bi * ld + l) * cd..(bi * ld + l + 1) * cd]);
            let e = bi * le + left + l;
            o[cd..].copy_from_slice(&enc[e * ce..(e + 1) * ce]);
        }
    }
    out
}
