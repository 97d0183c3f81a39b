//! Raw `f64` compute kernels.
//!
//! Everything in this file operates on flat slices; shape checking lives one
//! layer up in `ops`. Loop nests are written with a fixed accumulation order
//! so results are bit-identical between runs and machines: no runtime CPU
//! dispatch, no reassociation, reductions always walk ascending indices.
//! Parallel sections split work into disjoint output regions and keep all
//! reductions sequential.

use rayon::prelude::*;

/// Normalization epsilon shared by training-mode and frozen-mode norm.
pub const NORM_EPS: f64 = 1e-5;

// ---------------------------------------------------------------------------
// GEMM
// ---------------------------------------------------------------------------

/// `c += a * b` where `a` is `[m, k]`, `b` is `[k, n]`, `c` is `[m, n]`,
/// all row-major. Per output element the k-sum runs in ascending order.
pub fn gemm_nn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n..(i + 1) * n];
        for (kk, &aik) in a_row.iter().enumerate() {
            let b_row = &b[kk * n..(kk + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += aik * bv;
            }
        }
    }
}

/// `c += a * b^T` where `a` is `[m, k]`, `b` is `[n, k]`, `c` is `[m, n]`.
pub fn gemm_nt(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n..(i + 1) * n];
        for (j, cv) in c_row.iter_mut().enumerate() {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for (av, bv) in a_row.iter().zip(b_row) {
                acc += av * bv;
            }
            *cv += acc;
        }
    }
}

/// `c += a^T * b` where `a` is `[k, m]`, `b` is `[k, n]`, `c` is `[m, n]`.
pub fn gemm_tn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for kk in 0..k {
        let a_row = &a[kk * m..(kk + 1) * m];
        let b_row = &b[kk * n..(kk + 1) * n];
        for (i, &aki) in a_row.iter().enumerate() {
            let c_row = &mut c[i * n..(i + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += aki * bv;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

/// Resolved convolution geometry. Constructed (and validated) in `ops`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub dilation: usize,
    pub groups: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    /// Input channels per group.
    pub fn cg(&self) -> usize {
        self.cin / self.groups
    }
    /// Output channels per group.
    pub fn og(&self) -> usize {
        self.cout / self.groups
    }
    pub fn in_image(&self) -> usize {
        self.cin * self.h * self.w
    }
    pub fn out_image(&self) -> usize {
        self.cout * self.ho * self.wo
    }
    /// Rows of one group's im2col matrix.
    pub fn col_rows(&self) -> usize {
        self.cg() * self.kh * self.kw
    }
    pub fn out_plane(&self) -> usize {
        self.ho * self.wo
    }
}

/// Output extent of one spatial axis, or `None` when the (padded) input is
/// smaller than the dilated kernel.
pub fn conv_out_extent(input: usize, k: usize, stride: usize, pad: usize, dilation: usize) -> Option<usize> {
    let ext = (k - 1) * dilation + 1;
    let padded = input + 2 * pad;
    if padded < ext {
        return None;
    }
    Some((padded - ext) / stride + 1)
}

/// Gather one group's patch matrix from a single image.
///
/// `img` is `[cin, h, w]`; rows of `col` are `(channel, ky, kx)` for
/// channels `c0..c0+cc`, columns are output positions. Out-of-range taps
/// write zero.
fn im2col(img: &[f64], g: &ConvGeom, c0: usize, cc: usize, col: &mut [f64]) {
    let plane = g.out_plane();
    debug_assert_eq!(col.len(), cc * g.kh * g.kw * plane);
    let mut row = 0;
    for c in c0..c0 + cc {
        let chan = &img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let out_row = &mut col[row * plane..(row + 1) * plane];
                row += 1;
                let mut p = 0;
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky * g.dilation) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        out_row[p..p + g.wo].fill(0.0);
                        p += g.wo;
                        continue;
                    }
                    let src = &chan[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kx * g.dilation) as isize - g.pad as isize;
                        out_row[p] = if ix < 0 || ix >= g.w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                        p += 1;
                    }
                }
            }
        }
    }
}

/// Scatter-add of a patch-matrix gradient back onto one image (the adjoint
/// of `im2col`).
fn col2im_add(col: &[f64], g: &ConvGeom, c0: usize, cc: usize, img: &mut [f64]) {
    let plane = g.out_plane();
    let mut row = 0;
    for c in c0..c0 + cc {
        let chan = &mut img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let in_row = &col[row * plane..(row + 1) * plane];
                row += 1;
                let mut p = 0;
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky * g.dilation) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        p += g.wo;
                        continue;
                    }
                    let dst = &mut chan[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kx * g.dilation) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += in_row[p];
                        }
                        p += 1;
                    }
                }
            }
        }
    }
}

/// Batched convolution forward. Images are independent, so the batch is
/// processed in parallel into disjoint output slices.
pub fn conv2d_forward(x: &[f64], w: &[f64], b: &[f64], g: &ConvGeom) -> Vec<f64> {
    let mut out = vec![0.0; g.n * g.out_image()];
    let wkk = g.col_rows();
    let plane = g.out_plane();
    out.par_chunks_mut(g.out_image())
        .zip(x.par_chunks(g.in_image()))
        .for_each(|(out_img, img)| {
            let mut col = vec![0.0; wkk * plane];
            for gi in 0..g.groups {
                im2col(img, g, gi * g.cg(), g.cg(), &mut col);
                let w_g = &w[gi * g.og() * wkk..(gi + 1) * g.og() * wkk];
                let out_g = &mut out_img[gi * g.og() * plane..(gi + 1) * g.og() * plane];
                gemm_nn(g.og(), wkk, plane, w_g, &col, out_g);
            }
            for oc in 0..g.cout {
                let bias = b[oc];
                for v in &mut out_img[oc * plane..(oc + 1) * plane] {
                    *v += bias;
                }
            }
        });
    out
}

/// Gradients of the convolution. Any of the three outputs can be skipped.
/// The per-image weight gradients are reduced sequentially in batch order.
pub fn conv2d_backward(
    x: &[f64],
    w: &[f64],
    g: &ConvGeom,
    gout: &[f64],
    need_dx: bool,
    need_dw: bool,
    need_db: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>, Option<Vec<f64>>) {
    let wkk = g.col_rows();
    let plane = g.out_plane();

    let db = need_db.then(|| {
        let mut db = vec![0.0; g.cout];
        for ni in 0..g.n {
            let gimg = &gout[ni * g.out_image()..(ni + 1) * g.out_image()];
            for oc in 0..g.cout {
                let mut acc = 0.0;
                for &gv in &gimg[oc * plane..(oc + 1) * plane] {
                    acc += gv;
                }
                db[oc] += acc;
            }
        }
        db
    });

    if !need_dx && !need_dw {
        return (None, None, db);
    }

    // Per-image pass: dx goes straight into its disjoint slice, dw is
    // accumulated per image and summed afterwards in index order.
    let mut dx = need_dx.then(|| vec![0.0; g.n * g.in_image()]);
    let mut dx_chunks: Vec<Option<&mut [f64]>> = match &mut dx {
        Some(buf) => buf.chunks_mut(g.in_image()).map(Some).collect(),
        None => (0..g.n).map(|_| None).collect(),
    };

    let per_image_dw: Vec<Option<Vec<f64>>> = dx_chunks
        .par_iter_mut()
        .zip(x.par_chunks(g.in_image()))
        .zip(gout.par_chunks(g.out_image()))
        .map(|((dx_img, img), gimg)| {
            let mut col = vec![0.0; wkk * plane];
            let mut dcol = vec![0.0; wkk * plane];
            let mut dw_img = need_dw.then(|| vec![0.0; w.len()]);
            for gi in 0..g.groups {
                let w_g = &w[gi * g.og() * wkk..(gi + 1) * g.og() * wkk];
                let g_g = &gimg[gi * g.og() * plane..(gi + 1) * g.og() * plane];
                if let Some(dx_img) = dx_img {
                    dcol.fill(0.0);
                    gemm_tn(wkk, g.og(), plane, w_g, g_g, &mut dcol);
                    col2im_add(&dcol, g, gi * g.cg(), g.cg(), dx_img);
                }
                if let Some(dw_img) = &mut dw_img {
                    im2col(img, g, gi * g.cg(), g.cg(), &mut col);
                    let dw_g = &mut dw_img[gi * g.og() * wkk..(gi + 1) * g.og() * wkk];
                    gemm_nt(g.og(), plane, wkk, g_g, &col, dw_g);
                }
            }
            dw_img
        })
        .collect();

    let dw = need_dw.then(|| {
        let mut dw = vec![0.0; w.len()];
        for dwi in per_image_dw.iter().flatten() {
            for (acc, v) in dw.iter_mut().zip(dwi) {
                *acc += v;
            }
        }
        dw
    });

    (dx, dw, db)
}

// ---------------------------------------------------------------------------
// Dense
// ---------------------------------------------------------------------------

/// `out[n,o] = sum_f x[n,f] * w[o,f] + b[o]` with `x: [n, f]`, `w: [o, f]`.
pub fn dense_forward(x: &[f64], w: &[f64], b: &[f64], n: usize, f: usize, o: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * o];
    for ni in 0..n {
        let xr = &x[ni * f..(ni + 1) * f];
        let or = &mut out[ni * o..(ni + 1) * o];
        for (oi, ov) in or.iter_mut().enumerate() {
            let wr = &w[oi * f..(oi + 1) * f];
            let mut acc = 0.0;
            for (xv, wv) in xr.iter().zip(wr) {
                acc += xv * wv;
            }
            *ov = acc + b[oi];
        }
    }
    out
}

pub fn dense_backward(
    x: &[f64],
    w: &[f64],
    gout: &[f64],
    n: usize,
    f: usize,
    o: usize,
    need_dx: bool,
    need_dw: bool,
    need_db: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>, Option<Vec<f64>>) {
    let dx = need_dx.then(|| {
        let mut dx = vec![0.0; n * f];
        gemm_nn(n, o, f, gout, w, &mut dx);
        dx
    });
    let dw = need_dw.then(|| {
        let mut dw = vec![0.0; o * f];
        // dw[o,f] += sum_n gout[n,o] * x[n,f], batch index ascending.
        gemm_tn(o, n, f, gout, x, &mut dw);
        dw
    });
    let db = need_db.then(|| {
        let mut db = vec![0.0; o];
        for ni in 0..n {
            for (dbv, gv) in db.iter_mut().zip(&gout[ni * o..(ni + 1) * o]) {
                *dbv += gv;
            }
        }
        db
    });
    (dx, dw, db)
}

// ---------------------------------------------------------------------------
// Pointwise and pooling
// ---------------------------------------------------------------------------

pub fn relu_forward(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect()
}

/// d relu: passes gradient where the output was strictly positive. The
/// subgradient at exactly zero is taken as zero.
pub fn relu_backward(out: &[f64], gout: &[f64]) -> Vec<f64> {
    out.iter()
        .zip(gout)
        .map(|(&o, &g)| if o > 0.0 { g } else { 0.0 })
        .collect()
}

/// Max pooling with square window `k` and stride `s`. Returns the pooled
/// values and, per output element, the flat input index of its maximum.
/// Ties resolve to the first element in row-major scan order.
pub fn maxpool_forward(
    x: &[f64],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    s: usize,
) -> (Vec<f64>, Vec<u32>, usize, usize) {
    let ho = (h - k) / s + 1;
    let wo = (w - k) / s + 1;
    let mut out = vec![0.0; n * c * ho * wo];
    let mut arg = vec![0u32; n * c * ho * wo];
    let mut p = 0;
    for ni in 0..n {
        for ci in 0..c {
            let base = (ni * c + ci) * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0usize;
                    for ky in 0..k {
                        for kx in 0..k {
                            let idx = base + (oy * s + ky) * w + (ox * s + kx);
                            if x[idx] > best {
                                best = x[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    out[p] = best;
                    arg[p] = best_idx as u32;
                    p += 1;
                }
            }
        }
    }
    (out, arg, ho, wo)
}

pub fn maxpool_backward(arg: &[u32], gout: &[f64], input_len: usize) -> Vec<f64> {
    let mut dx = vec![0.0; input_len];
    for (&idx, &g) in arg.iter().zip(gout) {
        dx[idx as usize] += g;
    }
    dx
}

/// Spatial mean per (image, channel): `[n,c,h,w] -> [n,c]`.
pub fn global_avg_pool_forward(x: &[f64], n: usize, c: usize, plane: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * c];
    for (ov, chunk) in out.iter_mut().zip(x.chunks(plane)) {
        let mut acc = 0.0;
        for &v in chunk {
            acc += v;
        }
        *ov = acc / plane as f64;
    }
    out
}

pub fn global_avg_pool_backward(gout: &[f64], n: usize, c: usize, plane: usize) -> Vec<f64> {
    let mut dx = vec![0.0; n * c * plane];
    for (g, chunk) in gout.iter().zip(dx.chunks_mut(plane)) {
        let gv = g / plane as f64;
        chunk.fill(gv);
    }
    dx
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

/// Frozen-statistics normalization: a per-channel affine map using stored
/// mean/var. This is the eval/attack-time path; gradients treat the
/// statistics as constants.
pub fn norm_frozen_forward(
    x: &[f64],
    gamma: &[f64],
    beta: &[f64],
    mean: &[f64],
    var: &[f64],
    n: usize,
    c: usize,
    plane: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for ni in 0..n {
        for ci in 0..c {
            let scale = gamma[ci] / (var[ci] + NORM_EPS).sqrt();
            let shift = beta[ci] - mean[ci] * scale;
            let base = (ni * c + ci) * plane;
            for i in 0..plane {
                out[base + i] = x[base + i] * scale + shift;
            }
        }
    }
    out
}

pub fn norm_frozen_backward(
    x: &[f64],
    gamma: &[f64],
    mean: &[f64],
    var: &[f64],
    gout: &[f64],
    n: usize,
    c: usize,
    plane: usize,
    need_dx: bool,
    need_daffine: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>, Option<Vec<f64>>) {
    let mut dx = need_dx.then(|| vec![0.0; x.len()]);
    let mut dgamma = need_daffine.then(|| vec![0.0; c]);
    let mut dbeta = need_daffine.then(|| vec![0.0; c]);
    for ni in 0..n {
        for ci in 0..c {
            let inv_std = 1.0 / (var[ci] + NORM_EPS).sqrt();
            let base = (ni * c + ci) * plane;
            if let Some(dx) = &mut dx {
                let scale = gamma[ci] * inv_std;
                for i in 0..plane {
                    dx[base + i] = gout[base + i] * scale;
                }
            }
            if let (Some(dgamma), Some(dbeta)) = (&mut dgamma, &mut dbeta) {
                let mut dg = 0.0;
                let mut db = 0.0;
                for i in 0..plane {
                    let xhat = (x[base + i] - mean[ci]) * inv_std;
                    dg += gout[base + i] * xhat;
                    db += gout[base + i];
                }
                dgamma[ci] += dg;
                dbeta[ci] += db;
            }
        }
    }
    (dx, dgamma, dbeta)
}

/// Training-mode normalization over the batch: per channel, statistics are
/// taken across (N, H, W) with biased variance. Returns the normalized
/// output plus the batch statistics (needed by backward and for the running
/// buffers).
pub fn norm_batch_forward(
    x: &[f64],
    gamma: &[f64],
    beta: &[f64],
    n: usize,
    c: usize,
    plane: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let m = (n * plane) as f64;
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for ci in 0..c {
        let mut acc = 0.0;
        for ni in 0..n {
            let base = (ni * c + ci) * plane;
            for i in 0..plane {
                acc += x[base + i];
            }
        }
        mean[ci] = acc / m;
        let mut vacc = 0.0;
        for ni in 0..n {
            let base = (ni * c + ci) * plane;
            for i in 0..plane {
                let d = x[base + i] - mean[ci];
                vacc += d * d;
            }
        }
        var[ci] = vacc / m;
    }
    let out = norm_apply(x, gamma, beta, &mean, &var, n, c, plane);
    (out, mean, var)
}

fn norm_apply(
    x: &[f64],
    gamma: &[f64],
    beta: &[f64],
    mean: &[f64],
    var: &[f64],
    n: usize,
    c: usize,
    plane: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for ni in 0..n {
        for ci in 0..c {
            let inv_std = 1.0 / (var[ci] + NORM_EPS).sqrt();
            let base = (ni * c + ci) * plane;
            for i in 0..plane {
                out[base + i] = gamma[ci] * (x[base + i] - mean[ci]) * inv_std + beta[ci];
            }
        }
    }
    out
}

/// Full batch-statistics backward: gradients flow through the batch mean and
/// variance as well as the affine parameters.
pub fn norm_batch_backward(
    x: &[f64],
    gamma: &[f64],
    mean: &[f64],
    var: &[f64],
    gout: &[f64],
    n: usize,
    c: usize,
    plane: usize,
    need_dx: bool,
    need_daffine: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>, Option<Vec<f64>>) {
    let m = (n * plane) as f64;
    let mut dx = need_dx.then(|| vec![0.0; x.len()]);
    let mut dgamma = need_daffine.then(|| vec![0.0; c]);
    let mut dbeta = need_daffine.then(|| vec![0.0; c]);
    for ci in 0..c {
        let inv_std = 1.0 / (var[ci] + NORM_EPS).sqrt();
        // First pass: sums of g and g * xhat across the channel.
        let mut sum_g = 0.0;
        let mut sum_gx = 0.0;
        for ni in 0..n {
            let base = (ni * c + ci) * plane;
            for i in 0..plane {
                let xhat = (x[base + i] - mean[ci]) * inv_std;
                sum_g += gout[base + i];
                sum_gx += gout[base + i] * xhat;
            }
        }
        if let Some(dgamma) = &mut dgamma {
            dgamma[ci] += sum_gx;
        }
        if let Some(dbeta) = &mut dbeta {
            dbeta[ci] += sum_g;
        }
        if let Some(dx) = &mut dx {
            let scale = gamma[ci] * inv_std / m;
            for ni in 0..n {
                let base = (ni * c + ci) * plane;
                for i in 0..plane {
                    let xhat = (x[base + i] - mean[ci]) * inv_std;
                    dx[base + i] = scale * (m * gout[base + i] - sum_g - xhat * sum_gx);
                }
            }
        }
    }
    (dx, dgamma, dbeta)
}

// ---------------------------------------------------------------------------
// Softmax cross-entropy
// ---------------------------------------------------------------------------

/// Row-wise softmax with max subtraction. `logits` is `[n, c]`.
pub fn softmax_rows(logits: &[f64], n: usize, c: usize) -> Vec<f64> {
    let mut probs = vec![0.0; n * c];
    for ni in 0..n {
        let row = &logits[ni * c..(ni + 1) * c];
        let out = &mut probs[ni * c..(ni + 1) * c];
        let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for (o, &z) in out.iter_mut().zip(row) {
            *o = (z - mx).exp();
            denom += *o;
        }
        for o in out.iter_mut() {
            *o /= denom;
        }
    }
    probs
}

/// Per-example cross-entropy losses computed as `logsumexp(z) - z[label]`,
/// which is non-negative by construction.
pub fn cross_entropy_rows(logits: &[f64], labels: &[usize], n: usize, c: usize) -> Vec<f64> {
    let mut losses = vec![0.0; n];
    for ni in 0..n {
        let row = &logits[ni * c..(ni + 1) * c];
        let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for &z in row {
            denom += (z - mx).exp();
        }
        let lse = mx + denom.ln();
        losses[ni] = lse - row[labels[ni]];
    }
    losses
}

/// d loss / d logits = (softmax - onehot) * scale, where `scale` folds in
/// the reduction (1/n for mean, 1 for sum) and the upstream gradient.
pub fn softmax_ce_backward(
    probs: &[f64],
    labels: &[usize],
    n: usize,
    c: usize,
    scale: f64,
) -> Vec<f64> {
    let mut dz = vec![0.0; n * c];
    for ni in 0..n {
        for ci in 0..c {
            let onehot = if ci == labels[ni] { 1.0 } else { 0.0 };
            dz[ni * c + ci] = (probs[ni * c + ci] - onehot) * scale;
        }
    }
    dz
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fill(seed: u64, len: usize) -> Vec<f64> {
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
        (0..len)
            .map(|_| {
                s ^= s << 13;
                s ^= s >> 7;
                s ^= s << 17;
                (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
            })
            .collect()
    }

    #[test]
    fn gemm_variants_agree_on_small_case() {
        let (m, k, n) = (3, 4, 5);
        let a = fill(1, m * k);
        let b = fill(2, k * n);
        let mut c_nn = vec![0.0; m * n];
        gemm_nn(m, k, n, &a, &b, &mut c_nn);

        // a * b via nt with b transposed by hand.
        let mut bt = vec![0.0; n * k];
        for kk in 0..k {
            for j in 0..n {
                bt[j * k + kk] = b[kk * n + j];
            }
        }
        let mut c_nt = vec![0.0; m * n];
        gemm_nt(m, k, n, &a, &bt, &mut c_nt);

        // a * b via tn with a transposed by hand.
        let mut at = vec![0.0; k * m];
        for i in 0..m {
            for kk in 0..k {
                at[kk * m + i] = a[i * k + kk];
            }
        }
        let mut c_tn = vec![0.0; m * n];
        gemm_tn(m, k, n, &at, &b, &mut c_tn);

        for i in 0..m * n {
            assert!((c_nn[i] - c_nt[i]).abs() < 1e-12);
            assert!((c_nn[i] - c_tn[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_extent_formula() {
        // H' = floor((H + 2*pad - ((K-1)*d + 1)) / stride) + 1
        assert_eq!(conv_out_extent(5, 3, 1, 0, 2), Some(1));
        assert_eq!(conv_out_extent(3, 3, 1, 0, 1), Some(1));
        assert_eq!(conv_out_extent(3, 3, 1, 1, 1), Some(3));
        assert_eq!(conv_out_extent(7, 3, 2, 1, 1), Some(4));
        assert_eq!(conv_out_extent(4, 3, 1, 0, 2), None);
        assert_eq!(conv_out_extent(1, 3, 1, 4, 4), Some(1));
    }

    #[test]
    fn maxpool_tie_takes_first_in_scan_order() {
        let x = vec![2.0, 2.0, 1.0, 2.0];
        let (out, arg, ho, wo) = maxpool_forward(&x, 1, 1, 2, 2, 2, 2);
        assert_eq!((ho, wo), (1, 1));
        assert_eq!(out, vec![2.0]);
        assert_eq!(arg, vec![0]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let logits = fill(7, 6 * 5).iter().map(|v| v * 30.0).collect::<Vec<_>>();
        let probs = softmax_rows(&logits, 6, 5);
        for row in probs.chunks(5) {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-12, "row sum {s}");
            assert!(row.iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn cross_entropy_is_nonnegative_even_for_extreme_logits() {
        let logits = vec![1000.0, -1000.0, 0.0, -30.0, 40.0, 39.9];
        let losses = cross_entropy_rows(&logits, &[0, 1, 1], 3, 2);
        for l in losses {
            assert!(l >= 0.0 && l.is_finite(), "loss {l}");
        }
    }
}
