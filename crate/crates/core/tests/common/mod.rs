//! Shared oracles for integration tests.
//!
//! Everything here is deliberately written the slow, obvious way and must
//! stay independent of the library's kernels: the direct convolution loop
//! and the finite-difference checker are the reference implementations that
//! the fast paths are judged against.

#![allow(dead_code)]

pub mod fidelity;
pub mod toy;

/// Direct seven-loop 2-D convolution over one batch.
///
/// `x` is NCHW, `w` is `[cout, cin/groups, kh, kw]`, `b` is `[cout]`.
/// Out-of-bounds taps read zero (symmetric zero padding). Returns the output
/// buffer and its NCHW shape.
pub fn conv2d_direct(
    x: &[f64],
    xs: [usize; 4],
    w: &[f64],
    ws: [usize; 4],
    b: &[f64],
    stride: usize,
    pad: usize,
    dilation: usize,
    groups: usize,
) -> (Vec<f64>, [usize; 4]) {
    let [n, cin, h, wd] = xs;
    let [cout, cg, kh, kw] = ws;
    assert_eq!(cin % groups, 0);
    assert_eq!(cout % groups, 0);
    assert_eq!(cg, cin / groups);
    let ext_h = (kh - 1) * dilation + 1;
    let ext_w = (kw - 1) * dilation + 1;
    let ho = (h + 2 * pad - ext_h) / stride + 1;
    let wo = (wd + 2 * pad - ext_w) / stride + 1;
    let og = cout / groups;

    let mut out = vec![0.0; n * cout * ho * wo];
    for ni in 0..n {
        for oc in 0..cout {
            let g = oc / og;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = 0.0;
                    for ic in 0..cg {
                        let c = g * cg + ic;
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky * dilation) as isize - pad as isize;
                                let ix = (ox * stride + kx * dilation) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                let xv = x[((ni * cin + c) * h + iy as usize) * wd + ix as usize];
                                let wv = w[((oc * cg + ic) * kh + ky) * kw + kx];
                                acc += xv * wv;
                            }
                        }
                    }
                    out[((ni * cout + oc) * ho + oy) * wo + ox] = acc + b[oc];
                }
            }
        }
    }
    (out, [n, cout, ho, wo])
}

/// Central finite differences of a scalar function at `x` with step `h`.
pub fn finite_diff(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe);
        probe[i] = x[i] - h;
        let down = f(&probe);
        probe[i] = x[i];
        grad[i] = (up - down) / (2.0 * h);
    }
    grad
}

/// Largest relative disagreement between two gradient vectors.
///
/// The denominator floor absorbs finite-difference noise on entries whose
/// true gradient is zero (dead ReLU paths).
pub fn max_rel_err(numeric: &[f64], analytic: &[f64]) -> f64 {
    assert_eq!(numeric.len(), analytic.len());
    numeric
        .iter()
        .zip(analytic)
        .map(|(&n, &a)| (n - a).abs() / (n.abs() + a.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

/// Deterministic pseudo-random fill for oracle inputs, independent of the
/// crate's RNG plumbing. Plain xorshift mapped into (lo, hi).
pub fn fill_pseudo(seed: u64, len: usize, lo: f64, hi: f64) -> Vec<f64> {
    let mut s = seed.wrapping_mul(2862933555777941757).wrapping_add(3037000493);
    let mut out = Vec::with_capacity(len);
    for _ in 0..len {
        s ^= s << 13;
        s ^= s >> 7;
        s ^= s << 17;
        let unit = (s >> 11) as f64 / (1u64 << 53) as f64;
        out.push(lo + unit * (hi - lo));
    }
    out
}
