//! Graph-building operations.
//!
//! Each function validates shapes, runs the forward kernel, and attaches an
//! operation record when any input is tracked. With fully detached inputs
//! the result is a plain leaf, so no graph memory survives evaluation-only
//! forwards.

use super::kernels as k;
use super::tape::Op;
use super::Tensor;
use crate::error::{Error, Result};
use std::sync::Arc;

/// Convolution hyperparameters. Padding is symmetric zero padding applied to
/// both spatial axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: usize,
    pub pad: usize,
    pub dilation: usize,
    pub groups: usize,
}

impl Default for Conv2dSpec {
    fn default() -> Self {
        Conv2dSpec {
            stride: 1,
            pad: 0,
            dilation: 1,
            groups: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Mean,
    Sum,
}

fn make(shape: Vec<usize>, data: Vec<f64>, tracked: bool, op: impl FnOnce() -> Op) -> Tensor {
    if tracked {
        Tensor::make(shape, data, op(), true, false)
    } else {
        Tensor::make(shape, data, Op::Leaf, false, false)
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            op,
            format!("operands {:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("add", a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    let (a, b) = (a.clone(), b.clone());
    let tracked = a.tracked() || b.tracked();
    Ok(make(a.shape().to_vec(), data, tracked, move || Op::Add(a, b)))
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("sub", a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
    let (a, b) = (a.clone(), b.clone());
    let tracked = a.tracked() || b.tracked();
    Ok(make(a.shape().to_vec(), data, tracked, move || Op::Sub(a, b)))
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("mul", a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
    let (a, b) = (a.clone(), b.clone());
    let tracked = a.tracked() || b.tracked();
    Ok(make(a.shape().to_vec(), data, tracked, move || Op::Mul(a, b)))
}

pub fn scale(a: &Tensor, c: f64) -> Tensor {
    let data = a.data().iter().map(|x| x * c).collect();
    let a = a.clone();
    let tracked = a.tracked();
    make(a.shape().to_vec(), data, tracked, move || Op::Scale(a, c))
}

/// Sum of all elements, producing a `[1]` tensor.
pub fn sum_all(a: &Tensor) -> Tensor {
    let mut acc = 0.0;
    for &v in a.data() {
        acc += v;
    }
    let a = a.clone();
    let tracked = a.tracked();
    make(vec![1], vec![acc], tracked, move || Op::SumAll(a))
}

pub fn relu(a: &Tensor) -> Tensor {
    let data = k::relu_forward(a.data());
    let a = a.clone();
    let tracked = a.tracked();
    make(a.shape().to_vec(), data, tracked, move || Op::Relu(a))
}

fn expect_rank(op: &'static str, t: &Tensor, rank: usize) -> Result<()> {
    if t.shape().len() != rank {
        return Err(Error::shape(
            op,
            format!("expected rank {rank}, got shape {:?}", t.shape()),
        ));
    }
    Ok(())
}

/// 2-D convolution over NCHW input.
///
/// `x: [n, cin, h, w]`, `w: [cout, cin/groups, kh, kw]`, `b: [cout]`.
/// Output spatial extent follows
/// `floor((in + 2*pad - ((k - 1)*dilation + 1)) / stride) + 1`.
pub fn conv2d(x: &Tensor, w: &Tensor, b: &Tensor, spec: Conv2dSpec) -> Result<Tensor> {
    expect_rank("conv2d", x, 4)?;
    expect_rank("conv2d", w, 4)?;
    expect_rank("conv2d", b, 1)?;
    if spec.stride == 0 || spec.dilation == 0 || spec.groups == 0 {
        return Err(Error::shape(
            "conv2d",
            format!("stride/dilation/groups must be positive, got {spec:?}"),
        ));
    }
    let (n, cin, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (cout, wc, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
    if cin % spec.groups != 0 || cout % spec.groups != 0 {
        return Err(Error::shape(
            "conv2d",
            format!(
                "groups={} must divide cin={cin} and cout={cout}",
                spec.groups
            ),
        ));
    }
    if wc != cin / spec.groups {
        return Err(Error::shape(
            "conv2d",
            format!(
                "weight channel dim {wc} != cin/groups = {}",
                cin / spec.groups
            ),
        ));
    }
    if b.shape()[0] != cout {
        return Err(Error::shape(
            "conv2d",
            format!("bias len {} != cout {cout}", b.shape()[0]),
        ));
    }
    let ho = k::conv_out_extent(h, kh, spec.stride, spec.pad, spec.dilation);
    let wo = k::conv_out_extent(wd, kw, spec.stride, spec.pad, spec.dilation);
    let (Some(ho), Some(wo)) = (ho, wo) else {
        return Err(Error::shape(
            "conv2d",
            format!(
                "dilated kernel {kh}x{kw} (dilation {}) exceeds padded input {h}x{wd} (pad {})",
                spec.dilation, spec.pad
            ),
        ));
    };
    let geom = k::ConvGeom {
        n,
        cin,
        h,
        w: wd,
        cout,
        kh,
        kw,
        stride: spec.stride,
        pad: spec.pad,
        dilation: spec.dilation,
        groups: spec.groups,
        ho,
        wo,
    };
    let data = k::conv2d_forward(x.data(), w.data(), b.data(), &geom);
    let tracked = x.tracked() || w.tracked() || b.tracked();
    let (x, w, b) = (x.clone(), w.clone(), b.clone());
    Ok(make(vec![n, cout, ho, wo], data, tracked, move || {
        Op::Conv2d { x, w, b, geom }
    }))
}

/// Fully connected layer: `x: [n, f]`, `w: [o, f]`, `b: [o]`.
pub fn dense(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    expect_rank("dense", x, 2)?;
    expect_rank("dense", w, 2)?;
    expect_rank("dense", b, 1)?;
    let (n, f) = (x.shape()[0], x.shape()[1]);
    let (o, wf) = (w.shape()[0], w.shape()[1]);
    if wf != f || b.shape()[0] != o {
        return Err(Error::shape(
            "dense",
            format!(
                "x {:?} vs w {:?} vs b {:?}",
                x.shape(),
                w.shape(),
                b.shape()
            ),
        ));
    }
    let data = k::dense_forward(x.data(), w.data(), b.data(), n, f, o);
    let tracked = x.tracked() || w.tracked() || b.tracked();
    let (x, w, b) = (x.clone(), w.clone(), b.clone());
    Ok(make(vec![n, o], data, tracked, move || Op::Dense { x, w, b }))
}

/// Square-window max pooling. Ties resolve to the first element in scan
/// order, so gradients are deterministic.
pub fn maxpool2d(x: &Tensor, window: usize, stride: usize) -> Result<Tensor> {
    expect_rank("maxpool2d", x, 4)?;
    if window == 0 || stride == 0 {
        return Err(Error::shape("maxpool2d", "window and stride must be positive"));
    }
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    if h < window || w < window {
        return Err(Error::shape(
            "maxpool2d",
            format!("window {window} exceeds input {h}x{w}"),
        ));
    }
    let (data, arg, ho, wo) = k::maxpool_forward(x.data(), n, c, h, w, window, stride);
    let tracked = x.tracked();
    let x = x.clone();
    let arg = Arc::new(arg);
    Ok(make(vec![n, c, ho, wo], data, tracked, move || Op::MaxPool {
        x,
        arg,
    }))
}

/// Spatial mean per channel: `[n, c, h, w] -> [n, c]`.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    expect_rank("global_avg_pool", x, 4)?;
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let data = k::global_avg_pool_forward(x.data(), n, c, h * w);
    let tracked = x.tracked();
    let x = x.clone();
    Ok(make(vec![n, c], data, tracked, move || Op::Gap { x }))
}

/// Concatenate along the channel axis. All parts must agree on batch and
/// spatial extents.
pub fn concat_channels(parts: &[Tensor]) -> Result<Tensor> {
    if parts.is_empty() {
        return Err(Error::shape("concat_channels", "no inputs"));
    }
    for p in parts {
        expect_rank("concat_channels", p, 4)?;
    }
    let (n, h, w) = (parts[0].shape()[0], parts[0].shape()[2], parts[0].shape()[3]);
    for p in &parts[1..] {
        if p.shape()[0] != n || p.shape()[2] != h || p.shape()[3] != w {
            return Err(Error::shape(
                "concat_channels",
                format!("part {:?} vs {:?}", p.shape(), parts[0].shape()),
            ));
        }
    }
    let total_c: usize = parts.iter().map(|p| p.shape()[1]).sum();
    let plane = h * w;
    let mut data = vec![0.0; n * total_c * plane];
    let mut c_off = 0;
    for p in parts {
        let pc = p.shape()[1];
        for ni in 0..n {
            let dst = (ni * total_c + c_off) * plane;
            let src = ni * pc * plane;
            data[dst..dst + pc * plane].copy_from_slice(&p.data()[src..src + pc * plane]);
        }
        c_off += pc;
    }
    let tracked = parts.iter().any(|p| p.tracked());
    let parts = parts.to_vec();
    Ok(make(vec![n, total_c, h, w], data, tracked, move || {
        Op::Concat { parts }
    }))
}

fn norm_shapes(op: &'static str, x: &Tensor, gamma: &Tensor, beta: &Tensor) -> Result<usize> {
    expect_rank(op, x, 4)?;
    expect_rank(op, gamma, 1)?;
    expect_rank(op, beta, 1)?;
    let c = x.shape()[1];
    if gamma.shape()[0] != c || beta.shape()[0] != c {
        return Err(Error::shape(
            op,
            format!(
                "gamma/beta must have {c} channels, got {}/{}",
                gamma.shape()[0],
                beta.shape()[0]
            ),
        ));
    }
    Ok(c)
}

/// Per-channel affine normalization with externally supplied (frozen)
/// statistics. Gradients treat `mean`/`var` as constants, so attack
/// gradients stay deterministic functions of the input.
pub fn channel_norm(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    mean: &[f64],
    var: &[f64],
) -> Result<Tensor> {
    let c = norm_shapes("channel_norm", x, gamma, beta)?;
    if mean.len() != c || var.len() != c {
        return Err(Error::shape(
            "channel_norm",
            format!("stats must have {c} channels, got {}/{}", mean.len(), var.len()),
        ));
    }
    let (n, _, h, w) = (x.shape()[0], c, x.shape()[2], x.shape()[3]);
    let data = k::norm_frozen_forward(x.data(), gamma.data(), beta.data(), mean, var, n, c, h * w);
    let tracked = x.tracked() || gamma.tracked() || beta.tracked();
    let (x, gamma, beta) = (x.clone(), gamma.clone(), beta.clone());
    let (mean, var) = (Arc::new(mean.to_vec()), Arc::new(var.to_vec()));
    Ok(make(x.shape().to_vec(), data, tracked, move || Op::NormFrozen {
        x,
        gamma,
        beta,
        mean,
        var,
    }))
}

/// Training-mode normalization using this batch's statistics. Returns the
/// output plus the per-channel batch mean and (biased) variance so the
/// caller can refresh its running buffers.
pub fn batch_norm_train(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
) -> Result<(Tensor, Vec<f64>, Vec<f64>)> {
    let c = norm_shapes("batch_norm_train", x, gamma, beta)?;
    let (n, h, w) = (x.shape()[0], x.shape()[2], x.shape()[3]);
    let (data, mean, var) = k::norm_batch_forward(x.data(), gamma.data(), beta.data(), n, c, h * w);
    let tracked = x.tracked() || gamma.tracked() || beta.tracked();
    let (xc, gc, bc) = (x.clone(), gamma.clone(), beta.clone());
    let (mean_arc, var_arc) = (Arc::new(mean.clone()), Arc::new(var.clone()));
    let out = make(x.shape().to_vec(), data, tracked, move || Op::NormBatch {
        x: xc,
        gamma: gc,
        beta: bc,
        mean: mean_arc,
        var: var_arc,
    });
    Ok((out, mean, var))
}

/// Softmax cross-entropy over `[n, classes]` logits, reduced to a scalar.
/// Rows are stabilized by max subtraction; the mean reduction gives the
/// gradient `(softmax - onehot) / n`.
pub fn softmax_cross_entropy(
    logits: &Tensor,
    labels: &[usize],
    reduction: Reduction,
) -> Result<Tensor> {
    expect_rank("softmax_cross_entropy", logits, 2)?;
    let (n, c) = (logits.shape()[0], logits.shape()[1]);
    if labels.len() != n {
        return Err(Error::shape(
            "softmax_cross_entropy",
            format!("{} labels for {n} rows", labels.len()),
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::shape(
            "softmax_cross_entropy",
            format!("label {bad} out of range for {c} classes"),
        ));
    }
    let losses = k::cross_entropy_rows(logits.data(), labels, n, c);
    let mut total = 0.0;
    for &l in &losses {
        total += l;
    }
    let (value, grad_scale) = match reduction {
        Reduction::Mean => (total / n as f64, 1.0 / n as f64),
        Reduction::Sum => (total, 1.0),
    };
    let probs = Arc::new(k::softmax_rows(logits.data(), n, c));
    let labels = Arc::new(labels.to_vec());
    let tracked = logits.tracked();
    let logits = logits.clone();
    Ok(make(vec![1], vec![value], tracked, move || Op::SoftmaxCe {
        logits,
        labels,
        probs,
        scale: grad_scale,
    }))
}

#[cfg(test)]
mod tests {
    use super::super::backward;
    use super::*;

    #[test]
    fn conv2d_ones_kernel_counts_window() {
        // 3x3 ones, 2x2 ones kernel, stride 1, no pad: every 2x2 window sums to 4.
        let x = Tensor::from_vec(&[1, 1, 3, 3], vec![1.0; 9]).unwrap();
        let w = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0; 4]).unwrap();
        let b = Tensor::zeros(&[1]);
        let y = conv2d(&x, &w, &b, Conv2dSpec::default()).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.data(), &[4.0, 4.0, 4.0, 4.0]);
    }

    #[test]
    fn conv2d_dilation_two_spans_five_pixels() {
        // A 3x3 kernel at dilation 2 has extent 5, so a 5x5 input yields 1x1.
        let x = Tensor::from_vec(&[1, 1, 5, 5], vec![1.0; 25]).unwrap();
        let w = Tensor::from_vec(&[1, 1, 3, 3], vec![1.0; 9]).unwrap();
        let b = Tensor::zeros(&[1]);
        let spec = Conv2dSpec {
            dilation: 2,
            ..Conv2dSpec::default()
        };
        let y = conv2d(&x, &w, &b, spec).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.item(), 9.0);
    }

    #[test]
    fn conv2d_groups_keep_channels_separate() {
        // Two groups, one channel each; second group's kernel is zero, so its
        // output ignores its input entirely.
        let x = Tensor::from_vec(&[1, 2, 2, 2], vec![1.0, 2.0, 3.0, 4.0, 10.0, 20.0, 30.0, 40.0])
            .unwrap();
        let w = Tensor::from_vec(&[2, 1, 1, 1], vec![1.0, 0.0]).unwrap();
        let b = Tensor::zeros(&[2]);
        let spec = Conv2dSpec {
            groups: 2,
            ..Conv2dSpec::default()
        };
        let y = conv2d(&x, &w, &b, spec).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2, 2]);
        assert_eq!(&y.data()[..4], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(&y.data()[4..], &[0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn conv2d_rejects_oversized_dilation() {
        // Extent (3-1)*2+1 = 5 > 4: no valid output position.
        let x = Tensor::from_vec(&[1, 1, 4, 4], vec![0.0; 16]).unwrap();
        let w = Tensor::from_vec(&[1, 1, 3, 3], vec![0.0; 9]).unwrap();
        let b = Tensor::zeros(&[1]);
        let spec = Conv2dSpec {
            dilation: 2,
            ..Conv2dSpec::default()
        };
        let err = conv2d(&x, &w, &b, spec).unwrap_err();
        assert!(err.to_string().contains("exceeds padded input"), "{err}");
    }

    #[test]
    fn conv2d_rejects_bad_group_divisibility() {
        let x = Tensor::from_vec(&[1, 3, 4, 4], vec![0.0; 48]).unwrap();
        let w = Tensor::from_vec(&[2, 1, 3, 3], vec![0.0; 18]).unwrap();
        let b = Tensor::zeros(&[2]);
        let spec = Conv2dSpec {
            groups: 2,
            ..Conv2dSpec::default()
        };
        let err = conv2d(&x, &w, &b, spec).unwrap_err();
        assert!(err.to_string().contains("groups=2"), "{err}");
    }

    #[test]
    fn dense_identity_weight_passes_input_through() {
        let x = Tensor::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let w = Tensor::from_vec(&[3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap();
        let b = Tensor::zeros(&[3]);
        let y = dense(&x, &w, &b).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn maxpool_picks_window_maximum_and_routes_gradient() {
        let x = Tensor::param(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = maxpool2d(&x, 2, 2).unwrap();
        assert_eq!(y.data(), &[4.0]);
        backward(&sum_all(&y)).unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn global_avg_pool_means_each_plane() {
        let x = Tensor::from_vec(&[1, 2, 2, 2], vec![1.0, 1.0, 1.0, 1.0, 2.0, 4.0, 6.0, 8.0])
            .unwrap();
        let y = global_avg_pool(&x).unwrap();
        assert_eq!(y.shape(), &[1, 2]);
        assert_eq!(y.data(), &[1.0, 5.0]);
    }

    #[test]
    fn concat_channels_stacks_parts_in_order() {
        let a = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::from_vec(&[1, 2, 2, 2], vec![5.0; 8]).unwrap();
        let y = concat_channels(&[a, b]).unwrap();
        assert_eq!(y.shape(), &[1, 3, 2, 2]);
        assert_eq!(&y.data()[..4], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(&y.data()[4..], &[5.0; 8]);
    }

    #[test]
    fn channel_norm_with_unit_stats_is_near_identity() {
        let x = Tensor::from_vec(&[1, 1, 1, 4], vec![-1.0, 0.0, 0.5, 2.0]).unwrap();
        let gamma = Tensor::from_vec(&[1], vec![1.0]).unwrap();
        let beta = Tensor::zeros(&[1]);
        let y = channel_norm(&x, &gamma, &beta, &[0.0], &[1.0]).unwrap();
        for (yo, xi) in y.data().iter().zip(x.data()) {
            // Scaled by 1/sqrt(1 + eps).
            assert!((yo - xi / (1.0f64 + 1e-5).sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn batch_norm_train_standardizes_the_batch() {
        let x = Tensor::from_vec(&[2, 1, 1, 2], vec![1.0, 3.0, 5.0, 7.0]).unwrap();
        let gamma = Tensor::from_vec(&[1], vec![1.0]).unwrap();
        let beta = Tensor::zeros(&[1]);
        let (y, mean, var) = batch_norm_train(&x, &gamma, &beta).unwrap();
        assert_eq!(mean, vec![4.0]);
        assert_eq!(var, vec![5.0]);
        let m: f64 = y.data().iter().sum::<f64>() / 4.0;
        assert!(m.abs() < 1e-12);
    }

    #[test]
    fn softmax_ce_uniform_logits_give_ln_classes() {
        // Three equal logits: loss = ln 3, gradient rows (p - onehot)/n.
        let z = Tensor::param(&[1, 3], vec![0.0, 0.0, 0.0]).unwrap();
        let loss = softmax_cross_entropy(&z, &[0], Reduction::Mean).unwrap();
        assert!((loss.item() - 3.0f64.ln()).abs() < 1e-12);
        backward(&loss).unwrap();
        let g = z.grad().unwrap();
        let third = 1.0 / 3.0;
        assert!((g[0] - (third - 1.0)).abs() < 1e-12);
        assert!((g[1] - third).abs() < 1e-12);
        assert!((g[2] - third).abs() < 1e-12);
    }

    #[test]
    fn softmax_ce_sum_reduction_scales_gradient_by_batch() {
        let data = vec![0.2, -0.4, 1.0, 0.0, 0.3, -0.1];
        let labels = [2usize, 0];
        let z1 = Tensor::param(&[2, 3], data.clone()).unwrap();
        let mean_loss = softmax_cross_entropy(&z1, &labels, Reduction::Mean).unwrap();
        backward(&mean_loss).unwrap();
        let z2 = Tensor::param(&[2, 3], data).unwrap();
        let sum_loss = softmax_cross_entropy(&z2, &labels, Reduction::Sum).unwrap();
        backward(&sum_loss).unwrap();
        assert!((sum_loss.item() - 2.0 * mean_loss.item()).abs() < 1e-12);
        for (gs, gm) in z2.grad().unwrap().iter().zip(z1.grad().unwrap()) {
            assert!((gs - 2.0 * gm).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_ce_rejects_bad_labels() {
        let z = Tensor::from_vec(&[1, 3], vec![0.0; 3]).unwrap();
        assert!(softmax_cross_entropy(&z, &[3], Reduction::Mean).is_err());
        assert!(softmax_cross_entropy(&z, &[0, 1], Reduction::Mean).is_err());
    }

    #[test]
    fn elementwise_ops_reject_shape_mismatch() {
        let a = Tensor::zeros(&[2, 2]);
        let b = Tensor::zeros(&[4]);
        assert!(add(&a, &b).is_err());
        assert!(sub(&a, &b).is_err());
        assert!(mul(&a, &b).is_err());
    }
}
