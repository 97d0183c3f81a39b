//! Bridge between the pure oracles in `common` and the library's models:
//! runs the finite-difference checker against each registry model's
//! analytic input gradient on downsized probe images.

#![allow(dead_code)]

use advgrid_core::attack::AttackTarget;
use advgrid_core::data::{generate_corpus, resize_area};
use advgrid_core::nn::{build_model, registry_default, ModelSpec};
use advgrid_core::tensor::{
    backward, conv2d, softmax_cross_entropy, Conv2dSpec, Reduction, Tensor,
};

pub const PROBE_EDGE: usize = 8;
pub const FD_STEP: f64 = 1e-5;

/// One full-resolution corpus image downsized to the probe edge, with its
/// class label. Distinct seeds give distinct images and cycle the label.
pub fn probe_image(seed: u64) -> (Vec<f64>, usize) {
    let corpus = generate_corpus(1, 64, 0x9e3779b97f4a7c15 ^ seed);
    let idx = (seed % 3) as usize;
    let probe = resize_area(&corpus.images[idx], 3, 64, 64, PROBE_EDGE, PROBE_EDGE)
        .expect("downsizing a 64x64 image to the probe edge");
    (probe, corpus.labels[idx])
}

/// Agreement limit between the two finite-difference step sizes for a
/// coordinate to count as smooth.
const SMOOTHNESS_LIMIT: f64 = 1e-4;

/// Highest tolerable fraction of kink-excluded coordinates per probe.
const MAX_EXCLUDED_FRACTION: f64 = 0.01;

/// Redraw attempts for probes that land on an activation threshold.
const PROBE_RETRIES: u64 = 3;

#[derive(Debug, Clone, Copy)]
pub struct ProbeFidelity {
    /// Worst relative error over the smooth coordinates.
    pub max_err: f64,
    /// Coordinates whose finite-difference estimate failed the smoothness
    /// certificate and were excluded from the comparison.
    pub excluded: usize,
    pub total: usize,
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-6)
}

/// Largest relative disagreement between the model's input gradient and
/// central finite differences of the attack loss on one probe.
///
/// Central differences misreport the slope when an activation kink lies
/// inside the probe interval, so each coordinate must first earn a
/// smoothness certificate: estimates at step h and h/2 have to agree.
/// The certificate never consults the analytic gradient, so it cannot
/// hide a wrong one; a genuine gradient bug still fails at every smooth
/// coordinate. A cap on exclusions keeps the check from passing vacuously.
pub fn model_grad_err(spec: &ModelSpec, init_seed: u64, probe: &[f64], label: usize) -> ProbeFidelity {
    let spec = spec.clone().with_input_shape((3, PROBE_EDGE, PROBE_EDGE));
    let model = build_model(&spec, init_seed).expect("registry spec builds at probe resolution");
    let shape = [1usize, 3, PROBE_EDGE, PROBE_EDGE];
    let labels = [label];

    let x = Tensor::param(&shape, probe.to_vec()).expect("probe tensor");
    let loss = model.loss(&x, &labels).expect("attack loss");
    backward(&loss).expect("backward over the probe");
    let analytic = x.grad().expect("loss depends on the input");

    let mut f = |v: &[f64]| {
        let t = Tensor::from_vec(&shape, v.to_vec()).expect("probe tensor");
        let logits = model.forward(&t, false).expect("probe forward");
        softmax_cross_entropy(&logits, &labels, Reduction::Sum)
            .expect("attack loss")
            .data()[0]
    };
    let coarse = super::finite_diff(&mut f, probe, FD_STEP);
    let fine = super::finite_diff(&mut f, probe, FD_STEP / 2.0);

    let mut out = ProbeFidelity {
        max_err: 0.0,
        excluded: 0,
        total: probe.len(),
    };
    for i in 0..probe.len() {
        if rel(coarse[i], fine[i]) > SMOOTHNESS_LIMIT {
            out.excluded += 1;
            continue;
        }
        out.max_err = out.max_err.max(rel(fine[i], analytic[i]));
    }
    out
}

impl ProbeFidelity {
    /// A probe sitting within the finite-difference step of an activation
    /// threshold taints every pixel feeding that unit at once; such a probe
    /// invalidates the estimator, not the gradient.
    pub fn well_conditioned(&self) -> bool {
        (self.excluded as f64) <= MAX_EXCLUDED_FRACTION * (self.total as f64)
    }
}

/// Worst-case gradient disagreement per registry model over the given
/// probe seeds. Model initialization varies with both the seed and the
/// registry position. Ill-conditioned probes are redrawn deterministically
/// (bounded attempts); the comparison itself is never loosened.
pub fn registry_grad_errs(seeds: &[u64]) -> Vec<(String, ProbeFidelity)> {
    registry_default()
        .iter()
        .enumerate()
        .map(|(mi, spec)| {
            let mut worst = ProbeFidelity {
                max_err: 0.0,
                excluded: 0,
                total: 0,
            };
            for &s in seeds {
                let init = s.wrapping_mul(1_000_003).wrapping_add(mi as u64);
                let run = (0..=PROBE_RETRIES)
                    .map(|attempt| {
                        let (probe, label) = probe_image(s.wrapping_add(attempt << 32));
                        model_grad_err(spec, init, &probe, label)
                    })
                    .find(ProbeFidelity::well_conditioned)
                    .unwrap_or_else(|| {
                        panic!(
                            "{}: every probe for seed {s} landed on an activation threshold",
                            spec.name
                        )
                    });
                worst.max_err = worst.max_err.max(run.max_err);
                worst.excluded += run.excluded;
                worst.total += run.total;
            }
            (spec.name.clone(), worst)
        })
        .collect()
}

/// Worst absolute disagreement between the library convolution and the
/// direct-loop oracle over the full stride/dilation/groups/pad grid.
pub fn conv_grid_max_err() -> f64 {
    let mut worst = 0.0f64;
    for &stride in &[1usize, 2] {
        for &dilation in &[1usize, 2, 3, 4] {
            for &groups in &[1usize, 2, 4] {
                for &pad in &[0usize, 1, dilation] {
                    let (n, cin, h, w) = (2, 4, 11, 9);
                    let cout = 8;
                    let (kh, kw) = (3, 3);
                    let cg = cin / groups;
                    let xs = [n, cin, h, w];
                    let ws = [cout, cg, kh, kw];
                    let seed = (stride * 1000 + dilation * 100 + groups * 10 + pad) as u64;
                    let x = super::fill_pseudo(seed, n * cin * h * w, -1.0, 1.0);
                    let wv = super::fill_pseudo(seed + 1, cout * cg * kh * kw, -0.5, 0.5);
                    let b = super::fill_pseudo(seed + 2, cout, -0.2, 0.2);
                    let (want, want_shape) =
                        super::conv2d_direct(&x, xs, &wv, ws, &b, stride, pad, dilation, groups);
                    let got = conv2d(
                        &Tensor::from_vec(&xs, x).expect("oracle input"),
                        &Tensor::from_vec(&ws, wv).expect("oracle kernel"),
                        &Tensor::from_vec(&[cout], b).expect("oracle bias"),
                        Conv2dSpec { stride, pad, dilation, groups },
                    )
                    .expect("library convolution");
                    assert_eq!(got.shape(), &want_shape);
                    let case = got
                        .data()
                        .iter()
                        .zip(&want)
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0, f64::max);
                    worst = worst.max(case);
                }
            }
        }
    }
    worst
}
