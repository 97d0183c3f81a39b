//! A convex toy problem where exhaustive search is feasible: a binary
//! logistic model over a four-pixel image. Softmax cross-entropy of affine
//! logits is convex in the input, so the true maximum over the
//! perturbation box sits at a vertex and a dense grid that includes the
//! box corners finds it exactly.

#![allow(dead_code)]

use advgrid_core::attack::{pgd, AlphaSchedule, AttackConfig, AttackTarget};
use advgrid_core::tensor::{
    conv2d, global_avg_pool, softmax_cross_entropy, Conv2dSpec, Reduction, Tensor,
};
use advgrid_core::Result;

pub const EPSILON: f64 = 0.03;
pub const GRID_STEP: f64 = 1e-3;

/// Logit 0 is identically zero; logit 1 is `w . x + b` realized through the
/// production convolution path (2x2 valid kernel, then average pooling over
/// the 1x1 result).
pub struct ToyLogistic {
    pub w: [f64; 4],
    pub b: f64,
}

impl ToyLogistic {
    fn weights(&self) -> Tensor {
        let mut data = vec![0.0; 8];
        data[4..].copy_from_slice(&self.w);
        Tensor::from_vec(&[2, 1, 2, 2], data).expect("toy kernel")
    }

    fn bias(&self) -> Tensor {
        Tensor::from_vec(&[2], vec![0.0, self.b]).expect("toy bias")
    }

    /// Same loss computed with plain scalar arithmetic, for the oracle.
    pub fn scalar_loss(&self, x: &[f64], label: usize) -> f64 {
        let z = self.w.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() + self.b;
        let m = z.max(0.0);
        let lse = m + ((-m).exp() + (z - m).exp()).ln();
        lse - if label == 1 { z } else { 0.0 }
    }
}

impl AttackTarget for ToyLogistic {
    fn loss(&self, x: &Tensor, labels: &[usize]) -> Result<Tensor> {
        let z = conv2d(x, &self.weights(), &self.bias(), Conv2dSpec::default())?;
        let logits = global_avg_pool(&z)?;
        softmax_cross_entropy(&logits, labels, Reduction::Sum)
    }
}

/// Deterministic toy instance. Weights are bounded away from zero so no
/// box face is degenerate and the optimal vertex is unique.
pub fn instance(seed: u64) -> (ToyLogistic, [f64; 4], usize) {
    let raw = super::fill_pseudo(seed * 3 + 1, 4, -1.0, 1.0);
    let mut w = [0.0; 4];
    for (wi, &r) in w.iter_mut().zip(&raw) {
        *wi = r.signum() * (0.25 + 1.75 * r.abs());
    }
    let b = super::fill_pseudo(seed * 3 + 2, 1, -0.5, 0.5)[0];
    let x0_v = super::fill_pseudo(seed * 3 + 3, 4, 0.05, 0.95);
    let x0 = [x0_v[0], x0_v[1], x0_v[2], x0_v[3]];
    (ToyLogistic { w, b }, x0, (seed % 2) as usize)
}

/// Inclusive grid over one axis of the perturbation box.
fn axis_grid(lo: f64, hi: f64) -> Vec<f64> {
    let steps = ((hi - lo) / GRID_STEP).ceil().max(1.0) as usize;
    let mut g: Vec<f64> = (0..steps)
        .map(|k| lo + (hi - lo) * k as f64 / steps as f64)
        .collect();
    g.push(hi);
    g
}

/// Exhaustive maximum of the loss over the grid, corners included.
pub fn oracle_max(toy: &ToyLogistic, x0: &[f64; 4], label: usize) -> f64 {
    let axes: Vec<Vec<f64>> = x0
        .iter()
        .map(|&v| axis_grid((v - EPSILON).max(0.0), (v + EPSILON).min(1.0)))
        .collect();
    let mut best = f64::NEG_INFINITY;
    for &a in &axes[0] {
        for &b in &axes[1] {
            for &c in &axes[2] {
                for &d in &axes[3] {
                    best = best.max(toy.scalar_loss(&[a, b, c, d], label));
                }
            }
        }
    }
    best
}

/// Runs one instance end to end; returns (oracle optimum, loss PGD reached).
pub fn run_instance(seed: u64) -> (f64, f64) {
    let (toy, x0, label) = instance(seed);
    let best = oracle_max(&toy, &x0, label);
    let x = Tensor::from_vec(&[1, 1, 2, 2], x0.to_vec()).expect("toy input");
    let config = AttackConfig::pgd(EPSILON, AlphaSchedule::EpsOver4, 10, 9000 + seed);
    let adv = pgd(&toy, &x, &[label], &config).expect("pgd on the toy");
    let achieved = toy
        .loss(&adv, &[label])
        .expect("loss of the adversarial point")
        .data()[0];
    (best, achieved)
}
