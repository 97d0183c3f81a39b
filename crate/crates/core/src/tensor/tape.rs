//! Operation records and reverse-mode traversal.

use super::kernels as k;
use super::{Tensor, TensorId};
use crate::error::{Error, Result};
use std::collections::{HashMap, HashSet};
use std::sync::Arc;

/// How a tensor was produced. Each variant keeps handles to its inputs plus
/// whatever forward-pass values its backward rule needs (argmax indices,
/// softmax probabilities, batch statistics).
pub(crate) enum Op {
    Leaf,
    Add(Tensor, Tensor),
    Sub(Tensor, Tensor),
    Mul(Tensor, Tensor),
    Scale(Tensor, f64),
    SumAll(Tensor),
    Relu(Tensor),
    Conv2d {
        x: Tensor,
        w: Tensor,
        b: Tensor,
        geom: k::ConvGeom,
    },
    Dense {
        x: Tensor,
        w: Tensor,
        b: Tensor,
    },
    MaxPool {
        x: Tensor,
        arg: Arc<Vec<u32>>,
    },
    Gap {
        x: Tensor,
    },
    Concat {
        parts: Vec<Tensor>,
    },
    NormFrozen {
        x: Tensor,
        gamma: Tensor,
        beta: Tensor,
        mean: Arc<Vec<f64>>,
        var: Arc<Vec<f64>>,
    },
    NormBatch {
        x: Tensor,
        gamma: Tensor,
        beta: Tensor,
        mean: Arc<Vec<f64>>,
        var: Arc<Vec<f64>>,
    },
    SoftmaxCe {
        logits: Tensor,
        labels: Arc<Vec<usize>>,
        probs: Arc<Vec<f64>>,
        /// Reduction factor folded into the gradient: 1/n for mean, 1 for sum.
        scale: f64,
    },
}

impl Op {
    fn inputs(&self) -> Vec<&Tensor> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![a, b],
            Op::Scale(a, _) | Op::SumAll(a) | Op::Relu(a) => vec![a],
            Op::Conv2d { x, w, b, .. } => vec![x, w, b],
            Op::Dense { x, w, b } => vec![x, w, b],
            Op::MaxPool { x, .. } | Op::Gap { x } => vec![x],
            Op::Concat { parts } => parts.iter().collect(),
            Op::NormFrozen { x, gamma, beta, .. } | Op::NormBatch { x, gamma, beta, .. } => {
                vec![x, gamma, beta]
            }
            Op::SoftmaxCe { logits, .. } => vec![logits],
        }
    }
}

/// Topologically ordered list of the tracked tensors reachable from a root:
/// every tensor appears exactly once and after all of its tracked inputs.
pub struct Tape {
    nodes: Vec<Tensor>,
}

impl Tape {
    /// Walk the graph below `root`, visiting only tracked tensors.
    pub fn trace(root: &Tensor) -> Tape {
        let mut nodes = Vec::new();
        if !root.tracked() {
            return Tape { nodes };
        }
        let mut done: HashSet<TensorId> = HashSet::new();
        let mut progress: HashMap<TensorId, usize> = HashMap::new();
        let mut stack: Vec<Tensor> = vec![root.clone()];
        while let Some(top) = stack.last() {
            let top = top.clone();
            if done.contains(&top.id()) {
                stack.pop();
                continue;
            }
            let inputs: Vec<&Tensor> = top.op().inputs().into_iter().filter(|t| t.tracked()).collect();
            let idx = progress.entry(top.id()).or_insert(0);
            if *idx < inputs.len() {
                let child = inputs[*idx].clone();
                *idx += 1;
                if !done.contains(&child.id()) {
                    stack.push(child);
                }
            } else {
                done.insert(top.id());
                nodes.push(top);
                stack.pop();
            }
        }
        Tape { nodes }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn ids(&self) -> Vec<TensorId> {
        self.nodes.iter().map(|t| t.id()).collect()
    }

    /// Ids of the tracked inputs of node `i`, in argument order.
    pub fn input_ids(&self, i: usize) -> Vec<TensorId> {
        self.nodes[i]
            .op()
            .inputs()
            .into_iter()
            .filter(|t| t.tracked())
            .map(|t| t.id())
            .collect()
    }
}

fn add_into(map: &mut HashMap<TensorId, Vec<f64>>, id: TensorId, delta: Vec<f64>) {
    match map.entry(id) {
        std::collections::hash_map::Entry::Occupied(mut e) => {
            for (g, d) in e.get_mut().iter_mut().zip(&delta) {
                *g += d;
            }
        }
        std::collections::hash_map::Entry::Vacant(e) => {
            e.insert(delta);
        }
    }
}

fn nchw(t: &Tensor) -> (usize, usize, usize, usize) {
    let s = t.shape();
    (s[0], s[1], s[2], s[3])
}

/// Run reverse-mode accumulation from a scalar loss. Every `requires_grad`
/// leaf the loss depends on receives (accumulates) its gradient; repeated
/// calls without `zero_grad` keep accumulating.
pub fn backward(loss: &Tensor) -> Result<()> {
    if loss.numel() != 1 {
        return Err(Error::shape(
            "backward",
            format!("loss must be a scalar, got shape {:?}", loss.shape()),
        ));
    }
    if !loss.tracked() {
        return Err(Error::shape(
            "backward",
            "loss does not depend on any requires_grad leaf",
        ));
    }
    let tape = Tape::trace(loss);
    let mut grads: HashMap<TensorId, Vec<f64>> = HashMap::new();
    grads.insert(loss.id(), vec![1.0]);

    for node in tape.nodes.iter().rev() {
        let Some(g) = grads.remove(&node.id()) else {
            continue;
        };
        if node.requires_grad() {
            node.accumulate_grad(&g);
        }
        match node.op() {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if a.tracked() {
                    add_into(&mut grads, a.id(), g.clone());
                }
                if b.tracked() {
                    add_into(&mut grads, b.id(), g.clone());
                }
            }
            Op::Sub(a, b) => {
                if a.tracked() {
                    add_into(&mut grads, a.id(), g.clone());
                }
                if b.tracked() {
                    add_into(&mut grads, b.id(), g.iter().map(|v| -v).collect());
                }
            }
            Op::Mul(a, b) => {
                if a.tracked() {
                    let da = g.iter().zip(b.data()).map(|(gv, bv)| gv * bv).collect();
                    add_into(&mut grads, a.id(), da);
                }
                if b.tracked() {
                    let db = g.iter().zip(a.data()).map(|(gv, av)| gv * av).collect();
                    add_into(&mut grads, b.id(), db);
                }
            }
            Op::Scale(a, c) => {
                if a.tracked() {
                    add_into(&mut grads, a.id(), g.iter().map(|v| v * c).collect());
                }
            }
            Op::SumAll(a) => {
                if a.tracked() {
                    add_into(&mut grads, a.id(), vec![g[0]; a.numel()]);
                }
            }
            Op::Relu(a) => {
                if a.tracked() {
                    add_into(&mut grads, a.id(), k::relu_backward(node.data(), &g));
                }
            }
            Op::Conv2d { x, w, b, geom } => {
                let (dx, dw, db) = k::conv2d_backward(
                    x.data(),
                    w.data(),
                    geom,
                    &g,
                    x.tracked(),
                    w.tracked(),
                    b.tracked(),
                );
                if let Some(dx) = dx {
                    add_into(&mut grads, x.id(), dx);
                }
                if let Some(dw) = dw {
                    add_into(&mut grads, w.id(), dw);
                }
                if let Some(db) = db {
                    add_into(&mut grads, b.id(), db);
                }
            }
            Op::Dense { x, w, b } => {
                let n = x.shape()[0];
                let f = x.shape()[1];
                let o = w.shape()[0];
                let (dx, dw, db) = k::dense_backward(
                    x.data(),
                    w.data(),
                    &g,
                    n,
                    f,
                    o,
                    x.tracked(),
                    w.tracked(),
                    b.tracked(),
                );
                if let Some(dx) = dx {
                    add_into(&mut grads, x.id(), dx);
                }
                if let Some(dw) = dw {
                    add_into(&mut grads, w.id(), dw);
                }
                if let Some(db) = db {
                    add_into(&mut grads, b.id(), db);
                }
            }
            Op::MaxPool { x, arg } => {
                if x.tracked() {
                    add_into(&mut grads, x.id(), k::maxpool_backward(arg, &g, x.numel()));
                }
            }
            Op::Gap { x } => {
                if x.tracked() {
                    let (n, c, h, w) = nchw(x);
                    add_into(&mut grads, x.id(), k::global_avg_pool_backward(&g, n, c, h * w));
                }
            }
            Op::Concat { parts } => {
                let (n, _, h, w) = nchw(node);
                let plane = h * w;
                let total_c: usize = parts.iter().map(|p| p.shape()[1]).sum();
                let mut c_off = 0;
                for part in parts {
                    let pc = part.shape()[1];
                    if part.tracked() {
                        let mut dp = vec![0.0; part.numel()];
                        for ni in 0..n {
                            let src = ((ni * total_c) + c_off) * plane;
                            let dst = ni * pc * plane;
                            dp[dst..dst + pc * plane]
                                .copy_from_slice(&g[src..src + pc * plane]);
                        }
                        add_into(&mut grads, part.id(), dp);
                    }
                    c_off += pc;
                }
            }
            Op::NormFrozen {
                x,
                gamma,
                beta,
                mean,
                var,
            } => {
                let (n, c, h, w) = nchw(x);
                let (dx, dgamma, dbeta) = k::norm_frozen_backward(
                    x.data(),
                    gamma.data(),
                    mean,
                    var,
                    &g,
                    n,
                    c,
                    h * w,
                    x.tracked(),
                    gamma.tracked() || beta.tracked(),
                );
                if let Some(dx) = dx {
                    add_into(&mut grads, x.id(), dx);
                }
                if let (Some(dg), true) = (dgamma, gamma.tracked()) {
                    add_into(&mut grads, gamma.id(), dg);
                }
                if let (Some(db), true) = (dbeta, beta.tracked()) {
                    add_into(&mut grads, beta.id(), db);
                }
            }
            Op::NormBatch {
                x,
                gamma,
                beta,
                mean,
                var,
            } => {
                let (n, c, h, w) = nchw(x);
                let (dx, dgamma, dbeta) = k::norm_batch_backward(
                    x.data(),
                    gamma.data(),
                    mean,
                    var,
                    &g,
                    n,
                    c,
                    h * w,
                    x.tracked(),
                    gamma.tracked() || beta.tracked(),
                );
                if let Some(dx) = dx {
                    add_into(&mut grads, x.id(), dx);
                }
                if let (Some(dg), true) = (dgamma, gamma.tracked()) {
                    add_into(&mut grads, gamma.id(), dg);
                }
                if let (Some(db), true) = (dbeta, beta.tracked()) {
                    add_into(&mut grads, beta.id(), db);
                }
            }
            Op::SoftmaxCe {
                logits,
                labels,
                probs,
                scale,
            } => {
                if logits.tracked() {
                    let n = logits.shape()[0];
                    let c = logits.shape()[1];
                    let dz = k::softmax_ce_backward(probs, labels, n, c, scale * g[0]);
                    add_into(&mut grads, logits.id(), dz);
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::super::{add, mul, relu, scale, sub, sum_all};
    use super::*;

    #[test]
    fn scalar_chain_rule() {
        // y = 3x at x = 2: dy/dx = 3.
        let x = Tensor::param(&[1], vec![2.0]).unwrap();
        let y = scale(&x, 3.0);
        assert_eq!(y.item(), 6.0);
        backward(&y).unwrap();
        assert_eq!(x.grad().unwrap(), vec![3.0]);
    }

    #[test]
    fn grads_accumulate_until_reset() {
        let x = Tensor::param(&[1], vec![2.0]).unwrap();
        let y = scale(&x, 3.0);
        backward(&y).unwrap();
        backward(&y).unwrap();
        assert_eq!(x.grad().unwrap(), vec![6.0]);
        x.zero_grad();
        assert!(x.grad().is_none());
    }

    #[test]
    fn diamond_graph_sums_both_paths() {
        // y = x*x + x  =>  dy/dx = 2x + 1 = 5 at x = 2.
        let x = Tensor::param(&[1], vec![2.0]).unwrap();
        let sq = mul(&x, &x).unwrap();
        let y = add(&sq, &x).unwrap();
        backward(&y).unwrap();
        assert_eq!(x.grad().unwrap(), vec![5.0]);
    }

    #[test]
    fn sub_and_sum_gradients() {
        let a = Tensor::param(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let b = Tensor::param(&[3], vec![0.5, 0.5, 0.5]).unwrap();
        let y = sum_all(&sub(&a, &b).unwrap());
        backward(&y).unwrap();
        assert_eq!(a.grad().unwrap(), vec![1.0, 1.0, 1.0]);
        assert_eq!(b.grad().unwrap(), vec![-1.0, -1.0, -1.0]);
    }

    #[test]
    fn relu_spec_values_and_gradient() {
        // relu([-1, 0, 2]) = [0, 0, 2]; subgradient at 0 is 0.
        let x = Tensor::param(&[3], vec![-1.0, 0.0, 2.0]).unwrap();
        let y = relu(&x);
        assert_eq!(y.data(), &[0.0, 0.0, 2.0]);
        backward(&sum_all(&y)).unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn tape_orders_inputs_before_outputs_and_visits_once() {
        let x = Tensor::param(&[1], vec![2.0]).unwrap();
        let a = mul(&x, &x).unwrap();
        let b = add(&a, &x).unwrap();
        let y = scale(&b, 2.0);
        let tape = Tape::trace(&y);
        let ids = tape.ids();
        assert_eq!(ids.len(), 4, "x, x*x, +x, scale");
        let mut seen = std::collections::HashSet::new();
        for i in 0..tape.len() {
            for input in tape.input_ids(i) {
                assert!(seen.contains(&input), "input {input} after its consumer");
            }
            assert!(seen.insert(ids[i]), "node {} visited twice", ids[i]);
        }
        assert_eq!(*ids.last().unwrap(), y.id());
    }

    #[test]
    fn untracked_graphs_record_nothing() {
        let x = Tensor::from_vec(&[2], vec![1.0, -1.0]).unwrap();
        let y = relu(&x);
        assert!(!y.tracked());
        assert!(Tape::trace(&y).is_empty());
        assert!(backward(&sum_all(&y)).is_err());
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let x = Tensor::param(&[2], vec![1.0, 2.0]).unwrap();
        let y = scale(&x, 2.0);
        assert!(backward(&y).is_err());
    }
}
