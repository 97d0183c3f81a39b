//! NCHW tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is a cheap handle (`Arc`) around an immutable `f64` buffer
//! plus a record of the operation that produced it. Operations build the
//! graph on the fly (define-by-run); [`backward`] replays it in reverse
//! topological order and accumulates gradients into every leaf created with
//! `requires_grad`.
//!
//! Graph recording is driven by data flow: an op output keeps references to
//! its inputs only when at least one input is *tracked* (a `requires_grad`
//! leaf or something computed from one). Feeding detached tensors through a
//! network therefore costs no graph memory at all, which is what evaluation
//! does.
//!
//! Buffers are never mutated in place; "updating" a parameter means
//! replacing the handle. This keeps recorded graphs valid and makes sharing
//! across threads safe.

mod kernels;
mod ops;
mod tape;

pub use kernels::{conv_out_extent, softmax_rows, NORM_EPS};
pub use ops::{
    add, batch_norm_train, channel_norm, concat_channels, conv2d, dense, global_avg_pool,
    maxpool2d, mul, relu, scale, softmax_cross_entropy, sub, sum_all, Conv2dSpec, Reduction,
};
pub use tape::{backward, Tape};

use crate::error::{Error, Result};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use tape::Op;

pub type TensorId = u64;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

pub(crate) struct TensorInner {
    id: TensorId,
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
    op: Op,
    /// Gradients flow into or through this tensor.
    tracked: bool,
    /// Leaf that accumulates into `grad` during backward.
    requires_grad: bool,
    grad: Mutex<Option<Vec<f64>>>,
}

#[derive(Clone)]
pub struct Tensor {
    inner: Arc<TensorInner>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.inner.id)
            .field("shape", &self.inner.shape)
            .field("tracked", &self.inner.tracked)
            .finish()
    }
}

fn check_shape(shape: &[usize], len: usize) -> Result<()> {
    let numel: usize = shape.iter().product();
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::shape("tensor", format!("degenerate shape {shape:?}")));
    }
    if numel != len {
        return Err(Error::shape(
            "tensor",
            format!("shape {shape:?} wants {numel} elements, data has {len}"),
        ));
    }
    Ok(())
}

impl Tensor {
    pub(crate) fn make(shape: Vec<usize>, data: Vec<f64>, op: Op, tracked: bool, requires_grad: bool) -> Tensor {
        Tensor {
            inner: Arc::new(TensorInner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data: Arc::new(data),
                op,
                tracked,
                requires_grad,
                grad: Mutex::new(None),
            }),
        }
    }

    /// Leaf with no gradient tracking.
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        check_shape(shape, data.len())?;
        Ok(Tensor::make(shape.to_vec(), data, Op::Leaf, false, false))
    }

    /// Leaf that accumulates a gradient during [`backward`].
    pub fn param(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        check_shape(shape, data.len())?;
        Ok(Tensor::make(shape.to_vec(), data, Op::Leaf, true, true))
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        let numel = shape.iter().product();
        Tensor::make(shape.to_vec(), vec![0.0; numel], Op::Leaf, false, false)
    }

    pub fn full(shape: &[usize], v: f64) -> Tensor {
        let numel = shape.iter().product();
        Tensor::make(shape.to_vec(), vec![v; numel], Op::Leaf, false, false)
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor::make(vec![1], vec![v], Op::Leaf, false, false)
    }

    /// Uniform fill over `[lo, hi)`, consuming the generator in row-major
    /// element order.
    pub fn rand_uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut impl Rng) -> Tensor {
        let numel: usize = shape.iter().product();
        let data = (0..numel).map(|_| lo + rng.random::<f64>() * (hi - lo)).collect();
        Tensor::make(shape.to_vec(), data, Op::Leaf, false, false)
    }

    /// Gaussian fill, row-major order.
    pub fn rand_normal(shape: &[usize], mean: f64, std: f64, rng: &mut impl Rng) -> Tensor {
        let numel: usize = shape.iter().product();
        let dist = Normal::new(mean, std).expect("std must be finite and non-negative");
        let data = (0..numel).map(|_| dist.sample(rng)).collect();
        Tensor::make(shape.to_vec(), data, Op::Leaf, false, false)
    }

    pub fn id(&self) -> TensorId {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn numel(&self) -> usize {
        self.inner.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.inner.data
    }

    /// Shared handle to the underlying buffer (used by checkpoint writers).
    pub fn data_arc(&self) -> Arc<Vec<f64>> {
        Arc::clone(&self.inner.data)
    }

    /// Value of a single-element tensor.
    ///
    /// Panics when the tensor holds more than one element; callers use this
    /// only on losses and test scalars.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.inner.data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub fn tracked(&self) -> bool {
        self.inner.tracked
    }

    /// Copy of the accumulated gradient, if backward has produced one.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.grad.lock().unwrap().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.lock().unwrap() = None;
    }

    pub(crate) fn accumulate_grad(&self, delta: &[f64]) {
        let mut slot = self.inner.grad.lock().unwrap();
        match slot.as_mut() {
            Some(g) => {
                for (gv, dv) in g.iter_mut().zip(delta) {
                    *gv += dv;
                }
            }
            None => *slot = Some(delta.to_vec()),
        }
    }

    /// A leaf view of the same buffer with no graph history and no gradient.
    pub fn detached(&self) -> Tensor {
        Tensor {
            inner: Arc::new(TensorInner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape: self.inner.shape.clone(),
                data: Arc::clone(&self.inner.data),
                op: Op::Leaf,
                tracked: false,
                requires_grad: false,
                grad: Mutex::new(None),
            }),
        }
    }

    /// A fresh gradient-accumulating leaf sharing this buffer.
    pub fn with_requires_grad(&self) -> Tensor {
        Tensor {
            inner: Arc::new(TensorInner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape: self.inner.shape.clone(),
                data: Arc::clone(&self.inner.data),
                op: Op::Leaf,
                tracked: true,
                requires_grad: true,
                grad: Mutex::new(None),
            }),
        }
    }

    pub(crate) fn op(&self) -> &Op {
        &self.inner.op
    }
}
