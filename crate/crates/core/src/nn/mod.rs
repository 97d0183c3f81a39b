//! Model families, the desk-scale registry, and trained-model instances.
//!
//! Four families share one skeleton (stem, three residual or dense stages,
//! global-average-pool head) and differ in their block internals:
//!
//! * `brainnet`   - basic residual blocks, two extra blocks appended to the
//!   final stage
//! * `brainnext`  - residual blocks whose 3x3 convolutions are grouped; the
//!   cardinality is the number of parallel paths, each of width
//!   `stage_width / cardinality`
//! * `dilation`   - the `brainnet` layout with the two appended final-stage
//!   blocks dilated at rate 2, 3, or 4 (parameter count is unchanged, only
//!   the receptive field grows)
//! * `densenet_surrogate` - two dense blocks with channel concatenation,
//!   used as the attacker's substitute model
//!
//! Normalization layers carry running mean/variance buffers. Training mode
//! normalizes with batch statistics and refreshes the buffers; evaluation
//! and attack-time forwards use the frozen buffers, so gradients are
//! deterministic functions of the input.

mod build;
mod checkpoint;

pub use checkpoint::{read_checkpoint, write_checkpoint};

use crate::error::{Error, Result};
use crate::seed::{self, domain};
use crate::tensor::{self, Tensor};
use build::{Node, Plan, PlanOp};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Fraction kept for running statistics updates:
/// `running = (1 - m) * running + m * batch`.
pub const RUNNING_STAT_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Brainnet,
    Brainnext,
    Dilation,
    DensenetSurrogate,
}

impl Family {
    pub fn as_str(&self) -> &'static str {
        match self {
            Family::Brainnet => "brainnet",
            Family::Brainnext => "brainnext",
            Family::Dilation => "dilation",
            Family::DensenetSurrogate => "densenet_surrogate",
        }
    }

    /// Grouping used by the transfer summary. Brainnet and its dilated
    /// variants share a super-family because they share the residual layout.
    pub fn super_family(&self) -> &'static str {
        match self {
            Family::Brainnet | Family::Dilation => "resnet_like",
            Family::Brainnext => "brainnext",
            Family::DensenetSurrogate => "densenet",
        }
    }
}

/// Architecture description. Building the same spec with the same seed
/// always yields bit-identical parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub family: Family,
    /// (channels, height, width) of the images this model consumes.
    pub input_shape: (usize, usize, usize),
    pub num_classes: usize,
    /// Residual families: channel width per stage. Densenet: growth rate
    /// per dense block.
    pub stage_widths: Vec<usize>,
    /// Residual families: blocks per stage. Densenet: layers per dense block.
    pub blocks_per_stage: Vec<usize>,
    /// Number of parallel paths in brainnext blocks; 1 elsewhere.
    pub cardinality: usize,
    /// Dilation rate of the two appended final-stage blocks; 1 outside the
    /// dilation family.
    pub dilation_rate: usize,
}

impl ModelSpec {
    pub fn with_input_shape(mut self, shape: (usize, usize, usize)) -> Self {
        self.input_shape = shape;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |reason: String| {
            Err(Error::InvalidSpec {
                name: self.name.clone(),
                reason,
            })
        };
        if self.name.is_empty() {
            return fail("empty name".into());
        }
        if self.num_classes < 2 {
            return fail(format!("num_classes {} < 2", self.num_classes));
        }
        let (c, h, w) = self.input_shape;
        if c == 0 || h == 0 || w == 0 {
            return fail(format!("degenerate input shape {:?}", self.input_shape));
        }
        if self.stage_widths.is_empty() || self.stage_widths.len() != self.blocks_per_stage.len() {
            return fail(format!(
                "stage_widths ({}) and blocks_per_stage ({}) must be non-empty and equal length",
                self.stage_widths.len(),
                self.blocks_per_stage.len()
            ));
        }
        if self.stage_widths.iter().any(|&w| w == 0) || self.blocks_per_stage.iter().any(|&b| b == 0)
        {
            return fail("zero stage width or block count".into());
        }
        if self.cardinality == 0 {
            return fail("cardinality must be at least 1".into());
        }
        if !(1..=4).contains(&self.dilation_rate) {
            return fail(format!("dilation_rate {} outside 1..=4", self.dilation_rate));
        }
        match self.family {
            Family::Brainnext => {
                for &w in &self.stage_widths {
                    if w % self.cardinality != 0 {
                        return fail(format!(
                            "cardinality {} does not divide stage width {w}",
                            self.cardinality
                        ));
                    }
                }
            }
            Family::Dilation => {
                if *self.blocks_per_stage.last().unwrap() < 2 {
                    return fail("dilation family needs at least 2 blocks in the final stage".into());
                }
            }
            Family::Brainnet | Family::DensenetSurrogate => {}
        }
        if self.family != Family::Dilation && self.dilation_rate != 1 {
            return fail(format!(
                "dilation_rate {} only valid for the dilation family",
                self.dilation_rate
            ));
        }
        // The full layer walk catches inputs too small for the stem/stage
        // strides (it computes every intermediate extent).
        build::shape_trace(self).map(|_| ())
    }
}

/// The eight desk-scale specs measured by the default experiment plan.
/// Input shape defaults to full resolution; variants override it.
pub fn registry_default() -> Vec<ModelSpec> {
    let input = (3, 64, 64);
    let residual = |name: &str, family, blocks: Vec<usize>, cardinality, dilation_rate| ModelSpec {
        name: name.into(),
        family,
        input_shape: input,
        num_classes: 3,
        stage_widths: vec![16, 32, 64],
        blocks_per_stage: blocks,
        cardinality,
        dilation_rate,
    };
    vec![
        // Baseline residual net with two extra final-stage blocks.
        residual("brainnet", Family::Brainnet, vec![2, 2, 4], 1, 1),
        residual("brainnext_small", Family::Brainnext, vec![2, 2, 2], 4, 1),
        residual("brainnext_medium", Family::Brainnext, vec![2, 3, 3], 4, 1),
        residual("brainnext_large", Family::Brainnext, vec![3, 3, 4], 4, 1),
        residual("dilation2", Family::Dilation, vec![2, 2, 4], 1, 2),
        residual("dilation3", Family::Dilation, vec![2, 2, 4], 1, 3),
        residual("dilation4", Family::Dilation, vec![2, 2, 4], 1, 4),
        ModelSpec {
            name: "densenet_surrogate".into(),
            family: Family::DensenetSurrogate,
            input_shape: input,
            num_classes: 3,
            stage_widths: vec![8, 8],      // growth per dense block
            blocks_per_stage: vec![4, 4],  // concatenating layers per block
            cardinality: 1,
            dilation_rate: 1,
        },
    ]
}

pub fn registry_model_names() -> Vec<String> {
    registry_default().into_iter().map(|s| s.name).collect()
}

#[derive(Debug, Clone)]
pub struct NamedParam {
    pub name: String,
    pub tensor: Tensor,
}

/// Running statistics of one normalization layer.
#[derive(Debug, Clone)]
pub struct NormStats {
    pub name: String,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Debug)]
pub struct ModelInstance {
    spec: ModelSpec,
    plan: Arc<Plan>,
    params: Vec<NamedParam>,
    norms: Vec<NormStats>,
    frozen_prefix: usize,
}

/// Validate a spec and initialize its parameters from `seed`.
///
/// Weights draw from a fan-in-scaled Gaussian (std `sqrt(2 / fan_in)`),
/// biases start at zero, normalization starts as the identity map.
pub fn build_model(spec: &ModelSpec, init_seed: u64) -> Result<ModelInstance> {
    spec.validate()?;
    let rng = seed::rng(init_seed, &[domain::INIT]);
    let (plan, params, norms) = build::build_plan(spec, rng)?;
    Ok(ModelInstance {
        spec: spec.clone(),
        plan: Arc::new(plan),
        params,
        norms,
        frozen_prefix: 0,
    })
}

enum NormMode {
    Frozen,
    Train,
}

impl ModelInstance {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn name(&self) -> &str {
        &self.spec.name
    }

    pub fn params(&self) -> &[NamedParam] {
        &self.params
    }

    pub fn norms(&self) -> &[NormStats] {
        &self.norms
    }

    pub fn frozen_prefix(&self) -> usize {
        self.frozen_prefix
    }

    pub fn set_frozen_prefix(&mut self, n: usize) {
        assert!(n <= self.params.len());
        self.frozen_prefix = n;
    }

    /// Total learnable scalar count (excludes running-statistic buffers).
    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    /// Replace one normalization layer's running statistics (snapshot
    /// restoration after early stopping).
    pub fn set_norm_stats(&mut self, idx: usize, mean: Vec<f64>, var: Vec<f64>) {
        let stats = &mut self.norms[idx];
        assert_eq!(stats.mean.len(), mean.len());
        assert_eq!(stats.var.len(), var.len());
        stats.mean = mean;
        stats.var = var;
    }

    /// Swap in an updated parameter buffer (the optimizer step).
    pub fn replace_param(&mut self, idx: usize, data: Vec<f64>) {
        let old = &self.params[idx].tensor;
        debug_assert_eq!(old.numel(), data.len());
        let shape = old.shape().to_vec();
        self.params[idx].tensor =
            Tensor::param(&shape, data).expect("replacement parameter shape already validated");
    }

    /// A view whose parameters are detached from gradient tracking. Attack
    /// and evaluation forwards use this so backward prunes every parameter
    /// branch and threads never contend on gradient slots.
    pub fn frozen_view(&self) -> ModelInstance {
        ModelInstance {
            spec: self.spec.clone(),
            plan: Arc::clone(&self.plan),
            params: self
                .params
                .iter()
                .map(|p| NamedParam {
                    name: p.name.clone(),
                    tensor: p.tensor.detached(),
                })
                .collect(),
            norms: self.norms.clone(),
            frozen_prefix: self.frozen_prefix,
        }
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let (c, h, w) = self.spec.input_shape;
        if x.shape().len() != 4 || x.shape()[1] != c || x.shape()[2] != h || x.shape()[3] != w {
            return Err(Error::shape(
                "forward",
                format!(
                    "model `{}` expects [n, {c}, {h}, {w}], got {:?}",
                    self.spec.name,
                    x.shape()
                ),
            ));
        }
        Ok(())
    }

    /// Evaluation/attack forward with frozen normalization statistics.
    ///
    /// With `record_tape` the result carries the autodiff graph (gradients
    /// w.r.t. every tracked input reach it through [`tensor::backward`]);
    /// without it the pass allocates no graph at all.
    pub fn forward(&self, x: &Tensor, record_tape: bool) -> Result<Tensor> {
        self.check_input(x)?;
        let x = if record_tape { x.clone() } else { x.detached() };
        self.run(&x, NormMode::Frozen, record_tape, &mut Vec::new())
    }

    /// Training forward: batch-statistics normalization, fresh running
    /// buffer update, tape always recorded.
    pub fn forward_training(&mut self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut updates: Vec<(usize, Vec<f64>, Vec<f64>)> = Vec::new();
        let out = self.run(x, NormMode::Train, true, &mut updates)?;
        for (idx, mean, var) in updates {
            let stats = &mut self.norms[idx];
            for (r, b) in stats.mean.iter_mut().zip(&mean) {
                *r = (1.0 - RUNNING_STAT_MOMENTUM) * *r + RUNNING_STAT_MOMENTUM * b;
            }
            for (r, b) in stats.var.iter_mut().zip(&var) {
                *r = (1.0 - RUNNING_STAT_MOMENTUM) * *r + RUNNING_STAT_MOMENTUM * b;
            }
        }
        Ok(out)
    }

    /// Frozen-prefix tensors are detached even on recorded passes, so they
    /// receive no gradients and the optimizer can skip them.
    fn param_tensor(&self, idx: usize, record: bool) -> Tensor {
        if record && idx >= self.frozen_prefix {
            self.params[idx].tensor.clone()
        } else {
            self.params[idx].tensor.detached()
        }
    }

    fn run_ops(
        &self,
        ops: &[PlanOp],
        mut x: Tensor,
        mode: &NormMode,
        record: bool,
        updates: &mut Vec<(usize, Vec<f64>, Vec<f64>)>,
    ) -> Result<Tensor> {
        for op in ops {
            x = match *op {
                PlanOp::Conv { w, b, spec } => tensor::conv2d(
                    &x,
                    &self.param_tensor(w, record),
                    &self.param_tensor(b, record),
                    spec,
                )?,
                PlanOp::Norm { gamma, beta, buf } => {
                    let g = self.param_tensor(gamma, record);
                    let bt = self.param_tensor(beta, record);
                    match mode {
                        NormMode::Frozen => {
                            let stats = &self.norms[buf];
                            tensor::channel_norm(&x, &g, &bt, &stats.mean, &stats.var)?
                        }
                        NormMode::Train => {
                            let (y, mean, var) = tensor::batch_norm_train(&x, &g, &bt)?;
                            updates.push((buf, mean, var));
                            y
                        }
                    }
                }
                PlanOp::Relu => tensor::relu(&x),
                PlanOp::MaxPool { window, stride } => tensor::maxpool2d(&x, window, stride)?,
            };
        }
        Ok(x)
    }

    fn run(
        &self,
        x: &Tensor,
        mode: NormMode,
        record: bool,
        updates: &mut Vec<(usize, Vec<f64>, Vec<f64>)>,
    ) -> Result<Tensor> {
        let plan = Arc::clone(&self.plan);
        let mut x = x.clone();
        for node in &plan.nodes {
            x = match node {
                Node::Seq(ops) => self.run_ops(ops, x, &mode, record, updates)?,
                Node::Residual { main, shortcut } => {
                    let branch = self.run_ops(main, x.clone(), &mode, record, updates)?;
                    let skip = if shortcut.is_empty() {
                        x
                    } else {
                        self.run_ops(shortcut, x, &mode, record, updates)?
                    };
                    tensor::relu(&tensor::add(&branch, &skip)?)
                }
                Node::DenseLayer(ops) => {
                    let fresh = self.run_ops(ops, x.clone(), &mode, record, updates)?;
                    tensor::concat_channels(&[x, fresh])?
                }
                Node::Gap => tensor::global_avg_pool(&x)?,
                Node::Classifier { w, b } => tensor::dense(
                    &x,
                    &self.param_tensor(*w, record),
                    &self.param_tensor(*b, record),
                )?,
            };
        }
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{backward, softmax_cross_entropy, Reduction};

    fn tiny_spec() -> ModelSpec {
        ModelSpec {
            name: "tiny".into(),
            family: Family::Brainnet,
            input_shape: (3, 8, 8),
            num_classes: 3,
            stage_widths: vec![4, 8],
            blocks_per_stage: vec![1, 2],
            cardinality: 1,
            dilation_rate: 1,
        }
    }

    #[test]
    fn registry_has_eight_uniquely_named_models() {
        let specs = registry_default();
        assert_eq!(specs.len(), 8);
        let names: std::collections::HashSet<_> = specs.iter().map(|s| s.name.clone()).collect();
        assert_eq!(names.len(), 8);
        for s in &specs {
            s.validate().unwrap();
        }
    }

    #[test]
    fn same_seed_same_init_different_seed_different_init() {
        let spec = tiny_spec();
        let a = build_model(&spec, 7).unwrap();
        let b = build_model(&spec, 7).unwrap();
        let c = build_model(&spec, 8).unwrap();
        for (pa, pb) in a.params().iter().zip(b.params()) {
            assert_eq!(pa.tensor.data(), pb.tensor.data(), "param {}", pa.name);
        }
        let identical = a
            .params()
            .iter()
            .zip(c.params())
            .all(|(pa, pc)| pa.tensor.data() == pc.tensor.data());
        assert!(!identical, "different seeds produced identical weights");
    }

    #[test]
    fn dilation_preserves_parameter_count() {
        let mut counts = Vec::new();
        for name in ["brainnet", "dilation2", "dilation3", "dilation4"] {
            let spec = registry_default()
                .into_iter()
                .find(|s| s.name == name)
                .unwrap()
                .with_input_shape((3, 16, 16));
            counts.push(build_model(&spec, 1).unwrap().parameter_count());
        }
        assert!(counts.windows(2).all(|w| w[0] == w[1]), "{counts:?}");
    }

    #[test]
    fn grouped_convolution_reduces_parameter_count() {
        let base = tiny_spec();
        let mut grouped = base.clone();
        grouped.family = Family::Brainnext;
        grouped.cardinality = 4;
        let full = build_model(&base, 1).unwrap().parameter_count();
        let thin = build_model(&grouped, 1).unwrap().parameter_count();
        assert!(thin < full, "grouped {thin} vs full {full}");
    }

    #[test]
    fn brainnext_sizes_are_strictly_ordered() {
        let specs = registry_default();
        let count = |name: &str| {
            let s = specs
                .iter()
                .find(|s| s.name == name)
                .unwrap()
                .clone()
                .with_input_shape((3, 16, 16));
            build_model(&s, 1).unwrap().parameter_count()
        };
        let small = count("brainnext_small");
        let medium = count("brainnext_medium");
        let large = count("brainnext_large");
        assert!(small < medium && medium < large, "{small} {medium} {large}");
    }

    #[test]
    fn forward_shapes_and_batch_independence() {
        let spec = tiny_spec();
        let model = build_model(&spec, 3).unwrap();
        let img: Vec<f64> = (0..3 * 8 * 8).map(|i| (i % 7) as f64 / 7.0).collect();
        let mut batch = img.clone();
        batch.extend((0..3 * 8 * 8).map(|i| (i % 5) as f64 / 5.0));
        let single = model
            .forward(&Tensor::from_vec(&[1, 3, 8, 8], img).unwrap(), false)
            .unwrap();
        let pair = model
            .forward(&Tensor::from_vec(&[2, 3, 8, 8], batch).unwrap(), false)
            .unwrap();
        assert_eq!(single.shape(), &[1, 3]);
        assert_eq!(pair.shape(), &[2, 3]);
        // Frozen normalization makes rows independent of batch company.
        for (a, b) in single.data().iter().zip(&pair.data()[..3]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn eval_forward_records_no_graph_but_taped_forward_does() {
        let spec = tiny_spec();
        let model = build_model(&spec, 3).unwrap();
        let x = Tensor::from_vec(&[1, 3, 8, 8], vec![0.5; 3 * 8 * 8]).unwrap();
        let silent = model.forward(&x, false).unwrap();
        assert!(!silent.tracked());
        let taped = model.forward(&x, true).unwrap();
        assert!(taped.tracked());
        // Same numbers either way.
        for (a, b) in silent.data().iter().zip(taped.data()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn input_gradients_flow_through_frozen_view() {
        let spec = tiny_spec();
        let model = build_model(&spec, 3).unwrap().frozen_view();
        let x = Tensor::param(&[1, 3, 8, 8], vec![0.4; 3 * 8 * 8]).unwrap();
        let logits = model.forward(&x, true).unwrap();
        let loss = softmax_cross_entropy(&logits, &[1], Reduction::Sum).unwrap();
        backward(&loss).unwrap();
        let g = x.grad().unwrap();
        assert!(g.iter().any(|&v| v != 0.0), "all-zero input gradient");
        // Parameters stayed grad-free.
        assert!(model.params().iter().all(|p| p.tensor.grad().is_none()));
    }

    #[test]
    fn residual_stage_with_zeroed_main_path_acts_as_relu_of_input() {
        // Stage 2 of this spec keeps width and stride, so shortcuts are
        // identity; zeroing the main-path parameters must reduce each block
        // to relu(x).
        let spec = ModelSpec {
            name: "idstage".into(),
            family: Family::Brainnet,
            input_shape: (4, 6, 6),
            num_classes: 2,
            stage_widths: vec![4],
            blocks_per_stage: vec![2],
            cardinality: 1,
            dilation_rate: 1,
        };
        let mut model = build_model(&spec, 5).unwrap();
        let zero_names: Vec<usize> = model
            .params()
            .iter()
            .enumerate()
            .filter(|(_, p)| p.name.contains(".b") && !p.name.contains("down"))
            .map(|(i, _)| i)
            .collect();
        for idx in zero_names {
            let n = model.params()[idx].tensor.numel();
            model.replace_param(idx, vec![0.0; n]);
        }
        // Bypass the stem by feeding its output shape directly: run only the
        // stage nodes. Easier: compare full forward against stem+head with
        // blocks removed is awkward, so instead check logits equal a model
        // whose stage is pure identity. Use the plan property directly:
        // relu(relu(x)) == relu(x), so two zeroed blocks compose to one relu.
        let x = Tensor::from_vec(&[1, 4, 6, 6], (0..144).map(|i| i as f64 / 72.0 - 1.0).collect())
            .unwrap();
        let y = model.forward(&x, false).unwrap();
        // The reference: zero blocks mean stage output = relu(stem output);
        // rebuild stemless equivalent by hand. The spec's stem is
        // conv-norm-relu-pool; replicate with the same parameters.
        let stem_out = {
            let w = &model.params()[0].tensor; // stem.conv.w
            let b = &model.params()[1].tensor; // stem.conv.b
            let gamma = &model.params()[2].tensor;
            let beta = &model.params()[3].tensor;
            let stats = &model.norms()[0];
            let conv = tensor::conv2d(
                &x,
                &w.detached(),
                &b.detached(),
                crate::tensor::Conv2dSpec {
                    stride: 2,
                    pad: 1,
                    dilation: 1,
                    groups: 1,
                },
            )
            .unwrap();
            let normed =
                tensor::channel_norm(&conv, &gamma.detached(), &beta.detached(), &stats.mean, &stats.var)
                    .unwrap();
            tensor::maxpool2d(&tensor::relu(&normed), 2, 2).unwrap()
        };
        let after_stage = tensor::relu(&stem_out);
        let pooled = tensor::global_avg_pool(&after_stage).unwrap();
        let fc_w = model.params().iter().find(|p| p.name == "head.fc.w").unwrap();
        let fc_b = model.params().iter().find(|p| p.name == "head.fc.b").unwrap();
        let want = tensor::dense(&pooled, &fc_w.tensor.detached(), &fc_b.tensor.detached()).unwrap();
        for (a, b) in y.data().iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-12, "stage did not reduce to relu of shortcut");
        }
    }

    #[test]
    fn validate_rejects_bad_specs() {
        let mut s = tiny_spec();
        s.cardinality = 0;
        assert!(s.validate().is_err());

        let mut s = tiny_spec();
        s.dilation_rate = 5;
        assert!(s.validate().is_err());

        let mut s = tiny_spec();
        s.dilation_rate = 2; // not the dilation family
        assert!(s.validate().is_err());

        let mut s = tiny_spec();
        s.family = Family::Brainnext;
        s.cardinality = 3; // does not divide width 4
        assert!(s.validate().is_err());

        let mut s = tiny_spec();
        s.input_shape = (3, 2, 2); // too small for stem + stages
        assert!(s.validate().is_err());

        let mut s = tiny_spec();
        s.blocks_per_stage = vec![1];
        assert!(s.validate().is_err());
    }

    #[test]
    fn registry_models_accept_the_probe_resolution() {
        // 8x8 probes keep finite-difference checks affordable; every
        // registry family must stay spatially valid at that size.
        for spec in registry_default() {
            let spec = spec.with_input_shape((3, 8, 8));
            spec.validate().unwrap();
            let model = build_model(&spec, 11).unwrap();
            let x = Tensor::from_vec(&[1, 3, 8, 8], vec![0.5; 3 * 8 * 8]).unwrap();
            let y = model.forward(&x, false).unwrap();
            assert_eq!(y.shape(), &[1, 3], "{}", spec.name);
            assert!(y.data().iter().all(|v| v.is_finite()), "{}", spec.name);
        }
    }
}
