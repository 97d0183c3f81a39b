//! Layer plans: the bridge from a [`ModelSpec`](super::ModelSpec) to an
//! executable operation sequence plus freshly initialized parameters.
//!
//! A plan never serializes; checkpoints store the spec and rebuild the plan
//! on load. Parameter creation order is fixed by construction (stem, stages
//! in order, head), which is what the two-phase trainer's frozen prefix and
//! the checkpoint layout both rely on.

use super::{ModelSpec, NamedParam, NormStats};
use crate::error::{Error, Result};
use crate::tensor::{conv_out_extent, Conv2dSpec, Tensor};
use rand_chacha::ChaCha8Rng;

#[derive(Debug)]
pub(crate) enum PlanOp {
    Conv { w: usize, b: usize, spec: Conv2dSpec },
    Norm { gamma: usize, beta: usize, buf: usize },
    Relu,
    MaxPool { window: usize, stride: usize },
}

#[derive(Debug)]
pub(crate) enum Node {
    Seq(Vec<PlanOp>),
    /// relu(main(x) + shortcut(x)); an empty shortcut is the identity.
    Residual {
        main: Vec<PlanOp>,
        shortcut: Vec<PlanOp>,
    },
    /// concat_channels([x, ops(x)]).
    DenseLayer(Vec<PlanOp>),
    Gap,
    Classifier { w: usize, b: usize },
}

#[derive(Debug)]
pub(crate) struct Plan {
    pub nodes: Vec<Node>,
}

/// Stem shared by every family: 3x3 stride-2 convolution, norm, relu, then
/// a 2x2 max pool. Quarters each spatial extent.
const STEM_STRIDE: usize = 2;

struct Builder {
    params: Vec<NamedParam>,
    norms: Vec<NormStats>,
    rng: ChaCha8Rng,
}

impl Builder {
    fn new(rng: ChaCha8Rng) -> Builder {
        Builder {
            params: Vec::new(),
            norms: Vec::new(),
            rng,
        }
    }

    /// Fan-in-scaled Gaussian weights, zero bias.
    fn conv(
        &mut self,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        dilation: usize,
        groups: usize,
    ) -> PlanOp {
        let cg = cin / groups;
        let fan_in = (cg * k * k) as f64;
        let std = (2.0 / fan_in).sqrt();
        let w = Tensor::rand_normal(&[cout, cg, k, k], 0.0, std, &mut self.rng).with_requires_grad();
        let b = Tensor::zeros(&[cout]).with_requires_grad();
        let wi = self.push(format!("{name}.w"), w);
        let bi = self.push(format!("{name}.b"), b);
        PlanOp::Conv {
            w: wi,
            b: bi,
            spec: Conv2dSpec {
                stride,
                pad,
                dilation,
                groups,
            },
        }
    }

    /// Identity-initialized normalization (gamma 1, beta 0, mean 0, var 1).
    fn norm(&mut self, name: &str, c: usize) -> PlanOp {
        let gamma = Tensor::full(&[c], 1.0).with_requires_grad();
        let beta = Tensor::zeros(&[c]).with_requires_grad();
        let gi = self.push(format!("{name}.gamma"), gamma);
        let bi = self.push(format!("{name}.beta"), beta);
        self.norms.push(NormStats {
            name: name.to_string(),
            mean: vec![0.0; c],
            var: vec![1.0; c],
        });
        PlanOp::Norm {
            gamma: gi,
            beta: bi,
            buf: self.norms.len() - 1,
        }
    }

    fn dense(&mut self, name: &str, fin: usize, fout: usize) -> (usize, usize) {
        let std = (2.0 / fin as f64).sqrt();
        let w = Tensor::rand_normal(&[fout, fin], 0.0, std, &mut self.rng).with_requires_grad();
        let b = Tensor::zeros(&[fout]).with_requires_grad();
        (
            self.push(format!("{name}.w"), w),
            self.push(format!("{name}.b"), b),
        )
    }

    fn push(&mut self, name: String, tensor: Tensor) -> usize {
        self.params.push(NamedParam { name, tensor });
        self.params.len() - 1
    }

    fn stem(&mut self, cin: usize, width: usize) -> Node {
        let conv = self.conv("stem.conv", cin, width, 3, STEM_STRIDE, 1, 1, 1);
        let norm = self.norm("stem.norm", width);
        Node::Seq(vec![
            conv,
            norm,
            PlanOp::Relu,
            PlanOp::MaxPool { window: 2, stride: 2 },
        ])
    }
}

/// Residual block: conv-norm-relu-conv-norm on the main path, optional
/// 1x1-conv-norm shortcut when stride or width changes, relu after the add.
/// Dilated blocks pad by the dilation rate, so stride-1 blocks preserve
/// spatial extent at every rate.
#[allow(clippy::too_many_arguments)]
fn residual_block(
    b: &mut Builder,
    name: &str,
    cin: usize,
    cout: usize,
    stride: usize,
    dilation: usize,
    groups: usize,
) -> Node {
    let main = vec![
        b.conv(
            &format!("{name}.conv1"),
            cin,
            cout,
            3,
            stride,
            dilation,
            dilation,
            groups,
        ),
        b.norm(&format!("{name}.norm1"), cout),
        PlanOp::Relu,
        b.conv(
            &format!("{name}.conv2"),
            cout,
            cout,
            3,
            1,
            dilation,
            dilation,
            groups,
        ),
        b.norm(&format!("{name}.norm2"), cout),
    ];
    let shortcut = if stride != 1 || cin != cout {
        vec![
            b.conv(&format!("{name}.down.conv"), cin, cout, 1, stride, 0, 1, 1),
            b.norm(&format!("{name}.down.norm"), cout),
        ]
    } else {
        Vec::new()
    };
    Node::Residual { main, shortcut }
}

fn residual_plan(spec: &ModelSpec, rng: ChaCha8Rng) -> (Plan, Vec<NamedParam>, Vec<NormStats>) {
    let mut b = Builder::new(rng);
    let (cin, _, _) = spec.input_shape;
    let groups = if spec.family == super::Family::Brainnext {
        spec.cardinality
    } else {
        1
    };
    let mut nodes = vec![b.stem(cin, spec.stage_widths[0])];
    let mut channels = spec.stage_widths[0];
    let last_stage = spec.stage_widths.len() - 1;
    for (si, (&width, &blocks)) in spec
        .stage_widths
        .iter()
        .zip(&spec.blocks_per_stage)
        .enumerate()
    {
        for bi in 0..blocks {
            let stride = if si > 0 && bi == 0 { 2 } else { 1 };
            // The dilation family dilates exactly the two blocks appended at
            // the end of the final stage.
            let dilated = spec.family == super::Family::Dilation
                && si == last_stage
                && bi + 2 >= blocks;
            let rate = if dilated { spec.dilation_rate } else { 1 };
            nodes.push(residual_block(
                &mut b,
                &format!("s{si}.b{bi}"),
                channels,
                width,
                stride,
                rate,
                groups,
            ));
            channels = width;
        }
    }
    nodes.push(Node::Gap);
    let (w, bias) = b.dense("head.fc", channels, spec.num_classes);
    nodes.push(Node::Classifier { w, b: bias });
    (Plan { nodes }, b.params, b.norms)
}

fn densenet_plan(spec: &ModelSpec, rng: ChaCha8Rng) -> (Plan, Vec<NamedParam>, Vec<NormStats>) {
    let mut b = Builder::new(rng);
    let (cin, _, _) = spec.input_shape;
    // Stem width follows the usual convention of twice the first growth rate.
    let stem_width = 2 * spec.stage_widths[0];
    let mut nodes = vec![b.stem(cin, stem_width)];
    let mut channels = stem_width;
    let blocks = spec.stage_widths.len();
    for (di, (&growth, &layers)) in spec
        .stage_widths
        .iter()
        .zip(&spec.blocks_per_stage)
        .enumerate()
    {
        for li in 0..layers {
            let name = format!("db{di}.l{li}");
            let ops = vec![
                b.norm(&format!("{name}.norm"), channels),
                PlanOp::Relu,
                b.conv(&format!("{name}.conv"), channels, growth, 3, 1, 1, 1, 1),
            ];
            nodes.push(Node::DenseLayer(ops));
            channels += growth;
        }
        if di + 1 < blocks {
            // Transition: compress channels by half, then pool.
            let into = channels / 2;
            let name = format!("tr{di}");
            nodes.push(Node::Seq(vec![
                b.norm(&format!("{name}.norm"), channels),
                PlanOp::Relu,
                b.conv(&format!("{name}.conv"), channels, into, 1, 1, 0, 1, 1),
                PlanOp::MaxPool { window: 2, stride: 2 },
            ]));
            channels = into;
        }
    }
    nodes.push(Node::Seq(vec![
        b.norm("head.norm", channels),
        PlanOp::Relu,
    ]));
    nodes.push(Node::Gap);
    let (w, bias) = b.dense("head.fc", channels, spec.num_classes);
    nodes.push(Node::Classifier { w, b: bias });
    (Plan { nodes }, b.params, b.norms)
}

pub(crate) fn build_plan(
    spec: &ModelSpec,
    rng: ChaCha8Rng,
) -> Result<(Plan, Vec<NamedParam>, Vec<NormStats>)> {
    shape_trace(spec)?;
    Ok(match spec.family {
        super::Family::DensenetSurrogate => densenet_plan(spec, rng),
        _ => residual_plan(spec, rng),
    })
}

/// Walk the architecture's spatial extents without allocating parameters.
/// Errors when any layer would see an input smaller than its kernel.
pub(crate) fn shape_trace(spec: &ModelSpec) -> Result<(usize, usize)> {
    let (_, h, w) = spec.input_shape;
    let fail = |reason: String| {
        Err(Error::InvalidSpec {
            name: spec.name.clone(),
            reason,
        })
    };
    let conv = |h: usize, w: usize, k: usize, s: usize, p: usize, d: usize| {
        match (
            conv_out_extent(h, k, s, p, d),
            conv_out_extent(w, k, s, p, d),
        ) {
            (Some(a), Some(b)) => Ok((a, b)),
            _ => Err(format!("{h}x{w} input too small for {k}x{k} kernel (dilation {d})")),
        }
    };
    let pool = |h: usize, w: usize| {
        if h < 2 || w < 2 {
            Err(format!("{h}x{w} input too small for 2x2 pooling"))
        } else {
            Ok(((h - 2) / 2 + 1, (w - 2) / 2 + 1))
        }
    };

    // Stem.
    let (mut h, mut w) = match conv(h, w, 3, STEM_STRIDE, 1, 1).and_then(|(h, w)| pool(h, w)) {
        Ok(hw) => hw,
        Err(e) => return fail(format!("stem: {e}")),
    };

    match spec.family {
        super::Family::DensenetSurrogate => {
            let blocks = spec.stage_widths.len();
            for di in 0..blocks {
                match conv(h, w, 3, 1, 1, 1) {
                    Ok(hw) => (h, w) = hw,
                    Err(e) => return fail(format!("dense block {di}: {e}")),
                }
                if di + 1 < blocks {
                    match pool(h, w) {
                        Ok(hw) => (h, w) = hw,
                        Err(e) => return fail(format!("transition {di}: {e}")),
                    }
                }
            }
        }
        _ => {
            let last_stage = spec.stage_widths.len() - 1;
            for (si, &blocks) in spec.blocks_per_stage.iter().enumerate() {
                for bi in 0..blocks {
                    let stride = if si > 0 && bi == 0 { 2 } else { 1 };
                    let dilated = spec.family == super::Family::Dilation
                        && si == last_stage
                        && bi + 2 >= blocks;
                    let rate = if dilated { spec.dilation_rate } else { 1 };
                    match conv(h, w, 3, stride, rate, rate) {
                        Ok(hw) => (h, w) = hw,
                        Err(e) => return fail(format!("stage {si} block {bi}: {e}")),
                    }
                }
            }
        }
    }
    Ok((h, w))
}
