//! FGSM and PGD adversarial example generation under an l-infinity budget
//! and the [0,1] pixel clamp.
//!
//! Both attacks maximize a sum-reduced loss, so each example in a batch is
//! perturbed by the gradient of its own loss with no cross-example
//! coupling. PGD's random start draws a per-example noise stream keyed by
//! (seed, position in batch), which makes parallel and serial generation
//! bit-identical.

use crate::data::DatasetVariant;
use crate::error::{Error, Result};
use crate::nn::ModelInstance;
use crate::seed::{self, domain};
use crate::tensor::{backward, softmax_cross_entropy, Reduction, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

/// Anything that exposes a scalar, input-differentiable loss. The returned
/// tensor must be sum-reduced over examples so per-example gradients stay
/// independent.
pub trait AttackTarget: Sync {
    fn loss(&self, x: &Tensor, labels: &[usize]) -> Result<Tensor>;
}

/// Models attack their own cross-entropy under frozen statistics.
impl AttackTarget for ModelInstance {
    fn loss(&self, x: &Tensor, labels: &[usize]) -> Result<Tensor> {
        let logits = self.forward(x, true)?;
        softmax_cross_entropy(&logits, labels, Reduction::Sum)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    Fgsm,
    Pgd,
}

impl AttackKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            AttackKind::Fgsm => "fgsm",
            AttackKind::Pgd => "pgd",
        }
    }
}

/// PGD step-size rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaSchedule {
    Fixed(f64),
    /// alpha = epsilon / 4.
    EpsOver4,
    /// alpha = epsilon / iterations.
    EpsOverIters,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub kind: AttackKind,
    pub epsilon: f64,
    /// PGD only; FGSM ignores it.
    pub alpha: AlphaSchedule,
    /// PGD only; FGSM ignores it.
    pub iterations: usize,
    /// Seed for PGD's random start.
    pub seed: u64,
}

impl AttackConfig {
    pub fn fgsm(epsilon: f64) -> AttackConfig {
        AttackConfig {
            kind: AttackKind::Fgsm,
            epsilon,
            alpha: AlphaSchedule::EpsOver4,
            iterations: 1,
            seed: 0,
        }
    }

    pub fn pgd(epsilon: f64, alpha: AlphaSchedule, iterations: usize, seed: u64) -> AttackConfig {
        AttackConfig {
            kind: AttackKind::Pgd,
            epsilon,
            alpha,
            iterations,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(Error::InvalidAttack(format!(
                "epsilon must be in (0, 1], got {}",
                self.epsilon
            )));
        }
        if self.kind == AttackKind::Pgd {
            if self.iterations == 0 {
                return Err(Error::InvalidAttack("pgd needs at least 1 iteration".into()));
            }
            resolve_alpha(self)?;
        }
        Ok(())
    }

    /// Stable human-readable tag used in file names and chart titles.
    pub fn label(&self) -> String {
        match self.kind {
            AttackKind::Fgsm => format!("fgsm_eps{}", self.epsilon),
            AttackKind::Pgd => {
                let alpha = resolve_alpha(self).expect("labels require a valid config");
                format!("pgd_eps{}_alpha{}_it{}", self.epsilon, alpha, self.iterations)
            }
        }
    }
}

/// Resolve the PGD step size. Errors on FGSM configs and on schedules that
/// produce a nonpositive or non-finite step.
pub fn resolve_alpha(config: &AttackConfig) -> Result<f64> {
    if config.kind != AttackKind::Pgd {
        return Err(Error::InvalidAttack(
            "alpha is only defined for pgd configs".into(),
        ));
    }
    let alpha = match config.alpha {
        AlphaSchedule::Fixed(a) => a,
        AlphaSchedule::EpsOver4 => config.epsilon / 4.0,
        AlphaSchedule::EpsOverIters => {
            if config.iterations == 0 {
                return Err(Error::InvalidAttack("pgd needs at least 1 iteration".into()));
            }
            config.epsilon / config.iterations as f64
        }
    };
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::InvalidAttack(format!(
            "resolved step size {alpha} is not positive and finite"
        )));
    }
    Ok(alpha)
}

fn check_pixel_domain(x: &Tensor) -> Result<()> {
    let data = x.data();
    for &v in data.iter() {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::InvalidAttack(format!(
                "attack input contains {v}, outside [0,1]"
            )));
        }
    }
    Ok(())
}

/// sign with sign(0) = 0, so zero-gradient pixels stay untouched.
fn attack_sign(g: f64) -> f64 {
    if g > 0.0 {
        1.0
    } else if g < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn input_gradient(target: &dyn AttackTarget, data: Vec<f64>, shape: &[usize], labels: &[usize]) -> Result<Vec<f64>> {
    let x = Tensor::param(shape, data)?;
    let loss = target.loss(&x, labels)?;
    backward(&loss)?;
    x.grad()
        .ok_or_else(|| Error::InvalidAttack("loss does not depend on the input".into()))
}

/// Single-step attack: x + epsilon * sign of the loss gradient, clamped to
/// [0,1]. epsilon = 0 returns the input exactly.
pub fn fgsm(
    target: &dyn AttackTarget,
    x: &Tensor,
    labels: &[usize],
    epsilon: f64,
) -> Result<Tensor> {
    if !(epsilon >= 0.0) {
        return Err(Error::InvalidAttack(format!("epsilon must be nonnegative, got {epsilon}")));
    }
    check_pixel_domain(x)?;
    if epsilon == 0.0 {
        return Ok(x.detached());
    }
    let grad = input_gradient(target, x.data().to_vec(), x.shape(), labels)?;
    let out: Vec<f64> = x
        .data()
        .iter()
        .zip(&grad)
        .map(|(&v, &g)| (v + epsilon * attack_sign(g)).clamp(0.0, 1.0))
        .collect();
    Tensor::from_vec(x.shape(), out)
}

/// Iterated attack with a random start inside the epsilon-ball. Each step
/// moves by `alpha` along the gradient sign, then projects: per pixel the
/// constraint set is [max(0, x-eps), min(1, x+eps)], one interval, so a
/// single fused clamp realizes both the ball projection and the [0,1] range
/// (the two clips commute).
pub fn pgd(
    target: &dyn AttackTarget,
    x: &Tensor,
    labels: &[usize],
    config: &AttackConfig,
) -> Result<Tensor> {
    pgd_with_observer(target, x, labels, config, &mut |_| {})
}

/// PGD variant invoking `observe` with every iterate (including the random
/// start), letting tests assert the per-iteration constraint contract.
pub fn pgd_with_observer(
    target: &dyn AttackTarget,
    x: &Tensor,
    labels: &[usize],
    config: &AttackConfig,
    observe: &mut dyn FnMut(&[f64]),
) -> Result<Tensor> {
    if config.kind != AttackKind::Pgd {
        return Err(Error::InvalidAttack("pgd called with a non-pgd config".into()));
    }
    if !(config.epsilon >= 0.0) {
        return Err(Error::InvalidAttack(format!(
            "epsilon must be nonnegative, got {}",
            config.epsilon
        )));
    }
    if config.iterations == 0 {
        return Err(Error::InvalidAttack("pgd needs at least 1 iteration".into()));
    }
    check_pixel_domain(x)?;
    if config.epsilon == 0.0 {
        return Ok(x.detached());
    }
    let alpha = resolve_alpha(config)?;
    let eps = config.epsilon;
    let orig = x.data();
    let shape = x.shape().to_vec();
    let n = shape[0];
    let plane: usize = shape[1..].iter().product();

    // Per-pixel feasible interval: the eps-ball intersected with [0,1].
    let lo: Vec<f64> = orig.iter().map(|&v| (v - eps).max(0.0)).collect();
    let hi: Vec<f64> = orig.iter().map(|&v| (v + eps).min(1.0)).collect();

    // Random start, per-example noise stream.
    let mut cur = vec![0.0; orig.len()];
    for i in 0..n {
        let mut rng = seed::rng(config.seed, &[domain::ATTACK, i as u64]);
        for j in 0..plane {
            let k = i * plane + j;
            let noise = rng.random_range(-eps..eps);
            cur[k] = (orig[k] + noise).clamp(lo[k], hi[k]);
        }
    }
    observe(&cur);

    for _ in 0..config.iterations {
        let grad = input_gradient(target, cur.clone(), &shape, labels)?;
        for k in 0..cur.len() {
            cur[k] = (cur[k] + alpha * attack_sign(grad[k])).clamp(lo[k], hi[k]);
        }
        observe(&cur);
    }
    Tensor::from_vec(&shape, cur)
}

/// Extremes observed over a generated set; all three are hard invariants
/// (max_linf <= epsilon + 1e-12, values within [0,1]) checked at
/// generation time and re-checkable by consumers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintStats {
    pub max_linf: f64,
    pub min_value: f64,
    pub max_value: f64,
}

/// Tolerance on the l-infinity budget check, absorbing clamp rounding.
pub const LINF_SLACK: f64 = 1e-12;

/// The attack split of one variant, perturbed by one source model under one
/// config. Examples align index-for-index with `indices` and `labels`.
#[derive(Debug, Clone)]
pub struct AdversarialSet {
    pub source_model: String,
    pub variant: String,
    pub config: AttackConfig,
    /// Resolved step size; None for FGSM.
    pub alpha: Option<f64>,
    pub corpus_hash: String,
    pub edge: usize,
    /// Corpus indices of the attacked images (the attack split, in order).
    pub indices: Vec<usize>,
    pub labels: Vec<usize>,
    pub examples: Vec<Vec<f64>>,
    pub stats: ConstraintStats,
}

fn constraint_stats(originals: &[&[f64]], perturbed: &[Vec<f64>]) -> ConstraintStats {
    let mut stats = ConstraintStats {
        max_linf: 0.0,
        min_value: f64::INFINITY,
        max_value: f64::NEG_INFINITY,
    };
    for (orig, adv) in originals.iter().zip(perturbed) {
        for (&o, &a) in orig.iter().zip(adv) {
            stats.max_linf = stats.max_linf.max((a - o).abs());
            stats.min_value = stats.min_value.min(a);
            stats.max_value = stats.max_value.max(a);
        }
    }
    stats
}

/// Attack every image of the variant's attack split with its true label.
/// The model is viewed frozen, so no parameter gradients are computed.
pub fn generate_adversarial_set(
    model: &ModelInstance,
    variant: &DatasetVariant,
    config: &AttackConfig,
    corpus_hash: &str,
) -> Result<AdversarialSet> {
    config.validate()?;
    if model.spec().input_shape != variant.input_shape() {
        return Err(Error::InvalidAttack(format!(
            "source model `{}` expects input {:?} but variant `{}` provides {:?}",
            model.name(),
            model.spec().input_shape,
            variant.kind,
            variant.input_shape()
        )));
    }
    if variant.splits.attack.is_empty() {
        return Err(Error::Data("variant has an empty attack split".into()));
    }
    let frozen = model.frozen_view();
    let (images, labels) = variant.tensor_of(&variant.splits.attack)?;
    let adv = match config.kind {
        AttackKind::Fgsm => fgsm(&frozen, &images, &labels, config.epsilon)?,
        AttackKind::Pgd => pgd(&frozen, &images, &labels, config)?,
    };
    let plane = variant.edge * variant.edge * 3;
    let adv_data = adv.data();
    let examples: Vec<Vec<f64>> = (0..labels.len())
        .map(|i| adv_data[i * plane..(i + 1) * plane].to_vec())
        .collect();
    let originals: Vec<&[f64]> = variant
        .splits
        .attack
        .iter()
        .map(|&i| variant.images[i].as_slice())
        .collect();
    let stats = constraint_stats(&originals, &examples);
    if stats.max_linf > config.epsilon + LINF_SLACK
        || stats.min_value < 0.0
        || stats.max_value > 1.0
    {
        return Err(Error::InvalidAttack(format!(
            "constraint violation: max_linf {} (budget {}), range [{}, {}]",
            stats.max_linf, config.epsilon, stats.min_value, stats.max_value
        )));
    }
    Ok(AdversarialSet {
        source_model: model.name().to_string(),
        variant: variant.kind.as_str().to_string(),
        config: config.clone(),
        alpha: match config.kind {
            AttackKind::Fgsm => None,
            AttackKind::Pgd => Some(resolve_alpha(config)?),
        },
        corpus_hash: corpus_hash.to_string(),
        edge: variant.edge,
        indices: variant.splits.attack.clone(),
        labels,
        examples,
        stats,
    })
}

const MAGIC: &[u8; 8] = b"AGADVSET";
const FORMAT: &str = "adversarial-set";
const VERSION: u32 = 1;
const MAX_HEADER_BYTES: u32 = 1 << 20;

#[derive(Serialize, Deserialize)]
struct SetHeader {
    format: String,
    version: u32,
    source_model: String,
    variant: String,
    config: AttackConfig,
    alpha: Option<f64>,
    corpus_hash: String,
    edge: usize,
    channels: usize,
    indices: Vec<usize>,
    labels: Vec<usize>,
    stats: ConstraintStats,
}

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

/// Container layout mirrors checkpoints: magic, u32 LE header length, JSON
/// header, then per-example f64 LE payloads in index order.
pub fn write_adversarial_set(set: &AdversarialSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let header = SetHeader {
        format: FORMAT.into(),
        version: VERSION,
        source_model: set.source_model.clone(),
        variant: set.variant.clone(),
        config: set.config.clone(),
        alpha: set.alpha,
        corpus_hash: set.corpus_hash.clone(),
        edge: set.edge,
        channels: 3,
        indices: set.indices.clone(),
        labels: set.labels.clone(),
        stats: set.stats,
    };
    let header_bytes = serde_json::to_vec(&header)
        .map_err(|e| format_err(path, format!("header encoding failed: {e}")))?;
    if header_bytes.len() as u64 > MAX_HEADER_BYTES as u64 {
        return Err(format_err(path, "header exceeds size limit"));
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(header_bytes.len() as u32).to_le_bytes())?;
    w.write_all(&header_bytes)?;
    for example in &set.examples {
        let mut bytes = Vec::with_capacity(example.len() * 8);
        for v in example {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&bytes)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_adversarial_set(path: impl AsRef<Path>) -> Result<AdversarialSet> {
    let path = path.as_ref();
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|e| format_err(path, format!("missing magic: {e}")))?;
    if &magic != MAGIC {
        return Err(format_err(path, "bad magic; not an adversarial-set file"));
    }
    let mut len_bytes = [0u8; 4];
    r.read_exact(&mut len_bytes)
        .map_err(|e| format_err(path, format!("missing header length: {e}")))?;
    let header_len = u32::from_le_bytes(len_bytes);
    if header_len == 0 || header_len > MAX_HEADER_BYTES {
        return Err(format_err(path, format!("implausible header length {header_len}")));
    }
    let mut header_bytes = vec![0u8; header_len as usize];
    r.read_exact(&mut header_bytes)
        .map_err(|e| format_err(path, format!("header truncated: {e}")))?;
    let header: SetHeader = serde_json::from_slice(&header_bytes)
        .map_err(|e| format_err(path, format!("header is not valid JSON: {e}")))?;
    if header.format != FORMAT {
        return Err(format_err(path, format!("unexpected format `{}`", header.format)));
    }
    if header.version != VERSION {
        return Err(format_err(path, format!("unsupported version {}", header.version)));
    }
    if header.labels.len() != header.indices.len() {
        return Err(format_err(path, "labels and indices disagree in length"));
    }
    let plane = header.channels * header.edge * header.edge;
    let mut examples = Vec::with_capacity(header.labels.len());
    for i in 0..header.labels.len() {
        let mut bytes = vec![0u8; plane * 8];
        r.read_exact(&mut bytes)
            .map_err(|e| format_err(path, format!("example {i} truncated: {e}")))?;
        examples.push(
            bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        );
    }
    let mut trailing = [0u8; 1];
    match r.read(&mut trailing) {
        Ok(0) => {}
        Ok(_) => return Err(format_err(path, "trailing bytes after payloads")),
        Err(e) => return Err(e.into()),
    }
    Ok(AdversarialSet {
        source_model: header.source_model,
        variant: header.variant,
        config: header.config,
        alpha: header.alpha,
        corpus_hash: header.corpus_hash,
        edge: header.edge,
        indices: header.indices,
        labels: header.labels,
        examples,
        stats: header.stats,
    })
}

impl AdversarialSet {
    /// Stack the examples into an untracked [n, 3, e, e] batch.
    pub fn tensor(&self) -> Result<Tensor> {
        let mut data = Vec::with_capacity(self.examples.len() * 3 * self.edge * self.edge);
        for ex in &self.examples {
            data.extend_from_slice(ex);
        }
        Tensor::from_vec(&[self.examples.len(), 3, self.edge, self.edge], data)
    }
}
