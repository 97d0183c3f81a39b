//! Experiment-grid orchestration: train or load every model per dataset
//! variant, craft one adversarial set per (source, attack config, variant),
//! and score every target on it, yielding the white-box/black-box accuracy
//! matrix.
//!
//! Seed discipline: everything derives from the single plan seed. The
//! corpus and splits consume it directly; each (model, variant) training run
//! uses `model_seed`, each adversarial set `attack_seed`. Both key on the
//! registry index of the model and the canonical variant index, so a model
//! trained standalone and inside a plan comes out bit-identical.

use crate::attack::{
    generate_adversarial_set, resolve_alpha, AttackConfig, AttackKind, LINF_SLACK,
};
use crate::data::{
    corpus_sha256, generate_corpus, make_variant, stratified_split, Corpus, DatasetVariant,
    SplitIndices, VariantKind, FULL_EDGE, NUM_CLASSES, SPLIT_FRACTIONS,
};
use crate::error::{Error, Result};
use crate::nn::{
    build_model, read_checkpoint, registry_default, write_checkpoint, ModelInstance, ModelSpec,
};
use crate::seed::{self, domain};
use crate::train::{evaluate_accuracy, train, TrainConfig, TrainReport};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

pub const DEFAULT_FGSM_EPSILONS: [f64; 4] = [0.02, 0.03, 0.04, 0.05];
pub const DEFAULT_PGD_EPSILON: f64 = 0.03;

/// The attack grid exercised by the default plan: the four-point FGSM
/// epsilon sweep plus three PGD step-size schedules at the middle epsilon.
pub fn default_attack_grid() -> Vec<AttackConfig> {
    use crate::attack::AlphaSchedule;
    let mut grid: Vec<AttackConfig> = DEFAULT_FGSM_EPSILONS
        .iter()
        .map(|&eps| AttackConfig::fgsm(eps))
        .collect();
    grid.push(AttackConfig::pgd(DEFAULT_PGD_EPSILON, AlphaSchedule::EpsOverIters, 10, 0));
    grid.push(AttackConfig::pgd(DEFAULT_PGD_EPSILON, AlphaSchedule::EpsOver4, 20, 0));
    grid.push(AttackConfig::pgd(DEFAULT_PGD_EPSILON, AlphaSchedule::EpsOverIters, 20, 0));
    grid
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentPlan {
    /// Registry names; every entry acts as both source and target.
    pub models: Vec<String>,
    pub variants: Vec<VariantKind>,
    /// Config seeds here are placeholders; the run derives one per
    /// (variant, source, config) cell.
    pub attacks: Vec<AttackConfig>,
    pub seed: u64,
    pub n_per_class: usize,
    /// Training template; its seed field is replaced per (model, variant).
    pub train: TrainConfig,
    /// When set, trained models are persisted here and reloaded on reruns.
    #[serde(skip)]
    pub checkpoint_dir: Option<PathBuf>,
}

impl ExperimentPlan {
    /// Full grid: every registry model, every variant, the default attacks.
    pub fn default_grid(seed: u64) -> ExperimentPlan {
        ExperimentPlan {
            models: registry_default().iter().map(|s| s.name.clone()).collect(),
            variants: VariantKind::all().to_vec(),
            attacks: default_attack_grid(),
            seed,
            n_per_class: crate::data::DEFAULT_N_PER_CLASS,
            train: TrainConfig::desk(0),
            checkpoint_dir: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.models.is_empty() {
            return Err(Error::Config("plan lists no models".into()));
        }
        if self.variants.is_empty() {
            return Err(Error::Config("plan lists no dataset variants".into()));
        }
        if self.attacks.is_empty() {
            return Err(Error::Config("plan lists no attack configs".into()));
        }
        let mut seen = BTreeSet::new();
        for name in &self.models {
            registry_entry(name)?;
            if !seen.insert(name.clone()) {
                return Err(Error::Config(format!("model `{name}` listed twice")));
            }
        }
        let mut kinds = BTreeSet::new();
        for kind in &self.variants {
            if !kinds.insert(kind.as_str()) {
                return Err(Error::Config(format!("variant `{kind}` listed twice")));
            }
        }
        for config in &self.attacks {
            config.validate()?;
        }
        if self.n_per_class == 0 {
            return Err(Error::Config("n_per_class must be at least 1".into()));
        }
        self.train.validate()?;
        Ok(())
    }
}

pub fn registry_names() -> Vec<String> {
    registry_default().iter().map(|s| s.name.clone()).collect()
}

/// Look up a registry spec by name; the error lists every valid name.
pub fn registry_entry(name: &str) -> Result<(usize, ModelSpec)> {
    registry_default()
        .into_iter()
        .enumerate()
        .find(|(_, s)| s.name == name)
        .ok_or_else(|| {
            Error::Config(format!(
                "unknown model `{name}`; registry entries: {}",
                registry_names().join(", ")
            ))
        })
}

/// Super-family used by the similarity analysis; names outside the registry
/// fall into "other" so the partition stays total.
pub fn super_family_of(name: &str) -> &'static str {
    registry_default()
        .iter()
        .find(|s| s.name == name)
        .map(|s| s.family.super_family())
        .unwrap_or("other")
}

fn variant_index(kind: VariantKind) -> u64 {
    VariantKind::all().iter().position(|k| *k == kind).unwrap() as u64
}

/// Seed feeding both initialization and the training loop of one
/// (model, variant) pair. Keyed by registry index, not plan order, so
/// subsetting the plan does not change any model's weights.
pub fn model_seed(plan_seed: u64, model: &str, kind: VariantKind) -> Result<u64> {
    let (idx, _) = registry_entry(model)?;
    Ok(seed::derive(plan_seed, &[domain::INIT, idx as u64, variant_index(kind)]))
}

/// Seed for the adversarial set of one (variant, source, config) cell.
pub fn attack_seed(plan_seed: u64, kind: VariantKind, source: &str, config_idx: usize) -> Result<u64> {
    let (idx, _) = registry_entry(source)?;
    Ok(seed::derive(
        plan_seed,
        &[domain::ATTACK, variant_index(kind), idx as u64, config_idx as u64],
    ))
}

/// The attack grid with per-source seeds resolved, one row per plan model.
pub fn seeded_attack_grid(plan: &ExperimentPlan, kind: VariantKind) -> Result<Vec<Vec<AttackConfig>>> {
    plan.models
        .iter()
        .map(|name| {
            plan.attacks
                .iter()
                .enumerate()
                .map(|(ci, template)| {
                    let mut config = template.clone();
                    config.seed = attack_seed(plan.seed, kind, name, ci)?;
                    Ok(config)
                })
                .collect()
        })
        .collect()
}

/// Generate the plan's corpus and splits; the hash goes into manifests and
/// adversarial-set headers.
pub fn plan_corpus(plan: &ExperimentPlan) -> Result<(Corpus, SplitIndices, String)> {
    let corpus = generate_corpus(plan.n_per_class, FULL_EDGE, plan.seed);
    let hash = corpus_sha256(&corpus);
    let splits = stratified_split(&corpus.labels, NUM_CLASSES, SPLIT_FRACTIONS, plan.seed)?;
    Ok((corpus, splits, hash))
}

pub fn checkpoint_path(dir: &Path, model: &str, kind: VariantKind) -> PathBuf {
    dir.join(format!("{model}_{kind}.ckpt"))
}

/// Train one model on the variant, or load it from the plan's checkpoint
/// store when a file already exists and `force` is false. Returns the model,
/// the training report (None when loaded), and whether it was loaded.
pub fn train_or_load_model(
    plan: &ExperimentPlan,
    name: &str,
    variant: &DatasetVariant,
    force: bool,
) -> Result<(ModelInstance, Option<TrainReport>, bool)> {
    let (_, spec) = registry_entry(name)?;
    let spec = spec.with_input_shape(variant.input_shape());
    let path = plan
        .checkpoint_dir
        .as_ref()
        .map(|d| checkpoint_path(d, name, variant.kind));
    if let Some(p) = &path {
        if p.exists() && !force {
            let model = read_checkpoint(p)?;
            if model.spec().name != name {
                return Err(Error::Format {
                    path: p.display().to_string(),
                    reason: format!("checkpoint holds `{}`, expected `{name}`", model.spec().name),
                });
            }
            if model.spec().input_shape != variant.input_shape() {
                return Err(Error::Format {
                    path: p.display().to_string(),
                    reason: format!(
                        "checkpoint input shape {:?} does not match variant `{}` shape {:?}",
                        model.spec().input_shape,
                        variant.kind,
                        variant.input_shape()
                    ),
                });
            }
            return Ok((model, None, true));
        }
    }
    let base = model_seed(plan.seed, name, variant.kind)?;
    let mut model = build_model(&spec, base)?;
    let mut config = plan.train.clone();
    config.seed = base;
    let report = train(&mut model, variant, &config)?;
    if let Some(p) = &path {
        if let Some(parent) = p.parent() {
            std::fs::create_dir_all(parent)?;
        }
        write_checkpoint(&model, p)?;
    }
    Ok((model, Some(report), false))
}

/// One (variant, source, target, config) result. `clean_acc` is the
/// target's accuracy on the unperturbed attack split of the same variant.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixCell {
    pub variant: String,
    pub source: String,
    pub target: String,
    pub attack: AttackKind,
    pub epsilon: f64,
    /// Resolved step size; None for FGSM.
    pub alpha: Option<f64>,
    pub iterations: Option<usize>,
    pub seed: u64,
    pub outcome: CellOutcome,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CellOutcome {
    Evaluated { clean_acc: f64, adv_acc: f64, drop: f64 },
    /// Resolution-mismatched pairings are recorded, not evaluated.
    Skipped { reason: String },
}

impl MatrixCell {
    /// Stable grouping key for one attack configuration.
    pub fn config_label(&self) -> String {
        match self.attack {
            AttackKind::Fgsm => format!("fgsm_eps{}", self.epsilon),
            AttackKind::Pgd => format!(
                "pgd_eps{}_alpha{}_it{}",
                self.epsilon,
                self.alpha.unwrap_or(f64::NAN),
                self.iterations.unwrap_or(0)
            ),
        }
    }

    pub fn is_white_box(&self) -> bool {
        self.source == self.target
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CleanBaseline {
    pub variant: String,
    pub model: String,
    pub clean_acc: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TransferMatrix {
    pub cells: Vec<MatrixCell>,
    pub baselines: Vec<CleanBaseline>,
}

/// Counters and extremes gathered during a run. Wall-clock fields are
/// informational only and never written into artifacts.
#[derive(Debug, Clone)]
pub struct RunStats {
    pub models_trained: usize,
    pub models_loaded: usize,
    pub sets_generated: usize,
    pub cells_evaluated: usize,
    pub cells_skipped: usize,
    /// max over sets of (observed max l-infinity distance - epsilon).
    pub worst_budget_slack: f64,
    pub min_pixel: f64,
    pub max_pixel: f64,
    pub train_seconds: f64,
    pub attack_seconds: f64,
    pub eval_seconds: f64,
}

impl Default for RunStats {
    fn default() -> Self {
        RunStats {
            models_trained: 0,
            models_loaded: 0,
            sets_generated: 0,
            cells_evaluated: 0,
            cells_skipped: 0,
            worst_budget_slack: f64::NEG_INFINITY,
            min_pixel: f64::INFINITY,
            max_pixel: f64::NEG_INFINITY,
            train_seconds: 0.0,
            attack_seconds: 0.0,
            eval_seconds: 0.0,
        }
    }
}

impl RunStats {
    /// True when every generated example sat inside both constraint sets.
    pub fn constraints_hold(&self) -> bool {
        self.sets_generated > 0
            && self.worst_budget_slack <= LINF_SLACK
            && self.min_pixel >= 0.0
            && self.max_pixel <= 1.0
    }
}

pub struct PlanOutcome {
    pub matrix: TransferMatrix,
    pub stats: RunStats,
    pub reports: Vec<TrainReport>,
    pub corpus_hash: String,
}

/// Score every (source, config, target) cell of one variant. `attacks` holds
/// one seeded grid row per model (see [`seeded_attack_grid`]); all rows must
/// share the template order. Each adversarial set is generated once and
/// reused across all targets; models whose input shape does not match the
/// variant are skipped per cell with a reason and get no clean baseline.
pub fn evaluate_variant_cells(
    models: &[ModelInstance],
    variant: &DatasetVariant,
    attacks: &[Vec<AttackConfig>],
    corpus_hash: &str,
    matrix: &mut TransferMatrix,
    stats: &mut RunStats,
) -> Result<()> {
    if attacks.len() != models.len() {
        return Err(Error::Config(format!(
            "attack grid has {} rows for {} models",
            attacks.len(),
            models.len()
        )));
    }
    if models.is_empty() || attacks.iter().any(|row| row.is_empty()) {
        return Err(Error::Config("empty model list or attack grid".into()));
    }
    let configs_per_source = attacks[0].len();
    if attacks.iter().any(|row| row.len() != configs_per_source) {
        return Err(Error::Config("attack grid rows differ in length".into()));
    }

    let vname = variant.kind.as_str().to_string();
    let matches: Vec<bool> = models
        .iter()
        .map(|m| m.spec().input_shape == variant.input_shape())
        .collect();

    let eval_clock = Instant::now();
    let (clean_images, clean_labels) = variant.tensor_of(&variant.splits.attack)?;
    let mut clean = vec![f64::NAN; models.len()];
    for (i, model) in models.iter().enumerate() {
        if matches[i] {
            clean[i] = evaluate_accuracy(model, &clean_images, &clean_labels)?;
            matrix.baselines.push(CleanBaseline {
                variant: vname.clone(),
                model: model.name().to_string(),
                clean_acc: clean[i],
            });
        }
    }
    stats.eval_seconds += eval_clock.elapsed().as_secs_f64();

    for (si, source) in models.iter().enumerate() {
        for config in &attacks[si] {
            let mismatch_reason = if matches[si] {
                None
            } else {
                Some(format!(
                    "source `{}` expects {:?}, variant provides {:?}",
                    source.name(),
                    source.spec().input_shape,
                    variant.input_shape()
                ))
            };
            let set = match &mismatch_reason {
                Some(_) => None,
                None => {
                    let clock = Instant::now();
                    let set = generate_adversarial_set(source, variant, config, corpus_hash)?;
                    stats.attack_seconds += clock.elapsed().as_secs_f64();
                    stats.sets_generated += 1;
                    stats.worst_budget_slack =
                        stats.worst_budget_slack.max(set.stats.max_linf - config.epsilon);
                    stats.min_pixel = stats.min_pixel.min(set.stats.min_value);
                    stats.max_pixel = stats.max_pixel.max(set.stats.max_value);
                    Some(set)
                }
            };
            let adv_batch = match &set {
                Some(s) => Some((s.tensor()?, s.labels.clone())),
                None => None,
            };
            for (ti, target) in models.iter().enumerate() {
                let outcome = if let Some(reason) = &mismatch_reason {
                    stats.cells_skipped += 1;
                    CellOutcome::Skipped { reason: reason.clone() }
                } else if !matches[ti] {
                    stats.cells_skipped += 1;
                    CellOutcome::Skipped {
                        reason: format!(
                            "target `{}` expects {:?}, adversarial set is {:?}",
                            target.name(),
                            target.spec().input_shape,
                            variant.input_shape()
                        ),
                    }
                } else {
                    let (adv, labels) = adv_batch.as_ref().unwrap();
                    let clock = Instant::now();
                    let adv_acc = evaluate_accuracy(target, adv, labels)?;
                    stats.eval_seconds += clock.elapsed().as_secs_f64();
                    stats.cells_evaluated += 1;
                    CellOutcome::Evaluated {
                        clean_acc: clean[ti],
                        adv_acc,
                        drop: clean[ti] - adv_acc,
                    }
                };
                matrix.cells.push(MatrixCell {
                    variant: vname.clone(),
                    source: source.name().to_string(),
                    target: target.name().to_string(),
                    attack: config.kind,
                    epsilon: config.epsilon,
                    alpha: match config.kind {
                        AttackKind::Fgsm => None,
                        AttackKind::Pgd => Some(resolve_alpha(config)?),
                    },
                    iterations: match config.kind {
                        AttackKind::Fgsm => None,
                        AttackKind::Pgd => Some(config.iterations),
                    },
                    seed: config.seed,
                    outcome,
                });
            }
        }
    }
    Ok(())
}

/// Run the whole grid: per variant, train or load all models, then fill the
/// variant's block of the matrix. Deterministic given the plan.
pub fn run_plan(plan: &ExperimentPlan) -> Result<PlanOutcome> {
    plan.validate()?;
    let (corpus, splits, corpus_hash) = plan_corpus(plan)?;
    let mut matrix = TransferMatrix::default();
    let mut stats = RunStats::default();
    let mut reports = Vec::new();

    for &kind in &plan.variants {
        let variant = make_variant(&corpus, kind, &splits, plan.seed)?;
        let mut models = Vec::with_capacity(plan.models.len());
        for name in &plan.models {
            let clock = Instant::now();
            let (model, report, loaded) = train_or_load_model(plan, name, &variant, false)?;
            stats.train_seconds += clock.elapsed().as_secs_f64();
            if loaded {
                stats.models_loaded += 1;
            } else {
                stats.models_trained += 1;
            }
            if let Some(r) = report {
                reports.push(r);
            }
            models.push(model);
        }
        let attacks = seeded_attack_grid(plan, kind)?;
        evaluate_variant_cells(&models, &variant, &attacks, &corpus_hash, &mut matrix, &mut stats)?;
    }
    Ok(PlanOutcome { matrix, stats, reports, corpus_hash })
}

pub const MATRIX_CSV_HEADER: &str =
    "variant,source,target,attack,epsilon,alpha,iterations,seed,clean_acc,adv_acc,drop";

fn fmt6(v: f64) -> String {
    format!("{v:.6}")
}

impl TransferMatrix {
    /// One row per cell, floating fields at 6 decimals. FGSM rows leave
    /// alpha and iterations empty; skipped cells carry n/a accuracies.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from(MATRIX_CSV_HEADER);
        out.push('\n');
        for cell in &self.cells {
            let alpha = cell.alpha.map(fmt6).unwrap_or_default();
            let iters = cell.iterations.map(|i| i.to_string()).unwrap_or_default();
            let (clean, adv, drop) = match &cell.outcome {
                CellOutcome::Evaluated { clean_acc, adv_acc, drop } => {
                    (fmt6(*clean_acc), fmt6(*adv_acc), fmt6(*drop))
                }
                CellOutcome::Skipped { .. } => ("n/a".into(), "n/a".into(), "n/a".into()),
            };
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                cell.variant,
                cell.source,
                cell.target,
                cell.attack.as_str(),
                fmt6(cell.epsilon),
                alpha,
                iters,
                cell.seed,
                clean,
                adv,
                drop
            ));
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv_string())?;
        Ok(())
    }

    /// Parse a matrix CSV; errors carry 1-based line numbers. Baselines are
    /// rebuilt from the per-row clean accuracies and must agree across rows.
    pub fn from_csv_str(text: &str) -> Result<TransferMatrix> {
        let bad = |line: usize, reason: String| {
            Error::Format {
                path: "matrix csv".into(),
                reason: format!("line {line}: {reason}"),
            }
        };
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| bad(1, "empty file".into()))?;
        if header != MATRIX_CSV_HEADER {
            return Err(bad(1, format!("bad header `{header}`")));
        }
        let mut matrix = TransferMatrix::default();
        let mut baselines: BTreeMap<(String, String), f64> = BTreeMap::new();
        for (i, raw) in lines {
            let line_no = i + 1;
            if raw.is_empty() {
                continue;
            }
            let fields: Vec<&str> = raw.split(',').collect();
            if fields.len() != 11 {
                return Err(bad(line_no, format!("expected 11 fields, got {}", fields.len())));
            }
            let parse_f = |label: &str, s: &str| -> Result<f64> {
                s.parse::<f64>()
                    .map_err(|_| bad(line_no, format!("{label} `{s}` is not a number")))
            };
            let attack = match fields[3] {
                "fgsm" => AttackKind::Fgsm,
                "pgd" => AttackKind::Pgd,
                other => return Err(bad(line_no, format!("unknown attack `{other}`"))),
            };
            let epsilon = parse_f("epsilon", fields[4])?;
            let alpha = match (attack, fields[5]) {
                (AttackKind::Fgsm, "") => None,
                (AttackKind::Fgsm, s) => {
                    return Err(bad(line_no, format!("fgsm row has alpha `{s}`")));
                }
                (AttackKind::Pgd, s) => Some(parse_f("alpha", s)?),
            };
            let iterations = match (attack, fields[6]) {
                (AttackKind::Fgsm, "") => None,
                (AttackKind::Fgsm, s) => {
                    return Err(bad(line_no, format!("fgsm row has iterations `{s}`")));
                }
                (AttackKind::Pgd, s) => Some(s.parse::<usize>().map_err(|_| {
                    bad(line_no, format!("iterations `{s}` is not an integer"))
                })?),
            };
            let seed = fields[7]
                .parse::<u64>()
                .map_err(|_| bad(line_no, format!("seed `{}` is not an integer", fields[7])))?;
            let outcome = if fields[8] == "n/a" {
                if fields[9] != "n/a" || fields[10] != "n/a" {
                    return Err(bad(line_no, "partial n/a row".into()));
                }
                CellOutcome::Skipped { reason: "n/a".into() }
            } else {
                let clean_acc = parse_f("clean_acc", fields[8])?;
                let adv_acc = parse_f("adv_acc", fields[9])?;
                for (label, v) in [("clean_acc", clean_acc), ("adv_acc", adv_acc)] {
                    if !(0.0..=1.0).contains(&v) {
                        return Err(bad(line_no, format!("{label} {v} outside [0,1]")));
                    }
                }
                let drop = parse_f("drop", fields[10])?;
                let key = (fields[0].to_string(), fields[2].to_string());
                match baselines.get(&key) {
                    None => {
                        baselines.insert(key, clean_acc);
                    }
                    Some(&prev) if prev == clean_acc => {}
                    Some(&prev) => {
                        return Err(bad(
                            line_no,
                            format!(
                                "clean_acc {clean_acc} disagrees with earlier {prev} for the same target"
                            ),
                        ));
                    }
                }
                CellOutcome::Evaluated { clean_acc, adv_acc, drop }
            };
            matrix.cells.push(MatrixCell {
                variant: fields[0].to_string(),
                source: fields[1].to_string(),
                target: fields[2].to_string(),
                attack,
                epsilon,
                alpha,
                iterations,
                seed,
                outcome,
            });
        }
        matrix.baselines = baselines
            .into_iter()
            .map(|((variant, model), clean_acc)| CleanBaseline { variant, model, clean_acc })
            .collect();
        Ok(matrix)
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<TransferMatrix> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        TransferMatrix::from_csv_str(&text).map_err(|e| match e {
            Error::Format { reason, .. } => Error::Format {
                path: path.display().to_string(),
                reason,
            },
            other => other,
        })
    }

    /// Distinct axis values in first-appearance order.
    pub fn axes(&self) -> MatrixAxes {
        let mut axes = MatrixAxes::default();
        let push = |list: &mut Vec<String>, v: &str| {
            if !list.iter().any(|x| x == v) {
                list.push(v.to_string());
            }
        };
        for cell in &self.cells {
            push(&mut axes.variants, &cell.variant);
            push(&mut axes.sources, &cell.source);
            push(&mut axes.targets, &cell.target);
            push(&mut axes.configs, &cell.config_label());
        }
        axes
    }

    /// Every (variant, config, source, target) combination present exactly
    /// once. Skipped cells count as present; they are the matrix's "n/a"
    /// markers for mismatched resolutions.
    pub fn check_complete(&self) -> Result<()> {
        if self.cells.is_empty() {
            return Err(Error::Data("matrix has no cells".into()));
        }
        let axes = self.axes();
        let mut seen = BTreeSet::new();
        for cell in &self.cells {
            let key = (
                cell.variant.clone(),
                cell.config_label(),
                cell.source.clone(),
                cell.target.clone(),
            );
            if !seen.insert(key) {
                return Err(Error::Data(format!(
                    "duplicate cell ({}, {}, {} -> {})",
                    cell.variant,
                    cell.config_label(),
                    cell.source,
                    cell.target
                )));
            }
        }
        let expected =
            axes.variants.len() * axes.configs.len() * axes.sources.len() * axes.targets.len();
        if self.cells.len() != expected {
            return Err(Error::Data(format!(
                "matrix has {} cells, cross-product needs {expected}",
                self.cells.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct MatrixAxes {
    pub variants: Vec<String>,
    pub sources: Vec<String>,
    pub targets: Vec<String>,
    pub configs: Vec<String>,
}

/// Per (target, variant, config) accuracy digest. Black-box fields are None
/// when the matrix has a single model (no off-diagonal cells).
#[derive(Debug, Clone, PartialEq)]
pub struct TargetSummary {
    pub variant: String,
    pub config: String,
    pub target: String,
    pub clean_acc: f64,
    pub white_box_acc: f64,
    pub white_box_drop: f64,
    pub black_box_mean: Option<f64>,
    pub black_box_min: Option<f64>,
    pub black_box_drop_mean: Option<f64>,
}

/// Mean accuracy drop over the off-diagonal cells of one super-family pair.
#[derive(Debug, Clone, PartialEq)]
pub struct FamilyPairSummary {
    pub source_family: String,
    pub target_family: String,
    pub mean_drop: f64,
    pub cells: usize,
}

#[derive(Debug, Clone)]
pub struct MatrixSummary {
    pub targets: Vec<TargetSummary>,
    pub family_pairs: Vec<FamilyPairSummary>,
    /// Informational trend observations; logged, never asserted.
    pub trend_lines: Vec<String>,
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Digest a complete matrix. Skipped cells are excluded from averages; the
/// white-box diagonal must be evaluated for every in-resolution target.
pub fn summarize(matrix: &TransferMatrix) -> Result<MatrixSummary> {
    matrix.check_complete()?;
    let axes = matrix.axes();
    let mut targets = Vec::new();
    for variant in &axes.variants {
        for config in &axes.configs {
            for target in &axes.targets {
                let group: Vec<&MatrixCell> = matrix
                    .cells
                    .iter()
                    .filter(|c| {
                        &c.variant == variant && &c.config_label() == config && &c.target == target
                    })
                    .collect();
                let diag = group.iter().find(|c| c.is_white_box());
                let (clean_acc, white_box_acc) = match diag.map(|c| &c.outcome) {
                    Some(CellOutcome::Evaluated { clean_acc, adv_acc, .. }) => {
                        (*clean_acc, *adv_acc)
                    }
                    Some(CellOutcome::Skipped { .. }) => continue,
                    None => {
                        return Err(Error::Data(format!(
                            "no white-box cell for target `{target}` in {variant}/{config}"
                        )))
                    }
                };
                let mut black_accs = Vec::new();
                let mut black_drops = Vec::new();
                for cell in &group {
                    if cell.is_white_box() {
                        continue;
                    }
                    if let CellOutcome::Evaluated { adv_acc, drop, .. } = &cell.outcome {
                        black_accs.push(*adv_acc);
                        black_drops.push(*drop);
                    }
                }
                targets.push(TargetSummary {
                    variant: variant.clone(),
                    config: config.clone(),
                    target: target.clone(),
                    clean_acc,
                    white_box_acc,
                    white_box_drop: clean_acc - white_box_acc,
                    black_box_mean: (!black_accs.is_empty()).then(|| mean(&black_accs)),
                    black_box_min: black_accs
                        .iter()
                        .copied()
                        .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.min(v)))),
                    black_box_drop_mean: (!black_drops.is_empty()).then(|| mean(&black_drops)),
                });
            }
        }
    }

    // Family pairs partition the evaluated off-diagonal cells.
    let mut pair_drops: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for cell in &matrix.cells {
        if cell.is_white_box() {
            continue;
        }
        if let CellOutcome::Evaluated { drop, .. } = &cell.outcome {
            pair_drops
                .entry((
                    super_family_of(&cell.source).to_string(),
                    super_family_of(&cell.target).to_string(),
                ))
                .or_default()
                .push(*drop);
        }
    }
    let family_pairs: Vec<FamilyPairSummary> = pair_drops
        .iter()
        .map(|((s, t), drops)| FamilyPairSummary {
            source_family: s.clone(),
            target_family: t.clone(),
            mean_drop: mean(drops),
            cells: drops.len(),
        })
        .collect();

    let trend_lines = trend_report(matrix, &family_pairs);
    Ok(MatrixSummary { targets, family_pairs, trend_lines })
}

/// Observations echoing the reference findings: within- vs cross-family
/// transfer strength, variant effects on black-box drops, and white-box
/// accuracy monotonicity over the FGSM epsilon sweep.
fn trend_report(matrix: &TransferMatrix, family_pairs: &[FamilyPairSummary]) -> Vec<String> {
    let mut lines = Vec::new();

    let mut within = Vec::new();
    let mut cross = Vec::new();
    for pair in family_pairs {
        let bucket = if pair.source_family == pair.target_family {
            &mut within
        } else {
            &mut cross
        };
        for _ in 0..pair.cells {
            bucket.push(pair.mean_drop);
        }
    }
    match (within.is_empty(), cross.is_empty()) {
        (false, false) => {
            let w = mean(&within);
            let c = mean(&cross);
            lines.push(format!(
                "within-family mean black-box drop {:.4} vs cross-family {:.4}; within exceeds cross: {}",
                w,
                c,
                w > c
            ));
        }
        _ => lines.push("family comparison needs both within- and cross-family cells".into()),
    }

    let mut by_variant: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for cell in &matrix.cells {
        if cell.is_white_box() {
            continue;
        }
        if let CellOutcome::Evaluated { drop, .. } = &cell.outcome {
            by_variant.entry(cell.variant.as_str()).or_default().push(*drop);
        }
    }
    if by_variant.len() > 1 {
        let parts: Vec<String> = by_variant
            .iter()
            .map(|(v, drops)| format!("{v} {:.4}", mean(drops)))
            .collect();
        lines.push(format!("mean black-box drop by variant: {}", parts.join(", ")));
        if let (Some(full), Some(noaug)) = (
            by_variant.get("full-aug").map(|d| mean(d)),
            by_variant.get("shrunk-noaug").map(|d| mean(d)),
        ) {
            lines.push(format!(
                "shrunk-noaug drop exceeds full-aug: {} ({:.4} vs {:.4})",
                noaug > full,
                noaug,
                full
            ));
        }
    }

    // FGSM epsilon sweep: mean white-box accuracy should not increase.
    let mut by_eps: BTreeMap<u64, (f64, Vec<f64>)> = BTreeMap::new();
    for cell in &matrix.cells {
        if cell.attack == AttackKind::Fgsm && cell.is_white_box() {
            if let CellOutcome::Evaluated { adv_acc, .. } = &cell.outcome {
                let entry = by_eps
                    .entry(cell.epsilon.to_bits())
                    .or_insert((cell.epsilon, Vec::new()));
                entry.1.push(*adv_acc);
            }
        }
    }
    if by_eps.len() > 1 {
        let mut points: Vec<(f64, f64)> =
            by_eps.values().map(|(eps, accs)| (*eps, mean(accs))).collect();
        points.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let non_increasing = points.windows(2).all(|w| w[1].1 <= w[0].1 + 1e-12);
        let series: Vec<String> =
            points.iter().map(|(e, a)| format!("eps {e} -> {a:.4}")).collect();
        lines.push(format!(
            "fgsm mean white-box accuracy by epsilon: {}; non-increasing: {non_increasing}",
            series.join(", ")
        ));
    }
    lines
}
