//! Run configuration: a TOML file with sections for the corpus, model
//! subset, training preset, attack grid, variant list, and output layout.
//! Unknown keys are rejected at every level, and the whole file is
//! validated before any long-running work starts.

use crate::attack::{AlphaSchedule, AttackConfig};
use crate::data::VariantKind;
use crate::error::{Error, Result};
use crate::train::{Phase, TrainConfig};
use crate::transfer::{registry_names, ExperimentPlan};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const DEFAULT_SEED: u64 = 12345;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSection {
    pub seed: u64,
    pub n_per_class: usize,
}

impl Default for CorpusSection {
    fn default() -> Self {
        CorpusSection {
            seed: DEFAULT_SEED,
            n_per_class: crate::data::DEFAULT_N_PER_CLASS,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelsSection {
    /// Registry names to run; None means the whole registry.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub include: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    /// "desk" (fast, default) or "reference" (lr 1e-4, 40 epochs).
    pub preset: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_epochs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub patience: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub two_phase: Option<bool>,
}

impl Default for TrainingSection {
    fn default() -> Self {
        TrainingSection {
            preset: "desk".into(),
            learning_rate: None,
            batch_size: None,
            max_epochs: None,
            patience: None,
            two_phase: None,
        }
    }
}

impl TrainingSection {
    /// Resolve preset plus overrides into a validated template. The seed is
    /// a placeholder; the plan derives one per (model, variant).
    pub fn to_train_config(&self) -> Result<TrainConfig> {
        let mut config = match self.preset.as_str() {
            "desk" => TrainConfig::desk(0),
            "reference" => TrainConfig::default(),
            other => {
                return Err(Error::Config(format!(
                    "unknown training preset `{other}`; expected `desk` or `reference`"
                )))
            }
        };
        if let Some(lr) = self.learning_rate {
            config.learning_rate = lr;
        }
        if let Some(bs) = self.batch_size {
            config.batch_size = bs;
        }
        if let Some(me) = self.max_epochs {
            config.max_epochs = me;
        }
        if let Some(p) = self.patience {
            config.patience = p;
        }
        if let Some(two) = self.two_phase {
            config.phase = if two { Phase::TwoPhase } else { Phase::Single };
        }
        config.validate()?;
        Ok(config)
    }
}

/// PGD step size in a config file: a named schedule or a literal value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AlphaSpec {
    Named(String),
    Fixed(f64),
}

impl AlphaSpec {
    pub fn to_schedule(&self) -> Result<AlphaSchedule> {
        match self {
            AlphaSpec::Fixed(v) => Ok(AlphaSchedule::Fixed(*v)),
            AlphaSpec::Named(name) => match name.as_str() {
                "eps_over_4" => Ok(AlphaSchedule::EpsOver4),
                "eps_over_iters" => Ok(AlphaSchedule::EpsOverIters),
                other => Err(Error::Config(format!(
                    "unknown alpha schedule `{other}`; expected `eps_over_4`, `eps_over_iters`, or a number"
                ))),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PgdEntry {
    pub epsilon: f64,
    pub alpha: AlphaSpec,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttacksSection {
    pub fgsm_epsilons: Vec<f64>,
    pub pgd: Vec<PgdEntry>,
}

impl Default for AttacksSection {
    fn default() -> Self {
        AttacksSection {
            fgsm_epsilons: crate::transfer::DEFAULT_FGSM_EPSILONS.to_vec(),
            pgd: vec![
                PgdEntry {
                    epsilon: crate::transfer::DEFAULT_PGD_EPSILON,
                    alpha: AlphaSpec::Named("eps_over_iters".into()),
                    iterations: 10,
                },
                PgdEntry {
                    epsilon: crate::transfer::DEFAULT_PGD_EPSILON,
                    alpha: AlphaSpec::Named("eps_over_4".into()),
                    iterations: 20,
                },
                PgdEntry {
                    epsilon: crate::transfer::DEFAULT_PGD_EPSILON,
                    alpha: AlphaSpec::Named("eps_over_iters".into()),
                    iterations: 20,
                },
            ],
        }
    }
}

impl AttacksSection {
    pub fn to_configs(&self) -> Result<Vec<AttackConfig>> {
        let mut configs: Vec<AttackConfig> = self
            .fgsm_epsilons
            .iter()
            .map(|&eps| AttackConfig::fgsm(eps))
            .collect();
        for entry in &self.pgd {
            configs.push(AttackConfig::pgd(
                entry.epsilon,
                entry.alpha.to_schedule()?,
                entry.iterations,
                0,
            ));
        }
        if configs.is_empty() {
            return Err(Error::Config("attack grid is empty".into()));
        }
        for config in &configs {
            config.validate()?;
        }
        Ok(configs)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlanSection {
    pub variants: Vec<VariantKind>,
}

impl Default for PlanSection {
    fn default() -> Self {
        PlanSection { variants: VariantKind::all().to_vec() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: PathBuf::from("out") }
    }
}

impl OutputSection {
    pub fn data_dir(&self) -> PathBuf {
        self.dir.join("data")
    }

    pub fn checkpoints_dir(&self) -> PathBuf {
        self.dir.join("checkpoints")
    }

    pub fn attacks_dir(&self) -> PathBuf {
        self.dir.join("attacks")
    }

    pub fn matrix_path(&self) -> PathBuf {
        self.dir.join("matrix.csv")
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.dir.join("run-manifest.json")
    }

    pub fn report_dir(&self) -> PathBuf {
        self.dir.join("report")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub corpus: CorpusSection,
    pub models: ModelsSection,
    pub training: TrainingSection,
    pub attacks: AttacksSection,
    pub plan: PlanSection,
    pub output: OutputSection,
}

impl RunConfig {
    /// Parse and fully validate a config; the error names the offending key
    /// or value. An empty string yields the defaults.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let config: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("config parse error: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<RunConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read config `{}`: {e}", path.display()))
        })?;
        RunConfig::parse(&text)
            .map_err(|e| Error::Config(format!("in `{}`: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        self.to_plan()?;
        Ok(())
    }

    /// Assemble the experiment plan this config describes. Checkpoints live
    /// under the output directory so reruns reuse them.
    pub fn to_plan(&self) -> Result<ExperimentPlan> {
        let plan = ExperimentPlan {
            models: self
                .models
                .include
                .clone()
                .unwrap_or_else(registry_names),
            variants: self.plan.variants.clone(),
            attacks: self.attacks.to_configs()?,
            seed: self.corpus.seed,
            n_per_class: self.corpus.n_per_class,
            train: self.training.to_train_config()?,
            checkpoint_dir: Some(self.output.checkpoints_dir()),
        };
        plan.validate()?;
        Ok(plan)
    }

    /// The default configuration rendered as a commented-free TOML document;
    /// parsing it back yields `RunConfig::default()`.
    pub fn example_toml() -> String {
        toml::to_string_pretty(&RunConfig::default()).expect("default config serializes")
    }
}
