//! Command-line front end: generate data, train models, craft adversarial
//! sets, run the transfer matrix, and render reports.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 runtime error.
//! Progress and wall time go to stderr; only the report summary uses stdout.

use advgrid_core::attack::{generate_adversarial_set, write_adversarial_set};
use advgrid_core::config::RunConfig;
use advgrid_core::data::{self, load_corpus_dir, make_variant, VariantKind};
use advgrid_core::error::Error;
use advgrid_core::report::{summary_text, write_report, RunManifest};
use advgrid_core::transfer::{
    attack_seed, checkpoint_path, plan_corpus, registry_entry, run_plan, summarize,
    train_or_load_model, ExperimentPlan, TransferMatrix,
};
use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

#[derive(Parser)]
#[command(
    name = "advgrid",
    version,
    about = "Train small convolutional classifiers on a procedural texture corpus, attack them with FGSM and PGD, and measure white-box and transfer accuracy across the model grid."
)]
struct Cli {
    /// TOML run configuration; built-in defaults apply when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Override the corpus seed from the config.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Override the output directory from the config.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

fn parse_variant(s: &str) -> Result<VariantKind, String> {
    VariantKind::parse(s).map_err(|e| e.to_string())
}

#[derive(Subcommand)]
enum Command {
    /// Generate the procedural corpus as PNG files plus a manifest.
    GenData {
        /// Regenerate even when the corpus directory already exists.
        #[arg(long)]
        force: bool,
    },
    /// Train models, writing checkpoints and training-curve CSVs.
    Train {
        /// Comma-separated registry names; default is the config's list.
        #[arg(long, value_delimiter = ',', value_name = "LIST")]
        models: Option<Vec<String>>,
        /// Restrict to one dataset variant.
        #[arg(long, value_name = "KIND", value_parser = parse_variant)]
        variant: Option<VariantKind>,
        /// Retrain even when a checkpoint exists.
        #[arg(long)]
        force: bool,
    },
    /// Craft adversarial sets for each (model, variant, attack config).
    Attack {
        /// Comma-separated registry names; default is the config's list.
        #[arg(long, value_delimiter = ',', value_name = "LIST")]
        models: Option<Vec<String>>,
        /// Restrict to one dataset variant.
        #[arg(long, value_name = "KIND", value_parser = parse_variant)]
        variant: Option<VariantKind>,
        /// Rewrite sets that already exist on disk.
        #[arg(long)]
        force: bool,
    },
    /// Run the full experiment grid and write the accuracy matrix CSV.
    Matrix {
        /// Retrain models instead of reusing existing checkpoints.
        #[arg(long)]
        force: bool,
    },
    /// Render bar charts and the text summary from the matrix CSV.
    Report,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    ExitCode::SUCCESS
                }
                _ => {
                    eprint!("{e}");
                    ExitCode::from(1)
                }
            };
        }
    };
    let clock = Instant::now();
    match run(cli) {
        Ok(()) => {
            eprintln!("wall time: {:.2}s", clock.elapsed().as_secs_f64());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => ExitCode::from(1),
                _ => ExitCode::from(2),
            }
        }
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.corpus.seed = seed;
    }
    if let Some(out) = cli.out {
        config.output.dir = out;
    }
    config.validate()?;
    std::fs::create_dir_all(&config.output.dir).map_err(|e| {
        Error::Config(format!(
            "cannot create output directory `{}`: {e}",
            config.output.dir.display()
        ))
    })?;

    match cli.command {
        Command::GenData { force } => gen_data(&config, force),
        Command::Train { models, variant, force } => train(&config, models, variant, force),
        Command::Attack { models, variant, force } => attack(&config, models, variant, force),
        Command::Matrix { force } => matrix(&config, force),
        Command::Report => report(&config),
    }
}

/// Resolve the `--models` override, validating names against the registry.
fn select_models(plan: &ExperimentPlan, requested: Option<Vec<String>>) -> Result<Vec<String>, Error> {
    match requested {
        None => Ok(plan.models.clone()),
        Some(list) => {
            if list.is_empty() {
                return Err(Error::Config("--models lists no names".into()));
            }
            for name in &list {
                registry_entry(name)?;
            }
            Ok(list)
        }
    }
}

fn select_variants(plan: &ExperimentPlan, requested: Option<VariantKind>) -> Vec<VariantKind> {
    match requested {
        Some(kind) => vec![kind],
        None => plan.variants.clone(),
    }
}

fn gen_data(config: &RunConfig, force: bool) -> Result<(), Error> {
    let plan = config.to_plan()?;
    let dir = config.output.data_dir();
    if dir.join(data::MANIFEST_FILE).exists() && !force {
        let (corpus, manifest) = load_corpus_dir(&dir)?;
        eprintln!(
            "corpus already present at {} ({} images, hash {}); use --force to regenerate",
            dir.display(),
            corpus.len(),
            &manifest.pixel_sha256[..12]
        );
        return Ok(());
    }
    let (corpus, splits, hash) = plan_corpus(&plan)?;
    data::write_corpus_dir(&dir, &corpus, &splits, plan.seed, plan.n_per_class)?;
    eprintln!(
        "wrote {} images ({}x{}) to {} (hash {})",
        corpus.len(),
        corpus.edge,
        corpus.edge,
        dir.display(),
        &hash[..12]
    );
    Ok(())
}

fn train(
    config: &RunConfig,
    models: Option<Vec<String>>,
    variant: Option<VariantKind>,
    force: bool,
) -> Result<(), Error> {
    let plan = config.to_plan()?;
    let models = select_models(&plan, models)?;
    let kinds = select_variants(&plan, variant);
    let (corpus, splits, _) = plan_corpus(&plan)?;
    let ckpt_dir = config.output.checkpoints_dir();
    for kind in kinds {
        let var = make_variant(&corpus, kind, &splits, plan.seed)?;
        for name in &models {
            let clock = Instant::now();
            let (_, trained, loaded) = train_or_load_model(&plan, name, &var, force)?;
            if loaded {
                eprintln!("{name} on {kind}: checkpoint exists, skipping (use --force to retrain)");
                continue;
            }
            let report = trained.expect("training produces a report");
            let csv = ckpt_dir.join(format!("{name}_{kind}_train.csv"));
            report.write_csv(&csv)?;
            eprintln!(
                "trained {name} on {kind} in {:.1}s ({} epochs, best val loss {:.4})",
                clock.elapsed().as_secs_f64(),
                report.stopped_epoch,
                report.best_val_loss
            );
        }
    }
    Ok(())
}

fn attack(
    config: &RunConfig,
    models: Option<Vec<String>>,
    variant: Option<VariantKind>,
    force: bool,
) -> Result<(), Error> {
    let plan = config.to_plan()?;
    let models = select_models(&plan, models)?;
    let kinds = select_variants(&plan, variant);
    let (corpus, splits, hash) = plan_corpus(&plan)?;
    let out = config.output.attacks_dir();
    std::fs::create_dir_all(&out)?;
    for kind in kinds {
        let var = make_variant(&corpus, kind, &splits, plan.seed)?;
        for name in &models {
            let (model, _, _) = train_or_load_model(&plan, name, &var, false)?;
            for (ci, template) in plan.attacks.iter().enumerate() {
                let mut cfg = template.clone();
                cfg.seed = attack_seed(plan.seed, kind, name, ci)?;
                let path = out.join(format!("{name}_{kind}_{}.advset", cfg.label()));
                if path.exists() && !force {
                    eprintln!("{} exists, skipping (use --force to rewrite)", path.display());
                    continue;
                }
                let set = generate_adversarial_set(&model, &var, &cfg, &hash)?;
                write_adversarial_set(&set, &path)?;
                eprintln!(
                    "wrote {} ({} examples, max distance {:.6})",
                    path.display(),
                    set.examples.len(),
                    set.stats.max_linf
                );
            }
        }
    }
    Ok(())
}

fn matrix(config: &RunConfig, force: bool) -> Result<(), Error> {
    let plan = config.to_plan()?;
    if force {
        if let Some(dir) = &plan.checkpoint_dir {
            for kind in &plan.variants {
                for name in &plan.models {
                    let path = checkpoint_path(dir, name, *kind);
                    if path.exists() {
                        std::fs::remove_file(&path)?;
                    }
                }
            }
        }
    }
    let outcome = run_plan(&plan)?;
    let matrix_path = config.output.matrix_path();
    outcome.matrix.write_csv(&matrix_path)?;

    let mut manifest = RunManifest::new(Some(plan.clone()), Some(outcome.corpus_hash.clone()));
    manifest.files.push("matrix.csv".into());
    manifest.files.push("run-manifest.json".into());
    for kind in &plan.variants {
        for name in &plan.models {
            manifest.files.push(format!("checkpoints/{name}_{kind}.ckpt"));
        }
    }
    manifest.write(config.output.manifest_path())?;

    let s = &outcome.stats;
    eprintln!(
        "matrix: {} cells evaluated, {} skipped, {} adversarial sets, {} models trained, {} loaded",
        s.cells_evaluated, s.cells_skipped, s.sets_generated, s.models_trained, s.models_loaded
    );
    eprintln!(
        "phases: train {:.1}s, attack {:.1}s, eval {:.1}s",
        s.train_seconds, s.attack_seconds, s.eval_seconds
    );
    eprintln!("wrote {}", matrix_path.display());
    Ok(())
}

fn report(config: &RunConfig) -> Result<(), Error> {
    let matrix_path = config.output.matrix_path();
    let matrix = TransferMatrix::read_csv(&matrix_path)?;
    let summary = summarize(&matrix)?;
    let files = write_report(&matrix, config.output.report_dir())?;
    print!("{}", summary_text(&summary));
    eprintln!("wrote {} report files to {}", files.len(), config.output.report_dir().display());
    Ok(())
}
