//! Command-line interface. Exit codes: 0 success, 1 usage error, 2 stage
//! failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use difclue_core::data::{dataset_from_str, dataset_to_string, Dataset};
use difclue_core::Error as CoreError;

use crate::checkpoint::{self, Model};
use crate::config::ExperimentConfig;
use crate::experiment::{self, StageError, StageResult, TrainedModels};
use crate::report;

#[derive(Parser, Debug)]
#[command(
    name = "difclue",
    about = "Latent-mode counterfactual experiments on synthetic data",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic dataset into the output directory.
    GenerateData(StageArgs),
    /// Train the oracle classifier and the diffusion autoencoder.
    Train(StageArgs),
    /// Encode positives, run k-means and fit perturbation directions.
    Cluster(StageArgs),
    /// Generate counterfactuals from the negative samples.
    Explain(StageArgs),
    /// Compute all evaluation metrics.
    Evaluate(StageArgs),
    /// Run the whole experiment end to end.
    Run(StageArgs),
    /// Render the report for a finished run directory.
    Report(StageArgs),
}

#[derive(Args, Debug)]
struct StageArgs {
    /// Experiment config file (flat key = value).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output / working directory for artifacts.
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Overrides cf.alpha.
    #[arg(long)]
    alpha: Option<f64>,
    /// Overrides cluster.k.
    #[arg(long)]
    k: Option<usize>,
    /// Overrides dae.ddim_steps.
    #[arg(long)]
    steps: Option<usize>,
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    0
                }
                _ => {
                    eprint!("{e}");
                    1
                }
            };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            2
        }
    }
}

fn dispatch(cli: Cli) -> StageResult<()> {
    match cli.command {
        Command::GenerateData(args) => {
            let cfg = load_config(&args)?;
            ensure_out(&args.out)?;
            let dataset = experiment::stage_generate(&cfg)?;
            write_text(
                &args.out.join(experiment::DATASET_FILE),
                &dataset_to_string(&dataset),
            )
        }
        Command::Train(args) => {
            let cfg = load_config(&args)?;
            ensure_out(&args.out)?;
            let dataset = load_dataset(&cfg, &args.out, "train")?;
            let models = experiment::stage_train(&cfg, &dataset)?;
            save(
                Model::Oracle(models.oracle),
                &args.out.join(experiment::ORACLE_CKPT),
                "train",
            )?;
            save(
                Model::Dae(models.dae),
                &args.out.join(experiment::DAE_CKPT),
                "train",
            )?;
            write_text(
                &args.out.join(experiment::LOSS_FILE),
                &report::loss_csv(&models.loss_history),
            )
        }
        Command::Cluster(args) => {
            let cfg = load_config(&args)?;
            let dataset = load_dataset(&cfg, &args.out, "cluster")?;
            let mixed = experiment::stage_mix(&cfg, &dataset)?;
            let dae = tag("cluster", checkpoint::load_dae(&args.out.join(experiment::DAE_CKPT)))?;
            let clustering = experiment::stage_cluster(&cfg, &dae, &mixed)?;
            save(
                Model::Clusters(clustering.clusters),
                &args.out.join(experiment::CLUSTER_CKPT),
                "cluster",
            )?;
            save(
                Model::Directions(clustering.directions),
                &args.out.join(experiment::DIRECTIONS_CKPT),
                "cluster",
            )
        }
        Command::Explain(args) => {
            let cfg = load_config(&args)?;
            let (dataset, mixed, models, clustering) = load_pipeline_state(&cfg, &args.out, "explain")?;
            let records = experiment::stage_explain(
                &cfg,
                &models.dae,
                &clustering.directions,
                &models.oracle,
                &mixed,
            )?;
            let outcome = partial_outcome(cfg, dataset, mixed, models, clustering, records, vec![]);
            write_text(
                &args.out.join(experiment::RECORDS_FILE),
                &report::records_csv(&outcome),
            )?;
            write_text(
                &args.out.join(experiment::COUNTERFACTUALS_FILE),
                &dataset_to_string(&report::counterfactuals_dataset(&outcome)),
            )?;
            if outcome.dataset.kind == difclue_core::data::DatasetKind::Shapes16 {
                report::write_artifact_pgms(&outcome, &args.out.join(experiment::PGM_DIR))?;
            }
            Ok(())
        }
        Command::Evaluate(args) => {
            let cfg = load_config(&args)?;
            let (dataset, mixed, models, clustering) =
                load_pipeline_state(&cfg, &args.out, "evaluate")?;
            let records = experiment::stage_explain(
                &cfg,
                &models.dae,
                &clustering.directions,
                &models.oracle,
                &mixed,
            )?;
            let sweeps = experiment::stage_sweeps(
                &cfg,
                &models.dae,
                &clustering.directions,
                &models.oracle,
                &clustering.cluster_class,
                &mixed,
            )?;
            let eval =
                experiment::stage_evaluate(&cfg, &mixed, &models, &clustering, &records, &sweeps)?;
            let mut outcome =
                partial_outcome(cfg, dataset, mixed, models, clustering, records, sweeps);
            outcome.eval = eval;
            write_text(
                &args.out.join(experiment::METRICS_FILE),
                &report::metrics_csv(&outcome),
            )?;
            write_text(
                &args.out.join(experiment::TRAJECTORIES_FILE),
                &report::trajectories_csv(&outcome),
            )
        }
        Command::Run(args) => {
            let cfg = load_config(&args)?;
            experiment::run_experiment(&cfg, &args.out).map(|_| ())
        }
        Command::Report(args) => {
            let path = args.out.join(experiment::METRICS_FILE);
            let text = std::fs::read_to_string(&path).map_err(|e| StageError {
                stage: "report",
                source: CoreError::Io(e),
            })?;
            let rendered = tag("report", report::render_report(&text))?;
            print!("{rendered}");
            Ok(())
        }
    }
}

fn tag<T>(stage: &'static str, r: difclue_core::Result<T>) -> StageResult<T> {
    r.map_err(|source| StageError { stage, source })
}

fn load_config(args: &StageArgs) -> StageResult<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| StageError {
                stage: "config",
                source: CoreError::Io(e),
            })?;
            tag("config", ExperimentConfig::parse(&text))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(alpha) = args.alpha {
        cfg.alpha = alpha;
    }
    if let Some(k) = args.k {
        cfg.k = k;
    }
    if let Some(steps) = args.steps {
        cfg.dae.ddim_steps = steps;
    }
    tag("config", cfg.validate())?;
    Ok(cfg)
}

fn ensure_out(dir: &Path) -> StageResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| StageError {
        stage: "setup",
        source: CoreError::Io(e),
    })
}

fn write_text(path: &Path, text: &str) -> StageResult<()> {
    std::fs::write(path, text).map_err(|e| StageError {
        stage: "write-artifacts",
        source: CoreError::Io(e),
    })
}

fn save(model: Model, path: &Path, stage: &'static str) -> StageResult<()> {
    tag(stage, checkpoint::save_checkpoint(&model, path))
}

fn load_dataset(cfg: &ExperimentConfig, out: &Path, stage: &'static str) -> StageResult<Dataset> {
    let path = out.join(experiment::DATASET_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| StageError {
        stage,
        source: CoreError::Io(e),
    })?;
    let dataset = tag(stage, dataset_from_str(&text))?;
    if dataset.dim != cfg.dim || dataset.classes != cfg.classes {
        return Err(StageError {
            stage,
            source: CoreError::param(format!(
                "dataset file ({}d, {} classes) does not match config ({}d, {} classes)",
                dataset.dim, dataset.classes, cfg.dim, cfg.classes
            )),
        });
    }
    Ok(dataset)
}

type PipelineState = (
    Dataset,
    difclue_core::data::MixedDataset,
    TrainedModels,
    experiment::ClusterArtifacts,
);

fn load_pipeline_state(
    cfg: &ExperimentConfig,
    out: &Path,
    stage: &'static str,
) -> StageResult<PipelineState> {
    let dataset = load_dataset(cfg, out, stage)?;
    let mixed = experiment::stage_mix(cfg, &dataset)?;
    let oracle = tag(stage, checkpoint::load_oracle(&out.join(experiment::ORACLE_CKPT)))?;
    let dae = tag(stage, checkpoint::load_dae(&out.join(experiment::DAE_CKPT)))?;
    let loss_text = std::fs::read_to_string(out.join(experiment::LOSS_FILE))
        .map_err(|e| StageError {
            stage,
            source: CoreError::Io(e),
        })?;
    let loss_history = parse_loss_csv(&loss_text).map_err(|source| StageError { stage, source })?;
    let clusters = tag(
        stage,
        checkpoint::load_clusters(&out.join(experiment::CLUSTER_CKPT)),
    )?;
    let directions = tag(
        stage,
        checkpoint::load_directions(&out.join(experiment::DIRECTIONS_CKPT)),
    )?;
    let positives = mixed.positives();
    let mut assignments = Vec::with_capacity(positives.len());
    for s in &positives {
        let z = tag(stage, dae.encode_semantic(&s.values))?;
        assignments.push(difclue_core::cluster::kmeans_assign(&clusters, &z.0));
    }
    let modes: Vec<usize> = positives.iter().map(|s| s.mode).collect();
    let cluster_class = difclue_core::metrics::cluster_class_map(&assignments, &modes);
    let models = TrainedModels {
        oracle,
        dae,
        loss_history,
    };
    let clustering = experiment::ClusterArtifacts {
        clusters,
        assignments,
        directions,
        cluster_class,
    };
    Ok((dataset, mixed, models, clustering))
}

fn parse_loss_csv(text: &str) -> difclue_core::Result<Vec<f64>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if line != "epoch,loss" {
                return Err(CoreError::format("loss.csv has an unexpected header"));
            }
            continue;
        }
        let (_, loss) = line
            .split_once(',')
            .ok_or_else(|| CoreError::format(format!("bad loss row '{line}'")))?;
        out.push(
            loss.parse::<f64>()
                .map_err(|_| CoreError::format(format!("bad loss value '{loss}'")))?,
        );
    }
    Ok(out)
}

fn partial_outcome(
    config: ExperimentConfig,
    dataset: Dataset,
    mixed: difclue_core::data::MixedDataset,
    models: TrainedModels,
    clustering: experiment::ClusterArtifacts,
    records: Vec<difclue_core::counterfactual::CounterfactualRecord>,
    sweeps: Vec<experiment::SweepRow>,
) -> experiment::PipelineOutcome {
    experiment::PipelineOutcome {
        config,
        dataset,
        mixed,
        models,
        clustering,
        records,
        sweeps,
        eval: experiment::EvalResults {
            initial_loss: f64::NAN,
            final_loss: f64::NAN,
            recon_mse: f64::NAN,
            oracle_holdout_accuracy: f64::NAN,
            inertia: f64::NAN,
            ari: f64::NAN,
            realism: vec![],
            distinctness: None,
            substitutability: difclue_core::metrics::ClassifierReport {
                accuracy: f64::NAN,
                precision_micro: f64::NAN,
                precision_macro: f64::NAN,
                recall_micro: f64::NAN,
                recall_macro: f64::NAN,
                per_class: vec![],
            },
            importance: difclue_core::metrics::ImportanceReport {
                pearson: f64::NAN,
                spearman: f64::NAN,
                kl: f64::NAN,
                mse: f64::NAN,
            },
            alignment: std::collections::BTreeMap::new(),
        },
    }
}
