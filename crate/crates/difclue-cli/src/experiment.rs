//! The end-to-end experiment: mix classes, train, cluster, explain,
//! evaluate. Each stage is a pure function of the config and seed, so the
//! staged CLI commands and the one-shot runner produce identical artifacts.

use std::collections::BTreeMap;
use std::path::Path;

use difclue_core::cluster::{
    fit_direction_classifier, kmeans_assign, kmeans_fit, ClusterModel, DirectionSet,
};
use difclue_core::counterfactual::{
    alpha_sweep, generate_counterfactual, CounterfactualRecord, PerturbationSpec,
};
use difclue_core::data::{
    generate_dataset, mix_classes, train_oracle, Dataset, MixedDataset, OracleClassifier,
    OracleConfig,
};
use difclue_core::diffusion::{train_autoencoder, DiffusionAutoencoder};
use difclue_core::linalg::dist_sq;
use difclue_core::metrics::{
    alignment_eval, cluster_class_map, distinctness_eval, fit_gaussian,
    frechet_distance, importance_eval, substitutability_eval, ClassifierReport, ImportanceReport,
};
use difclue_core::parallel::map_indexed;
use difclue_core::rng::SeedStream;
use difclue_core::stats::adjusted_rand_index;
use difclue_core::Error as CoreError;
use thiserror::Error;

use crate::config::ExperimentConfig;

pub const DATASET_FILE: &str = "dataset.txt";
pub const ORACLE_CKPT: &str = "oracle.ckpt";
pub const DAE_CKPT: &str = "dae.ckpt";
pub const CLUSTER_CKPT: &str = "cluster.ckpt";
pub const DIRECTIONS_CKPT: &str = "directions.ckpt";
pub const LOSS_FILE: &str = "loss.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const TRAJECTORIES_FILE: &str = "trajectories.csv";
pub const RECORDS_FILE: &str = "records.csv";
pub const COUNTERFACTUALS_FILE: &str = "counterfactuals.txt";
pub const CONFIG_FILE: &str = "config_resolved.cfg";
pub const FAILED_MARKER: &str = "FAILED";
pub const PGM_DIR: &str = "pgm";

/// A pipeline failure, tagged with the stage that produced it.
#[derive(Debug, Error)]
#[error("stage {stage}: {source}")]
pub struct StageError {
    pub stage: &'static str,
    #[source]
    pub source: CoreError,
}

pub type StageResult<T> = std::result::Result<T, StageError>;

fn stage<T>(name: &'static str, r: difclue_core::Result<T>) -> StageResult<T> {
    r.map_err(|source| StageError {
        stage: name,
        source,
    })
}

#[derive(Debug, Clone)]
pub struct TrainedModels {
    pub oracle: OracleClassifier,
    pub dae: DiffusionAutoencoder,
    pub loss_history: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ClusterArtifacts {
    pub clusters: ClusterModel,
    /// Cluster of each positive sample, in `MixedDataset::positives` order.
    pub assignments: Vec<usize>,
    pub directions: DirectionSet,
    /// Majority ground-truth class of each cluster.
    pub cluster_class: BTreeMap<usize, usize>,
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub source_id: u64,
    pub cluster: usize,
    pub trajectory: Vec<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct RealismRow {
    pub cluster: usize,
    pub class: usize,
    pub frechet: f64,
}

#[derive(Debug, Clone)]
pub struct EvalResults {
    pub initial_loss: f64,
    pub final_loss: f64,
    pub recon_mse: f64,
    pub oracle_holdout_accuracy: f64,
    pub inertia: f64,
    pub ari: f64,
    pub realism: Vec<RealismRow>,
    pub distinctness: Option<ClassifierReport>,
    pub substitutability: ClassifierReport,
    pub importance: ImportanceReport,
    pub alignment: BTreeMap<usize, f64>,
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub config: ExperimentConfig,
    pub dataset: Dataset,
    pub mixed: MixedDataset,
    pub models: TrainedModels,
    pub clustering: ClusterArtifacts,
    pub records: Vec<CounterfactualRecord>,
    pub sweeps: Vec<SweepRow>,
    pub eval: EvalResults,
}

pub fn stage_generate(cfg: &ExperimentConfig) -> StageResult<Dataset> {
    stage("generate-data", generate_dataset(&cfg.dataset_spec()))
}

pub fn stage_mix(cfg: &ExperimentConfig, dataset: &Dataset) -> StageResult<MixedDataset> {
    stage("mix-classes", mix_classes(dataset, cfg.mix_a, cfg.mix_b))
}

pub fn stage_train(cfg: &ExperimentConfig, dataset: &Dataset) -> StageResult<TrainedModels> {
    let root = SeedStream::root(cfg.seed);
    let oracle = stage(
        "train-oracle",
        train_oracle(
            dataset,
            &OracleConfig {
                hidden: cfg.oracle_hidden,
                epochs: cfg.oracle_epochs,
                batch_size: cfg.oracle_batch,
                lr: cfg.oracle_lr,
                weight_decay: cfg.oracle_weight_decay,
            },
            root.derive("oracle"),
        ),
    )?;
    let values: Vec<Vec<f64>> = dataset.samples.iter().map(|s| s.values.clone()).collect();
    let (dae, loss_history) = stage(
        "train-autoencoder",
        train_autoencoder(&values, &cfg.dae, root.derive("dae")),
    )?;
    Ok(TrainedModels {
        oracle,
        dae,
        loss_history,
    })
}

/// Encode the positive class and discover its modes. Only bare value vectors
/// reach the encoder and the clusterer; ground-truth modes are consulted
/// afterwards, purely for the evaluation-side cluster-to-class map.
pub fn stage_cluster(
    cfg: &ExperimentConfig,
    dae: &DiffusionAutoencoder,
    mixed: &MixedDataset,
) -> StageResult<ClusterArtifacts> {
    let root = SeedStream::root(cfg.seed);
    let positives = mixed.positives();
    let codes = stage(
        "encode-positives",
        collect_results(map_indexed(&positives, |_, s| {
            dae.encode_semantic(&s.values).map(|z| z.0)
        })),
    )?;
    let clusters = stage("kmeans", kmeans_fit(&codes, cfg.k, root.derive("kmeans")))?;
    let assignments: Vec<usize> = codes.iter().map(|z| kmeans_assign(&clusters, z)).collect();
    let directions = stage(
        "fit-directions",
        fit_direction_classifier(&codes, &assignments, root.derive("directions")),
    )?;
    let modes: Vec<usize> = positives.iter().map(|s| s.mode).collect();
    let cluster_class = cluster_class_map(&assignments, &modes);
    Ok(ClusterArtifacts {
        clusters,
        assignments,
        directions,
        cluster_class,
    })
}

/// Generate one counterfactual per (negative sample, cluster) at the
/// configured alpha.
pub fn stage_explain(
    cfg: &ExperimentConfig,
    dae: &DiffusionAutoencoder,
    directions: &DirectionSet,
    oracle: &OracleClassifier,
    mixed: &MixedDataset,
) -> StageResult<Vec<CounterfactualRecord>> {
    let negatives = mixed.negatives();
    let mut jobs = Vec::with_capacity(negatives.len() * directions.k());
    for s in &negatives {
        for cluster in 0..directions.k() {
            jobs.push((s.id, s.values.clone(), cluster));
        }
    }
    stage(
        "explain",
        collect_results(map_indexed(&jobs, |_, (id, values, cluster)| {
            generate_counterfactual(
                dae,
                directions,
                oracle,
                *id,
                values,
                &PerturbationSpec {
                    target_cluster: *cluster,
                    alpha: cfg.alpha,
                    steps: cfg.dae.ddim_steps,
                },
            )
        })),
    )
}

/// One alpha sweep per (negative sample, cluster) over the configured grid.
pub fn stage_sweeps(
    cfg: &ExperimentConfig,
    dae: &DiffusionAutoencoder,
    directions: &DirectionSet,
    oracle: &OracleClassifier,
    cluster_class: &BTreeMap<usize, usize>,
    mixed: &MixedDataset,
) -> StageResult<Vec<SweepRow>> {
    let negatives = mixed.negatives();
    let mut jobs = Vec::with_capacity(negatives.len() * cluster_class.len());
    for s in &negatives {
        for (&cluster, &class) in cluster_class {
            jobs.push((s.id, s.values.clone(), cluster, class));
        }
    }
    stage(
        "alpha-sweeps",
        collect_results(map_indexed(&jobs, |_, (id, values, cluster, class)| {
            alpha_sweep(
                dae,
                directions,
                oracle,
                values,
                *cluster,
                *class,
                &cfg.alphas,
                cfg.dae.ddim_steps,
            )
            .map(|trajectory| SweepRow {
                source_id: *id,
                cluster: *cluster,
                trajectory,
            })
        })),
    )
}

pub fn stage_evaluate(
    cfg: &ExperimentConfig,
    mixed: &MixedDataset,
    models: &TrainedModels,
    clustering: &ClusterArtifacts,
    records: &[CounterfactualRecord],
    sweeps: &[SweepRow],
) -> StageResult<EvalResults> {
    let root = SeedStream::root(cfg.seed);
    let dae = &models.dae;
    let oracle = &models.oracle;

    // Reconstruction error over the whole dataset.
    let recon_sq = stage(
        "evaluate",
        collect_results(map_indexed(&mixed.samples, |_, s| {
            dae.reconstruct(&s.values, cfg.dae.ddim_steps)
                .map(|r| dist_sq(&r, &s.values) / s.values.len() as f64)
        })),
    )?;
    let recon_mse = recon_sq.iter().sum::<f64>() / recon_sq.len().max(1) as f64;

    let positives = mixed.positives();
    let modes: Vec<usize> = positives.iter().map(|s| s.mode).collect();
    let ari = adjusted_rand_index(&clustering.assignments, &normalize_labels(&modes));

    // Realism: Frechet distance in oracle feature space between each
    // cluster's counterfactuals and the real samples of each constituent.
    let features_of = |values: &[Vec<f64>]| -> difclue_core::Result<Vec<Vec<f64>>> {
        collect_results(map_indexed(values, |_, v| oracle.features(v)))
    };
    let mut realism = Vec::new();
    {
        let mut real_features: BTreeMap<usize, Vec<Vec<f64>>> = BTreeMap::new();
        for &class in [cfg.mix_a, cfg.mix_b].iter() {
            let values: Vec<Vec<f64>> = positives
                .iter()
                .filter(|s| s.mode == class)
                .map(|s| s.values.clone())
                .collect();
            if values.len() >= 2 {
                real_features.insert(class, stage("evaluate", features_of(&values))?);
            }
        }
        for cluster in 0..clustering.directions.k() {
            let decoded: Vec<Vec<f64>> = records
                .iter()
                .filter(|r| r.target_cluster == cluster)
                .map(|r| r.decoded.clone())
                .collect();
            if decoded.len() < 2 {
                continue;
            }
            let cf_fit = stage("evaluate", fit_gaussian(&stage("evaluate", features_of(&decoded))?))?;
            for (&class, feats) in &real_features {
                let real_fit = stage("evaluate", fit_gaussian(feats))?;
                let fd = stage("evaluate", frechet_distance(&cf_fit, &real_fit))?;
                realism.push(RealismRow {
                    cluster,
                    class,
                    frechet: fd,
                });
            }
        }
    }

    // Distinctness between the two counterfactual sets (two clusters only).
    let distinctness = if clustering.directions.k() == 2 {
        let set_of = |cluster: usize| -> Vec<Vec<f64>> {
            records
                .iter()
                .filter(|r| r.target_cluster == cluster)
                .map(|r| r.decoded.clone())
                .collect()
        };
        Some(stage(
            "evaluate",
            distinctness_eval(&set_of(0), &set_of(1), root.derive("metrics/distinctness")),
        )?)
    } else {
        None
    };

    // Substitutability: train on counterfactuals labeled by their cluster's
    // class, test on the real positives labeled by ground-truth mode.
    let synth_x: Vec<Vec<f64>> = records.iter().map(|r| r.decoded.clone()).collect();
    let synth_y: Vec<usize> = records
        .iter()
        .map(|r| clustering.cluster_class[&r.target_cluster])
        .collect();
    let real_x: Vec<Vec<f64>> = positives.iter().map(|s| s.values.clone()).collect();
    let real_y = modes.clone();
    let substitutability = stage(
        "evaluate",
        substitutability_eval(
            &synth_x,
            &synth_y,
            &real_x,
            &real_y,
            root.derive("metrics/substitutability"),
        ),
    )?;

    let importance = stage(
        "evaluate",
        importance_eval(
            &sweeps
                .iter()
                .map(|s| s.trajectory.clone())
                .collect::<Vec<_>>(),
        ),
    )?;

    let alignment = stage(
        "evaluate",
        alignment_eval(records, &clustering.cluster_class),
    )?;

    Ok(EvalResults {
        initial_loss: *models.loss_history.first().unwrap_or(&f64::NAN),
        final_loss: *models.loss_history.last().unwrap_or(&f64::NAN),
        recon_mse,
        oracle_holdout_accuracy: oracle.holdout.accuracy,
        inertia: clustering.clusters.inertia(),
        ari,
        realism,
        distinctness,
        substitutability,
        importance,
        alignment,
    })
}

/// Relabel arbitrary label values onto 0..n by order of first appearance,
/// as the ARI computation expects dense labels.
fn normalize_labels(labels: &[usize]) -> Vec<usize> {
    let mut seen: Vec<usize> = Vec::new();
    labels
        .iter()
        .map(|&l| {
            if let Some(pos) = seen.iter().position(|&s| s == l) {
                pos
            } else {
                seen.push(l);
                seen.len() - 1
            }
        })
        .collect()
}

fn collect_results<T>(results: Vec<difclue_core::Result<T>>) -> difclue_core::Result<Vec<T>> {
    results.into_iter().collect()
}

/// Run every stage in memory.
pub fn run_pipeline(cfg: &ExperimentConfig) -> StageResult<PipelineOutcome> {
    stage("config", cfg.validate())?;
    let dataset = stage_generate(cfg)?;
    let mixed = stage_mix(cfg, &dataset)?;
    let models = stage_train(cfg, &dataset)?;
    let clustering = stage_cluster(cfg, &models.dae, &mixed)?;
    let records = stage_explain(cfg, &models.dae, &clustering.directions, &models.oracle, &mixed)?;
    let sweeps = stage_sweeps(
        cfg,
        &models.dae,
        &clustering.directions,
        &models.oracle,
        &clustering.cluster_class,
        &mixed,
    )?;
    let eval = stage_evaluate(cfg, &mixed, &models, &clustering, &records, &sweeps)?;
    Ok(PipelineOutcome {
        config: cfg.clone(),
        dataset,
        mixed,
        models,
        clustering,
        records,
        sweeps,
        eval,
    })
}

/// Run the pipeline and write the report directory. On failure, partial
/// outputs stay in place and a FAILED marker records the stage.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> StageResult<PipelineOutcome> {
    std::fs::create_dir_all(out_dir).map_err(|e| StageError {
        stage: "setup",
        source: e.into(),
    })?;
    match run_pipeline(cfg).and_then(|outcome| {
        crate::report::write_artifacts(&outcome, out_dir)?;
        Ok(outcome)
    }) {
        Ok(outcome) => {
            let _ = std::fs::remove_file(out_dir.join(FAILED_MARKER));
            Ok(outcome)
        }
        Err(err) => {
            let _ = std::fs::write(out_dir.join(FAILED_MARKER), format!("{err}\n"));
            Err(err)
        }
    }
}
