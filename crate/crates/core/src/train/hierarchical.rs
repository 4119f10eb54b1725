use serde::{Deserialize, Serialize};

use super::cluster::{cluster_items, KMeansParams, MergeResult};
use super::stage::{train_stage, LabelLevel, StageResult};
use super::TrainConfig;
use crate::data::{ImageStore, LabelTaxonomy, Split};
use crate::error::{Error, Result};
use crate::model::{BackboneSpec, HeadSpec, Model, Stage};
use crate::seed::derive_seed;
use crate::tensor::{Scalar, Tensor};

const PROBE_SAMPLES: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxIterations,
    /// Stage-2 best validation loss did not improve on the previous iteration.
    ValidationLossStalled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub iteration: usize,
    /// Item → group labels used by stage 1 of this iteration.
    pub stage1_groups: Vec<usize>,
    pub stage1: StageResult,
    pub stage2: StageResult,
    pub merge: MergeResult,
    /// Stage-2 start embeddings equal the final stage-1 embeddings exactly on
    /// a probe batch.
    pub backbone_continuity: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HierarchicalReport {
    pub config: TrainConfig,
    pub taxonomy: LabelTaxonomy,
    pub iterations: Vec<IterationReport>,
    pub stop_reason: StopReason,
}

#[derive(Clone, Debug)]
pub struct IterationModels<T> {
    pub stage1: Model<T>,
    pub stage2: Model<T>,
}

#[derive(Clone, Debug)]
pub struct HierarchicalOutcome<T> {
    /// Stage-2 model of the last completed iteration.
    pub final_model: Model<T>,
    /// Stage-1 model of the first iteration, trained on the original types.
    pub type_model: Model<T>,
    pub models: Vec<IterationModels<T>>,
    pub report: HierarchicalReport,
}

#[derive(Clone, Debug)]
pub struct FlatOutcome<T> {
    pub model: Model<T>,
    pub stage: StageResult,
}

fn stage_seeds(config: &TrainConfig, iteration: usize, stage: Stage) -> (u64, u64) {
    let base = [iteration as u64, u64::from(stage.number())];
    (derive_seed(config.seed, &[base[0], base[1], 0]), derive_seed(config.seed, &[base[0], base[1], 1]))
}

/// Stage-checkpoint name used in reports and by the CLI.
pub fn checkpoint_name(iteration: usize, stage: Stage) -> String {
    format!("iter{iteration}_stage{}.ckpt", stage.number())
}

/// Mean training-split embedding of every item.
pub fn item_centroids<T: Scalar>(model: &Model<T>, data: &ImageStore<T>) -> Result<Vec<Vec<f64>>> {
    let items = data.taxonomy.item_count();
    let dim = model.backbone_spec().embedding_dim;
    let mut sums = vec![vec![0.0; dim]; items];
    let mut counts = vec![0usize; items];
    let train = data.indices(Split::Train);
    for chunk in train.chunks(128) {
        let e = model.embed(&data.batch(chunk)?)?;
        for (row, &i) in e.data().chunks(dim).zip(chunk) {
            let item = data.item(i);
            counts[item] += 1;
            sums[item].iter_mut().zip(row).for_each(|(s, v)| *s += v.to_f64_lossy());
        }
    }
    if let Some(missing) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Validation(format!("item {:?} has no training samples", data.taxonomy.item_names[missing])));
    }
    Ok(sums.into_iter().zip(counts).map(|(s, n)| s.into_iter().map(|v| v / n as f64).collect()).collect())
}

fn probe_batch<T: Scalar>(data: &ImageStore<T>) -> Result<Tensor<T>> {
    let mut idx = data.indices(Split::Validation);
    idx.truncate(PROBE_SAMPLES);
    data.batch(&idx)
}

fn run_iteration<T: Scalar>(
    data: &ImageStore<T>,
    config: &TrainConfig,
    iteration: usize,
    groups: &[usize],
    start: Model<T>,
) -> Result<(IterationReport, IterationModels<T>)> {
    let taxonomy = &data.taxonomy;
    let type_labels = LabelLevel::Type { item_to_group: groups.to_vec(), groups: taxonomy.type_count() };
    let item_labels = LabelLevel::Item { items: taxonomy.item_count() };

    let mut stage1 = start;
    let (_, train_seed) = stage_seeds(config, iteration, Stage::Type);
    let result1 = train_stage(
        &mut stage1,
        data,
        &type_labels,
        config,
        iteration,
        train_seed,
        checkpoint_name(iteration, Stage::Type),
    )?;

    let (init_seed, train_seed) = stage_seeds(config, iteration, Stage::Item);
    let embed_dim = stage1.backbone_spec().embedding_dim;
    let mut stage2 = stage1.transfer_core(&HeadSpec::new(taxonomy.item_count(), embed_dim), init_seed)?;
    let probe = probe_batch(data)?;
    let backbone_continuity = stage1.embed(&probe)? == stage2.embed(&probe)?;
    let result2 = train_stage(
        &mut stage2,
        data,
        &item_labels,
        config,
        iteration,
        train_seed,
        checkpoint_name(iteration, Stage::Item),
    )?;

    let centroids = item_centroids(&stage2, data)?;
    let params = KMeansParams { max_rounds: config.kmeans_max_rounds, tolerance: config.kmeans_tolerance };
    let mut merge =
        cluster_items(&centroids, taxonomy.type_count(), derive_seed(config.seed, &[iteration as u64, 3]), params)?;
    merge.iteration = iteration;

    Ok((
        IterationReport {
            iteration,
            stage1_groups: groups.to_vec(),
            stage1: result1,
            stage2: result2,
            merge,
            backbone_continuity,
        },
        IterationModels { stage1, stage2 },
    ))
}

/// Stopping rule between consecutive iterations: the item-level stage must
/// lower its best validation loss strictly.
pub fn stage2_stalled(previous_best: f64, current_best: f64) -> bool {
    !(current_best < previous_best)
}

/// Multi-stage hierarchical transfer learning.
///
/// Each iteration trains a type-level head (iteration 1 on the taxonomy's
/// types, later iterations on the previous iteration's merged groups) on top
/// of the carried-over backbone, transfers the backbone to an item-level head
/// and trains that, then regroups items by k-means over their training-split
/// embedding centroids. The loop ends after `max_iterations` or as soon as an
/// iteration's best item-level validation loss fails to improve strictly on
/// the previous one.
pub fn run_hierarchical<T: Scalar>(
    data: &ImageStore<T>,
    backbone: &BackboneSpec,
    config: &TrainConfig,
    initial: Option<&Model<T>>,
) -> Result<HierarchicalOutcome<T>> {
    config.validate()?;
    let taxonomy = data.taxonomy.clone();
    let type_head = |dim| HeadSpec::new(taxonomy.type_count(), dim);

    let mut reports: Vec<IterationReport> = Vec::new();
    let mut models: Vec<IterationModels<T>> = Vec::new();
    let mut groups = taxonomy.item_to_type.clone();
    let mut stop_reason = StopReason::MaxIterations;

    for iteration in 1..=config.max_iterations {
        let (init_seed, _) = stage_seeds(config, iteration, Stage::Type);
        let start = match (models.last(), initial) {
            (Some(prev), _) => {
                prev.stage2.transfer_core(&type_head(prev.stage2.backbone_spec().embedding_dim), init_seed)
            }
            (None, Some(init)) => init.transfer_core(&type_head(init.backbone_spec().embedding_dim), init_seed),
            (None, None) => Model::build(backbone, &type_head(backbone.embedding_dim), init_seed),
        };
        let outcome = start.and_then(|m| run_iteration(data, config, iteration, &groups, m));
        let (report, iteration_models) = match outcome {
            Ok(v) => v,
            Err(e) => return Err(Error::IterationFailed { iteration, source: Box::new(e), completed: reports }),
        };
        let stalled =
            reports.last().is_some_and(|prev| stage2_stalled(prev.stage2.best_val_loss, report.stage2.best_val_loss));
        groups = report.merge.item_to_group.clone();
        reports.push(report);
        models.push(iteration_models);
        if stalled {
            stop_reason = StopReason::ValidationLossStalled;
            break;
        }
    }

    let final_model = models.last().expect("at least one iteration").stage2.clone();
    let type_model = models[0].stage1.clone();
    Ok(HierarchicalOutcome {
        final_model,
        type_model,
        models,
        report: HierarchicalReport { config: config.clone(), taxonomy, iterations: reports, stop_reason },
    })
}

/// Single item-level model trained with the same per-stage budget and
/// learning-rate policy as one hierarchical stage.
pub fn train_flat<T: Scalar>(
    data: &ImageStore<T>,
    backbone: &BackboneSpec,
    config: &TrainConfig,
    initial: Option<&Model<T>>,
) -> Result<FlatOutcome<T>> {
    config.validate()?;
    let items = data.taxonomy.item_count();
    let (init_seed, train_seed) = stage_seeds(config, 0, Stage::Item);
    let mut model = match initial {
        Some(init) => init.transfer_core(&HeadSpec::new(items, init.backbone_spec().embedding_dim), init_seed)?,
        None => Model::build(backbone, &HeadSpec::new(items, backbone.embedding_dim), init_seed)?,
    };
    let stage = train_stage(&mut model, data, &LabelLevel::Item { items }, config, 0, train_seed, "flat.ckpt".into())?;
    Ok(FlatOutcome { model, stage })
}
