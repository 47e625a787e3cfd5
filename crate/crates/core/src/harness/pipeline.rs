//! Inference, evaluation and end-to-end experiment runs.

use std::collections::BTreeMap;

use rayon::prelude::*;

use super::config::TrainConfig;
use super::train::{train, TrainOutcome};
use crate::data::{load_dataset, resample_to_t, Dataset, GridMap, ResampleMode};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, EvalReport};
use crate::localization::{localize, to_detections, DetectionMap, TimeAxis};
use crate::network::Network;
use crate::scalar::Scalar;
use crate::types::{ActionInstance, HyperParams};

/// Loads the dataset named by the config.
pub fn load_config_dataset(config: &TrainConfig) -> Result<Dataset> {
    load_dataset(&config.feature_dir, &config.annotations, None)
}

/// The named subset, or the whole dataset when `subset` is `None`.
pub fn select(dataset: &Dataset, subset: Option<&str>) -> Result<Dataset> {
    let out = match subset {
        Some(name) => dataset.subset(name),
        None => dataset.clone(),
    };
    if out.is_empty() {
        return Err(Error::Validation(format!("subset {subset:?} contains no videos")));
    }
    Ok(out)
}

pub(crate) fn check_compatible<S: Scalar>(network: &Network<S>, dataset: &Dataset) -> Result<()> {
    let arch = &network.arch;
    if let Some(width) = dataset.width() {
        if width != arch.input_dim {
            return Err(Error::Checkpoint(format!(
                "checkpoint expects feature width {}, dataset has {width}",
                arch.input_dim
            )));
        }
    }
    if dataset.num_classes() != arch.num_classes {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} classes, annotations list {}",
            arch.num_classes,
            dataset.num_classes()
        )));
    }
    Ok(())
}

/// Runs the localization chain over every video.
pub fn infer<S: Scalar>(
    network: &Network<S>,
    hp: &HyperParams,
    dataset: &Dataset,
    mode: ResampleMode,
) -> Result<DetectionMap> {
    check_compatible(network, dataset)?;
    let per_video = dataset
        .videos
        .par_iter()
        .map(|(seq, record)| {
            let x = resample_to_t(seq.features.mapv(|v| S::from_f64_lossy(f64::from(v))).view(), hp.snippets, mode);
            let acts = network.forward_eval(x.view())?;
            let axis = TimeAxis {
                grid: GridMap::new(seq.len(), hp.snippets),
                snippet_seconds: record.snippet_seconds(),
                duration_s: record.duration_s,
            };
            let proposals = localize(&acts, hp, &axis)?;
            Ok((seq.video_id.clone(), to_detections(&proposals, &dataset.classes)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_video.into_iter().collect())
}

/// Ground-truth instances of every video that has them.
pub fn ground_truth(dataset: &Dataset) -> BTreeMap<String, Vec<ActionInstance>> {
    dataset
        .videos
        .iter()
        .filter_map(|(seq, r)| r.instances.clone().map(|i| (seq.video_id.clone(), i)))
        .collect()
}

pub fn evaluate_dataset(detections: &DetectionMap, dataset: &Dataset, tiou_grid: &[f64]) -> Result<EvalReport> {
    evaluate(detections, &ground_truth(dataset), &dataset.classes, tiou_grid)
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub training: TrainOutcome,
    pub detections: DetectionMap,
    pub report: EvalReport,
}

/// Train on the config's training subset, then infer and evaluate on its evaluation subset.
pub fn run_experiment(config: &TrainConfig, dataset: &Dataset) -> Result<ExperimentResult> {
    let train_set = select(dataset, config.train_subset.as_deref())?;
    let eval_set = select(dataset, config.eval_subset.as_deref())?;
    let training = train(config, &train_set, None)?;
    let mut hp = config.hyper.clone();
    hp.num_classes = dataset.num_classes();
    let detections = infer(&training.network, &hp, &eval_set, config.resample)?;
    let report = evaluate_dataset(&detections, &eval_set, &hp.tiou_grid)?;
    Ok(ExperimentResult { training, detections, report })
}
