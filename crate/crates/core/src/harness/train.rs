//! Mini-batch training loop.

use std::io::Write;

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::config::TrainConfig;
use super::optim::Adam;
use crate::data::{resample_to_t, Dataset, ResampleMode};
use crate::error::{ensure, Error, Result};
use crate::network::checkpoint::Checkpoint;
use crate::network::Network;
use crate::objectives::{total_loss_with_grad, LossBreakdown, LossFlags};
use crate::scalar::Scalar;
use crate::types::{HyperParams, VideoLabel};

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepLog {
    pub epoch: usize,
    pub step: u64,
    #[serde(flatten)]
    pub loss: LossBreakdown,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub network: Network<f32>,
    pub steps: u64,
    pub log: Vec<StepLog>,
    /// Mean batch total per epoch.
    pub epoch_losses: Vec<f64>,
}

/// Resamples every video to `snippets` rows.
pub fn prepare_features(dataset: &Dataset, snippets: usize, mode: ResampleMode) -> Vec<Array2<f32>> {
    dataset
        .videos
        .par_iter()
        .map(|(seq, _)| resample_to_t(seq.features.view(), snippets, mode))
        .collect()
}

/// Resampled features, label and optional dropout mask of one video.
pub type BatchItem<'a, S> = (ArrayView2<'a, S>, &'a VideoLabel, Option<ArrayView2<'a, S>>);

/// Mean loss and mean parameter gradient over a batch. A `None` mask gives a
/// deterministic pass for that video.
pub fn batch_gradient<S: Scalar>(
    network: &Network<S>,
    batch: &[BatchItem<'_, S>],
    hp: &HyperParams,
    flags: LossFlags,
) -> Result<(LossBreakdown, Network<S>)> {
    ensure!(!batch.is_empty(), Validation, "empty batch");
    let per_video: Vec<(LossBreakdown, Network<S>)> = batch
        .par_iter()
        .map(|(x, label, mask)| {
            let (acts, cache) = network.forward(*x, *mask)?;
            let (loss, out_grads) = total_loss_with_grad(&acts, label, hp, flags)?;
            Ok((loss, network.backward(&acts, &cache, &out_grads)))
        })
        .collect::<Result<_>>()?;
    let scale = S::one() / S::from_count(batch.len());
    let mut grads = network.zeros_like();
    for (_, g) in &per_video {
        grads.add_scaled(g, scale);
    }
    let losses: Vec<LossBreakdown> = per_video.iter().map(|(l, _)| *l).collect();
    Ok((LossBreakdown::mean(&losses), grads))
}

/// Trains on every video of `dataset`; log lines go to `log` when given.
pub fn train(config: &TrainConfig, dataset: &Dataset, mut log: Option<&mut dyn Write>) -> Result<TrainOutcome> {
    config.validate()?;
    let mut hp = config.hyper.clone();
    hp.num_classes = dataset.num_classes();
    hp.validate()?;
    ensure!(!dataset.is_empty(), Validation, "training set is empty");
    for (seq, record) in &dataset.videos {
        ensure!(!record.label.is_empty(), Validation, "training video `{}` has no labels", seq.video_id);
    }
    let width = dataset.width().expect("non-empty dataset");
    let arch = config.model.architecture(width, hp.num_classes);
    let mut network = Network::<f32>::init(arch, config.seed)?;
    let mut optimizer = Adam::new(&network, config.learning_rate, config.weight_decay);

    let features = prepare_features(dataset, hp.snippets, config.resample);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut out_log = Vec::new();
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut totals = Vec::new();
        for chunk in order.chunks(config.batch_size) {
            let masks: Vec<Array2<f32>> = chunk.iter().map(|_| network.dropout_mask(hp.snippets, &mut rng)).collect();
            let batch: Vec<_> = chunk
                .iter()
                .zip(&masks)
                .map(|(&i, m)| (features[i].view(), &dataset.videos[i].1.label, Some(m.view())))
                .collect();
            let (loss, grads) = batch_gradient(&network, &batch, &hp, config.flags)?;
            let step = optimizer.steps() + 1;
            if let Some((component, value)) = loss.first_non_finite() {
                return Err(Error::NonFinite { step, component, value });
            }
            optimizer.update(&mut network, &grads);
            let entry = StepLog { epoch, step, loss };
            if let Some(w) = log.as_deref_mut() {
                write_json_line(w, &entry)?;
            }
            totals.push(loss.total);
            out_log.push(entry);
        }
        let mean = totals.iter().sum::<f64>() / totals.len() as f64;
        epoch_losses.push(mean);
        if let Some(w) = log.as_deref_mut() {
            write_json_line(w, &serde_json::json!({"epoch": epoch, "mean_total": mean}))?;
        }
        if let Some(path) = &config.checkpoint {
            if config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0 && epoch < config.epochs {
                let periodic = path.with_extension(format!("epoch{epoch}"));
                Checkpoint { network: network.clone(), step: optimizer.steps() }.save(&periodic)?;
            }
        }
    }
    if let Some(path) = &config.checkpoint {
        Checkpoint { network: network.clone(), step: optimizer.steps() }.save(path)?;
    }
    Ok(TrainOutcome { network, steps: optimizer.steps(), log: out_log, epoch_losses })
}

fn write_json_line<T: Serialize>(w: &mut dyn Write, value: &T) -> Result<()> {
    let line = serde_json::to_string(value).expect("log entry serializes");
    writeln!(w, "{line}").map_err(|e| Error::io("<training log>", e))
}
