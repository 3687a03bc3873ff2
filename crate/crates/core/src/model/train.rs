//! The training loop: shuffled mini-batches, the batch objective, scheduled
//! SGD, and one metrics record per epoch.

use super::{batch_objective, forward, init_params, lr_at, sgd_momentum_step, MlpParams, Schedule};
use crate::config::RunConfig;
use crate::data::{batch_iter, Dataset};
use crate::diagnostics::{accuracy, feature_entropy_details, tightness, MetricsRecord};
use crate::error::{Error, Result};
use crate::numkernel::{l2_normalize, FeatureMatrix, NORM_EPS};
use crate::rng::{self, Stream};

#[derive(Debug, Clone)]
pub struct TrainRun {
    pub records: Vec<MetricsRecord>,
    pub params: MlpParams,
    /// Epochs whose entropy estimate clamped at least one coincident pair.
    pub entropy_floor_hits: usize,
}

/// Accuracy and encoder features of a whole dataset.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub accuracy: f64,
    pub z: FeatureMatrix,
}

pub fn evaluate(params: &MlpParams, ds: &Dataset) -> Result<Evaluation> {
    let fwd = forward(params, ds.features())?;
    Ok(Evaluation {
        accuracy: accuracy(&fwd.logits, ds.labels())?,
        z: fwd.z,
    })
}

fn batches_per_epoch(n: usize, batch_size: usize) -> usize {
    n / batch_size + usize::from(n % batch_size >= 2)
}

/// Trains from the config's seed and returns the per-epoch trajectory.
///
/// Tightness and entropy are measured on the ℓ2-normalized encoder features
/// of the training set, the setting in which the contrastive loss relates to
/// both quantities; raw features would mostly track their overall scale.
pub fn train(cfg: &RunConfig, train_ds: &Dataset, test_ds: &Dataset) -> Result<TrainRun> {
    cfg.validate()?;
    if train_ds.len() < 2 {
        return Err(Error::InvalidArgument("training set needs at least 2 samples".into()));
    }
    if test_ds.dim() != train_ds.dim() || test_ds.class_count() != train_ds.class_count() {
        return Err(Error::Shape("train and test splits disagree on dim or class count".into()));
    }
    let arch = cfg.architecture(train_ds.dim(), train_ds.class_count());
    let mut params = init_params(&arch, cfg.seed)?;
    let mut buffers = params.zeros_like();
    let settings = cfg.objective_settings();
    let schedule = Schedule {
        kind: cfg.schedule,
        base_lr: cfg.lr,
        total_steps: cfg.epochs * batches_per_epoch(train_ds.len(), cfg.batch_size),
    };
    let mut mix_rng = rng::stream(cfg.seed, Stream::Mixing);

    let mut records = Vec::with_capacity(cfg.epochs);
    let mut entropy_floor_hits = 0;
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        let epoch_lr = lr_at(&schedule, step);
        let (mut total, mut ce, mut con, mut count) = (0.0, 0.0, 0.0, 0usize);
        for (b, batch) in batch_iter(train_ds, cfg.batch_size, epoch as u64, cfg.seed)?.enumerate() {
            let bad = || Error::NonFiniteLoss { epoch, batch: b + 1 };
            let out = batch_objective(&params, &batch.features, &batch.labels, &settings, &mut mix_rng)
                .map_err(|e| match e {
                    Error::NonFinite { .. } => bad(),
                    e => e,
                })?;
            if !out.total.is_finite() || !out.grads.is_finite() {
                return Err(bad());
            }
            sgd_momentum_step(
                &mut params,
                &out.grads,
                &mut buffers,
                lr_at(&schedule, step),
                cfg.momentum,
                cfg.weight_decay,
            );
            if !params.is_finite() {
                return Err(bad());
            }
            step += 1;
            total += out.total;
            ce += out.ce;
            con += out.con;
            count += 1;
        }
        let count = count.max(1) as f64;

        let tr = evaluate(&params, train_ds)?;
        let te = evaluate(&params, test_ds)?;
        let zn = l2_normalize(&tr.z, NORM_EPS)?;
        let entropy = feature_entropy_details(&zn)?;
        if entropy.floored_pairs > 0 {
            entropy_floor_hits += 1;
        }
        let record = MetricsRecord {
            epoch,
            loss_total: total / count,
            loss_ce_mixed: ce / count,
            loss_con_focal: con / count,
            train_acc: tr.accuracy,
            test_acc: te.accuracy,
            tightness: tightness(&zn, train_ds.labels())?,
            feature_entropy: entropy.value,
            lr: epoch_lr,
        };
        if !record.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, batch: 0 });
        }
        records.push(record);
    }
    Ok(TrainRun {
        records,
        params,
        entropy_floor_hits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batch_count_matches_iterator() {
        for n in 2..40 {
            for bs in 2..12 {
                let ds = crate::data::gen_two_moons(n, 0.1, 0).unwrap();
                let got = batch_iter(&ds, bs, 1, 0).unwrap().count();
                assert_eq!(batches_per_epoch(ds.len(), bs), got, "n={} bs={bs}", ds.len());
            }
        }
    }
}
