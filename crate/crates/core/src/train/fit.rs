//! Epoch loop shared by every stage: shuffled mini-batches, scheduled Adam
//! updates, epoch-level validation and best-checkpoint selection.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tfn_tensor::optim::{apply_bn_updates, Adam, LrSchedule};
use tfn_tensor::{BnUpdate, Gradients, ParamId, ParamStore, Tensor};

use crate::error::{Error, Result};

use super::config::StageSpec;

/// Result of one training mini-batch.
pub struct BatchOut {
    pub loss: f64,
    pub correct: Option<usize>,
    pub grads: Gradients<f32>,
    pub bn: Vec<BnUpdate>,
}

/// Mean loss and, for classifiers, accuracy over the validation split.
#[derive(Clone, Copy, Debug)]
pub struct Validation {
    pub loss: f64,
    pub accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: Option<f64>,
    pub val_loss: f64,
    pub val_acc: Option<f64>,
    /// Rate used by the last update of the epoch.
    pub lr: f64,
}

#[derive(Clone, Debug, Default)]
pub struct FitOutcome {
    pub epochs: Vec<EpochRecord>,
    /// Rate of every update, in order.
    pub lr_trace: Vec<f64>,
    pub best_epoch: Option<usize>,
    pub total_steps: usize,
}

pub fn steps_per_epoch(n: usize, batch: usize) -> usize {
    n.div_ceil(batch)
}

type EpochStart<'h> = Box<dyn FnMut(usize, &mut Adam<f32>) + 'h>;
type EpochEnd<'h> = Box<dyn FnMut(usize, &ParamStore<f32>) + 'h>;

/// Per-epoch callbacks and the first epoch eligible as the best one.
pub struct Hooks<'h> {
    /// Called before each epoch; may adjust per-prefix rate multipliers.
    pub epoch_start: EpochStart<'h>,
    /// Called after each epoch's updates, before validation.
    pub epoch_end: EpochEnd<'h>,
    pub select_from: usize,
}

impl Default for Hooks<'_> {
    fn default() -> Self {
        Self { epoch_start: Box::new(|_, _| {}), epoch_end: Box::new(|_, _| {}), select_from: 0 }
    }
}

/// Runs `spec.epochs` epochs over `n_train` examples. `train_batch` gets the
/// current weights and batch indices. Parameters in `tracked` are restored
/// to their values at the epoch (from `hooks.select_from` on) with the
/// lowest validation loss.
#[allow(clippy::too_many_arguments)]
pub fn fit(
    store: &mut ParamStore<f32>,
    spec: &StageSpec,
    n_train: usize,
    seed: u64,
    tracked: &[ParamId],
    mut train_batch: impl FnMut(&ParamStore<f32>, &[usize]) -> Result<BatchOut>,
    mut validate: impl FnMut(&ParamStore<f32>) -> Result<Validation>,
    mut hooks: Hooks<'_>,
) -> Result<FitOutcome> {
    if n_train == 0 {
        return Err(Error::Stage { stage: spec.stage.to_string(), msg: "no training examples".into() });
    }
    let per_epoch = steps_per_epoch(n_train, spec.batch_size);
    let total = per_epoch * spec.epochs;
    let mut adam = Adam::new(LrSchedule::new(spec.peak_lr, total, spec.warmup_frac));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n_train).collect();
    let mut out = FitOutcome { total_steps: total, ..Default::default() };
    let mut best: Option<(f64, Vec<Tensor<f32>>)> = None;
    let stage_err = |msg: String| Error::Stage { stage: spec.stage.to_string(), msg };

    for epoch in 0..spec.epochs {
        (hooks.epoch_start)(epoch, &mut adam);
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct, mut any_acc) = (0.0, 0usize, false);
        let mut lr = 0.0;
        for batch in order.chunks(spec.batch_size) {
            let b = train_batch(store, batch)?;
            if !b.loss.is_finite() || !b.grads.all_finite() {
                return Err(stage_err(format!("non-finite loss or gradient at epoch {epoch}")));
            }
            lr = adam.step(store, &b.grads)?;
            out.lr_trace.push(lr);
            apply_bn_updates(store, &b.bn);
            loss_sum += b.loss * batch.len() as f64;
            if let Some(c) = b.correct {
                correct += c;
                any_acc = true;
            }
        }
        (hooks.epoch_end)(epoch, store);
        let v = validate(store)?;
        if !v.loss.is_finite() {
            return Err(stage_err(format!("non-finite validation loss at epoch {epoch}")));
        }
        out.epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / n_train as f64,
            train_acc: any_acc.then(|| correct as f64 / n_train as f64),
            val_loss: v.loss,
            val_acc: v.accuracy,
            lr,
        });
        let eligible = epoch >= hooks.select_from.min(spec.epochs - 1);
        if eligible && best.as_ref().is_none_or(|(l, _)| v.loss < *l) {
            best = Some((v.loss, tracked.iter().map(|&id| store.value(id).clone()).collect()));
            out.best_epoch = Some(epoch);
        }
    }
    if let Some((_, values)) = best {
        for (&id, v) in tracked.iter().zip(values) {
            *store.value_mut(id) = v;
        }
    }
    Ok(out)
}
