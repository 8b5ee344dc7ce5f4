//! SGD with momentum, milestone learning-rate schedules, the mini-batch
//! training loop (shuffling, augmentation, per-epoch evaluation), and
//! metrics CSV emission.
//!
//! Training is a pure function of `(initial model, datasets, config)`: the
//! shuffle order, each sample's augmentation, and each batch's dropout all
//! come from fixed sub-streams of the config seed, so two runs with equal
//! inputs produce bit-identical models and metrics regardless of thread
//! count.

use std::path::Path;

use crate::data::{AugmentParams, Dataset, MAX_SHIFT};
use crate::error::{Error, Result};
use crate::ioutil::atomic_write;
use crate::layers::{argmax_classes, ConvParams, Mode};
use crate::model::{Grads, Model};
use crate::rng::Rng;
use crate::tensor::{Dims, Scalar, Tensor};

/// Piecewise-constant learning-rate schedule: the rate starts at `base_lr`
/// and is multiplied by `factor` at each milestone epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct Schedule {
    pub base_lr: f64,
    pub milestones: Vec<usize>,
    pub factor: f64,
}

impl Schedule {
    /// Validates that `base_lr > 0`, `factor > 0`, and the milestones are
    /// strictly increasing.
    pub fn new(base_lr: f64, milestones: Vec<usize>, factor: f64) -> Result<Schedule> {
        if !(base_lr > 0.0 && base_lr.is_finite()) {
            return Err(Error::BadRate(format!(
                "base learning rate must be positive, got {base_lr}"
            )));
        }
        if !(factor > 0.0 && factor.is_finite()) {
            return Err(Error::BadRate(format!(
                "schedule factor must be positive, got {factor}"
            )));
        }
        if milestones.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(
                "schedule milestones must be strictly increasing".into(),
            ));
        }
        Ok(Schedule {
            base_lr,
            milestones,
            factor,
        })
    }
}

/// Learning rate at `epoch`: `base_lr * factor^(milestones passed)`, where
/// a milestone counts as passed once `epoch` reaches it.
pub fn schedule_lr(sched: &Schedule, epoch: usize) -> f64 {
    let passed = sched.milestones.iter().filter(|&&m| m <= epoch).count();
    sched.base_lr * sched.factor.powi(passed as i32)
}

/// Optimizer state: one velocity buffer per parameter tensor plus the
/// current hyperparameters.
#[derive(Clone, Debug)]
pub struct OptimState<T> {
    pub velocity_w: Vec<Vec<T>>,
    pub velocity_b: Vec<Vec<T>>,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl<T: Scalar> OptimState<T> {
    /// Zero velocities shaped like `params`. Requires `lr > 0`,
    /// `0 <= momentum < 1`, `weight_decay >= 0`.
    pub fn new(
        params: &[ConvParams<T>],
        lr: f64,
        momentum: f64,
        weight_decay: f64,
    ) -> Result<OptimState<T>> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::BadRate(format!(
                "learning rate must be positive, got {lr}"
            )));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::BadRate(format!(
                "momentum must lie in [0, 1), got {momentum}"
            )));
        }
        if !(weight_decay >= 0.0 && weight_decay.is_finite()) {
            return Err(Error::BadRate(format!(
                "weight decay must be non-negative, got {weight_decay}"
            )));
        }
        Ok(OptimState {
            velocity_w: params.iter().map(|p| vec![T::ZERO; p.weight_count()]).collect(),
            velocity_b: params.iter().map(|p| vec![T::ZERO; p.out_channels]).collect(),
            lr,
            momentum,
            weight_decay,
        })
    }
}

/// One heavy-ball step over every parameter group:
/// `v <- momentum*v - lr*(g + decay*w)`, `w <- w + v`. Weight decay applies
/// to convolution weights only, never to biases.
pub fn sgd_momentum_step<T: Scalar>(
    params: &mut [ConvParams<T>],
    grads: &Grads<T>,
    state: &mut OptimState<T>,
) -> Result<()> {
    if grads.weights.len() != params.len() || state.velocity_w.len() != params.len() {
        return Err(Error::ShapeMismatch(format!(
            "optimizer saw {} parameter groups, {} gradient groups, {} velocity groups",
            params.len(),
            grads.weights.len(),
            state.velocity_w.len()
        )));
    }
    let (mu, lr, decay) = (state.momentum, state.lr, state.weight_decay);
    for (i, p) in params.iter_mut().enumerate() {
        let (gw, gb) = (&grads.weights[i], &grads.bias[i]);
        let (vw, vb) = (&mut state.velocity_w[i], &mut state.velocity_b[i]);
        if gw.len() != p.weights.len()
            || gb.len() != p.bias.len()
            || vw.len() != p.weights.len()
            || vb.len() != p.bias.len()
        {
            return Err(Error::ShapeMismatch(format!(
                "optimizer group {i}: gradient or velocity length differs from parameters"
            )));
        }
        for ((w, g), v) in p.weights.iter_mut().zip(gw).zip(vw.iter_mut()) {
            let g = g.to_f64();
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient(i));
            }
            let step = mu * v.to_f64() - lr * (g + decay * w.to_f64());
            *v = T::from_f64(step);
            *w = T::from_f64(w.to_f64() + step);
        }
        for ((b, g), v) in p.bias.iter_mut().zip(gb).zip(vb.iter_mut()) {
            let g = g.to_f64();
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient(i));
            }
            let step = mu * v.to_f64() - lr * g;
            *v = T::from_f64(step);
            *b = T::from_f64(b.to_f64() + step);
        }
    }
    Ok(())
}

/// Everything the training loop needs beyond the model and data.
#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub schedule: Schedule,
    pub momentum: f64,
    pub weight_decay: f64,
    pub augment: bool,
    pub seed: u64,
}

/// Per-epoch training record.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub test_error: Option<f64>,
}

// Sub-stream tags of the run seed.
const STREAM_SHUFFLE: u64 = 0;
const STREAM_AUGMENT: u64 = 1;
const STREAM_DROPOUT: u64 = 2;

/// Trains `model` in place with shuffled mini-batch SGD and returns one
/// metrics row per epoch (evaluating on `test_set` when given).
/// `on_epoch` runs after each epoch, e.g. for progress reporting.
pub fn train(
    model: &mut Model<f32>,
    train_set: &Dataset,
    test_set: Option<&Dataset>,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<Vec<EpochMetrics>> {
    if train_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if config.batch == 0 {
        return Err(Error::ZeroDim("batch size".into()));
    }
    model.validate()?;
    let dims = train_set.images.dims();
    let n = train_set.len();

    let run_rng = Rng::new(config.seed);
    let shuffle_rng = run_rng.stream(STREAM_SHUFFLE);
    let augment_rng = run_rng.stream(STREAM_AUGMENT);
    let dropout_rng = run_rng.stream(STREAM_DROPOUT);

    let mut state = OptimState::new(
        &model.params,
        schedule_lr(&config.schedule, 0),
        config.momentum,
        config.weight_decay,
    )?;

    let mut metrics = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..config.epochs {
        state.lr = schedule_lr(&config.schedule, epoch);
        let mut epoch_shuffle = shuffle_rng.stream(epoch as u64);
        for (i, slot) in order.iter_mut().enumerate() {
            *slot = i;
        }
        epoch_shuffle.shuffle(&mut order);
        let epoch_augment = augment_rng.stream(epoch as u64);
        let epoch_dropout = dropout_rng.stream(epoch as u64);

        let mut loss_sum = 0.0f64;
        for (batch_idx, chunk) in order.chunks(config.batch).enumerate() {
            let mut images = Tensor::<f32>::zeros(Dims::new(
                chunk.len(),
                dims.channels,
                dims.height,
                dims.width,
            ));
            let mut labels = Vec::with_capacity(chunk.len());
            for (slot, &orig) in chunk.iter().enumerate() {
                let src = train_set.images.sample(orig);
                let dst = images.sample_mut(slot);
                if config.augment {
                    // Keyed by the sample's original index, so the drawn
                    // transform is independent of the shuffle order.
                    let mut sample_rng = epoch_augment.stream(orig as u64);
                    let params = AugmentParams::draw(&mut sample_rng, MAX_SHIFT);
                    params.apply(src, dims.channels, dims.height, dims.width, dst);
                } else {
                    dst.copy_from_slice(src);
                }
                labels.push(train_set.labels[orig]);
            }
            let diverged = |e: Error| match e {
                Error::NonFinite(_) | Error::NonFiniteGradient(_) => Error::DivergedLoss {
                    epoch,
                    batch: batch_idx,
                },
                other => other,
            };
            let batch_rng = epoch_dropout.stream(batch_idx as u64);
            let trace = model
                .forward(&images, Mode::Train, &batch_rng)
                .map_err(diverged)?;
            let (loss, grads) = model.loss_and_grads(&trace, &labels).map_err(diverged)?;
            if !loss.is_finite() {
                return Err(Error::DivergedLoss {
                    epoch,
                    batch: batch_idx,
                });
            }
            loss_sum += loss * chunk.len() as f64;
            sgd_momentum_step(&mut model.params, &grads, &mut state).map_err(diverged)?;
        }

        let test_error = match test_set {
            Some(t) => Some(evaluate(model, t)?),
            None => None,
        };
        let row = EpochMetrics {
            epoch,
            lr: state.lr,
            train_loss: loss_sum / n as f64,
            test_error,
        };
        on_epoch(&row);
        metrics.push(row);
    }
    Ok(metrics)
}

/// Batch size used when evaluating.
const EVAL_BATCH: usize = 100;

/// Fraction of dataset samples whose argmax prediction differs from the
/// label (evaluation mode: dropout off, no augmentation).
pub fn evaluate(model: &Model<f32>, ds: &Dataset) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let rng = Rng::new(0); // unused in eval mode
    let n = ds.len();
    let mut wrong = 0usize;
    let mut start = 0usize;
    while start < n {
        let count = EVAL_BATCH.min(n - start);
        let images = ds.images.batch_range(start, count);
        let trace = model.forward(&images, Mode::Eval, &rng)?;
        let preds = argmax_classes(trace.logits())?;
        for (i, &p) in preds.iter().enumerate() {
            if p != usize::from(ds.labels[start + i]) {
                wrong += 1;
            }
        }
        start += count;
    }
    Ok(wrong as f64 / n as f64)
}

/// Writes metrics as CSV: header `epoch,lr,train_loss,test_error`, one row
/// per epoch (`test_error` empty when evaluation was skipped). Numbers use
/// the shortest round-trip decimal form, so equal runs give equal bytes.
pub fn write_metrics_csv(metrics: &[EpochMetrics], path: &Path) -> Result<()> {
    let mut out = String::from("epoch,lr,train_loss,test_error\n");
    for m in metrics {
        let test = m.test_error.map(|e| e.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{},{}\n", m.epoch, m.lr, m.train_loss, test));
    }
    atomic_write(path, out.as_bytes())
}
