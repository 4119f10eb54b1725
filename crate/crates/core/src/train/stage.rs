use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::plateau::plateau_decay;
use super::TrainConfig;
use crate::data::{augment, ImageStore, Split};
use crate::error::{Error, Result};
use crate::model::{Model, Stage};
use crate::seed::{derive_seed, rng};
use crate::tensor::{adam_step, kernels, AdamState, Mode, Scalar, Tape, Tensor};

/// What a stage's head is trained to predict.
#[derive(Clone, Debug, PartialEq)]
pub enum LabelLevel {
    /// Coarse labels through an item → group map.
    Type {
        item_to_group: Vec<usize>,
        groups: usize,
    },
    Item {
        items: usize,
    },
}

impl LabelLevel {
    pub fn class_count(&self) -> usize {
        match self {
            LabelLevel::Type { groups, .. } => *groups,
            LabelLevel::Item { items } => *items,
        }
    }

    pub fn label(&self, item: usize) -> usize {
        match self {
            LabelLevel::Type { item_to_group, .. } => item_to_group[item],
            LabelLevel::Item { .. } => item,
        }
    }

    pub fn stage(&self) -> Stage {
        match self {
            LabelLevel::Type { .. } => Stage::Type,
            LabelLevel::Item { .. } => Stage::Item,
        }
    }
}

/// Curves and outcome of one stage of training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageResult {
    pub stage: Stage,
    pub iteration: usize,
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub val_accuracy: Vec<f64>,
    /// Learning rate in effect during each epoch.
    pub learning_rates: Vec<f64>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub epochs_run: usize,
    /// Name of the retained (best validation loss) checkpoint.
    pub checkpoint: String,
    #[serde(skip)]
    pub wall_time_secs: f64,
}

pub(crate) fn one_hot<T: Scalar>(labels: &[usize], classes: usize) -> Result<Tensor<T>> {
    let mut data = vec![T::zero(); labels.len() * classes];
    for (r, &l) in labels.iter().enumerate() {
        data[r * classes + l] = T::one();
    }
    Tensor::from_vec([labels.len(), classes], data)
}

const EVAL_BATCH: usize = 128;

/// Eval-mode mean cross-entropy and accuracy over `indices`.
pub fn loss_and_accuracy<T: Scalar>(
    model: &Model<T>,
    data: &ImageStore<T>,
    indices: &[usize],
    labels: &LabelLevel,
) -> Result<(f64, f64)> {
    let classes = model.class_count();
    let mut total_loss = 0.0;
    let mut correct = 0usize;
    for chunk in indices.chunks(EVAL_BATCH) {
        let batch = data.batch(chunk)?;
        let logits = model.logits(&batch)?;
        let targets: Vec<usize> = chunk.iter().map(|&i| labels.label(data.item(i))).collect();
        let (loss, _) = kernels::softmax_cross_entropy_forward(logits.data(), &targets, classes);
        total_loss += loss.to_f64_lossy() * chunk.len() as f64;
        for (row, &t) in logits.data().chunks(classes).zip(&targets) {
            if crate::eval::argmax(row) == t {
                correct += 1;
            }
        }
    }
    let n = indices.len() as f64;
    Ok((total_loss / n, correct as f64 / n))
}

fn train_batch<T: Scalar>(
    model: &mut Model<T>,
    optim: &mut [AdamState<T>],
    x: Tensor<T>,
    targets: &Tensor<T>,
    lr: f64,
    momentum: f64,
) -> Result<f64> {
    let mut tape = Tape::new();
    let xv = tape.constant(x);
    let logits = model.forward(&mut tape, xv, Mode::Train)?;
    let loss = tape.softmax_cross_entropy(logits, targets)?;
    let value = tape.value(loss).data()[0].to_f64_lossy();
    if !value.is_finite() {
        return Err(Error::NonFinite("training loss".into()));
    }
    tape.backward(loss)?;
    model.collect_gradients(&mut tape)?;
    model.update_running_stats(&tape.take_batch_stats(), momentum)?;
    for (p, s) in model.params_mut().into_iter().zip(optim.iter_mut()) {
        s.learning_rate = lr;
        adam_step(p, s)?;
        p.clear_grad();
    }
    Ok(value)
}

/// Minibatch Adam on the cross-entropy of `labels` for up to
/// `epochs_per_stage` epochs. After every epoch the validation loss drives
/// plateau decay and the best-so-far snapshot; the model is left holding the
/// epoch with the lowest validation loss.
pub fn train_stage<T: Scalar>(
    model: &mut Model<T>,
    data: &ImageStore<T>,
    labels: &LabelLevel,
    config: &TrainConfig,
    iteration: usize,
    seed: u64,
    checkpoint: String,
) -> Result<StageResult> {
    config.validate()?;
    if model.class_count() != labels.class_count() {
        return Err(Error::Config(format!(
            "head predicts {} classes but the {:?} labels have {}",
            model.class_count(),
            labels.stage(),
            labels.class_count()
        )));
    }
    let train_idx = data.indices(Split::Train);
    let val_idx = data.indices(Split::Validation);
    if train_idx.len() < 2 {
        return Err(Error::Validation(format!("train split has {} samples", train_idx.len())));
    }
    if val_idx.is_empty() {
        return Err(Error::Validation("validation split is empty".into()));
    }
    let [_, h, w] = data.input_shape;
    let ops = config.augment_ops();
    ops.validate(h, w)?;

    let started = Instant::now();
    let mut optim: Vec<AdamState<T>> = model.params().iter().map(|p| AdamState::new(p, config.adam())).collect();
    let mut lr = config.learning_rate;
    let mut best = model.clone();
    let mut result = StageResult {
        stage: labels.stage(),
        iteration,
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        val_accuracy: Vec::new(),
        learning_rates: Vec::new(),
        best_epoch: 0,
        best_val_loss: f64::INFINITY,
        epochs_run: 0,
        checkpoint,
        wall_time_secs: 0.0,
    };

    for epoch in 0..config.epochs_per_stage {
        let epoch_seed = derive_seed(seed, &[epoch as u64]);
        let mut order = train_idx.clone();
        order.shuffle(&mut rng(epoch_seed));
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for batch in order.chunks(config.batch_size).filter(|b| b.len() >= 2) {
            let images = batch
                .iter()
                .map(|&i| {
                    if ops.is_identity() {
                        Ok(data.image(i).clone())
                    } else {
                        augment(data.image(i), &ops, derive_seed(epoch_seed, &[i as u64]))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            let x = Tensor::stack(&images.iter().collect::<Vec<_>>())?;
            let targets: Vec<usize> = batch.iter().map(|&i| labels.label(data.item(i))).collect();
            let targets = one_hot(&targets, labels.class_count())?;
            let loss = train_batch(model, &mut optim, x, &targets, lr, config.bn_momentum)?;
            loss_sum += loss * batch.len() as f64;
            seen += batch.len();
        }
        let (val_loss, val_acc) = loss_and_accuracy(model, data, &val_idx, labels)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFinite("validation loss".into()));
        }
        result.train_loss.push(loss_sum / seen as f64);
        result.val_loss.push(val_loss);
        result.val_accuracy.push(val_acc);
        result.learning_rates.push(lr);
        result.epochs_run = epoch + 1;
        if val_loss < result.best_val_loss {
            result.best_val_loss = val_loss;
            result.best_epoch = epoch;
            best = model.clone();
        }
        lr = plateau_decay(lr, &result.val_loss, config);
        if config.early_stop_patience_epochs > 0 && epoch - result.best_epoch >= config.early_stop_patience_epochs {
            break;
        }
    }
    *model = best;
    result.wall_time_secs = started.elapsed().as_secs_f64();
    Ok(result)
}
