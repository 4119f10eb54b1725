use super::TrainConfig;

/// Trailing epochs since the validation loss last set a new strict minimum.
/// The first epoch has no earlier value to improve on and counts as stale.
pub fn stale_epochs(loss_history: &[f64]) -> usize {
    let mut best = f64::INFINITY;
    let mut last_improvement = None;
    for (i, &l) in loss_history.iter().enumerate() {
        if i > 0 && l < best {
            last_improvement = Some(i);
        }
        best = best.min(l);
    }
    match last_improvement {
        Some(i) => loss_history.len() - 1 - i,
        None => loss_history.len(),
    }
}

/// Multiply the learning rate by `lr_decay_factor` once every
/// `plateau_patience_epochs` epochs without improvement, never going below
/// `min_learning_rate`.
pub fn plateau_decay(current_lr: f64, loss_history: &[f64], config: &TrainConfig) -> f64 {
    let stale = stale_epochs(loss_history);
    if stale > 0 && stale.is_multiple_of(config.plateau_patience_epochs) {
        (current_lr * config.lr_decay_factor).max(config.min_learning_rate)
    } else {
        current_lr
    }
}
