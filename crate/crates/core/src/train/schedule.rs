//! Plateau learning-rate decay on validation loss and early stopping on
//! validation accuracy.

use super::{TrainState, TrainingConfig};

/// Records `val_loss`; after `plateau_patience` consecutive epochs without
/// an improvement larger than `min_improvement`, multiplies the learning
/// rate by `plateau_factor` and restarts the count.
pub fn lr_on_plateau_step(state: &mut TrainState, val_loss: f64, cfg: &TrainingConfig) {
    let improved = match state.best_val_loss {
        None => true,
        Some(best) => val_loss < best - cfg.min_improvement,
    };
    if improved {
        state.best_val_loss = Some(val_loss);
        state.epochs_since_loss_improved = 0;
        return;
    }
    state.epochs_since_loss_improved += 1;
    if state.epochs_since_loss_improved >= cfg.plateau_patience {
        state.current_lr *= cfg.plateau_factor;
        state.epochs_since_loss_improved = 0;
    }
}

/// Records `val_acc`; returns `true` once it has failed to beat the best
/// accuracy by more than `min_improvement` for `early_stop_patience`
/// consecutive epochs.
pub fn early_stop_check(state: &mut TrainState, val_acc: f64, cfg: &TrainingConfig) -> bool {
    let improved = match state.best_val_acc {
        None => true,
        Some(best) => val_acc > best + cfg.min_improvement,
    };
    if improved {
        state.best_val_acc = Some(val_acc);
        state.epochs_since_acc_improved = 0;
        return false;
    }
    state.epochs_since_acc_improved += 1;
    state.epochs_since_acc_improved >= cfg.early_stop_patience
}
