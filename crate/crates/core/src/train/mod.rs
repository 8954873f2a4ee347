//! Minibatch SGD with plateau learning-rate decay and early stopping.

mod checkpoint;
mod metrics;
mod schedule;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use metrics::Metrics;
pub use schedule::{early_stop_check, lr_on_plateau_step};

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::layers::{softmax_cross_entropy, Mode, NoSampling};
use crate::model::{Model, NUM_CLASSES};
use crate::numfmt::significant;
use crate::tensor::{argmax, Scalar, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub initial_lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub early_stop_patience: usize,
    pub min_improvement: f64,
    pub seed: u64,
    /// Seeded random horizontal flips of training images.
    pub augment_flip: bool,
    pub eval_batch_size: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            initial_lr: 0.01,
            momentum: 0.9,
            batch_size: 64,
            max_epochs: 100,
            plateau_factor: 0.9,
            plateau_patience: 3,
            early_stop_patience: 8,
            min_improvement: 1e-4,
            seed: 0,
            augment_flip: false,
            eval_batch_size: 256,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.initial_lr > 0.0) || !self.initial_lr.is_finite() {
            return fail(format!("initial_lr must be positive, got {}", self.initial_lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if self.batch_size == 0 || self.eval_batch_size == 0 {
            return fail("batch sizes must be positive".into());
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return fail(format!("plateau_factor must be in (0, 1), got {}", self.plateau_factor));
        }
        if self.plateau_patience == 0 || self.early_stop_patience == 0 {
            return fail("patiences must be at least 1".into());
        }
        if !(self.min_improvement >= 0.0) {
            return fail(format!("min_improvement must be >= 0, got {}", self.min_improvement));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: TrainingConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean cross-entropy plus L2 penalty over the epoch's minibatches.
    pub train_loss: f64,
    /// Accuracy of the train-mode predictions made during the epoch.
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    /// Learning rate used during the epoch.
    pub lr: f64,
}

pub const HISTORY_HEADER: &str = "epoch,train_loss,train_acc,val_loss,val_acc,lr";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    /// Completed epochs.
    pub epoch: usize,
    pub current_lr: f64,
    pub best_val_loss: Option<f64>,
    pub epochs_since_loss_improved: usize,
    pub best_val_acc: Option<f64>,
    pub epochs_since_acc_improved: usize,
    /// Epoch (1-based) whose parameters are kept as the best snapshot.
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
    pub history: Vec<EpochRecord>,
    /// Shuffling, dropout and augmentation stream.
    pub rng: ChaCha8Rng,
}

impl TrainState {
    pub fn new(cfg: &TrainingConfig) -> Self {
        TrainState {
            epoch: 0,
            current_lr: cfg.initial_lr,
            best_val_loss: None,
            epochs_since_loss_improved: 0,
            best_val_acc: None,
            epochs_since_acc_improved: 0,
            best_epoch: None,
            stopped_early: false,
            history: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        }
    }

    pub fn write_history_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{HISTORY_HEADER}")?;
        for r in &self.history {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                r.epoch,
                significant(r.train_loss, 9),
                significant(r.train_acc, 9),
                significant(r.val_loss, 9),
                significant(r.val_acc, 9),
                significant(r.lr, 9)
            )?;
        }
        Ok(())
    }

    pub fn save_history_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_history_csv(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Splits `0..n` into consecutive chunks of `batch`; a trailing chunk of
/// one example is merged into its predecessor because train-mode batch
/// normalization needs at least two.
pub(crate) fn batch_bounds(n: usize, batch: usize) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = (0..n).step_by(batch).map(|s| (s, (s + batch).min(n))).collect();
    if out.len() >= 2 && out.last().is_some_and(|&(s, e)| e - s == 1) {
        let (_, end) = out.pop().unwrap();
        out.last_mut().unwrap().1 = end;
    }
    out
}

/// Infer-mode pass over a split.
pub struct Evaluation {
    pub metrics: Metrics,
    /// Mean cross-entropy (no regularization).
    pub loss: f64,
    /// `[n, 7]` probabilities in split order.
    pub probs: Vec<f64>,
}

pub fn evaluate_detailed<T: Scalar>(model: &mut Model<T>, split: &Dataset, batch_size: usize) -> Result<Evaluation> {
    if split.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate an empty split".into()));
    }
    let batch_size = batch_size.max(1);
    let mut probs = Vec::with_capacity(split.len() * NUM_CLASSES);
    let mut loss_sum = 0.0;
    let indices: Vec<usize> = (0..split.len()).collect();
    for chunk in indices.chunks(batch_size) {
        let (x, labels) = split.batch::<T>(chunk, None);
        let (logits, _) = model.forward_logits(x, Mode::Infer, &mut NoSampling)?;
        let out = softmax_cross_entropy(&logits, &labels)?;
        loss_sum += out.loss * chunk.len() as f64;
        probs.extend(out.probs.as_slice().iter().map(|v| v.to_f64().unwrap()));
    }
    let metrics = Metrics::from_probabilities(&split.labels(), &probs, NUM_CLASSES)?;
    Ok(Evaluation {
        metrics,
        loss: loss_sum / split.len() as f64,
        probs,
    })
}

/// Accuracy and confusion of infer-mode argmax predictions.
pub fn evaluate<T: Scalar>(model: &mut Model<T>, split: &Dataset, batch_size: usize) -> Result<Metrics> {
    Ok(evaluate_detailed(model, split, batch_size)?.metrics)
}

/// Owns a model plus everything needed to continue its training run.
#[derive(Clone, Debug)]
pub struct Trainer<T> {
    pub model: Model<T>,
    pub config: TrainingConfig,
    pub state: TrainState,
    /// Momentum buffers, indexed like `Layer::params` per layer.
    pub(crate) velocity: Vec<Vec<Tensor<T>>>,
    /// Parameters from the epoch with the best validation accuracy.
    pub(crate) best: Option<Model<T>>,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(model: Model<T>, config: TrainingConfig) -> Result<Self> {
        config.validate()?;
        let velocity = model
            .layers()
            .iter()
            .map(|l| l.params().iter().map(|p| Tensor::zeros(p.shape())).collect())
            .collect();
        let state = TrainState::new(&config);
        Ok(Trainer {
            model,
            config,
            state,
            velocity,
            best: None,
        })
    }

    pub fn is_finished(&self) -> bool {
        self.state.stopped_early || self.state.epoch >= self.config.max_epochs
    }

    /// One pass over `train`, then validation, LR schedule and early-stop
    /// bookkeeping.
    pub fn run_epoch(&mut self, train: &Dataset, val: &Dataset) -> Result<EpochRecord> {
        if train.is_empty() || val.is_empty() {
            return Err(Error::InvalidArgument("training and validation splits must be non-empty".into()));
        }
        let epoch = self.state.epoch + 1;
        let lr = self.state.current_lr;
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut self.state.rng);

        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for (b, (start, end)) in batch_bounds(order.len(), self.config.batch_size).into_iter().enumerate() {
            let idx = &order[start..end];
            let flips: Option<Vec<bool>> = self
                .config
                .augment_flip
                .then(|| idx.iter().map(|_| self.state.rng.random::<bool>()).collect());
            let (x, labels) = train.batch::<T>(idx, flips.as_deref());
            let (loss, hits) = self.step(x, &labels, lr).map_err(|e| match e {
                Error::NonFinite { .. } => Error::NonFinite { epoch, batch: b },
                other => other,
            })?;
            loss_sum += loss * idx.len() as f64;
            correct += hits;
        }

        let eval = evaluate_detailed(&mut self.model, val, self.config.eval_batch_size)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            train_acc: correct as f64 / train.len() as f64,
            val_loss: eval.loss,
            val_acc: eval.metrics.accuracy,
            lr,
        };
        lr_on_plateau_step(&mut self.state, eval.loss, &self.config);
        let stop = early_stop_check(&mut self.state, eval.metrics.accuracy, &self.config);
        if self.state.epochs_since_acc_improved == 0 {
            self.best = Some(self.model.clone());
            self.state.best_epoch = Some(epoch);
        }
        self.state.stopped_early = stop;
        self.state.epoch = epoch;
        self.state.history.push(record.clone());
        log::info!(
            "epoch {epoch}: train_loss {:.4} train_acc {:.4} val_loss {:.4} val_acc {:.4} lr {:.6}",
            record.train_loss,
            record.train_acc,
            record.val_loss,
            record.val_acc,
            record.lr
        );
        Ok(record)
    }

    /// Forward, backward and SGD update on one minibatch. Returns the
    /// regularized loss and the number of correct train-mode predictions.
    fn step(&mut self, x: Tensor<T>, labels: &[usize], lr: f64) -> Result<(f64, usize)> {
        let (logits, caches) = self.model.forward_logits(x, Mode::Train, &mut self.state.rng)?;
        let out = softmax_cross_entropy(&logits, labels)?;
        let hits = out
            .probs
            .as_slice()
            .chunks_exact(NUM_CLASSES)
            .zip(labels)
            .filter(|(row, &l)| argmax(row) == l)
            .count();
        let mut grads = self.model.backward(&caches, out.grad_logits)?;
        let penalty = self.model.l2_penalty(Some(&mut grads));
        let loss = out.loss + penalty;
        if !loss.is_finite() {
            return Err(Error::NonFinite { epoch: 0, batch: 0 });
        }
        let mu = T::lit(self.config.momentum);
        let lr = T::lit(lr);
        for ((layer, grads), vel) in self.model.layers_mut().iter_mut().zip(grads.params).zip(&mut self.velocity) {
            for ((p, g), v) in layer.params_mut().into_iter().zip(grads).zip(vel.iter_mut()) {
                for ((w, &gv), vv) in p.as_mut_slice().iter_mut().zip(g.as_slice()).zip(v.as_mut_slice()) {
                    *vv = mu * *vv + gv;
                    *w = *w - lr * *vv;
                }
            }
        }
        Ok((loss, hits))
    }

    /// Runs epochs until early stopping or `max_epochs`.
    pub fn fit(&mut self, train: &Dataset, val: &Dataset) -> Result<()> {
        while !self.is_finished() {
            self.run_epoch(train, val)?;
        }
        Ok(())
    }

    /// The model from the best-validation-accuracy epoch (the current model
    /// if no epoch ran) and the run state.
    pub fn finish(self) -> (Model<T>, TrainState) {
        (self.best.unwrap_or(self.model), self.state)
    }

    pub fn best_model(&self) -> &Model<T> {
        self.best.as_ref().unwrap_or(&self.model)
    }
}

/// Trains `model` on `train`, validating on `val` every epoch.
pub fn train<T: Scalar>(
    model: Model<T>,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainingConfig,
) -> Result<(Model<T>, TrainState)> {
    let mut trainer = Trainer::new(model, cfg.clone())?;
    trainer.fit(train, val)?;
    Ok(trainer.finish())
}
