//! Training loop: seeded shuffling, mini-batches with the final partial
//! batch kept, sigmoid + binary cross entropy, Adam with a step-decay
//! learning rate schedule, per-epoch metrics, and best-checkpoint retention.

mod adam;
mod checkpoint;

pub use adam::{adam_step, AdamState};
pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};

use serde::{Deserialize, Serialize};

use crate::data::{DatasetManifest, Split};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, MetricsReport, DEFAULT_THRESHOLD};
use crate::net::Model;
use crate::scalar::Scalar;
use crate::tensor::bce_loss;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Initial learning rate.
    pub lr0: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Multiplicative decay applied every `lr_decay_every` epochs.
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Shuffle seed; batch order is a pure function of (seed, epoch).
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 2e-4,
            batch_size: 64,
            epochs: 120,
            lr_decay: 0.1,
            lr_decay_every: 30,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr0 <= 0.0 {
            return Err(Error::Config(format!("lr0 {} must be positive", self.lr0)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".to_string()));
        }
        if !(0.0 < self.lr_decay && self.lr_decay <= 1.0) || self.lr_decay_every == 0 {
            return Err(Error::Config(format!(
                "lr schedule ({} every {}) is not usable",
                self.lr_decay, self.lr_decay_every
            )));
        }
        Ok(())
    }
}

/// Step-decay schedule: lr0 * decay^floor(epoch / every).
pub fn lr_at_epoch(epoch: usize, cfg: &TrainConfig) -> f64 {
    cfg.lr0 * cfg.lr_decay.powi((epoch / cfg.lr_decay_every) as i32)
}

#[derive(Debug, Clone)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    /// Batch-size weighted mean training loss of the epoch.
    pub train_loss: f64,
    /// Accuracy over the train split, scored in inference mode at epoch end.
    pub train_accuracy: f64,
    pub val: Option<MetricsReport>,
}

impl EpochLog {
    /// One line of the structured training log.
    pub fn to_line(&self) -> String {
        let val = match &self.val {
            Some(m) => format!(
                " val_tpr={:.1} val_tnr={:.1} val_acc={:.1}",
                m.tpr(),
                m.tnr(),
                m.acc()
            ),
            None => String::new(),
        };
        format!(
            "epoch={} lr={:.3e} train_loss={:.6} train_acc={:.1}{val}",
            self.epoch, self.lr, self.train_loss, self.train_accuracy
        )
    }
}

#[derive(Debug, Default)]
pub struct TrainReport {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: Option<usize>,
    pub best_score: Option<f64>,
}

/// Owns the model, optimizer state, and epoch counter between epochs, so
/// training can be driven one epoch at a time or resumed from a checkpoint.
pub struct Trainer<T: Scalar> {
    pub model: Model<T>,
    pub opt: AdamState<T>,
    pub cfg: TrainConfig,
    pub epoch: usize,
    best: Option<(f64, usize, Checkpoint)>,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(model: Model<T>, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let opt = AdamState::new(
            &model.named_parameters(),
            cfg.beta1,
            cfg.beta2,
            cfg.adam_eps,
        );
        Ok(Trainer {
            model,
            opt,
            cfg,
            epoch: 0,
            best: None,
        })
    }

    /// Continue training from a checkpoint (model config must match).
    pub fn resume(&mut self, ckpt: &Checkpoint) -> Result<()> {
        ckpt.restore_into(&self.model, &mut self.opt)?;
        self.epoch = ckpt.epoch;
        Ok(())
    }

    /// Best checkpoint so far by validation accuracy (train accuracy when
    /// there is no validation split).
    pub fn best_checkpoint(&self) -> Option<&Checkpoint> {
        self.best.as_ref().map(|(_, _, c)| c)
    }

    /// Deterministic batch order for one epoch.
    fn epoch_order(&self, n: usize) -> Vec<usize> {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let stream = self
            .cfg
            .seed
            .wrapping_add((self.epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(stream);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        order
    }

    /// One pass over the train split: forward, loss, backward, Adam per
    /// batch, then train-split accuracy (and validation metrics when a
    /// validation split exists) in inference mode.
    pub fn run_epoch(&mut self, manifest: &DatasetManifest) -> Result<EpochLog> {
        let train = manifest.split(Split::Train);
        let side = self.model.config().input_side;
        let lr = lr_at_epoch(self.epoch, &self.cfg);
        let order = self.epoch_order(train.len());
        let params = self.model.named_parameters();

        let mut loss_sum = 0.0;
        for (batch_idx, batch) in order.chunks(self.cfg.batch_size).enumerate() {
            let records: Vec<&crate::data::ImageRecord> =
                batch.iter().map(|&i| train[i]).collect();
            let (images, labels) = crate::data::load_batch::<T>(&records, side)?;
            let logits = self.model.forward(&images, true)?;
            let loss = bce_loss(&logits.sigmoid(), &labels)?;
            let loss_value = loss.item()?.to_f64();
            if !loss_value.is_finite() {
                return Err(Error::Train(format!(
                    "non-finite loss {loss_value} at epoch {} batch {batch_idx}",
                    self.epoch
                )));
            }
            loss.backward()?;
            adam_step(&params, &mut self.opt, lr)?;
            loss_sum += loss_value * records.len() as f64;
        }
        let train_loss = loss_sum / train.len() as f64;

        let train_metrics = evaluate(&self.model, &train, DEFAULT_THRESHOLD)?;
        let val_records = manifest.split(Split::Val);
        let val = if val_records.is_empty() {
            None
        } else {
            Some(evaluate(&self.model, &val_records, DEFAULT_THRESHOLD)?)
        };

        let log = EpochLog {
            epoch: self.epoch,
            lr,
            train_loss,
            train_accuracy: train_metrics.acc(),
            val,
        };
        self.epoch += 1;

        let score = log.val.as_ref().map(|m| m.acc()).unwrap_or(log.train_accuracy);
        if self.best.as_ref().is_none_or(|(b, _, _)| score > *b) {
            let ckpt = Checkpoint::capture(&self.model, &self.opt, &self.cfg, self.epoch);
            self.best = Some((score, log.epoch, ckpt));
        }
        Ok(log)
    }

    /// Run `epochs` epochs (possibly zero), invoking the callback after each.
    pub fn fit(
        &mut self,
        manifest: &DatasetManifest,
        epochs: usize,
        mut on_epoch: impl FnMut(&EpochLog),
    ) -> Result<TrainReport> {
        let train = manifest.split(Split::Train);
        if train.is_empty() {
            return Err(Error::Train("train split is empty".to_string()));
        }
        manifest.require_both_classes(Split::Train)?;
        let mut report = TrainReport::default();
        for _ in 0..epochs {
            let log = self.run_epoch(manifest)?;
            on_epoch(&log);
            report.epochs.push(log);
        }
        if let Some((score, epoch, _)) = &self.best {
            report.best_score = Some(*score);
            report.best_epoch = Some(*epoch);
        }
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_point_checks() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_at_epoch(0, &cfg), 2e-4);
        assert_eq!(lr_at_epoch(29, &cfg), 2e-4);
        assert!((lr_at_epoch(30, &cfg) - 2e-5).abs() < 1e-18);
        assert!((lr_at_epoch(119, &cfg) - 2e-7).abs() < 1e-20);
    }

    #[test]
    fn schedule_is_piecewise_constant_with_breaks_at_multiples() {
        let cfg = TrainConfig::default();
        for e in 0..240 {
            let here = lr_at_epoch(e, &cfg);
            let next = lr_at_epoch(e + 1, &cfg);
            if (e + 1) % 30 == 0 {
                assert!(next < here);
            } else {
                assert_eq!(next, here);
            }
        }
    }

    #[test]
    fn config_validation() {
        let cfg = TrainConfig {
            lr0: 0.0,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }
}
