//! Mini-batch training and evaluation.

use alloc::vec;
use alloc::vec::Vec;

use super::optim::SgdMomentum;
use super::Network;
use crate::data::DatasetSplit;
use crate::error::{usage_err, Error, Result};

/// Optimizer and schedule settings for [`train`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    /// `α` of the L2 penalty `(α/2) Σ |w|²`.
    pub l2_alpha: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// The learning rate is multiplied by `lr_decay_factor` after each listed epoch.
    pub lr_decay_epochs: Vec<usize>,
    pub lr_decay_factor: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig::for_epochs(25)
    }
}

impl TrainingConfig {
    /// lr 0.05, momentum 0.9, α = 1e-4, batch 128, one ×0.1 decay at 2/3 of the run.
    pub fn for_epochs(epochs: usize) -> Self {
        let milestone = (2 * epochs + 1) / 3;
        TrainingConfig {
            learning_rate: 0.05,
            momentum: 0.9,
            l2_alpha: 1e-4,
            batch_size: 128,
            epochs,
            seed: 0,
            lr_decay_epochs: if milestone > 0 && milestone < epochs { vec![milestone] } else { Vec::new() },
            lr_decay_factor: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(usage_err!("learning rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(usage_err!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if !(self.l2_alpha >= 0.0 && self.l2_alpha.is_finite()) {
            return Err(usage_err!("L2 alpha must be non-negative, got {}", self.l2_alpha));
        }
        if self.batch_size == 0 {
            return Err(usage_err!("batch size must be at least 1"));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor.is_finite()) {
            return Err(usage_err!("lr decay factor must be positive, got {}", self.lr_decay_factor));
        }
        Ok(())
    }

    /// Learning rate used during 1-based `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let decays = self.lr_decay_epochs.iter().filter(|&&m| m < epoch).count();
        let mut lr = self.learning_rate;
        for _ in 0..decays {
            lr *= self.lr_decay_factor;
        }
        lr
    }
}

/// Metrics after one epoch. Epoch 0 is the untrained network evaluated on the
/// full training set; later rows average the loss and accuracy over the
/// epoch's mini-batches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunReport {
    pub records: Vec<EpochRecord>,
}

impl RunReport {
    pub fn final_record(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    pub fn final_test_accuracy(&self) -> Option<f64> {
        self.final_record().map(|r| r.test_acc)
    }
}

const EVAL_CHUNK: usize = 500;

/// Index of the largest entry in each column of `[C, B]`; ties go to the lowest class.
fn argmax_columns(scores: &[f64], classes: usize, b: usize) -> Vec<u8> {
    (0..b)
        .map(|col| {
            let mut best = 0;
            for c in 1..classes {
                if scores[c * b + col] > scores[best * b + col] {
                    best = c;
                }
            }
            best as u8
        })
        .collect()
}

/// Predicted class for every sample of `split`.
pub fn predict(net: &Network, split: &DatasetSplit) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(split.len());
    let indices: Vec<usize> = (0..split.len()).collect();
    for chunk in indices.chunks(EVAL_CHUNK) {
        let batch = split.batch(chunk)?;
        let probs = net.forward(&batch.images)?;
        out.extend(argmax_columns(probs.data(), probs.shape()[0], chunk.len()));
    }
    Ok(out)
}

/// Fraction of samples whose highest-scoring class equals the label.
pub fn evaluate(net: &Network, split: &DatasetSplit) -> Result<f64> {
    if split.is_empty() {
        return Err(usage_err!("cannot evaluate on an empty split"));
    }
    let predicted = predict(net, split)?;
    let correct = predicted.iter().zip(split.labels()).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / split.len() as f64)
}

/// Mean loss (cross-entropy + L2) and accuracy over a whole split, without updates.
fn full_pass(net: &Network, split: &DatasetSplit, alpha: f64) -> Result<(f64, f64)> {
    let indices: Vec<usize> = (0..split.len()).collect();
    let l2 = 0.5 * alpha * net.weight_norm_sq();
    let (mut ce_sum, mut correct) = (0.0, 0usize);
    for chunk in indices.chunks(EVAL_CHUNK) {
        let batch = split.batch(chunk)?;
        let probs = net.forward(&batch.images)?;
        let loss = super::cross_entropy(&probs, &batch.targets, 0.0, 0.0)?;
        ce_sum += loss.cross_entropy_sum();
        let pred = argmax_columns(probs.data(), probs.shape()[0], chunk.len());
        correct += pred.iter().zip(&batch.labels).filter(|(p, l)| p == l).count();
    }
    let n = split.len() as f64;
    Ok((ce_sum / n + l2, correct as f64 / n))
}

pub fn train(net: &mut Network, train: &DatasetSplit, test: &DatasetSplit, config: &TrainingConfig) -> Result<RunReport> {
    train_with(net, train, test, config, |_| {})
}

/// [`train`] with a callback invoked after every epoch record, including epoch 0.
pub fn train_with(
    net: &mut Network,
    train: &DatasetSplit,
    test: &DatasetSplit,
    config: &TrainingConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<RunReport> {
    config.validate()?;
    if train.is_empty() || test.is_empty() {
        return Err(usage_err!("training and test splits must be non-empty"));
    }
    let mut report = RunReport::default();
    let (loss0, acc0) = full_pass(net, train, config.l2_alpha)?;
    let first = EpochRecord { epoch: 0, train_loss: loss0, train_acc: acc0, test_acc: evaluate(net, test)? };
    on_epoch(&first);
    report.records.push(first);

    let mut opt = SgdMomentum::new(config.momentum);
    for epoch in 1..=config.epochs {
        let lr = config.lr_at(epoch);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (bi, batch) in train.batches(config.batch_size, config.seed, epoch)?.enumerate() {
            let out = net.loss_and_gradients(&batch.images, &batch.targets, config.l2_alpha)?;
            if !out.loss.total.is_finite() {
                return Err(Error::Divergence { epoch, batch: bi, loss: out.loss.total });
            }
            let b = batch.labels.len();
            loss_sum += out.loss.total * b as f64;
            let pred = argmax_columns(out.probabilities.data(), out.probabilities.shape()[0], b);
            correct += pred.iter().zip(&batch.labels).filter(|(p, l)| p == l).count();
            opt.step(net.params_mut(), &out.grads, lr);
        }
        let n = train.len() as f64;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / n,
            train_acc: correct as f64 / n,
            test_acc: evaluate(net, test)?,
        };
        on_epoch(&record);
        report.records.push(record);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_schedule() {
        let c = TrainingConfig::for_epochs(25);
        assert_eq!(c.lr_decay_epochs, vec![17]);
        assert_eq!(c.lr_at(17), 0.05);
        assert!((c.lr_at(18) - 0.005).abs() < 1e-15);
        assert_eq!(TrainingConfig::for_epochs(40).lr_decay_epochs, vec![27]);
        assert!(TrainingConfig::for_epochs(0).lr_decay_epochs.is_empty());
    }

    #[test]
    fn config_validation() {
        let mut c = TrainingConfig::default();
        assert!(c.validate().is_ok());
        c.momentum = 1.0;
        assert!(c.validate().is_err());
        c = TrainingConfig { learning_rate: 0.0, ..TrainingConfig::default() };
        assert!(c.validate().is_err());
        c = TrainingConfig { l2_alpha: -1.0, ..TrainingConfig::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn argmax_ties_go_low() {
        // columns: [0.5, 0.5, 0], [0.1, 0.2, 0.7]
        let scores = [0.5, 0.1, 0.5, 0.2, 0.0, 0.7];
        assert_eq!(argmax_columns(&scores, 3, 2), vec![0, 2]);
    }
}
