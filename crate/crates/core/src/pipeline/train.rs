use rand::seq::SliceRandom;

use super::eval::accuracy;
use crate::data::Dataset;
use crate::distill::LossSpec;
use crate::error::{domain, Error, Result};
use crate::models::{Classifier, Mode};
use crate::optim::{Adam, AdamConfig};
use crate::rng::SeedStream;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub optimizer: AdamConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a dev-accuracy improvement before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { optimizer: AdamConfig::default(), batch_size: 32, max_epochs: 100, patience: 10, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(domain("batch size, epochs and patience must be positive"));
        }
        Ok(())
    }
}

/// Training instances plus, for distillation, one teacher logit row per
/// instance in the same order.
#[derive(Debug, Clone, Copy)]
pub struct TrainTargets<'a> {
    pub dataset: &'a Dataset,
    pub teacher: Option<&'a [Vec<f64>]>,
}

impl<'a> TrainTargets<'a> {
    pub fn new(dataset: &'a Dataset, teacher: Option<&'a [Vec<f64>]>) -> Result<Self> {
        if let Some(t) = teacher {
            if t.len() != dataset.len() {
                return Err(Error::Data(format!("{} teacher rows for {} instances", t.len(), dataset.len())));
            }
            if let Some(bad) = t.iter().position(|r| r.len() != dataset.num_classes) {
                return Err(Error::Data(format!("teacher row {bad} does not have {} classes", dataset.num_classes)));
            }
        }
        Ok(TrainTargets { dataset, teacher })
    }

    pub fn gold(dataset: &'a Dataset) -> Self {
        TrainTargets { dataset, teacher: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training loss over the epoch.
    pub train_loss: f64,
    pub dev_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were returned (1-based).
    pub best_epoch: usize,
    pub best_dev_accuracy: f64,
}

impl History {
    /// One `epoch, train_loss, dev_accuracy` row per epoch.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("epoch\ttrain_loss\tdev_accuracy\n");
        for e in &self.epochs {
            s.push_str(&format!("{}\t{:.6}\t{:.6}\n", e.epoch, e.train_loss, e.dev_accuracy));
        }
        s
    }
}

/// Mini-batch training with Adam and early stopping on dev accuracy.
/// Returns the parameters from the epoch with the best dev accuracy.
///
/// Every random draw (shuffling, dropout, loss noise) comes from substreams
/// of `config.seed`, so the result is a pure function of the inputs.
pub fn train<M: Classifier>(
    mut model: M,
    targets: TrainTargets<'_>,
    dev: &Dataset,
    loss: &LossSpec,
    config: &TrainConfig,
) -> Result<(M, History)> {
    config.validate()?;
    loss.validate()?;
    let data = targets.dataset;
    if data.is_empty() || dev.is_empty() {
        return Err(domain("training and dev sets must be non-empty"));
    }
    for set in [data, dev] {
        if set.vocab_hash != model.vocab().hash() {
            return Err(Error::Data(format!(
                "{} set is bound to a different vocabulary than the model",
                set.partition
            )));
        }
        if set.num_classes != model.num_classes() {
            return Err(Error::Data(format!(
                "{} set has {} classes, model has {}",
                set.partition,
                set.num_classes,
                model.num_classes()
            )));
        }
    }
    if loss.needs_teacher() && targets.teacher.is_none() {
        return Err(Error::Data(format!("loss {loss} needs teacher logits")));
    }

    let root = SeedStream::new(config.seed);
    let mut opt = Adam::new(config.optimizer)?;
    let mut grads = model.zeros_like();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = History { best_dev_accuracy: f64::NEG_INFINITY, ..History::default() };
    let mut best = model.clone();
    let mut stale = 0;
    for epoch in 1..=config.max_epochs {
        let epoch_stream = root.child("epoch").index(epoch as u64);
        order.sort_unstable();
        order.shuffle(&mut epoch_stream.child("shuffle").rng());
        let mut total = 0.0;
        for (batch, chunk) in order.chunks(config.batch_size).enumerate() {
            grads.zero();
            let scale = 1.0 / chunk.len() as f64;
            for &i in chunk {
                let inst = &data.instances[i];
                let mut rng = epoch_stream.child("instance").index(i as u64).rng();
                let (logits, cache) = model.forward(&inst.tokens, Mode::Train, &mut rng);
                let teacher = targets.teacher.map(|t| t[i].as_slice());
                let (l, mut dl) = loss.evaluate(teacher, &logits, inst.label, &mut rng)?;
                if !l.is_finite() {
                    return Err(Error::NonFinite { epoch, batch, value: l });
                }
                total += l;
                dl.iter_mut().for_each(|g| *g *= scale);
                model.backward(&cache, &dl, &mut grads);
            }
            opt.step(model.params_mut(), grads.params());
        }
        let dev_accuracy = accuracy(&model, dev);
        let train_loss = total / data.len() as f64;
        log::debug!("epoch {epoch}: loss {train_loss:.6}, dev accuracy {dev_accuracy:.4}");
        history.epochs.push(EpochRecord { epoch, train_loss, dev_accuracy });
        if dev_accuracy > history.best_dev_accuracy {
            history.best_dev_accuracy = dev_accuracy;
            history.best_epoch = epoch;
            best = model.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    Ok((best, history))
}
