//! Learning-rate schedule: constant until the monitored epoch loss stops
//! improving for `patience` epochs, then linear decay to zero at `max_epochs`.

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PlateauLinearDecay {
    pub base_lr: f64,
    pub patience: usize,
    pub max_epochs: usize,
    pub best: Option<f64>,
    pub epochs_since_best: usize,
    /// Epoch at which decay started.
    pub decay_from: Option<usize>,
}

impl PlateauLinearDecay {
    pub fn new(base_lr: f64, patience: usize, max_epochs: usize) -> Self {
        Self { base_lr, patience, max_epochs, best: None, epochs_since_best: 0, decay_from: None }
    }

    /// Learning rate to use during `epoch`.
    pub fn lr(&self, epoch: usize) -> f64 {
        match self.decay_from {
            Some(start) if self.max_epochs > start => {
                let left = self.max_epochs.saturating_sub(epoch) as f64;
                self.base_lr * left / (self.max_epochs - start) as f64
            }
            Some(_) => 0.0,
            None => self.base_lr,
        }
    }

    /// Records the mean loss of `epoch`, which has just finished.
    pub fn end_epoch(&mut self, epoch: usize, mean_loss: f64) {
        if self.best.is_none_or(|b| mean_loss < b) {
            self.best = Some(mean_loss);
            self.epochs_since_best = 0;
        } else {
            self.epochs_since_best += 1;
        }
        if self.decay_from.is_none() && self.epochs_since_best >= self.patience {
            self.decay_from = Some(epoch + 1);
        }
    }
}
