//! Early stopping with learning-rate annealing, both driven by epochs
//! elapsed since the best validation loss.

/// What the training loop should do after reporting a validation loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Decision {
    /// This epoch set a new best validation loss; snapshot the weights.
    pub improved: bool,
    /// Divide the learning rate by the anneal factor.
    pub anneal: bool,
    /// Patience is exhausted; stop after this epoch.
    pub stop: bool,
}

/// Tracks the best validation loss seen so far. Only a strict improvement
/// resets the counters; an anneal resets the anneal counter alone, so the
/// stopping clock keeps running through annealing.
#[derive(Debug, Clone)]
pub struct EarlyStopper {
    patience: usize,
    anneal_patience: usize,
    best: f64,
    best_epoch: usize,
    since_best: usize,
    since_anneal: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize, anneal_patience: usize) -> Self {
        assert!(patience >= 1 && anneal_patience >= 1);
        Self {
            patience,
            anneal_patience,
            best: f64::INFINITY,
            best_epoch: 0,
            since_best: 0,
            since_anneal: 0,
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best
    }

    /// Report the validation loss of `epoch` (1-based, strictly increasing).
    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> Decision {
        if val_loss < self.best {
            self.best = val_loss;
            self.best_epoch = epoch;
            self.since_best = 0;
            self.since_anneal = 0;
            return Decision { improved: true, anneal: false, stop: false };
        }
        self.since_best += 1;
        self.since_anneal += 1;
        let anneal = self.since_anneal >= self.anneal_patience;
        if anneal {
            self.since_anneal = 0;
        }
        let stop = self.since_best >= self.patience;
        Decision { improved: false, anneal, stop }
    }
}
