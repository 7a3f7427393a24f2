/// `lr0 · (1 − iter/max_iter)^power`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolySchedule {
    pub base_lr: f64,
    pub max_iter: u64,
    pub power: f64,
}

impl PolySchedule {
    pub fn new(base_lr: f64, max_iter: u64) -> Self {
        PolySchedule {
            base_lr,
            max_iter,
            power: 0.9,
        }
    }

    pub fn lr(&self, iter: u64) -> f64 {
        if self.max_iter == 0 {
            return self.base_lr;
        }
        let frac = (iter.min(self.max_iter)) as f64 / self.max_iter as f64;
        self.base_lr * (1.0 - frac).powf(self.power)
    }
}

/// Reduce-on-plateau in "min" mode with a relative improvement threshold.
/// The rate is multiplied by `factor` once more than `patience` consecutive
/// epochs fail to improve on the best metric seen.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauSchedule {
    pub lr: f64,
    pub factor: f64,
    pub patience: u32,
    pub threshold: f64,
    best: f64,
    bad_epochs: u32,
}

impl PlateauSchedule {
    pub fn new(lr: f64, factor: f64, patience: u32) -> Self {
        PlateauSchedule {
            lr,
            factor,
            patience,
            threshold: 1e-4,
            best: f64::INFINITY,
            bad_epochs: 0,
        }
    }

    /// Feeds one epoch's monitored metric and returns the rate to use next.
    pub fn step(&mut self, metric: f64) -> f64 {
        if metric < self.best * (1.0 - self.threshold) || self.best.is_infinite() {
            self.best = metric;
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
        }
        if self.bad_epochs > self.patience {
            self.lr *= self.factor;
            self.bad_epochs = 0;
        }
        self.lr
    }
}
