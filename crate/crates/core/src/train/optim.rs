use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::TrainError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl std::str::FromStr for OptimizerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(format!("unknown optimizer '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f32,
    pub momentum: f32,
    pub weight_decay: f32,
    /// Epoch index from which weight decay is switched off; `None` keeps it on.
    pub weight_decay_until: Option<usize>,
    pub betas: (f32, f32),
    pub eps: f32,
    /// Multiply the learning rate by `lr_decay_factor` every `lr_decay_every` epochs.
    pub lr_decay_every: usize,
    pub lr_decay_factor: f32,
}

impl OptimizerConfig {
    /// Desk-scale full-precision schedule.
    pub fn full_precision() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            lr: 2e-3,
            momentum: 0.0,
            weight_decay: 1e-4,
            weight_decay_until: None,
            betas: (0.9, 0.999),
            eps: 1e-8,
            lr_decay_every: 10,
            lr_decay_factor: 0.5,
        }
    }

    /// Desk-scale binarization schedule: Adam at 5e-4 with betas (0, 0.999),
    /// weight decay 5e-4 switched off after the first few epochs and the
    /// learning rate halved every 10 epochs.
    pub fn binarize() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            lr: 5e-4,
            momentum: 0.0,
            weight_decay: 5e-4,
            weight_decay_until: Some(5),
            betas: (0.0, 0.999),
            eps: 1e-8,
            lr_decay_every: 10,
            lr_decay_factor: 0.5,
        }
    }

    /// Full-length full-precision recipe (SGD, 200 epochs in the original setup).
    pub fn reference_full_precision() -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            lr: 5e-2,
            momentum: 0.9,
            weight_decay: 1e-4,
            weight_decay_until: None,
            betas: (0.9, 0.999),
            eps: 1e-8,
            lr_decay_every: 81,
            lr_decay_factor: 0.1,
        }
    }

    /// Full-length binarization recipe: halve every 30 epochs, decay off after 30.
    pub fn reference_binarize() -> Self {
        Self {
            lr_decay_every: 30,
            weight_decay_until: Some(30),
            ..Self::binarize()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: &str| Err(TrainError::InvalidConfig(msg.to_string()));
        if !(self.lr >= 0.0 && self.momentum >= 0.0 && self.weight_decay >= 0.0 && self.eps > 0.0) {
            return bad("learning rate, momentum and weight decay must be non-negative");
        }
        if !((0.0..1.0).contains(&self.betas.0) && (0.0..1.0).contains(&self.betas.1)) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if self.lr_decay_every == 0 || !(self.lr_decay_factor > 0.0) {
            return bad("step decay needs a positive period and factor");
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f32 {
        self.lr * self.lr_decay_factor.powi((epoch / self.lr_decay_every) as i32)
    }

    pub fn weight_decay_at(&self, epoch: usize) -> f32 {
        match self.weight_decay_until {
            Some(limit) if epoch >= limit => 0.0,
            _ => self.weight_decay,
        }
    }
}

#[derive(Debug, Clone)]
struct Slot {
    first: Vec<f32>,
    second: Vec<f32>,
    steps: i32,
}

/// Per-parameter optimizer state keyed by layer index.
#[derive(Debug, Clone)]
pub struct Optimizer {
    cfg: OptimizerConfig,
    slots: BTreeMap<usize, Slot>,
}

impl Optimizer {
    pub fn new(cfg: OptimizerConfig) -> Result<Self, TrainError> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            slots: BTreeMap::new(),
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.cfg
    }

    pub fn step(&mut self, layer: usize, params: &mut [f32], grads: &[f32], epoch: usize) {
        let lr = self.cfg.lr_at(epoch);
        let wd = self.cfg.weight_decay_at(epoch);
        let slot = self.slots.entry(layer).or_insert_with(|| Slot {
            first: vec![0.0; params.len()],
            second: vec![0.0; params.len()],
            steps: 0,
        });
        slot.steps += 1;
        match self.cfg.kind {
            OptimizerKind::Sgd => {
                let mu = self.cfg.momentum;
                for ((p, &g), v) in params.iter_mut().zip(grads).zip(&mut slot.first) {
                    let g = g + wd * *p;
                    *v = mu * *v + g;
                    *p -= lr * *v;
                }
            }
            OptimizerKind::Adam => {
                let (b1, b2) = self.cfg.betas;
                let c1 = 1.0 - b1.powi(slot.steps);
                let c2 = 1.0 - b2.powi(slot.steps);
                for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut slot.first).zip(&mut slot.second) {
                    let g = g + wd * *p;
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + self.cfg.eps);
                }
            }
        }
    }
}
