use std::io::Write;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::{backward, forward_eval, forward_train, TrainContext};
use super::optim::{Optimizer, OptimizerConfig};
use super::TrainError;
use crate::graph::{Dataset, Mode, ModelGraph, ParamKey, ACTIVATION_KEY, SIGN_ACTIVATION};
use crate::tensor::{argmax, softmax_xent};

pub const PHASE_KEY: &str = "phase";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    /// Constrained full-precision training.
    FullPrecision,
    /// Binarize hidden layers of a full-precision checkpoint and keep training.
    BinarizeFineTune,
    /// Train with binarized hidden layers from random initialisation.
    ScratchBinary,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::FullPrecision => "full-precision",
            Phase::BinarizeFineTune => "binarize-finetune",
            Phase::ScratchBinary => "scratch-binary",
        }
    }
}

impl std::str::FromStr for Phase {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full-precision" | "fp" => Ok(Phase::FullPrecision),
            "binarize-finetune" | "binarize" => Ok(Phase::BinarizeFineTune),
            "scratch-binary" | "scratch" => Ok(Phase::ScratchBinary),
            other => Err(format!("unknown phase '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    /// XNOR-Net style: activations feeding every layer are binarized with `sign`.
    Sign,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSchedule {
    pub phase: Phase,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub activation: Activation,
}

impl TrainSchedule {
    pub fn new(phase: Phase, epochs: usize) -> Self {
        Self {
            phase,
            epochs,
            batch_size: 32,
            seed: 0,
            activation: Activation::Relu,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub train_acc: f64,
    pub val_acc: Option<f64>,
    pub phase: Phase,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub graph: ModelGraph,
    pub log: Vec<EpochLog>,
}

impl TrainOutcome {
    pub fn final_val_acc(&self) -> Option<f64> {
        self.log.last().and_then(|l| l.val_acc)
    }
}

fn check_dataset(graph: &ModelGraph, ds: &Dataset) -> Result<(), TrainError> {
    if ds.image_shape() != graph.input_shape.as_slice() {
        return Err(TrainError::InputShape {
            expected: graph.input_shape.clone(),
            got: ds.image_shape().to_vec(),
        });
    }
    if graph.num_classes() != Some(ds.classes) {
        return Err(TrainError::InvalidConfig(format!(
            "model has {:?} outputs but dataset has {} classes",
            graph.num_classes(),
            ds.classes
        )));
    }
    Ok(())
}

/// Trains `graph` on `data`. Runs are bitwise reproducible for a fixed
/// schedule seed: shuffling and dropout are seeded, and gradient reductions
/// follow sample order regardless of thread count.
pub fn train(
    mut graph: ModelGraph,
    data: &Dataset,
    val: Option<&Dataset>,
    opt_cfg: &OptimizerConfig,
    schedule: &TrainSchedule,
) -> Result<TrainOutcome, TrainError> {
    if graph.mode != Mode::Ann {
        return Err(TrainError::WrongMode);
    }
    if schedule.batch_size == 0 {
        return Err(TrainError::InvalidConfig("batch size must be positive".into()));
    }
    check_dataset(&graph, data)?;
    if let Some(v) = val {
        check_dataset(&graph, v)?;
    }
    match schedule.phase {
        Phase::FullPrecision => {
            if graph.is_binarized() {
                return Err(TrainError::InvalidConfig(
                    "full-precision phase on a binarized model".into(),
                ));
            }
        }
        Phase::BinarizeFineTune => {
            if graph.metadata.get(PHASE_KEY).map(String::as_str) != Some(Phase::FullPrecision.name()) {
                return Err(TrainError::MissingCheckpoint);
            }
            graph.mark_binarized();
        }
        Phase::ScratchBinary => graph.mark_binarized(),
    }
    if schedule.activation == Activation::Sign {
        graph.metadata.insert(ACTIVATION_KEY.into(), SIGN_ACTIVATION.into());
    }

    let mut optimizer = Optimizer::new(opt_cfg.clone())?;
    let n = data.len();
    let labels = data.labels_usize();
    let mut order: Vec<usize> = (0..n).collect();
    let mut log = Vec::with_capacity(schedule.epochs);

    for epoch in 0..schedule.epochs {
        let epoch_seed = schedule.seed ^ (epoch as u64 + 1).wrapping_mul(0xA076_1D64_78BD_642F);
        order.sort_unstable();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));

        let mut loss_sum = 0.0f64;
        let mut correct = 0usize;
        for chunk in order.chunks(schedule.batch_size) {
            let x = data.images.select_batch(chunk)?;
            let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let ctx = TrainContext {
                dropout_seed: epoch_seed,
                sample_ids: chunk.iter().map(|&i| i as u64).collect(),
            };
            let (logits, tape) = forward_train(&graph, &x, &ctx)?;
            let (loss, grad) = softmax_xent(&logits, &y)?;
            if !loss.is_finite() {
                return Err(TrainError::Diverged { epoch });
            }
            loss_sum += loss as f64 * chunk.len() as f64;
            let classes = logits.shape()[1];
            correct += logits
                .data()
                .chunks(classes)
                .zip(&y)
                .filter(|(row, &l)| argmax(row) == l)
                .count();

            let grads = backward(&graph, &tape, &grad)?;
            drop(tape);
            for (layer, g) in grads {
                let w = graph
                    .params
                    .get_mut(&ParamKey::weight(layer))
                    .ok_or(TrainError::MissingWeight(layer))?;
                optimizer.step(layer, Arc::make_mut(w).data_mut(), g.data(), epoch);
            }
        }
        if graph.params.values().any(|w| !w.is_finite()) {
            return Err(TrainError::Diverged { epoch });
        }
        let val_acc = match val {
            Some(v) => Some(evaluate_ann(&graph, v)?),
            None => None,
        };
        log.push(EpochLog {
            epoch,
            loss: loss_sum / n as f64,
            train_acc: correct as f64 / n as f64,
            val_acc,
            phase: schedule.phase,
        });
    }

    let prior: usize = graph.metadata.get("epochs").and_then(|e| e.parse().ok()).unwrap_or(0);
    graph.metadata.insert(PHASE_KEY.into(), schedule.phase.name().into());
    graph.metadata.insert("epochs".into(), (prior + schedule.epochs).to_string());
    graph.metadata.insert("train_seed".into(), schedule.seed.to_string());
    Ok(TrainOutcome { graph, log })
}

const EVAL_BATCH: usize = 128;

/// Arg-max class per sample in inference mode.
pub fn predict_ann(graph: &ModelGraph, data: &Dataset) -> Result<Vec<usize>, TrainError> {
    let n = data.len();
    let mut preds = Vec::with_capacity(n);
    let mut start = 0;
    while start < n {
        let count = EVAL_BATCH.min(n - start);
        let x = data.images.slice_batch(start, count)?;
        let logits = forward_eval(graph, &x)?;
        let classes = logits.shape()[1];
        preds.extend(logits.data().chunks(classes).map(argmax));
        start += count;
    }
    Ok(preds)
}

/// Top-1 accuracy with dropout inert.
pub fn evaluate_ann(graph: &ModelGraph, data: &Dataset) -> Result<f64, TrainError> {
    let preds = predict_ann(graph, data)?;
    let correct = preds.iter().zip(&data.labels).filter(|(&p, &l)| p == l as usize).count();
    Ok(correct as f64 / data.len() as f64)
}

/// Writes the per-epoch log as CSV: `epoch,loss,train_acc,val_acc,phase`.
pub fn write_log_csv(log: &[EpochLog], out: impl Write) -> Result<(), TrainError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["epoch", "loss", "train_acc", "val_acc", "phase"])?;
    for e in log {
        w.write_record([
            e.epoch.to_string(),
            format!("{:.6}", e.loss),
            format!("{:.6}", e.train_acc),
            e.val_acc.map(|v| format!("{v:.6}")).unwrap_or_default(),
            e.phase.name().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
