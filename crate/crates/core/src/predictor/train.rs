use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::Optimizer;
use super::params::Params;
use super::{accuracy, loss, PredictorModel};
use crate::dataset::{Dataset, SplitDataset};
use crate::error::{CoreError, Result};
use crate::rng::{derive_seed, rng_from_seed};

const SHUFFLE_SALT: u64 = 0x5348_5546_464c_4531;
const DROPOUT_SALT: u64 = 0x4452_4f50_4f55_5431;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub test_loss: f64,
    pub test_accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochMetrics>,
}

impl TrainingHistory {
    pub fn last(&self) -> Option<&EpochMetrics> {
        self.epochs.last()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,train_accuracy,test_loss,test_accuracy\n");
        for m in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                m.epoch, m.train_loss, m.train_accuracy, m.test_loss, m.test_accuracy
            ));
        }
        out
    }
}

/// Mean inference-mode loss and accuracy over a dataset; `NaN` when empty.
pub fn evaluate(model: &PredictorModel, data: &Dataset) -> Result<Evaluation> {
    let per_sample = data
        .samples
        .par_iter()
        .map(|s| {
            let p = model.predict(&s.input)?;
            Ok((
                loss(&p, &s.target, model.config.alpha, s.vehicle_count())?,
                accuracy(&p, &s.target)?,
            ))
        })
        .collect::<Result<Vec<(f64, f64)>>>()?;
    let n = per_sample.len() as f64;
    let (l, a) = per_sample
        .iter()
        .fold((0.0, 0.0), |(l, a), (x, y)| (l + x, a + y));
    Ok(Evaluation {
        loss: l / n,
        accuracy: a / n,
    })
}

// one instance per training run, so the size gap does not matter
#[allow(clippy::large_enum_variant)]
enum OptState {
    Momentum { velocity: Params },
    Adam { m: Params, v: Params, step: i32 },
}

impl OptState {
    fn new(opt: Optimizer, like: &Params) -> Self {
        let mut zero = like.clone();
        zero.scale(0.0);
        match opt {
            Optimizer::Momentum { .. } => OptState::Momentum { velocity: zero },
            Optimizer::Adam { .. } => OptState::Adam {
                m: zero.clone(),
                v: zero,
                step: 0,
            },
        }
    }

    fn apply(&mut self, opt: Optimizer, lr: f64, params: &mut Params, grads: &Params) {
        match (self, opt) {
            (OptState::Momentum { velocity }, Optimizer::Momentum { momentum }) => {
                for ((w, v), g) in params
                    .tensors_mut()
                    .into_iter()
                    .zip(velocity.tensors_mut())
                    .zip(grads.tensors())
                {
                    for ((w, v), g) in w.iter_mut().zip(v.iter_mut()).zip(g) {
                        *v = momentum * *v - lr * g;
                        *w += *v;
                    }
                }
            }
            (OptState::Adam { m, v, step }, Optimizer::Adam { beta1, beta2, eps }) => {
                *step += 1;
                let c1 = 1.0 - beta1.powi(*step);
                let c2 = 1.0 - beta2.powi(*step);
                for (((w, m), v), g) in params
                    .tensors_mut()
                    .into_iter()
                    .zip(m.tensors_mut())
                    .zip(v.tensors_mut())
                    .zip(grads.tensors())
                {
                    for (((w, m), v), g) in w.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g) {
                        *m = beta1 * *m + (1.0 - beta1) * g;
                        *v = beta2 * *v + (1.0 - beta2) * g * g;
                        *w -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                    }
                }
            }
            _ => unreachable!("optimizer state built from the same config"),
        }
    }
}

/// Mini-batch training on `split.train`, evaluating on both halves after
/// every epoch. `on_epoch` sees each epoch's metrics as they are produced.
///
/// Per-sample gradients are computed in parallel and summed in batch order,
/// so results do not depend on the thread count.
pub fn train(
    mut model: PredictorModel,
    split: &SplitDataset,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<(PredictorModel, TrainingHistory)> {
    let cfg = model.config;
    cfg.validate()?;
    for data in [&split.train, &split.test] {
        if data.n_sites != cfg.n_sites || data.window != cfg.window {
            return Err(CoreError::Shape {
                expected: format!("{}x{} samples", cfg.window, cfg.n_sites),
                found: format!("{}x{} samples", data.window, data.n_sites),
            });
        }
    }
    if split.train.is_empty() {
        return Err(CoreError::Domain("training set is empty".into()));
    }
    let mut state = OptState::new(cfg.optimizer, &model.params);
    let mut history = TrainingHistory::default();
    let mut order: Vec<usize> = (0..split.train.len()).collect();

    for _ in 0..cfg.epochs {
        let epoch = model.epochs_trained;
        order.shuffle(&mut rng_from_seed(derive_seed(cfg.init_seed ^ SHUFFLE_SALT, epoch as u64)));
        let dropout_base = derive_seed(cfg.init_seed ^ DROPOUT_SALT, epoch as u64);

        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let results = batch
                .par_iter()
                .map(|&i| {
                    let seed = (cfg.dropout_rate > 0.0).then(|| derive_seed(dropout_base, i as u64));
                    model.loss_and_gradient(&split.train.samples[i], seed)
                })
                .collect::<Result<Vec<_>>>()?;
            let mut grads = Params::zeros(&cfg);
            let mut batch_loss = 0.0;
            for (l, g) in &results {
                batch_loss += l;
                grads.add_assign(g);
            }
            let scale = 1.0 / batch.len() as f64;
            batch_loss *= scale;
            grads.scale(scale);
            if !batch_loss.is_finite() || !grads.is_finite() {
                return Err(CoreError::NonFiniteLoss {
                    loss: batch_loss,
                    epoch,
                    batch: b,
                });
            }
            if cfg.grad_clip > 0.0 {
                let norm = grads.norm();
                if norm > cfg.grad_clip {
                    grads.scale(cfg.grad_clip / norm);
                }
            }
            state.apply(cfg.optimizer, cfg.learning_rate, &mut model.params, &grads);
        }
        model.epochs_trained += 1;

        let tr = evaluate(&model, &split.train)?;
        let te = evaluate(&model, &split.test)?;
        let metrics = EpochMetrics {
            epoch: model.epochs_trained,
            train_loss: tr.loss,
            train_accuracy: tr.accuracy,
            test_loss: te.loss,
            test_accuracy: te.accuracy,
        };
        on_epoch(&metrics);
        history.epochs.push(metrics);
    }
    Ok((model, history))
}
