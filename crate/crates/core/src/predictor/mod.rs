//! Convolutional-recurrent next-state predictor.
//!
//! Maps a `W x N` window of ring occupancies to per-site probabilities that
//! each site is occupied at the next step. See [`network`] for the layer
//! stack; [`train()`] runs mini-batch gradient descent on the penalized
//! cross-entropy in [`loss()`].

mod checkpoint;
mod config;
pub mod network;
mod params;
mod train;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CheckpointHeader};
pub use config::{ConvSpec, Optimizer, PredictorConfig};
pub use params::{Params, TENSOR_NAMES};
pub use train::{evaluate, train, EpochMetrics, Evaluation, TrainingHistory};

use serde::{Deserialize, Serialize};

use crate::dataset::Sample;
use crate::diagram::TimeSpaceDiagram;
use crate::error::{CoreError, Result};
use network::Dims;

/// Probabilities are clamped to `[EPS, 1 - EPS]` before taking logs.
pub const EPS: f64 = 1e-7;

/// Binarization threshold for accuracy and rollout: `p >= 0.5` means occupied.
pub const THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorModel {
    pub config: PredictorConfig,
    pub params: Params,
    /// Completed training epochs; with `config.init_seed` this fixes the
    /// dropout and shuffling streams of any further training.
    pub epochs_trained: usize,
}

impl PredictorModel {
    pub fn new(config: PredictorConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            params: Params::init(&config),
            config,
            epochs_trained: 0,
        })
    }

    /// A model whose weights and biases are all zero.
    pub fn zeroed(config: PredictorConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            params: Params::zeros(&config),
            config,
            epochs_trained: 0,
        })
    }

    pub(crate) fn dims(&self) -> Dims {
        Dims::new(&self.config)
    }

    fn check_input(&self, input: &[u8]) -> Result<()> {
        let (w, n) = (self.config.window, self.config.n_sites);
        if input.len() != w * n {
            return Err(CoreError::Shape {
                expected: format!("{w}x{n} = {} values", w * n),
                found: format!("{} values", input.len()),
            });
        }
        Ok(())
    }

    /// Per-site occupancy probabilities for the step after `input`
    /// (`W x N`, row-major). `dropout_seed = None` is inference; `Some(s)`
    /// applies a training-mode dropout mask drawn from stream `s`.
    pub fn forward(&self, input: &[u8], dropout_seed: Option<u64>) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let dropout = dropout_seed.map(|s| (self.config.dropout_rate, s));
        Ok(network::forward(&self.params, self.dims(), input, dropout).probs)
    }

    pub fn predict(&self, input: &[u8]) -> Result<Vec<f64>> {
        self.forward(input, None)
    }

    /// Loss of one sample and its gradient with respect to every parameter.
    pub fn loss_and_gradient(&self, sample: &Sample, dropout_seed: Option<u64>) -> Result<(f64, Params)> {
        self.check_input(&sample.input)?;
        if sample.target.len() != self.config.n_sites {
            return Err(CoreError::Shape {
                expected: format!("{} targets", self.config.n_sites),
                found: format!("{} targets", sample.target.len()),
            });
        }
        let dims = self.dims();
        let dropout = dropout_seed.map(|s| (self.config.dropout_rate, s));
        let trace = network::forward(&self.params, dims, &sample.input, dropout);
        let n_vehicle = sample.vehicle_count() as f64;
        let value = loss_unchecked(&trace.probs, &sample.target, self.config.alpha, n_vehicle);
        let dlogits = loss_logit_gradient(&trace.probs, &sample.target, self.config.alpha);
        let mut grads = Params::zeros(&self.config);
        network::backward(&self.params, dims, &trace, &dlogits, &mut grads);
        Ok((value, grads))
    }
}

fn loss_unchecked(pred: &[f64], target: &[u8], alpha: f64, n_vehicle: f64) -> f64 {
    let n = pred.len() as f64;
    let mut bce = 0.0;
    for (&p, &y) in pred.iter().zip(target) {
        let pc = p.clamp(EPS, 1.0 - EPS);
        bce -= if y == 1 { pc.ln() } else { (1.0 - pc).ln() };
    }
    let mass: f64 = pred.iter().sum();
    bce / n + alpha * (n_vehicle - mass)
}

/// Derivative of [`loss`] with respect to each pre-sigmoid logit.
fn loss_logit_gradient(pred: &[f64], target: &[u8], alpha: f64) -> Vec<f64> {
    let n = pred.len() as f64;
    pred.iter()
        .zip(target)
        .map(|(&p, &y)| {
            let bce = if (EPS..=1.0 - EPS).contains(&p) {
                (p - y as f64) / n
            } else {
                0.0
            };
            bce - alpha * p * (1.0 - p)
        })
        .collect()
}

/// Mean binary cross-entropy plus `alpha * (n_vehicle - sum_i p_i)`.
pub fn loss(pred: &[f64], target: &[u8], alpha: f64, n_vehicle: usize) -> Result<f64> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(CoreError::Shape {
            expected: format!("{} predictions", target.len()),
            found: format!("{} predictions", pred.len()),
        });
    }
    Ok(loss_unchecked(pred, target, alpha, n_vehicle as f64))
}

/// Fraction of sites whose thresholded prediction equals the target.
pub fn accuracy(pred: &[f64], target: &[u8]) -> Result<f64> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(CoreError::Shape {
            expected: format!("{} predictions", target.len()),
            found: format!("{} predictions", pred.len()),
        });
    }
    let hits = pred
        .iter()
        .zip(target)
        .filter(|(&p, &y)| binarize(p) == y)
        .count();
    Ok(hits as f64 / pred.len() as f64)
}

pub fn binarize(p: f64) -> u8 {
    u8::from(p >= THRESHOLD)
}

/// Recursive forecast: predict the next row from the last `W` rows,
/// threshold it, append it, and repeat `horizon` times. The result holds
/// the seed rows followed by the predicted rows.
pub fn rollout(model: &PredictorModel, seed_window: &TimeSpaceDiagram, horizon: usize) -> Result<TimeSpaceDiagram> {
    let (w, n) = (model.config.window, model.config.n_sites);
    if seed_window.n_sites() != n || seed_window.n_rows() != w {
        return Err(CoreError::Shape {
            expected: format!("{w}x{n} seed window"),
            found: format!("{}x{}", seed_window.n_rows(), seed_window.n_sites()),
        });
    }
    let mut out = seed_window.clone();
    let mut window: Vec<u8> = seed_window.rows().flatten().copied().collect();
    for _ in 0..horizon {
        let next: Vec<u8> = model.predict(&window)?.into_iter().map(binarize).collect();
        out.push_bits(&next)?;
        window.drain(..n);
        window.extend_from_slice(&next);
    }
    Ok(out)
}
