use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// One periodic convolution layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    /// Odd kernel width in sites.
    pub kernel_width: usize,
    pub channels: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Optimizer {
    /// Heavy-ball SGD: `v = m v - lr g; w += v`.
    Momentum { momentum: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Momentum { momentum: 0.9 }
    }
}

/// Architecture and training hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictorConfig {
    pub n_sites: usize,
    pub window: usize,
    pub conv: [ConvSpec; 2],
    /// Feature width of the per-site fully connected input layer.
    pub dense_in: usize,
    pub dropout_rate: f64,
    pub lstm_hidden: usize,
    /// Weight of the vehicle-count penalty in the loss.
    pub alpha: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub init_seed: u64,
    pub optimizer: Optimizer,
    /// Global gradient-norm clip; `0` disables clipping.
    pub grad_clip: f64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            n_sites: 50,
            window: 30,
            conv: [
                ConvSpec {
                    kernel_width: 5,
                    channels: 16,
                },
                ConvSpec {
                    kernel_width: 5,
                    channels: 16,
                },
            ],
            dense_in: 64,
            dropout_rate: 0.25,
            lstm_hidden: 64,
            alpha: 0.01,
            learning_rate: 0.05,
            epochs: 200,
            batch_size: 32,
            init_seed: 0,
            optimizer: Optimizer::default(),
            grad_clip: 5.0,
        }
    }
}

impl PredictorConfig {
    /// A narrow network (about 1.2k weights) trained with Adam and a weak
    /// count penalty. Six epochs on 800 samples of a 50-site ring take about
    /// a minute on one core.
    pub fn compact() -> Self {
        let conv = ConvSpec {
            kernel_width: 7,
            channels: 8,
        };
        Self {
            conv: [conv, conv],
            dense_in: 4,
            lstm_hidden: 8,
            alpha: 0.001,
            learning_rate: 0.01,
            epochs: 6,
            init_seed: 1,
            optimizer: Optimizer::adam(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_sites < 2 || self.window < 1 {
            return Err(invalid("shape", format!("{}x{} window", self.window, self.n_sites)));
        }
        for (k, c) in self.conv.iter().enumerate() {
            if c.kernel_width % 2 == 0 || c.kernel_width >= self.n_sites {
                return Err(invalid(
                    "kernel_width",
                    format!("layer {k}: width {} must be odd and < {}", c.kernel_width, self.n_sites),
                ));
            }
            if c.channels < 1 {
                return Err(invalid("channels", format!("layer {k} needs at least one channel")));
            }
        }
        if self.dense_in < 1 || self.lstm_hidden < 1 {
            return Err(invalid("width", "dense_in and lstm_hidden must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(invalid("dropout_rate", format!("must lie in [0, 1), got {}", self.dropout_rate)));
        }
        if !self.alpha.is_finite() {
            return Err(invalid("alpha", "must be finite"));
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(invalid("learning_rate", "must be positive"));
        }
        if self.batch_size < 1 {
            return Err(invalid("batch_size", "must be >= 1"));
        }
        if self.grad_clip.is_nan() || self.grad_clip < 0.0 {
            return Err(invalid("grad_clip", "must be >= 0"));
        }
        Ok(())
    }
}
