use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::PredictorConfig;
use crate::rng::rng_from_seed;

/// Every trainable tensor, stored flat in row-major order.
///
/// LSTM gate blocks are stacked in the order input, forget, cell, output;
/// `lstm_wx` is `4H x C2`, `lstm_wh` is `4H x H`. Conv kernels are
/// `out x in x width`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub dense_w: Vec<f64>,
    pub dense_b: Vec<f64>,
    pub conv1_w: Vec<f64>,
    pub conv1_b: Vec<f64>,
    pub conv2_w: Vec<f64>,
    pub conv2_b: Vec<f64>,
    pub lstm_wx: Vec<f64>,
    pub lstm_wh: Vec<f64>,
    pub lstm_b: Vec<f64>,
    pub out_w: Vec<f64>,
    pub out_b: Vec<f64>,
}

pub const TENSOR_NAMES: [&str; 11] = [
    "dense_w", "dense_b", "conv1_w", "conv1_b", "conv2_w", "conv2_b", "lstm_wx", "lstm_wh", "lstm_b",
    "out_w", "out_b",
];

impl Params {
    pub fn zeros(cfg: &PredictorConfig) -> Self {
        let shapes = Self::shapes(cfg);
        let z = |k: usize| vec![0.0; shapes[k].iter().product()];
        Self {
            dense_w: z(0),
            dense_b: z(1),
            conv1_w: z(2),
            conv1_b: z(3),
            conv2_w: z(4),
            conv2_b: z(5),
            lstm_wx: z(6),
            lstm_wh: z(7),
            lstm_b: z(8),
            out_w: z(9),
            out_b: z(10),
        }
    }

    /// Shapes in [`TENSOR_NAMES`] order.
    pub fn shapes(cfg: &PredictorConfig) -> [Vec<usize>; 11] {
        let d = cfg.dense_in;
        let [c1, c2] = cfg.conv;
        let h = cfg.lstm_hidden;
        [
            vec![d],
            vec![d],
            vec![c1.channels, d, c1.kernel_width],
            vec![c1.channels],
            vec![c2.channels, c1.channels, c2.kernel_width],
            vec![c2.channels],
            vec![4 * h, c2.channels],
            vec![4 * h, h],
            vec![4 * h],
            vec![h],
            vec![1],
        ]
    }

    /// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` weights, zero biases,
    /// forget-gate bias 1.
    pub fn init(cfg: &PredictorConfig) -> Self {
        let mut p = Self::zeros(cfg);
        let mut rng = rng_from_seed(cfg.init_seed);
        let [c1, c2] = cfg.conv;
        let h = cfg.lstm_hidden;
        let mut fill = |w: &mut Vec<f64>, fan_in: usize| {
            let a = 1.0 / (fan_in as f64).sqrt();
            w.iter_mut().for_each(|v| *v = rng.random_range(-a..a));
        };
        fill(&mut p.dense_w, 1);
        fill(&mut p.conv1_w, cfg.dense_in * c1.kernel_width);
        fill(&mut p.conv2_w, c1.channels * c2.kernel_width);
        fill(&mut p.lstm_wx, c2.channels + h);
        fill(&mut p.lstm_wh, c2.channels + h);
        fill(&mut p.out_w, h);
        p.lstm_b[h..2 * h].iter_mut().for_each(|v| *v = 1.0);
        p
    }

    pub fn tensors(&self) -> [&Vec<f64>; 11] {
        [
            &self.dense_w,
            &self.dense_b,
            &self.conv1_w,
            &self.conv1_b,
            &self.conv2_w,
            &self.conv2_b,
            &self.lstm_wx,
            &self.lstm_wh,
            &self.lstm_b,
            &self.out_w,
            &self.out_b,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<f64>; 11] {
        [
            &mut self.dense_w,
            &mut self.dense_b,
            &mut self.conv1_w,
            &mut self.conv1_b,
            &mut self.conv2_w,
            &mut self.conv2_b,
            &mut self.lstm_wx,
            &mut self.lstm_wh,
            &mut self.lstm_b,
            &mut self.out_w,
            &mut self.out_b,
        ]
    }

    pub fn len(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn add_assign(&mut self, other: &Params) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= s);
        }
    }

    pub fn norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }
}
