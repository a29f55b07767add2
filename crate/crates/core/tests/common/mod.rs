//! Oracles shared by the integration tests. Each one is written against
//! the definitions directly, not against the library's implementation.
#![allow(dead_code)]

use rand::Rng;
use ringflow_core::dataset::Sample;
use ringflow_core::predictor::{loss, ConvSpec, PredictorConfig, PredictorModel, TENSOR_NAMES};
use ringflow_core::rng::rng_from_seed;

/// Interaction energy as a direct double sum over every site and every
/// forward offset `1..look_ahead`, coupling `k0 / d^2`.
pub fn oracle_energy(bits: &[u8], k0: f64, look_ahead: usize) -> f64 {
    let n = bits.len();
    let mut e = 0.0;
    for i in 0..n {
        for d in 1..look_ahead {
            let j = (i + d) % n;
            e -= k0 / (d * d) as f64 * f64::from(bits[i]) * f64::from(bits[j]);
        }
    }
    e
}

/// Number of occupied pairs `(i, i + d)` for each `d` in `1..look_ahead`.
fn pair_counts(bits: &[u8], look_ahead: usize) -> Vec<i64> {
    let n = bits.len();
    (1..look_ahead)
        .map(|d| (0..n).filter(|&i| bits[i] == 1 && bits[(i + d) % n] == 1).count() as i64)
        .collect()
}

/// Energy change of moving the vehicle at `i` to `i + 1`, from a full
/// recount of occupied pairs before and after. The pair counts are exact
/// integers, so the only rounding happens in the final weighted sum.
pub fn oracle_delta(bits: &[u8], i: usize, k0: f64, look_ahead: usize) -> f64 {
    let mut after = bits.to_vec();
    after.swap(i, (i + 1) % bits.len());
    let (b, a) = (pair_counts(bits, look_ahead), pair_counts(&after, look_ahead));
    -k0 * b
        .iter()
        .zip(&a)
        .enumerate()
        .map(|(k, (b, a))| (a - b) as f64 / ((k + 1) * (k + 1)) as f64)
        .sum::<f64>()
}

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;

pub fn tiny_config() -> PredictorConfig {
    PredictorConfig {
        n_sites: 8,
        window: 4,
        conv: [
            ConvSpec {
                kernel_width: 3,
                channels: 3,
            },
            ConvSpec {
                kernel_width: 5,
                channels: 2,
            },
        ],
        dense_in: 3,
        lstm_hidden: 3,
        alpha: 0.05,
        dropout_rate: 0.25,
        init_seed: 4,
        ..PredictorConfig::default()
    }
}

pub fn random_sample(cfg: &PredictorConfig, seed: u64) -> Sample {
    let mut rng = rng_from_seed(seed);
    let n = cfg.n_sites;
    Sample {
        input: (0..cfg.window * n).map(|_| rng.random_range(0..2u8)).collect(),
        target: (0..n).map(|_| rng.random_range(0..2u8)).collect(),
    }
}

/// Loss recomputed through the public forward pass only.
fn objective(model: &PredictorModel, sample: &Sample, mask_seed: Option<u64>) -> f64 {
    let p = model.forward(&sample.input, mask_seed).unwrap();
    loss(&p, &sample.target, model.config.alpha, sample.vehicle_count()).unwrap()
}

/// Per-tensor relative L2 error between the analytic gradient and central
/// finite differences.
pub fn gradient_errors(model: &PredictorModel, sample: &Sample, mask_seed: Option<u64>) -> Vec<(&'static str, f64)> {
    let (_, analytic) = model.loss_and_gradient(sample, mask_seed).unwrap();
    let mut probe = model.clone();
    let mut out = Vec::new();
    for (k, name) in TENSOR_NAMES.iter().enumerate() {
        let len = probe.params.tensors()[k].len();
        let mut numeric = vec![0.0; len];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let orig = probe.params.tensors()[k][j];
            probe.params.tensors_mut()[k][j] = orig + FD_STEP;
            let up = objective(&probe, sample, mask_seed);
            probe.params.tensors_mut()[k][j] = orig - FD_STEP;
            let down = objective(&probe, sample, mask_seed);
            probe.params.tensors_mut()[k][j] = orig;
            *slot = (up - down) / (2.0 * FD_STEP);
        }
        let a = analytic.tensors()[k];
        let diff: f64 = a.iter().zip(&numeric).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nn: f64 = numeric.iter().map(|x| x * x).sum::<f64>().sqrt();
        out.push((*name, diff / na.max(nn).max(1e-12)));
    }
    out
}
