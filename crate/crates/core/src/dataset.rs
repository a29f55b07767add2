//! Supervised next-state samples cut from simulated trajectories, plus the
//! `TRMC0001` container format.
//!
//! File layout (all integers little-endian):
//!
//! | bytes            | content                                          |
//! |------------------|--------------------------------------------------|
//! | 8                | magic `TRMC0001`                                 |
//! | 8                | header length `H` as `u64`                       |
//! | `H`              | UTF-8 JSON header ([`DatasetHeader`])            |
//! | `payload_bytes`  | samples, back to back                            |
//!
//! Each sample is `window` input rows followed by one target row. A row is
//! `ceil(N / 8)` bytes; site `j` lives in byte `j / 8` at bit `7 - j % 8`
//! (most significant bit first) and unused trailing bits are zero.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::engine::{run_ensemble, DeltaMode, SimulationConfig};
use crate::error::{invalid, CoreError, Result};
use crate::model::ModelParams;
use crate::rng::rng_from_seed;
use crate::DATASET_FORMAT;

pub const GENERATOR_VERSION: &str = concat!("ringflow-core ", env!("CARGO_PKG_VERSION"));

/// One input window (`W x N`, row-major, row `t` is time `t`) and the state
/// at time `W`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Sample {
    pub input: Vec<u8>,
    pub target: Vec<u8>,
}

impl Sample {
    pub fn input_row(&self, t: usize) -> &[u8] {
        let n = self.target.len();
        &self.input[t * n..(t + 1) * n]
    }

    pub fn vehicle_count(&self) -> usize {
        self.target.iter().map(|&b| b as usize).sum()
    }
}

/// Everything needed to regenerate a dataset bit for bit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub params: ModelParams,
    pub delta_mode: DeltaMode,
    pub base_seed: u64,
    pub n_runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub n_sites: usize,
    pub window: usize,
    pub provenance: Option<Provenance>,
    pub generator: String,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(n_sites: usize, window: usize) -> Self {
        Self {
            n_sites,
            window,
            provenance: None,
            generator: GENERATOR_VERSION.to_string(),
            samples: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    fn subset(&self, indices: &[usize]) -> Self {
        Self {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            generator: self.generator.clone(),
            ..*self
        }
    }

    fn check_shapes(&self) -> Result<()> {
        for (k, s) in self.samples.iter().enumerate() {
            if s.target.len() != self.n_sites || s.input.len() != self.n_sites * self.window {
                return Err(CoreError::Shape {
                    expected: format!("{}x{} input, {} target", self.window, self.n_sites, self.n_sites),
                    found: format!("sample {k}: {} input, {} target", s.input.len(), s.target.len()),
                });
            }
        }
        Ok(())
    }

    /// Text dump: header `sample,row,kind,s0,...` then one line per row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("sample,row,kind");
        for j in 0..self.n_sites {
            out.push_str(&format!(",s{j}"));
        }
        out.push('\n');
        let line = |out: &mut String, k: usize, t: usize, kind: &str, row: &[u8]| {
            out.push_str(&format!("{k},{t},{kind}"));
            for b in row {
                out.push(',');
                out.push(if *b == 1 { '1' } else { '0' });
            }
            out.push('\n');
        };
        for (k, s) in self.samples.iter().enumerate() {
            for t in 0..self.window {
                line(&mut out, k, t, "input", s.input_row(t));
            }
            line(&mut out, k, self.window, "target", &s.target);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitDataset {
    pub train: Dataset,
    pub test: Dataset,
    pub ratio: f64,
    pub seed: u64,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
}

/// One sample per trajectory: `n_runs` simulations of `window` steps, rows
/// `0..window` form the input and row `window` the target.
pub fn generate_dataset(
    n_runs: usize,
    n_sites: usize,
    window: usize,
    params: &ModelParams,
    delta_mode: DeltaMode,
    base_seed: u64,
) -> Result<Dataset> {
    if window < 1 {
        return Err(invalid("window", "must be at least 1"));
    }
    let cfg = SimulationConfig {
        model: *params,
        n_sites,
        n_steps: window,
        seed: base_seed,
        delta_mode,
    };
    let runs = run_ensemble(&cfg, n_runs, base_seed)?;
    let samples = runs
        .into_iter()
        .map(|d| {
            let mut input = Vec::with_capacity(window * n_sites);
            for t in 0..window {
                input.extend_from_slice(d.row(t));
            }
            Sample {
                input,
                target: d.row(window).to_vec(),
            }
        })
        .collect();
    Ok(Dataset {
        n_sites,
        window,
        provenance: Some(Provenance {
            params: *params,
            delta_mode,
            base_seed,
            n_runs,
        }),
        generator: GENERATOR_VERSION.to_string(),
        samples,
    })
}

/// Regenerates a dataset from its recorded provenance.
pub fn regenerate(dataset: &Dataset) -> Result<Dataset> {
    let p = dataset
        .provenance
        .ok_or_else(|| CoreError::Domain("dataset has no provenance".into()))?;
    generate_dataset(p.n_runs, dataset.n_sites, dataset.window, &p.params, p.delta_mode, p.base_seed)
}

/// Uniform random partition by sample index with `round(ratio * len)` test
/// samples. Both halves keep the original sample order.
pub fn split(dataset: &Dataset, ratio: f64, seed: u64) -> Result<SplitDataset> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(invalid("ratio", format!("must lie in (0, 1), got {ratio}")));
    }
    let n = dataset.len();
    let n_test = (ratio * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_from_seed(seed));
    let mut test_indices = order[..n_test].to_vec();
    let mut train_indices = order[n_test..].to_vec();
    test_indices.sort_unstable();
    train_indices.sort_unstable();
    Ok(SplitDataset {
        train: dataset.subset(&train_indices),
        test: dataset.subset(&test_indices),
        ratio,
        seed,
        train_indices,
        test_indices,
    })
}

/// JSON header of a dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format: String,
    pub n_sites: usize,
    pub window: usize,
    pub count: usize,
    pub row_bytes: usize,
    pub payload_bytes: usize,
    pub endianness: String,
    pub bit_order: String,
    pub generator: String,
    pub provenance: Option<Provenance>,
}

pub(crate) fn pack_row(row: &[u8], out: &mut Vec<u8>) {
    for chunk in row.chunks(8) {
        let mut byte = 0u8;
        for (k, &b) in chunk.iter().enumerate() {
            byte |= (b & 1) << (7 - k);
        }
        out.push(byte);
    }
}

pub(crate) fn unpack_row(bytes: &[u8], n: usize, out: &mut Vec<u8>) {
    for j in 0..n {
        out.push((bytes[j / 8] >> (7 - j % 8)) & 1);
    }
}

/// Frames `magic | u64 header length | header | payload`.
pub(crate) fn write_container(magic: &str, header: &[u8], payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + header.len() + payload.len());
    out.extend_from_slice(magic.as_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(header);
    out.extend_from_slice(payload);
    out
}

/// Splits a container into header and payload, checking magic and framing.
pub(crate) fn read_container<'a>(magic: &str, bytes: &'a [u8]) -> Result<(&'a [u8], &'a [u8])> {
    if bytes.len() < magic.len() {
        return Err(CoreError::Truncated(format!("{} bytes, shorter than the magic", bytes.len())));
    }
    if &bytes[..magic.len()] != magic.as_bytes() {
        return Err(CoreError::BadMagic {
            expected: magic.into(),
            found: String::from_utf8_lossy(&bytes[..magic.len()]).into_owned(),
        });
    }
    let rest = &bytes[magic.len()..];
    if rest.len() < 8 {
        return Err(CoreError::Truncated("missing header length".into()));
    }
    let hlen = u64::from_le_bytes(rest[..8].try_into().expect("8 bytes")) as usize;
    let rest = &rest[8..];
    if rest.len() < hlen {
        return Err(CoreError::Truncated(format!(
            "header declares {hlen} bytes, {} present",
            rest.len()
        )));
    }
    Ok(rest.split_at(hlen))
}

/// Checks the payload length against the header's declaration and against
/// the length implied by the shape fields.
pub(crate) fn check_payload(declared: usize, implied: usize, actual: usize) -> Result<()> {
    if declared != implied {
        return Err(CoreError::LengthMismatch {
            declared,
            actual: implied,
        });
    }
    if actual < declared {
        return Err(CoreError::Truncated(format!(
            "payload has {actual} of {declared} bytes"
        )));
    }
    if actual > declared {
        return Err(CoreError::LengthMismatch { declared, actual });
    }
    Ok(())
}

pub fn encode_dataset(dataset: &Dataset) -> Result<Vec<u8>> {
    dataset.check_shapes()?;
    let row_bytes = dataset.n_sites.div_ceil(8);
    let mut payload = Vec::with_capacity(dataset.len() * (dataset.window + 1) * row_bytes);
    for s in &dataset.samples {
        for t in 0..dataset.window {
            pack_row(s.input_row(t), &mut payload);
        }
        pack_row(&s.target, &mut payload);
    }
    let header = DatasetHeader {
        format: DATASET_FORMAT.into(),
        n_sites: dataset.n_sites,
        window: dataset.window,
        count: dataset.len(),
        row_bytes,
        payload_bytes: payload.len(),
        endianness: "little".into(),
        bit_order: "msb-first".into(),
        generator: dataset.generator.clone(),
        provenance: dataset.provenance,
    };
    let header = serde_json::to_vec(&header).map_err(|e| CoreError::Header(e.to_string()))?;
    Ok(write_container(DATASET_FORMAT, &header, &payload))
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    let (header, payload) = read_container(DATASET_FORMAT, bytes)?;
    let header: DatasetHeader =
        serde_json::from_slice(header).map_err(|e| CoreError::Header(e.to_string()))?;
    let row_bytes = header.n_sites.div_ceil(8);
    if header.row_bytes != row_bytes {
        return Err(CoreError::Header(format!(
            "row_bytes {} inconsistent with {} sites",
            header.row_bytes, header.n_sites
        )));
    }
    let implied = header.count * (header.window + 1) * row_bytes;
    check_payload(header.payload_bytes, implied, payload.len())?;
    let n = header.n_sites;
    let samples = payload
        .chunks_exact(((header.window + 1) * row_bytes).max(1))
        .take(header.count)
        .map(|block| {
            let mut input = Vec::with_capacity(header.window * n);
            for t in 0..header.window {
                unpack_row(&block[t * row_bytes..(t + 1) * row_bytes], n, &mut input);
            }
            let mut target = Vec::with_capacity(n);
            unpack_row(&block[header.window * row_bytes..], n, &mut target);
            Sample { input, target }
        })
        .collect();
    Ok(Dataset {
        n_sites: header.n_sites,
        window: header.window,
        provenance: header.provenance,
        generator: header.generator,
        samples,
    })
}

pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_dataset(dataset)?)?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    decode_dataset(&fs::read(path)?)
}
