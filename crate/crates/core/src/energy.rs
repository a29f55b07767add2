//! Interaction-energy distributions across ring sizes.
//!
//! Random fixed-density configurations are drawn at several ring sizes and
//! their interaction energies normalized so that distributions from
//! different sizes can be overlaid and compared with a two-sample
//! Kolmogorov-Smirnov statistic and a histogram L1 distance.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::random_initial;
use crate::error::{invalid, CoreError, Result};
use crate::model::{total_interaction_energy, ModelParams};
use crate::rng::{derive_seed, rng_from_seed};

/// Upper bound on the number of histogram bins.
pub const MAX_BINS: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergySample {
    pub n_sites: usize,
    pub density: f64,
    pub energies: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// Energy divided by the number of sites.
    PerSite,
    /// Standardized to zero mean and unit (population) standard deviation.
    #[serde(rename = "zscore", alias = "z-score")]
    ZScore,
    /// Per-site energy, then standardized.
    #[default]
    #[serde(rename = "per-site-zscore")]
    PerSiteZScore,
}

impl fmt::Display for Normalization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Normalization::PerSite => "per-site",
            Normalization::ZScore => "zscore",
            Normalization::PerSiteZScore => "per-site-zscore",
        })
    }
}

impl FromStr for Normalization {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-site" => Ok(Normalization::PerSite),
            "zscore" | "z-score" => Ok(Normalization::ZScore),
            "per-site-zscore" => Ok(Normalization::PerSiteZScore),
            other => Err(invalid("normalization", format!("unknown mode {other:?}"))),
        }
    }
}

/// Fixed-edge histogram; `edges.len() == counts.len() + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    /// Bins `values` into the given edges. Bins are half-open `[l, r)` except
    /// the last, which also holds its right edge. Values outside the edges
    /// are clamped into the first or last bin.
    pub fn with_edges(values: &[f64], edges: Vec<f64>) -> Result<Self> {
        if edges.len() < 2 || edges.windows(2).any(|w| w[1].is_nan() || w[1] <= w[0]) {
            return Err(CoreError::Domain("histogram edges must be strictly increasing".into()));
        }
        let nbins = edges.len() - 1;
        let mut counts = vec![0u64; nbins];
        for &v in values {
            let idx = edges.partition_point(|&e| e <= v);
            counts[idx.saturating_sub(1).min(nbins - 1)] += 1;
        }
        Ok(Self { edges, counts })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Count divided by `total * bin_width`; integrates to one.
    pub fn densities(&self) -> Vec<f64> {
        let total = self.total() as f64;
        self.counts
            .iter()
            .zip(self.edges.windows(2))
            .map(|(&c, w)| if total > 0.0 { c as f64 / (total * (w[1] - w[0])) } else { 0.0 })
            .collect()
    }

    pub fn area(&self) -> f64 {
        self.densities()
            .iter()
            .zip(self.edges.windows(2))
            .map(|(d, w)| d * (w[1] - w[0]))
            .sum()
    }

    fn masses(&self) -> Vec<f64> {
        let total = self.total().max(1) as f64;
        self.counts.iter().map(|&c| c as f64 / total).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedDistribution {
    pub n_sites: usize,
    pub normalization: Normalization,
    pub values: Vec<f64>,
    pub histogram: Histogram,
}

/// KS statistic (in `[0, 1]`) and histogram L1 distance (in `[0, 2]`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DivergenceReport {
    pub ks: f64,
    pub l1: f64,
}

/// Interaction energies of `n_samples` independent random configurations.
/// Sample `k` is drawn from the stream `derive_seed(seed, k)`.
pub fn sample_energies(
    n_sites: usize,
    density: f64,
    n_samples: usize,
    params: &ModelParams,
    seed: u64,
) -> Result<EnergySample> {
    if n_samples < 1 {
        return Err(invalid("n_samples", "need at least one sample"));
    }
    params.validate_for(n_sites)?;
    let energies = (0..n_samples)
        .into_par_iter()
        .map(|k| {
            let mut rng = rng_from_seed(derive_seed(seed, k as u64));
            let cfg = random_initial(n_sites, density, &mut rng)?;
            total_interaction_energy(&cfg, params)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(EnergySample {
        n_sites,
        density,
        energies,
    })
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn normalized_values(sample: &EnergySample, mode: Normalization) -> Result<Vec<f64>> {
    if sample.energies.is_empty() {
        return Err(CoreError::Domain("empty energy sample".into()));
    }
    let scale = match mode {
        Normalization::ZScore => 1.0,
        _ => 1.0 / sample.n_sites as f64,
    };
    let mut values: Vec<f64> = sample.energies.iter().map(|e| e * scale).collect();
    if mode != Normalization::PerSite {
        let (mean, std) = mean_std(&values);
        if std.is_nan() || std <= 1e-12 * mean.abs().max(1.0) {
            return Err(CoreError::DegenerateVariance(format!(
                "{} samples at N = {} have zero variance",
                values.len(),
                sample.n_sites
            )));
        }
        values.iter_mut().for_each(|v| *v = (*v - mean) / std);
        // second pass removes the rounding residue of the first
        let (mean, std) = mean_std(&values);
        values.iter_mut().for_each(|v| *v = (*v - mean) / std);
    }
    Ok(values)
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Freedman-Diaconis edges spanning all values of all groups.
pub fn freedman_diaconis_edges(groups: &[&[f64]]) -> Vec<f64> {
    let mut pooled: Vec<f64> = groups.iter().flat_map(|g| g.iter().copied()).collect();
    pooled.sort_by(f64::total_cmp);
    let (lo, hi) = (pooled[0], pooled[pooled.len() - 1]);
    if hi <= lo {
        return vec![lo - 0.5, lo + 0.5];
    }
    let iqr = quantile(&pooled, 0.75) - quantile(&pooled, 0.25);
    let width = 2.0 * iqr / (pooled.len() as f64).cbrt();
    let nbins = if width > 0.0 {
        (((hi - lo) / width).ceil() as usize).clamp(1, MAX_BINS)
    } else {
        // Sturges fallback for a zero IQR
        ((pooled.len() as f64).log2().ceil() as usize + 1).clamp(1, MAX_BINS)
    };
    let step = (hi - lo) / nbins as f64;
    let mut edges: Vec<f64> = (0..=nbins).map(|k| lo + step * k as f64).collect();
    edges[nbins] = hi;
    edges
}

/// Normalizes one sample and bins it with Freedman-Diaconis edges computed
/// from that sample alone.
pub fn normalize(sample: &EnergySample, mode: Normalization) -> Result<NormalizedDistribution> {
    let values = normalized_values(sample, mode)?;
    let edges = freedman_diaconis_edges(&[&values]);
    Ok(NormalizedDistribution {
        n_sites: sample.n_sites,
        normalization: mode,
        histogram: Histogram::with_edges(&values, edges)?,
        values,
    })
}

/// Normalizes every sample and bins all of them on one shared set of
/// Freedman-Diaconis edges computed from the pooled values.
pub fn normalize_all(samples: &[EnergySample], mode: Normalization) -> Result<Vec<NormalizedDistribution>> {
    let values = samples
        .iter()
        .map(|s| normalized_values(s, mode))
        .collect::<Result<Vec<_>>>()?;
    let groups: Vec<&[f64]> = values.iter().map(Vec::as_slice).collect();
    let edges = freedman_diaconis_edges(&groups);
    samples
        .iter()
        .zip(values)
        .map(|(s, v)| {
            Ok(NormalizedDistribution {
                n_sites: s.n_sites,
                normalization: mode,
                histogram: Histogram::with_edges(&v, edges.clone())?,
                values: v,
            })
        })
        .collect()
}

/// Two-sample Kolmogorov-Smirnov statistic `sup_x |F_a(x) - F_b(x)|`.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut sup: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        sup = sup.max((i as f64 / na - j as f64 / nb).abs());
    }
    sup
}

/// KS statistic on the raw values plus the L1 distance between histogram
/// masses on Freedman-Diaconis edges shared by both inputs.
pub fn compare_distributions(a: &NormalizedDistribution, b: &NormalizedDistribution) -> Result<DivergenceReport> {
    if a.normalization != b.normalization {
        return Err(CoreError::NormalizationMismatch(
            a.normalization.to_string(),
            b.normalization.to_string(),
        ));
    }
    if a.values.is_empty() || b.values.is_empty() {
        return Err(CoreError::Domain("cannot compare empty distributions".into()));
    }
    let edges = freedman_diaconis_edges(&[&a.values, &b.values]);
    let ha = Histogram::with_edges(&a.values, edges.clone())?;
    let hb = Histogram::with_edges(&b.values, edges)?;
    let l1 = ha
        .masses()
        .iter()
        .zip(hb.masses())
        .map(|(x, y)| (x - y).abs())
        .sum();
    Ok(DivergenceReport {
        ks: ks_statistic(&a.values, &b.values),
        l1,
    })
}

/// Writes `bin_left,bin_right,count,density` rows with a header line.
pub fn export_histogram(dist: &NormalizedDistribution, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if path.as_os_str().is_empty() {
        return Err(CoreError::Io(std::io::Error::new(
            std::io::ErrorKind::InvalidInput,
            "empty output path",
        )));
    }
    fs::write(path, histogram_csv(&dist.histogram))?;
    Ok(())
}

pub fn histogram_csv(h: &Histogram) -> String {
    let mut out = String::from("bin_left,bin_right,count,density\n");
    for ((w, c), d) in h.edges.windows(2).zip(&h.counts).zip(h.densities()) {
        out.push_str(&format!("{:e},{:e},{},{:e}\n", w[0], w[1], c, d));
    }
    out
}

/// Reads a histogram written by [`export_histogram`].
pub fn read_histogram(path: impl AsRef<Path>) -> Result<Histogram> {
    let text = fs::read_to_string(path)?;
    let mut edges = Vec::new();
    let mut counts = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        let bad = || CoreError::Header(format!("line {}: malformed histogram row", n + 1));
        if fields.len() != 4 {
            return Err(bad());
        }
        let left: f64 = fields[0].parse().map_err(|_| bad())?;
        let right: f64 = fields[1].parse().map_err(|_| bad())?;
        if edges.is_empty() {
            edges.push(left);
        }
        edges.push(right);
        counts.push(fields[2].parse().map_err(|_| bad())?);
    }
    Ok(Histogram { edges, counts })
}

/// Symmetric matrix of pairwise reports, indexed like `dists`.
pub fn divergence_matrix(dists: &[NormalizedDistribution]) -> Result<Vec<Vec<DivergenceReport>>> {
    let n = dists.len();
    let mut m = vec![vec![DivergenceReport { ks: 0.0, l1: 0.0 }; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let r = compare_distributions(&dists[i], &dists[j])?;
            m[i][j] = r;
            m[j][i] = r;
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_names_agree_between_text_and_serde() {
        for m in [Normalization::PerSite, Normalization::ZScore, Normalization::PerSiteZScore] {
            let json = serde_json::to_string(&m).unwrap();
            assert_eq!(json, format!("\"{m}\""));
            assert_eq!(m.to_string().parse::<Normalization>().unwrap(), m);
        }
    }

    fn dist(values: Vec<f64>) -> NormalizedDistribution {
        let edges = freedman_diaconis_edges(&[&values]);
        NormalizedDistribution {
            n_sites: 1,
            normalization: Normalization::PerSite,
            histogram: Histogram::with_edges(&values, edges).unwrap(),
            values,
        }
    }

    #[test]
    fn ks_reference_values() {
        assert_eq!(ks_statistic(&[1.0, 2.0, 3.0, 4.0], &[2.0, 1.0, 4.0, 3.0]), 0.0);
        assert!((ks_statistic(&[1.0, 1.0, 4.0, 4.0], &[1.0, 1.0, 1.0, 4.0]) - 0.25).abs() < 1e-12);
        assert_eq!(ks_statistic(&[0.0, 0.5], &[2.0, 3.0, 4.0]), 1.0);
    }

    #[test]
    fn compare_identical_and_disjoint() {
        let a = dist(vec![0.1, 0.2, 0.3, 0.7]);
        let r = compare_distributions(&a, &a).unwrap();
        assert_eq!(r.ks, 0.0);
        assert_eq!(r.l1, 0.0);
        let b = dist(vec![5.0, 6.0, 7.0]);
        let r = compare_distributions(&a, &b).unwrap();
        assert_eq!(r.ks, 1.0);
        assert!((r.l1 - 2.0).abs() < 1e-12);
    }

    #[test]
    fn compare_rejects_mode_mismatch() {
        let a = dist(vec![0.0, 1.0]);
        let mut b = a.clone();
        b.normalization = Normalization::ZScore;
        assert!(matches!(
            compare_distributions(&a, &b),
            Err(CoreError::NormalizationMismatch(_, _))
        ));
    }

    #[test]
    fn degenerate_samples() {
        let p = ModelParams::default();
        let empty = sample_energies(30, 0.0, 20, &p, 1).unwrap();
        assert!(empty.energies.iter().all(|&e| e == 0.0));
        let per_site = normalize(&empty, Normalization::PerSite).unwrap();
        assert!(per_site.values.iter().all(|&v| v == 0.0));
        assert!(matches!(
            normalize(&empty, Normalization::ZScore),
            Err(CoreError::DegenerateVariance(_))
        ));

        let full = sample_energies(30, 1.0, 5, &p, 1).unwrap();
        let expected = -30.0 * (1.0 + 0.25 + 1.0 / 9.0 + 0.0625);
        assert!(full.energies.iter().all(|&e| (e - expected).abs() < 1e-12));
        let per_site = normalize(&full, Normalization::PerSite).unwrap();
        assert!(per_site.values.iter().all(|&v| (v + 1.423_611_111_111_111).abs() < 1e-12));
        assert!(normalize(&full, Normalization::PerSiteZScore).is_err());
    }

    #[test]
    fn zscore_moments() {
        let p = ModelParams::default();
        let s = sample_energies(60, 0.5, 500, &p, 9).unwrap();
        for mode in [Normalization::ZScore, Normalization::PerSiteZScore] {
            let d = normalize(&s, mode).unwrap();
            let (m, sd) = mean_std(&d.values);
            assert!(m.abs() < 1e-9 && (sd - 1.0).abs() < 1e-9, "{mode}: {m} {sd}");
        }
    }

    #[test]
    fn histogram_conserves_count_and_area() {
        let p = ModelParams::default();
        let s = sample_energies(30, 0.5, 3200, &p, 2).unwrap();
        let d = normalize(&s, Normalization::PerSiteZScore).unwrap();
        assert_eq!(d.histogram.total(), 3200);
        assert!((d.histogram.area() - 1.0).abs() < 1e-9);
        assert!(s.energies.iter().all(|&e| e <= 0.0));
    }

    #[test]
    fn sampling_is_deterministic() {
        let p = ModelParams::default();
        let a = sample_energies(40, 0.5, 50, &p, 3).unwrap();
        assert_eq!(a, sample_energies(40, 0.5, 50, &p, 3).unwrap());
        assert!(sample_energies(40, 0.5, 0, &p, 3).is_err());
    }

    #[test]
    fn normalization_names_round_trip() {
        for m in [Normalization::PerSite, Normalization::ZScore, Normalization::PerSiteZScore] {
            assert_eq!(m.to_string().parse::<Normalization>().unwrap(), m);
        }
        assert!("bogus".parse::<Normalization>().is_err());
    }

    #[test]
    fn export_and_read_back() {
        let dir = tempfile::tempdir().unwrap();
        let d = dist(vec![0.0, 0.1, 0.1, 0.5, 0.9, 1.0]);
        let path = dir.path().join("h.csv");
        export_histogram(&d, &path).unwrap();
        let h = read_histogram(&path).unwrap();
        assert_eq!(h.counts, d.histogram.counts);
        assert_eq!(h.edges, d.histogram.edges);
        assert!(export_histogram(&d, "").is_err());
    }
}
