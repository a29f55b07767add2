//! Lattice state and the energy function of the ring-road traffic model.
//!
//! Vehicles occupy sites of a periodic one-dimensional lattice. Each occupied
//! site interacts with occupied sites strictly ahead of it (increasing index,
//! wrapping modulo `N`) up to, but excluding, the look-ahead distance. The
//! pair coupling decays with the inverse square of the ring distance.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, CoreError, Result};

/// Occupancy of one lattice site.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum SiteState {
    Empty = 0,
    Occupied = 1,
}

impl SiteState {
    pub fn from_bit(bit: u8) -> Result<Self> {
        match bit {
            0 => Ok(SiteState::Empty),
            1 => Ok(SiteState::Occupied),
            other => Err(CoreError::Domain(format!("site value {other} is not 0 or 1"))),
        }
    }

    pub fn bit(self) -> u8 {
        self as u8
    }
}

/// Occupancy of all `N` sites of a closed single-lane ring.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RingConfiguration {
    sites: Vec<u8>,
}

impl RingConfiguration {
    /// A ring of `n` empty sites.
    pub fn empty(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(invalid("n_sites", format!("need at least 2 sites, got {n}")));
        }
        Ok(Self { sites: vec![0; n] })
    }

    pub fn from_bits(bits: &[u8]) -> Result<Self> {
        if bits.len() < 2 {
            return Err(invalid("n_sites", format!("need at least 2 sites, got {}", bits.len())));
        }
        if let Some(pos) = bits.iter().position(|&b| b > 1) {
            return Err(CoreError::Domain(format!(
                "site {pos} has value {}, expected 0 or 1",
                bits[pos]
            )));
        }
        Ok(Self {
            sites: bits.to_vec(),
        })
    }

    /// Ring of `n` sites with vehicles at the given positions (taken modulo `n`).
    pub fn with_vehicles(n: usize, positions: &[usize]) -> Result<Self> {
        let mut cfg = Self::empty(n)?;
        for &p in positions {
            cfg.sites[p % n] = 1;
        }
        Ok(cfg)
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    /// Occupancy bit at `i`, with periodic indexing.
    #[inline]
    pub fn get(&self, i: usize) -> u8 {
        self.sites[i % self.sites.len()]
    }

    pub fn state(&self, i: usize) -> SiteState {
        if self.get(i) == 1 {
            SiteState::Occupied
        } else {
            SiteState::Empty
        }
    }

    pub fn set(&mut self, i: usize, state: SiteState) {
        let n = self.sites.len();
        self.sites[i % n] = state.bit();
    }

    pub fn bits(&self) -> &[u8] {
        &self.sites
    }

    pub fn into_bits(self) -> Vec<u8> {
        self.sites
    }

    pub fn vehicle_count(&self) -> usize {
        self.sites.iter().map(|&s| s as usize).sum()
    }

    /// Indices of occupied sites in increasing order.
    pub fn vehicles(&self) -> Vec<usize> {
        self.sites
            .iter()
            .enumerate()
            .filter_map(|(i, &s)| (s == 1).then_some(i))
            .collect()
    }

    /// Swaps the states of sites `i` and `i + 1` (mod N).
    pub fn swap_forward(&mut self, i: usize) {
        let n = self.sites.len();
        self.sites.swap(i % n, (i + 1) % n);
    }

    /// Cyclic shift: the site at index `i` moves to `i + shift`.
    pub fn rotated(&self, shift: usize) -> Self {
        let n = self.sites.len();
        let mut sites = vec![0; n];
        for (i, &s) in self.sites.iter().enumerate() {
            sites[(i + shift) % n] = s;
        }
        Self { sites }
    }
}

/// Physical constants of the model plus the target vehicle density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Base interaction strength.
    pub k0: f64,
    /// External field coefficient.
    pub b: f64,
    /// Look-ahead distance in sites (one site is 5 m).
    pub look_ahead: usize,
    /// Inverse-temperature-like constant of the acceptance rule.
    pub beta: f64,
    /// Pre-exponential factor of the acceptance rule.
    pub a0: f64,
    pub density: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            k0: 1.0,
            b: 1.0,
            look_ahead: 5,
            beta: 1.0,
            a0: 1.0,
            density: 0.5,
        }
    }
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        if !self.k0.is_finite() {
            return Err(invalid("k0", "must be finite"));
        }
        if !self.b.is_finite() {
            return Err(invalid("b", "must be finite"));
        }
        if self.look_ahead < 1 {
            return Err(invalid("look_ahead", "must be at least 1"));
        }
        if self.beta.is_nan() || self.beta < 0.0 {
            return Err(invalid("beta", format!("must be >= 0, got {}", self.beta)));
        }
        if !(self.a0 > 0.0 && self.a0 <= 1.0) {
            return Err(invalid("a0", format!("must lie in (0, 1], got {}", self.a0)));
        }
        if !(0.0..=1.0).contains(&self.density) {
            return Err(invalid("density", format!("must lie in [0, 1], got {}", self.density)));
        }
        Ok(())
    }

    /// Validates the parameters against a ring of `n` sites.
    pub fn validate_for(&self, n: usize) -> Result<()> {
        self.validate()?;
        if self.look_ahead >= n {
            return Err(CoreError::Domain(format!(
                "look-ahead {} must be smaller than the ring size {n}",
                self.look_ahead
            )));
        }
        Ok(())
    }
}

/// Sites strictly ahead of `i` with ring distance in `[1, look_ahead)`,
/// nearest first.
pub fn neighborhood(config: &RingConfiguration, i: usize, look_ahead: usize) -> Result<Vec<usize>> {
    let n = config.len();
    if i >= n {
        return Err(CoreError::Domain(format!("site index {i} out of range for {n} sites")));
    }
    if look_ahead < 1 || look_ahead >= n {
        return Err(CoreError::Domain(format!(
            "look-ahead {look_ahead} must lie in [1, {n})"
        )));
    }
    Ok((1..look_ahead).map(|d| (i + d) % n).collect())
}

/// Pair coupling `K0 / d^2` for a ring distance `d >= 1`.
pub fn interaction_coefficient(distance: usize, k0: f64) -> Result<f64> {
    if distance < 1 {
        return Err(CoreError::Domain("interaction distance must be >= 1".into()));
    }
    let d = distance as f64;
    Ok(k0 / (d * d))
}

#[inline]
fn coupling(distance: usize, params: &ModelParams) -> f64 {
    if distance >= 1 && distance < params.look_ahead {
        let d = distance as f64;
        params.k0 / (d * d)
    } else {
        0.0
    }
}

/// Interaction part of the site energy: `-sum_j K_ij S_i S_j` over the
/// forward neighborhood.
fn site_interaction(config: &RingConfiguration, i: usize, params: &ModelParams) -> f64 {
    if config.get(i) == 0 {
        return 0.0;
    }
    let mut acc = 0.0;
    for d in 1..params.look_ahead {
        if config.get(i + d) == 1 {
            acc += coupling(d, params);
        }
    }
    -acc
}

/// Energy of site `i`: `-B S_i - sum_j K_ij S_i S_j`.
pub fn site_hamiltonian(config: &RingConfiguration, i: usize, params: &ModelParams) -> Result<f64> {
    let n = config.len();
    if i >= n {
        return Err(CoreError::Domain(format!("site index {i} out of range for {n} sites")));
    }
    if params.look_ahead < 1 || params.look_ahead >= n {
        return Err(CoreError::Domain(format!(
            "look-ahead {} must lie in [1, {n})",
            params.look_ahead
        )));
    }
    if config.get(i) == 0 {
        return Ok(0.0);
    }
    Ok(-params.b + site_interaction(config, i, params))
}

/// Interaction energy summed over all sites; the external-field term is
/// excluded. Each ordered (site, neighbor) pair is counted once.
pub fn total_interaction_energy(config: &RingConfiguration, params: &ModelParams) -> Result<f64> {
    params.validate_for(config.len())?;
    Ok((0..config.len())
        .map(|i| site_interaction(config, i, params))
        .sum())
}

/// Sum of `site_hamiltonian` over every site, field term included.
pub fn total_hamiltonian(config: &RingConfiguration, params: &ModelParams) -> Result<f64> {
    let interaction = total_interaction_energy(config, params)?;
    Ok(interaction - params.b * config.vehicle_count() as f64)
}

/// Change of the total Hamiltonian when the vehicle at `i` advances to
/// `i + 1` (mod N). Only pairs involving the moving vehicle change.
pub fn exchange_delta(config: &RingConfiguration, i: usize, params: &ModelParams) -> Result<f64> {
    let n = config.len();
    if i >= n {
        return Err(CoreError::Domain(format!("site index {i} out of range for {n} sites")));
    }
    if params.look_ahead < 1 || params.look_ahead >= n {
        return Err(CoreError::Domain(format!(
            "look-ahead {} must lie in [1, {n})",
            params.look_ahead
        )));
    }
    let (occupied, ahead) = (config.get(i), config.get(i + 1));
    if occupied != 1 || ahead != 0 {
        return Err(CoreError::IllegalExchange {
            site: i,
            occupied,
            ahead,
        });
    }
    Ok(exchange_delta_unchecked(config, i, params))
}

/// `exchange_delta` without argument checks; the caller guarantees a legal
/// (1, 0) pair and a valid look-ahead.
pub(crate) fn exchange_delta_unchecked(config: &RingConfiguration, i: usize, params: &ModelParams) -> f64 {
    let n = config.len();
    let from = i;
    let to = (i + 1) % n;
    let fwd = |a: usize, b: usize| (b + n - a) % n;
    let pair = |x: usize, p: usize| coupling(fwd(x, p), params) + coupling(fwd(p, x), params);

    let mut delta = 0.0;
    let mut visit = |p: usize| {
        if p != from && p != to && config.get(p) == 1 {
            // interaction energy is minus the coupling sum
            delta += pair(from, p) - pair(to, p);
        }
    };
    let reach = params.look_ahead;
    if 2 * reach + 2 >= n {
        (0..n).for_each(&mut visit);
    } else {
        // vehicles further than `reach` from both endpoints contribute nothing
        for off in 1..=reach {
            visit((from + n - off) % n);
            visit((to + off) % n);
        }
    }
    delta
}
