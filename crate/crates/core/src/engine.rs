//! Spin-exchange Metropolis dynamics on the ring.
//!
//! One time step is one sweep: sites are scanned in increasing index order
//! and every occupied site with an empty site ahead proposes to advance. A
//! proposal is accepted with probability `min(a0 * exp(-beta * E), 1)`,
//! where `E` is selected by [`DeltaMode`]. Updates are applied in place as
//! the scan proceeds. A site that took part in an exchange earlier in the
//! same sweep is not exchanged again, so every vehicle advances at most one
//! site per step.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagram::TimeSpaceDiagram;
use crate::error::{invalid, CoreError, Result};
use crate::model::{exchange_delta_unchecked, site_hamiltonian, ModelParams, RingConfiguration};
use crate::rng::{derive_seed, rng_from_seed};

/// Which energy enters the acceptance rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeltaMode {
    /// Change of the total Hamiltonian caused by the exchange.
    #[default]
    ExchangeDelta,
    /// Hamiltonian of the moving site before the exchange.
    LiteralSiteH,
}

impl fmt::Display for DeltaMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DeltaMode::ExchangeDelta => "exchange-delta",
            DeltaMode::LiteralSiteH => "literal-site-h",
        })
    }
}

impl FromStr for DeltaMode {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exchange-delta" => Ok(DeltaMode::ExchangeDelta),
            "literal-site-h" => Ok(DeltaMode::LiteralSiteH),
            other => Err(invalid("delta_mode", format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub model: ModelParams,
    pub n_sites: usize,
    pub n_steps: usize,
    pub seed: u64,
    pub delta_mode: DeltaMode,
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_sites < 2 {
            return Err(invalid("n_sites", format!("need at least 2 sites, got {}", self.n_sites)));
        }
        if self.n_steps < 1 {
            return Err(invalid("n_steps", "need at least one step"));
        }
        self.model.validate_for(self.n_sites)
    }
}

/// Occupied-site count used for a target density: `round(density * N)`.
pub fn vehicles_for_density(n_sites: usize, density: f64) -> usize {
    ((density * n_sites as f64).round() as usize).min(n_sites)
}

/// Places exactly `round(density * N)` vehicles on a uniformly random subset
/// of sites.
pub fn random_initial<R: Rng + ?Sized>(n_sites: usize, density: f64, rng: &mut R) -> Result<RingConfiguration> {
    if !(0.0..=1.0).contains(&density) {
        return Err(invalid("density", format!("must lie in [0, 1], got {density}")));
    }
    let mut cfg = RingConfiguration::empty(n_sites)?;
    let k = vehicles_for_density(n_sites, density);
    let mut chosen = index::sample(rng, n_sites, k).into_vec();
    chosen.sort_unstable();
    for i in chosen {
        cfg.set(i, crate::model::SiteState::Occupied);
    }
    Ok(cfg)
}

/// `min(a0 * exp(-beta * delta_h), 1)`.
pub fn acceptance_probability(delta_h: f64, params: &ModelParams) -> f64 {
    if params.beta == 0.0 {
        return params.a0.min(1.0);
    }
    let phi = params.a0 * (-params.beta * delta_h).exp();
    if phi.is_nan() {
        // only reachable for infinite delta_h
        return if delta_h > 0.0 { 0.0 } else { 1.0 };
    }
    phi.min(1.0)
}

/// Counters from one sweep.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SweepStats {
    pub proposals: usize,
    pub accepted: usize,
}

fn proposal_energy(config: &RingConfiguration, i: usize, params: &ModelParams, mode: DeltaMode) -> f64 {
    match mode {
        DeltaMode::ExchangeDelta => exchange_delta_unchecked(config, i, params),
        DeltaMode::LiteralSiteH => {
            site_hamiltonian(config, i, params).expect("look-ahead validated before the sweep")
        }
    }
}

/// One in-place sweep. The caller must have validated `params` for the ring.
pub fn sweep_in_place<R: Rng + ?Sized>(
    config: &mut RingConfiguration,
    params: &ModelParams,
    mode: DeltaMode,
    rng: &mut R,
) -> SweepStats {
    let n = config.len();
    let mut stats = SweepStats::default();
    let mut arrived = false;
    let mut first_touched = false;
    for i in 0..n {
        if arrived {
            // vehicle at i moved in during this sweep
            arrived = false;
            continue;
        }
        let ahead = (i + 1) % n;
        if config.get(i) != 1 || config.get(ahead) != 0 {
            continue;
        }
        if ahead == 0 && first_touched {
            continue;
        }
        stats.proposals += 1;
        let u: f64 = rng.random();
        let energy = proposal_energy(config, i, params, mode);
        if u < acceptance_probability(energy, params) {
            config.swap_forward(i);
            stats.accepted += 1;
            arrived = true;
            if i == 0 {
                first_touched = true;
            }
        }
    }
    stats
}

pub fn sweep<R: Rng + ?Sized>(
    config: &RingConfiguration,
    params: &ModelParams,
    mode: DeltaMode,
    rng: &mut R,
) -> Result<RingConfiguration> {
    params.validate_for(config.len())?;
    let mut next = config.clone();
    sweep_in_place(&mut next, params, mode, rng);
    Ok(next)
}

/// Runs `n_steps` sweeps from a random initial condition drawn from the
/// same stream.
pub fn simulate(cfg: &SimulationConfig) -> Result<TimeSpaceDiagram> {
    cfg.validate()?;
    let mut rng = rng_from_seed(cfg.seed);
    let mut state = random_initial(cfg.n_sites, cfg.model.density, &mut rng)?;
    Ok(evolve(state.clone(), &mut state, cfg, &mut rng))
}

/// Continues a trajectory from a given configuration with the stream seeded
/// by `cfg.seed`.
pub fn simulate_from(initial: &RingConfiguration, cfg: &SimulationConfig) -> Result<TimeSpaceDiagram> {
    let cfg = SimulationConfig {
        n_sites: initial.len(),
        ..*cfg
    };
    cfg.validate()?;
    let mut rng = rng_from_seed(cfg.seed);
    let mut state = initial.clone();
    Ok(evolve(initial.clone(), &mut state, &cfg, &mut rng))
}

fn evolve<R: Rng + ?Sized>(
    initial: RingConfiguration,
    state: &mut RingConfiguration,
    cfg: &SimulationConfig,
    rng: &mut R,
) -> TimeSpaceDiagram {
    let mut diagram = TimeSpaceDiagram::new(&initial);
    for _ in 0..cfg.n_steps {
        sweep_in_place(state, &cfg.model, cfg.delta_mode, rng);
        diagram.push(state).expect("sweep preserves ring size");
    }
    diagram
}

/// `n_runs` independent trajectories; run `k` uses `derive_seed(base_seed, k)`
/// in place of `cfg.seed`. Output order follows the run index.
pub fn run_ensemble(cfg: &SimulationConfig, n_runs: usize, base_seed: u64) -> Result<Vec<TimeSpaceDiagram>> {
    if n_runs < 1 {
        return Err(invalid("n_runs", "need at least one run"));
    }
    cfg.validate()?;
    (0..n_runs)
        .into_par_iter()
        .map(|k| {
            simulate(&SimulationConfig {
                seed: derive_seed(base_seed, k as u64),
                ..*cfg
            })
        })
        .collect()
}
