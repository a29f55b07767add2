//! Ising-type cellular-automaton traffic model on a closed ring road.
//!
//! The crate covers the whole pipeline: the lattice energy function
//! ([`model`]), Metropolis spin-exchange dynamics ([`engine`]), energy
//! distribution analysis across ring sizes ([`energy`]), supervised dataset
//! generation ([`dataset`]), and a convolutional-recurrent next-state
//! predictor ([`predictor`]).

pub mod dataset;
pub mod diagram;
pub mod energy;
pub mod engine;
pub mod error;
pub mod model;
pub mod predictor;
pub mod rng;

pub use diagram::{side_by_side, GrayImage, PgmFormat, TimeSpaceDiagram};
pub use engine::{
    acceptance_probability, random_initial, run_ensemble, simulate, simulate_from, sweep, DeltaMode,
    SimulationConfig,
};
pub use error::{CoreError, Result};
pub use model::{
    exchange_delta, interaction_coefficient, neighborhood, site_hamiltonian, total_hamiltonian,
    total_interaction_energy, ModelParams, RingConfiguration, SiteState,
};

/// On-disk format versions, embedded in file magics.
pub const DATASET_FORMAT: &str = "TRMC0001";
pub const CHECKPOINT_FORMAT: &str = "TRNN0001";
