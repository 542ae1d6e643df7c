//! Batch neuroevolution of 1-D retina-like spiking networks.
//!
//! The pipeline: genomes describing neuron types and their connectivity are
//! expressed into weight matrices, simulated as spiking networks on noisy
//! step-edge stimuli, and scored by how well a deliberately weak linear
//! readout recovers the edge location from RGC firing rates. A genetic
//! algorithm evolves the genomes; analysis routines export elite genomes,
//! fitness trajectories and RGC tuning curves.
//!
//! All randomness derives from a single root seed through counter-keyed
//! substreams, so results are byte-identical regardless of worker count and
//! runs can resume from checkpoints without drift.

pub mod analysis;
pub mod config;
pub mod dynamics;
pub mod evolution;
pub mod fitness;
pub mod genome;
pub mod matrix;
pub mod phenotype;
pub mod rng;
pub mod runner;
pub mod stimuli;

#[cfg(test)]
pub(crate) mod testutil;

pub use genome::{GaParams, Genome, Limits, TypeGene};
