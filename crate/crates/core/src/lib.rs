//! Domain-ordering experiments for continual intent recognition.
//!
//! The pipeline ingests per-domain intent examples ([`corpus`]), embeds
//! utterances and derives an inter-domain distance matrix ([`embed`]),
//! orders the domains of each subset along min-sum, max-sum or random
//! Hamiltonian paths ([`ordering`]), trains a learner domain by domain
//! ([`learner`]), scores each run with Average Accuracy and Average
//! Catastrophic Forgetting ([`metrics`]) and compares the ordering
//! strategies with ANOVA and Tukey HSD ([`stats`]). [`runner`] wires the
//! stages together behind the `domorder` CLI.

pub mod corpus;
pub mod embed;
pub mod error;
pub mod learner;
pub mod metrics;
pub mod ordering;
pub mod runner;
pub mod seed;
pub mod stats;

pub use error::{Error, Result};
