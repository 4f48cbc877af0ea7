//! Federated-learning simulator with a core-selecting incentive mechanism.
//!
//! The crate models a data-sharing game between `n` participants and a
//! coordinating server. Each round, participants train local models, the
//! server aggregates models per coalition, builds the characteristic
//! function from coalition accuracies, computes VCG surpluses, and solves a
//! core-selecting quadratic program (exact over all coalitions, or
//! approximate over a sampled subset) to allocate payments. Reputations
//! accumulate observable surplus and weight the next round's aggregation.
//!
//! Module map:
//! - [`datasets`]: synthetic/CSV data, participant partitioning, input strategies
//! - [`learning`]: logistic-regression and MLP classifiers with local SGD
//! - [`game`]: coalitions, valuations, characteristic tables, VCG surplus
//! - [`qp`]: dense convex quadratic-program solver (ADMM with active-set polish)
//! - [`core_select`]: core-selecting programs, coalition sampling, core accuracy
//! - [`mechanism`]: round orchestration, reputation-weighted aggregation, reports

pub mod core_select;
pub mod datasets;
pub mod error;
pub mod game;
pub mod learning;
pub mod mechanism;
pub mod qp;
pub mod rng;

pub use error::{Error, Result};
