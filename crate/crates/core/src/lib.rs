//! Coalition matching equilibria, maximum-rank estimation and subsidy
//! counterfactuals for one-sided, one-to-many merger markets with
//! transferable utility.

pub mod de;
pub mod equilibrium;
pub mod estimator;
pub mod inequalities;
pub mod inference;
pub mod montecarlo;
pub mod counterfactual;
pub mod io;
pub mod error;
pub mod model;
pub mod rng;
pub mod simplex;
pub mod stats;

pub use error::{Error, Result};
