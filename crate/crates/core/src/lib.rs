//! Experience rating with a hidden Markov frequency-severity model.
//!
//! Claim counts follow a Negative-Binomial and claim sizes a GB2 distribution,
//! each mixed over a latent risk profile that evolves as a Markov chain across
//! contract periods.

pub mod dependence;
pub mod distributions;
pub mod error;
pub mod estimation;
pub mod evaluation;
pub mod hmm;
pub mod numeric;
pub mod portfolio;
pub mod pricing;
pub mod simulate;
pub mod special;

pub use error::{Error, Result};
