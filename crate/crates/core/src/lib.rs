//! Conformal prediction and scenario optimization with sample discarding.
//!
//! - [`bounds`]: binomial tails, Beta laws, expectation bounds and sample-size calculators.
//! - [`engine`]: linear scenario programs, support sets, cascade discarding, the order program.
//! - [`conformal`]: nonconformity measures, the vanilla set predictor and its quantiles.
//! - [`validation`]: seeded Monte Carlo experiments checking each guarantee against exact values.
//! - [`exact`]: rational evaluation of the binomial sums.
//! - [`cli`]: the `scenconf` command.

pub mod bounds;
pub mod cli;
pub mod conformal;
pub mod engine;
pub mod exact;
pub mod validation;
