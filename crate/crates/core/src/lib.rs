//! Robust MDPs over L1 ambiguity sets with high-confidence lower bounds on
//! the true return of the computed policy.
//!
//! The crate builds ambiguity sets from logged transition data in four ways:
//! frequentist Hoeffding balls ([`freq`]), their monotone-value variant,
//! Bayesian credible balls around the posterior mean ([`bayes`]), and sets
//! adapted to a growing family of candidate value functions ([`rsvf`]).
//! [`robust`] solves the resulting robust MDPs, [`domains`] provides the
//! benchmark problems and [`experiments`] replicates the full
//! data-to-estimate pipeline.

pub mod bayes;
pub mod domains;
pub mod error;
pub mod experiments;
pub mod freq;
pub mod io;
pub mod lp;
pub mod mdp;
pub mod robust;
pub mod rsvf;
pub mod seed;

pub use error::{Error, Result};
pub use mdp::{Dataset, Policy, TabularMdp, ValueFunction};
