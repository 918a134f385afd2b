//! Online reinforcement-learning fine-tuning from offline data in linear MDPs.
//!
//! The crate is organized around a tabular-backed linear MDP model
//! ([`mdp_core`]), exact feature-visitation dynamic programming
//! ([`visitation`]), offline datasets and coverage coefficients ([`offline`]),
//! Frank-Wolfe experiment design over covariance matrices ([`design`]), the
//! FTPedel policy-elimination algorithm ([`ftpedel`]), verifiable offline
//! learning and policy verification ([`verify`]), and generators for the
//! benchmark instance families ([`instances`]).
//!
//! Every stochastic operation takes an explicit [`rng::SplitRng`], so whole
//! experiment pipelines are bit-reproducible from a single seed.

pub mod design;
pub mod error;
pub mod ftpedel;
pub mod instances;
pub mod linalg;
pub mod mdp_core;
pub mod offline;
pub mod rng;
pub mod verify;
pub mod visitation;

pub use error::{Error, Result};
