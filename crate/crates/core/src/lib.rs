//! Finite-horizon safety shields for discrete MDP agents with imperfect,
//! conformalized perception.
//!
//! The pipeline: parse a perfect-perception model ([`model`]), synthesise the
//! unsafety table and shields ([`shield`]), calibrate set-valued perception
//! ([`conformal`]), compile the shielded imperfect-perception system into an
//! abstract MDP ([`abstraction`]) and evaluate fail/stuck/success
//! probabilities over horizons ([`checker`]). [`sim`] cross-checks the
//! compiled numbers by Monte-Carlo and [`theorem`] exercises the global
//! safety bound of perfect-perception shields.

pub mod abstraction;
pub mod case_study;
pub mod checker;
pub mod conformal;
pub mod error;
pub mod experiment;
pub mod fmt;
pub mod mdp;
pub mod model;
pub mod shield;
pub mod sim;
pub mod stateset;
pub mod theorem;

pub use error::{Error, Result};
pub use mdp::{ActionId, ExplicitMdp, StateId};
pub use stateset::StateSet;
