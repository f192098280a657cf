//! Evolutionary multi-agent grid worlds and the learners that live in them.
//!
//! * [`world`]: seeded grid-world simulation (asexual and sexual variants).
//! * [`kinrew`]: kinship, kin-weighted rewards, effective horizon and the
//!   forward-simulated terminal reward.
//! * [`neural`]: small Q-networks with hand-written gradients.
//! * [`evdn`]: kin-weighted value decomposition trainer without replay.
//! * [`cmaes`]: CMA-ES baseline over network parameters.
//! * [`analytics`]: census metrics, evaluation protocols and experiments.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytics;
pub mod cmaes;
pub mod error;
pub mod evdn;
pub mod kinrew;
pub mod neural;
pub mod par;
pub mod world;

pub use error::{Error, Result};
