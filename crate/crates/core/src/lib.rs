//! Open-ended skill learning by representational redescription.
//!
//! The pipeline starts from a repertoire of parameterized motion primitives
//! built by quality-diversity search ([`qd`]), generalizes and adapts it to
//! unseen targets and perturbed dynamics with local linear models ([`adapt`]),
//! and then re-represents the acquired knowledge: as a target-conditional
//! generative model over controllers ([`gan`]), as a Tucker-factorized
//! knowledge base for cross-task transfer ([`transfer`]), as an associative
//! long-term memory ([`memory`]), and as skills shared between agents
//! ([`social`]). [`srl`] learns compact state representations from toy
//! observations.
//!
//! Every stochastic routine takes an explicit seed and is bit-reproducible.

pub mod adapt;
pub mod error;
pub mod gan;
pub mod io;
pub mod mathkit;
pub mod memory;
pub mod nn;
pub mod motion;
pub mod qd;
pub mod repertoire;
pub mod rng;
pub mod sim;
pub mod social;
pub mod srl;
pub mod transfer;

pub use error::{Error, Result};
pub use motion::{clamp, decode, eval_trajectory, ControllerParams, JointTrajectory, Outcome, ParamBounds, Skill};
pub use sim::{Environment, EnvironmentSpec, EnvKind, Obstacle, RealityGap};
pub use repertoire::{Archive, InsertResult};

/// Crate version recorded in output provenance.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
