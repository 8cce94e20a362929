//! Hierarchy-of-groups policy optimization at desk scale.
//!
//! Rollout steps of one task group are partitioned by how much of their state
//! history they share ([`grouping`]); group-relative advantages are computed
//! per level and aggregated with depth-increasing weights ([`estimators`]);
//! a tabular softmax policy ([`policy`]) is trained with a clipped surrogate
//! objective ([`optimizer`]) on environments whose observations alias the
//! agent's hidden state ([`envs`]).

pub mod cli_io;
pub mod diagnostics;
pub mod envs;
pub mod error;
pub mod estimators;
pub mod grouping;
pub mod optimizer;
pub mod policy;
pub mod rng;
pub mod rollout;

pub use error::{HgpoError, Result};
