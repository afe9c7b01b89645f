//! Gaussian multi-armed bandits with ReMax policies.
//!
//! ReMax picks its sampling distribution by maximizing the expected maximum
//! of independent posterior draws, either exactly via a quadratic program on
//! the pairwise expected-max matrix ([`remax_exact`]) or by stochastic
//! gradient ascent on order statistics of posterior samples ([`remax_grad`]).
//! [`harness`] runs replicated experiments against Thompson sampling and
//! Gaussian KL-UCB and writes per-round aggregates as CSV.

pub mod gauss;
pub mod harness;
pub mod instances;
mod linalg;
pub mod policies;
pub mod remax_exact;
pub mod remax_grad;
pub mod verify;

pub use harness::{AggregateSeries, HarnessError, MetricTrace, RunConfig};
pub use instances::{BanditInstance, InstanceError};
pub use policies::{ArmEstimate, PolicyConfig, PolicyError, PolicyKind, PolicyState};
pub use remax_exact::{KktCertificate, PairwiseMaxMatrix, ProbabilityVector};
