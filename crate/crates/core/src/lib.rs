//! Sampling inputs to a black-box deterministic model so that the model's
//! output follows a prescribed density.
//!
//! The standard Metropolis-Hastings rule evaluated on outputs only makes the
//! chain target `f(h(x))` on inputs, which does not push forward to `f` when
//! `h` is many-to-one or distorts volume. The probed rule divides the target
//! by the density `f_Q` of `h(U)` for `U` uniform on a bounded input box, so
//! the input chain targets `f(h(x)) / f_Q(h(x))` and its pushforward is `f`.
//!
//! Modules:
//! - [`mcmc`]: the sampler, proposal kernels and chain driver.
//! - [`discrete`]: exact finite-state transition matrices used as an oracle.
//! - [`probing`]: uniform probing of a model and kernel density estimation of `f_Q`.
//! - [`sde`]: Euler-discretized SDE paths as a forward model (increments to innovations).
//! - [`analysis`]: histograms, autocorrelation, distances, KS statistics and ESS.

// `!(x > 0.0)` is used deliberately so that NaN lands on the error path.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod discrete;
pub mod error;
pub mod mcmc;
pub mod models;
pub mod probing;
pub mod sde;

pub use error::{Error, Result};
pub use mcmc::{
    chain_rng, ChainConfig, ChainDiagnostics, ChainRun, ChainState, ForwardModel, LogDensity,
    ProposalKernel, RandomWalk, Sampler, StepOutcome, UpdateMode,
};
pub use probing::{InputBox, KdeModel, ProbeMatrix};
pub use sde::SdePathModel;
