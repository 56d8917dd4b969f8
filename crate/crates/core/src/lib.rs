//! Multimodal corridor traffic-signal control laboratory.
//!
//! * [`numeric`]: tensors, reverse-mode autodiff, gradient checks, Adam, checkpoints.
//! * [`hypergraph`]: spatio-temporal hypergraph and its incidence matrix.
//! * [`encoder`]: dual-stage hypergraph attention producing a graph-level embedding.
//! * [`sim`]: seeded point-queue corridor simulator with cars, buses and trams.
//! * [`env`]: observations, the 152-way phase/green action codec, and rewards.
//! * [`marl`]: shared actor, hypergraph critic, rollouts and clipped PPO.
//! * [`baselines`]: Webster fixed-time plans and a uniform random policy.
//! * [`eval`]: metrics, ablation switches, experiment runs and CSV output.

pub mod baselines;
pub mod encoder;
pub mod env;
pub mod error;
pub mod eval;
pub mod hypergraph;
pub mod marl;
pub mod numeric;
pub mod sim;

pub use error::{Error, Result};
