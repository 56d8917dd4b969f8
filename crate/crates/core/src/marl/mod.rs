//! Centralized-training, decentralized-execution PPO for the corridor.
//!
//! Every intersection runs the same actor on its own observation. A single
//! critic, trained by value regression, sees the whole corridor through the
//! hypergraph encoder; the encoder receives gradients only from that loss.

pub mod critic;
pub mod nets;
pub mod policy;
pub mod ppo;
pub mod rollout;
pub mod trainer;

pub use critic::{AblationConfig, Critic, CriticConfig, CriticSample};
pub use nets::Mlp2;
pub use policy::{act, entropy, greedy, joint_log_prob, sample_masked, PolicyNet};
pub use ppo::{
    advantages, critic_update, normalize, ppo_update, returns, ActorSample, ActorStats, CriticOptimizer, CriticStats,
    TrainConfig,
};
pub use rollout::{rollout, Transition, TransitionBatch, WINDOW_SPACING_S};
pub use trainer::{prepare, Agent, Trainer, UpdateLog};
