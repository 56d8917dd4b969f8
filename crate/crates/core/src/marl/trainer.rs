//! Episode-level training loop and model checkpoints.

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::env::{RewardConfig, OBS_WIDTH};
use crate::error::{Error, Result};
use crate::numeric::checkpoint;
use crate::numeric::{Adam, ParamSet, Tensor};
use crate::sim::{load_scenario, SimConfig};

use super::critic::{AblationConfig, Critic, CriticConfig, CriticSample};
use super::nets::Mlp2;
use super::policy::PolicyNet;
use super::ppo::{
    advantages, critic_update, normalize, ppo_update, returns, ActorSample, CriticOptimizer, TrainConfig,
};
use super::rollout::{rollout, TransitionBatch};

/// Shared actor plus centralized critic.
#[derive(Debug, Clone, PartialEq)]
pub struct Agent {
    pub policy: PolicyNet,
    pub critic: Critic,
}

impl Agent {
    pub fn new(intersections: usize, ablation: AblationConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let policy = PolicyNet::new(OBS_WIDTH, &mut rng);
        let critic = Critic::new(CriticConfig::corridor(intersections, ablation), &mut rng)?;
        Ok(Self { policy, critic })
    }

    pub fn ablation(&self) -> AblationConfig {
        self.critic.config.ablation
    }

    fn entries(&self) -> Vec<(String, Tensor)> {
        let c = &self.critic.config;
        let flag = |b: bool| if b { 1.0 } else { 0.0 };
        let mut out = vec![
            (
                "meta.ablation".to_string(),
                Tensor::row(c.ablation.flags().map(flag).to_vec()),
            ),
            (
                "meta.critic".to_string(),
                Tensor::row(vec![
                    c.intersections as f64,
                    c.window as f64,
                    c.feature_width as f64,
                    c.heads as f64,
                    c.model_width as f64,
                    c.hidden as f64,
                    c.tau,
                ]),
            ),
        ];
        let mut push = |p: &ParamSet| {
            out.extend(p.iter().map(|(n, t)| (n.to_string(), t.clone())));
        };
        push(&self.policy.net.params);
        push(&self.critic.head.params);
        if let Some(e) = &self.critic.encoder {
            push(&e.params);
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, &self.entries())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_entries(checkpoint::load(path)?)
    }

    pub fn from_entries(entries: Vec<(String, Tensor)>) -> Result<Self> {
        let find = |name: &str| {
            entries
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t.clone())
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))
        };
        let flags = find("meta.ablation")?;
        let meta = find("meta.critic")?;
        if flags.len() != 4 || meta.len() != 7 {
            return Err(Error::Checkpoint("malformed metadata".into()));
        }
        let f = flags.data();
        let ablation = AblationConfig::from_flags([f[0] != 0.0, f[1] != 0.0, f[2] != 0.0, f[3] != 0.0]);
        let m = meta.data();
        let config = CriticConfig {
            ablation,
            intersections: m[0] as usize,
            window: m[1] as usize,
            feature_width: m[2] as usize,
            heads: m[3] as usize,
            model_width: m[4] as usize,
            hidden: m[5] as usize,
            tau: m[6],
        };
        let group = |prefix: &str| {
            let mut p = ParamSet::new();
            for (n, t) in &entries {
                if n.starts_with(prefix) {
                    p.push(n.clone(), t.clone());
                }
            }
            p
        };
        let policy = PolicyNet {
            net: Mlp2::from_params(group("actor."))?,
        };
        let head = Mlp2::from_params(group("critic."))?;
        let enc = group("enc.");
        let enc = (!enc.is_empty()).then_some(enc);
        let critic = Critic::from_parts(config, enc, head)?;
        Ok(Self { policy, critic })
    }
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateLog {
    pub update: usize,
    /// Mean unscaled per-decision reward of the episode.
    pub mean_reward: f64,
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub entropy: f64,
    /// Mean pre-clip actor gradient norm.
    pub grad_norm: f64,
    pub decisions: usize,
}

impl UpdateLog {
    pub const CSV_HEADER: &'static str = "update,mean_reward,actor_loss,critic_loss,entropy,grad_norm";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.update, self.mean_reward, self.actor_loss, self.critic_loss, self.entropy, self.grad_norm
        )
    }

    pub fn is_finite(&self) -> bool {
        [
            self.mean_reward,
            self.actor_loss,
            self.critic_loss,
            self.entropy,
            self.grad_norm,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// Builds actor and critic samples from a collected batch.
pub fn prepare(
    batch: &TransitionBatch,
    critic: &Critic,
    cfg: &TrainConfig,
    n_agents: usize,
) -> Result<(Vec<ActorSample>, Vec<CriticSample>)> {
    let values: Vec<f64> = batch
        .critic_inputs
        .iter()
        .map(|x| critic.value(x))
        .collect::<Result<_>>()?;
    let mut ret = vec![0.0; batch.len()];
    for agent in 0..n_agents {
        let stream = batch.agent_stream(agent);
        let rewards: Vec<f64> = stream
            .iter()
            .map(|&k| cfg.reward_scale * batch.transitions[k].reward)
            .collect();
        for (&k, r) in stream.iter().zip(returns(&rewards, cfg.gamma)) {
            ret[k] = r;
        }
    }
    let v: Vec<f64> = batch.transitions.iter().map(|t| values[t.input]).collect();
    let mut adv = advantages(&ret, &v)?;
    if cfg.normalize_advantages {
        normalize(&mut adv);
    }
    let actor = batch
        .transitions
        .iter()
        .zip(&adv)
        .map(|(t, &a)| ActorSample {
            obs: t.obs.clone(),
            mask: t.mask(),
            action: t.action,
            logp_old: t.logp,
            advantage: a,
        })
        .collect();
    let critic_samples = batch
        .transitions
        .iter()
        .zip(&ret)
        .map(|(t, &r)| CriticSample {
            input: t.input,
            target: r,
        })
        .collect();
    Ok((actor, critic_samples))
}

pub struct Trainer {
    pub agent: Agent,
    pub cfg: TrainConfig,
    pub reward: RewardConfig,
    pub sim: SimConfig,
    actor_opt: Adam,
    critic_opt: CriticOptimizer,
    rng: ChaCha8Rng,
    seed: u64,
    updates: usize,
}

impl Trainer {
    pub fn new(sim: SimConfig, ablation: AblationConfig, cfg: TrainConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        sim.validate()?;
        let agent = Agent::new(sim.network.intersections, ablation, seed)?;
        Ok(Self {
            agent,
            reward: RewardConfig::default(),
            actor_opt: Adam::new(cfg.lr),
            critic_opt: CriticOptimizer::new(cfg.lr),
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x005e_ed0f_7a11),
            cfg,
            sim,
            seed,
            updates: 0,
        })
    }

    pub fn updates(&self) -> usize {
        self.updates
    }

    /// Simulator seed of training episode `k`; evaluation uses other seeds.
    pub fn episode_seed(&self, k: usize) -> u64 {
        self.seed.wrapping_mul(1_000_003).wrapping_add(k as u64)
    }

    /// Collects one episode and applies one actor and one critic update.
    pub fn train_episode(&mut self) -> Result<UpdateLog> {
        let mut world = load_scenario(&self.sim, self.episode_seed(self.updates))?;
        let horizon = self.sim.scenario.horizon_s;
        let batch = rollout(
            &mut world,
            &self.agent.policy,
            &self.agent.critic,
            horizon,
            &self.reward,
            &mut self.rng,
        )?;
        let n = self.sim.network.intersections;
        let (actor_samples, critic_samples) = prepare(&batch, &self.agent.critic, &self.cfg, n)?;
        let a = ppo_update(
            &mut self.agent.policy,
            &mut self.actor_opt,
            &actor_samples,
            &self.cfg,
            &mut self.rng,
        )?;
        let c = critic_update(
            &mut self.agent.critic,
            &mut self.critic_opt,
            &batch.critic_inputs,
            &critic_samples,
            &self.cfg,
            &mut self.rng,
        )?;
        let mean_reward = batch.transitions.iter().map(|t| t.reward).sum::<f64>() / batch.len() as f64;
        let log = UpdateLog {
            update: self.updates,
            mean_reward,
            actor_loss: a.loss,
            critic_loss: c.loss,
            entropy: a.entropy,
            grad_norm: a.grad_norm,
            decisions: batch.len(),
        };
        if !log.is_finite() || !self.agent.policy.net.params.all_finite() {
            return Err(Error::NonFinite(format!("update {}", self.updates)));
        }
        self.updates += 1;
        Ok(log)
    }

    /// Runs `episodes` updates, streaming the log as CSV when `out` is given.
    pub fn train(&mut self, episodes: usize, mut out: Option<&mut dyn Write>) -> Result<Vec<UpdateLog>> {
        if let Some(w) = out.as_deref_mut() {
            if self.updates == 0 {
                writeln!(w, "{}", UpdateLog::CSV_HEADER)?;
            }
        }
        let mut logs = Vec::with_capacity(episodes);
        for _ in 0..episodes {
            let log = self.train_episode()?;
            if let Some(w) = out.as_deref_mut() {
                writeln!(w, "{}", log.csv_row())?;
                w.flush()?;
            }
            logs.push(log);
        }
        Ok(logs)
    }
}
