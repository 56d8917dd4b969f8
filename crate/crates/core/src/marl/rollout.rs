//! Trigger-gated experience collection over one simulated episode.

use rand::Rng;

use crate::env::{action_mask, compute_reward, decode_action, observe_all, FeatureWindow, RewardConfig};
use crate::error::Result;
use crate::numeric::Tensor;
use crate::sim::{Phase, SimWorld, StepRecord};

use super::critic::Critic;
use super::policy::{act, PolicyNet};

/// Seconds between snapshots in the critic's window.
pub const WINDOW_SPACING_S: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub agent: usize,
    /// Decision time, s.
    pub time: u32,
    /// Normalized observation the action was chosen from.
    pub obs: Vec<f64>,
    /// Phase shown when deciding; it determines the action mask.
    pub phase: Phase,
    pub action: usize,
    pub logp: f64,
    /// Reward over the interval until this agent's next decision.
    pub reward: f64,
    /// Index into [`TransitionBatch::critic_inputs`].
    pub input: usize,
    pub done: bool,
}

impl Transition {
    pub fn mask(&self) -> Vec<bool> {
        action_mask(self.phase)
    }
}

#[derive(Debug, Clone, Default)]
pub struct TransitionBatch {
    pub transitions: Vec<Transition>,
    /// One critic input per distinct decision instant.
    pub critic_inputs: Vec<Tensor>,
    /// Per-second record of the episode.
    pub log: Vec<StepRecord>,
}

impl TransitionBatch {
    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    /// Transition indices of `agent` in decision order.
    pub fn agent_stream(&self, agent: usize) -> Vec<usize> {
        (0..self.transitions.len())
            .filter(|&k| self.transitions[k].agent == agent)
            .collect()
    }
}

/// Runs `world` for `horizon` seconds. Only agents whose trigger is raised
/// choose a new action; the others keep their running phase.
pub fn rollout<R: Rng>(
    world: &mut SimWorld,
    policy: &PolicyNet,
    critic: &Critic,
    horizon: u32,
    reward: &RewardConfig,
    rng: &mut R,
) -> Result<TransitionBatch> {
    let n = world.num_intersections();
    let mut batch = TransitionBatch::default();
    if horizon == 0 {
        return Ok(batch);
    }
    let mut window = FeatureWindow::new(critic.config.window, WINDOW_SPACING_S, critic.config.feature_width)?;
    let mut open: Vec<Option<usize>> = vec![None; n];
    let start = world.time();
    for _ in 0..horizon {
        let now = world.time();
        let obs = observe_all(world);
        if critic.config.ablation.hg {
            window.push(&obs);
        }
        let triggered: Vec<usize> = (0..n).filter(|&i| world.controllers()[i].trigger()).collect();
        if !triggered.is_empty() {
            let input = critic.input(|| window.node_features(), &obs)?;
            batch.critic_inputs.push(input);
            let input = batch.critic_inputs.len() - 1;
            for i in triggered {
                if let Some(k) = open[i].take() {
                    close(&mut batch, k, start, now, reward)?;
                }
                let o = obs[i].normalized();
                let mask = action_mask(obs[i].phase);
                let (a, logp) = act(policy, &o, &mask, rng)?;
                let (phase, green) = decode_action(a)?;
                world.apply_signal(i, phase, green)?;
                batch.transitions.push(Transition {
                    agent: i,
                    time: now,
                    obs: o,
                    phase: obs[i].phase,
                    action: a,
                    logp,
                    reward: 0.0,
                    input,
                    done: false,
                });
                open[i] = Some(batch.transitions.len() - 1);
            }
        }
        batch.log.push(world.step());
    }
    let end = world.time();
    for k in open.into_iter().flatten() {
        close(&mut batch, k, start, end, reward)?;
        batch.transitions[k].done = true;
    }
    Ok(batch)
}

fn close(batch: &mut TransitionBatch, k: usize, start: u32, until: u32, cfg: &RewardConfig) -> Result<()> {
    let t = &batch.transitions[k];
    let from = (t.time - start) as usize;
    let to = (until - start) as usize;
    let r = compute_reward(&batch.log[from..to], t.agent, cfg)?;
    batch.transitions[k].reward = r;
    Ok(())
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::env::OBS_WIDTH;
    use crate::marl::critic::{AblationConfig, CriticConfig};
    use crate::sim::{load_scenario, SimConfig, TRANSITION_S};

    fn setup(n: usize, ablation: AblationConfig) -> (SimWorld, PolicyNet, Critic, ChaCha8Rng) {
        let mut cfg = SimConfig::default();
        cfg.network.intersections = n;
        cfg.network.tram_stops = cfg.network.tram_stops.min(n - 1);
        cfg.scenario.focus_intersection = 0;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let world = load_scenario(&cfg, 1).unwrap();
        let policy = PolicyNet::new(OBS_WIDTH, &mut rng);
        let critic = Critic::new(CriticConfig::corridor(n, ablation), &mut rng).unwrap();
        (world, policy, critic, rng)
    }

    #[test]
    fn zero_horizon_gives_empty_batch() {
        let (mut w, p, c, mut rng) = setup(2, AblationConfig::FULL);
        let b = rollout(&mut w, &p, &c, 0, &RewardConfig::default(), &mut rng).unwrap();
        assert!(b.is_empty());
        assert_eq!(w.time(), 0);
    }

    #[test]
    fn decisions_are_spaced_by_green_plus_clearance() {
        let (mut w, p, c, mut rng) = setup(1, AblationConfig::FULL);
        let b = rollout(&mut w, &p, &c, 600, &RewardConfig::default(), &mut rng).unwrap();
        assert!(b.len() > 5);
        assert_eq!(b.transitions[0].time, 0);
        for pair in b.transitions.windows(2) {
            let (_, green) = decode_action(pair[0].action).unwrap();
            assert_eq!(pair[1].time - pair[0].time, green + TRANSITION_S);
        }
        assert!(b.transitions.last().unwrap().done);
        assert_eq!(b.log.len(), 600);
    }

    #[test]
    fn actions_obey_masks_and_rewards_match_windows() {
        let (mut w, p, c, mut rng) = setup(3, AblationConfig::FULL);
        let rc = RewardConfig::default();
        let b = rollout(&mut w, &p, &c, 900, &rc, &mut rng).unwrap();
        for agent in 0..3 {
            let stream = b.agent_stream(agent);
            assert!(!stream.is_empty());
            for (j, &k) in stream.iter().enumerate() {
                let t = &b.transitions[k];
                assert!(t.mask()[t.action]);
                assert_ne!(decode_action(t.action).unwrap().0, t.phase);
                let until = stream.get(j + 1).map_or(900, |&n| b.transitions[n].time);
                let expect = compute_reward(&b.log[t.time as usize..until as usize], agent, &rc).unwrap();
                assert_eq!(t.reward, expect);
                assert_eq!(t.done, j + 1 == stream.len());
            }
        }
        // one critic input per decision instant
        let mut times: Vec<u32> = b.transitions.iter().map(|t| t.time).collect();
        times.dedup();
        assert_eq!(times.len(), b.critic_inputs.len());
        assert_eq!(b.critic_inputs[0].shape(), &[15, OBS_WIDTH]);
    }

    #[test]
    fn no_hypergraph_critic_sees_mean_observation() {
        let (mut w, p, c, mut rng) = setup(2, AblationConfig::NO_HG);
        let b = rollout(&mut w, &p, &c, 100, &RewardConfig::default(), &mut rng).unwrap();
        assert!(b.critic_inputs.iter().all(|x| x.shape() == [1, OBS_WIDTH]));
    }
}
