//! Returns, advantages, and the clipped-surrogate and value-regression updates.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::numeric::{clip_global_norm, Adam, Graph, Tensor};

use super::critic::{Critic, CriticSample};
use super::policy::PolicyNet;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub gamma: f64,
    pub clip_eps: f64,
    pub entropy_coef: f64,
    pub epochs: usize,
    pub minibatch: usize,
    pub max_grad_norm: f64,
    pub lr: f64,
    pub normalize_advantages: bool,
    /// Multiplies rewards before computing returns.
    pub reward_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.98,
            clip_eps: 0.2,
            entropy_coef: 0.01,
            epochs: 4,
            minibatch: 256,
            max_grad_norm: 0.5,
            lr: 3e-4,
            normalize_advantages: true,
            reward_scale: 0.01,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return invalid(format!("gamma must lie in (0, 1), got {}", self.gamma));
        }
        if !(self.clip_eps > 0.0) {
            return invalid("clip epsilon must be positive");
        }
        if self.epochs == 0 || self.minibatch == 0 {
            return invalid("epochs and minibatch must be positive");
        }
        if !(self.lr > 0.0 && self.max_grad_norm > 0.0 && self.entropy_coef >= 0.0) {
            return invalid("learning rate and clip norm must be positive, entropy weight non-negative");
        }
        Ok(())
    }
}

/// `R_t = Σ_k γ^k r_{t+k}`, computed backwards so `R_t = r_t + γ·R_{t+1}`.
pub fn returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (o, &r) in out.iter_mut().zip(rewards).rev() {
        acc = r + gamma * acc;
        *o = acc;
    }
    out
}

pub fn advantages(returns: &[f64], values: &[f64]) -> Result<Vec<f64>> {
    if returns.len() != values.len() {
        return Err(Error::Shape {
            op: "advantages",
            lhs: vec![returns.len()],
            rhs: vec![values.len()],
        });
    }
    Ok(returns.iter().zip(values).map(|(r, v)| r - v).collect())
}

/// Shifts to zero mean and, when the spread allows, scales to unit
/// (population) standard deviation.
pub fn normalize(adv: &mut [f64]) {
    if adv.len() < 2 {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let sd = var.sqrt();
    for a in adv.iter_mut() {
        *a -= mean;
        if sd > 1e-8 {
            *a /= sd;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActorSample {
    pub obs: Vec<f64>,
    pub mask: Vec<bool>,
    pub action: usize,
    pub logp_old: f64,
    pub advantage: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ActorStats {
    /// Mean minibatch loss.
    pub loss: f64,
    /// Mean policy entropy over minibatches.
    pub entropy: f64,
    /// Mean pre-clip gradient norm.
    pub grad_norm: f64,
    /// Surrogate of the first minibatch, evaluated before any step.
    pub first_surrogate: f64,
    /// Probability ratios of the first minibatch before any step.
    pub first_ratios: Vec<f64>,
    pub steps: usize,
}

/// Clipped-surrogate policy update with an entropy bonus.
pub fn ppo_update<R: Rng>(
    policy: &mut PolicyNet,
    opt: &mut Adam,
    samples: &[ActorSample],
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<ActorStats> {
    if samples.is_empty() {
        return invalid("policy update over an empty batch");
    }
    let (width, actions) = (policy.net.in_width(), policy.num_actions());
    let mut idx: Vec<usize> = (0..samples.len()).collect();
    let mut stats = ActorStats::default();
    for _ in 0..cfg.epochs {
        idx.shuffle(rng);
        for chunk in idx.chunks(cfg.minibatch) {
            let mut obs = Vec::with_capacity(chunk.len() * width);
            let mut mask = Vec::with_capacity(chunk.len() * actions);
            for &k in chunk {
                obs.extend_from_slice(&samples[k].obs);
                mask.extend_from_slice(&samples[k].mask);
            }
            let acts: Vec<usize> = chunk.iter().map(|&k| samples[k].action).collect();
            let old: Vec<f64> = chunk.iter().map(|&k| samples[k].logp_old).collect();
            let adv: Vec<f64> = chunk.iter().map(|&k| samples[k].advantage).collect();

            let mut g = Graph::new();
            let vars = policy.net.params.bind(&mut g)?;
            let x = g.constant(Tensor::matrix(chunk.len(), width, obs)?)?;
            let logits = policy.net.forward(&mut g, &vars, x)?;
            let lp_all = g.masked_log_softmax(logits, &mask, 1.0)?;
            let lp = g.gather(lp_all, &acts)?;
            let old = g.constant(Tensor::column(old))?;
            let diff = g.sub(lp, old)?;
            let ratio = g.exp(diff);
            let adv = g.constant(Tensor::column(adv))?;
            let unclipped = g.mul(ratio, adv)?;
            let clipped = g.clip(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
            let clipped = g.mul(clipped, adv)?;
            let surr = g.min(unclipped, clipped)?;
            let surr = g.mean(surr);
            let p = g.masked_softmax(logits, &mask, 1.0)?;
            let plogp = g.mul(p, lp_all)?;
            let neg_h = g.sum_rows(plogp);
            let neg_h = g.mean(neg_h);
            let pg = g.scale(surr, -1.0);
            let bonus = g.scale(neg_h, cfg.entropy_coef);
            let loss = g.add(pg, bonus)?;

            let lv = g.value(loss).item()?;
            if !lv.is_finite() {
                return Err(Error::NonFinite(format!("policy loss {lv}")));
            }
            if stats.steps == 0 {
                stats.first_ratios = g.value(ratio).data().to_vec();
                stats.first_surrogate = g.value(surr).item()?;
            }
            stats.loss += lv;
            stats.entropy -= g.value(neg_h).item()?;
            g.backward(loss)?;
            policy.net.params.zero_grads();
            policy.net.params.accumulate(&g, &vars);
            stats.grad_norm += clip_global_norm(&mut [&mut policy.net.params], cfg.max_grad_norm);
            opt.step(&mut policy.net.params);
            stats.steps += 1;
        }
    }
    let k = stats.steps as f64;
    stats.loss /= k;
    stats.entropy /= k;
    stats.grad_norm /= k;
    Ok(stats)
}

/// Optimizer state for the encoder (if any) and the value head.
#[derive(Debug, Clone)]
pub struct CriticOptimizer {
    encoder: Adam,
    head: Adam,
}

impl CriticOptimizer {
    pub fn new(lr: f64) -> Self {
        Self {
            encoder: Adam::new(lr),
            head: Adam::new(lr),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CriticStats {
    pub loss: f64,
    pub grad_norm: f64,
    pub steps: usize,
}

/// Value regression; gradients reach both the head and the encoder.
pub fn critic_update<R: Rng>(
    critic: &mut Critic,
    opt: &mut CriticOptimizer,
    inputs: &[Tensor],
    samples: &[CriticSample],
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<CriticStats> {
    if samples.is_empty() {
        return invalid("critic update over an empty batch");
    }
    let mut idx: Vec<usize> = (0..samples.len()).collect();
    let mut stats = CriticStats::default();
    for _ in 0..cfg.epochs {
        idx.shuffle(rng);
        for chunk in idx.chunks(cfg.minibatch) {
            let batch: Vec<CriticSample> = chunk.iter().map(|&k| samples[k]).collect();
            let mut g = Graph::new();
            let vars = critic.bind(&mut g)?;
            let loss = critic.loss_var(&mut g, &vars, inputs, &batch)?;
            let lv = g.value(loss).item()?;
            if !lv.is_finite() {
                return Err(Error::NonFinite(format!("critic loss {lv}")));
            }
            g.backward(loss)?;
            critic.accumulate(&g, &vars);
            let mut sets = critic.param_sets_mut();
            stats.grad_norm += clip_global_norm(&mut sets, cfg.max_grad_norm);
            drop(sets);
            if let Some(e) = &mut critic.encoder {
                opt.encoder.step(&mut e.params);
            }
            opt.head.step(&mut critic.head.params);
            stats.loss += lv;
            stats.steps += 1;
        }
    }
    let k = stats.steps as f64;
    stats.loss /= k;
    stats.grad_norm /= k;
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn return_examples() {
        assert_eq!(returns(&[1.0, -2.0, 3.0], 0.0), vec![1.0, -2.0, 3.0]);
        assert_eq!(returns(&[1.0, 1.0, 1.0], 1.0), vec![3.0, 2.0, 1.0]);
        assert_eq!(returns(&[1.0, 2.0], 0.9), vec![2.8, 2.0]);
        assert!(returns(&[], 0.9).is_empty());
    }

    #[test]
    fn advantage_examples() {
        assert_eq!(advantages(&[2.0, 2.0], &[1.0, 3.0]).unwrap(), vec![1.0, -1.0]);
        assert_eq!(advantages(&[0.5, 7.0], &[0.5, 7.0]).unwrap(), vec![0.0, 0.0]);
        assert!(advantages(&[1.0], &[]).is_err());
    }

    proptest! {
        #[test]
        fn returns_satisfy_the_recursion(rs in prop::collection::vec(-10.0f64..10.0, 1..40), gamma in 0.0f64..1.0) {
            let out = returns(&rs, gamma);
            for t in 0..rs.len() {
                let next = if t + 1 < rs.len() { out[t + 1] } else { 0.0 };
                prop_assert_eq!(out[t], rs[t] + gamma * next);
            }
        }

        #[test]
        fn normalized_advantages_are_standardized(xs in prop::collection::vec(-100.0f64..100.0, 2..64)) {
            let spread = xs.iter().cloned().fold(f64::MIN, f64::max) - xs.iter().cloned().fold(f64::MAX, f64::min);
            prop_assume!(spread > 1e-3);
            let mut a = xs.clone();
            normalize(&mut a);
            let n = a.len() as f64;
            let mean = a.iter().sum::<f64>() / n;
            let sd = (a.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            prop_assert!(mean.abs() < 1e-9);
            prop_assert!((sd - 1.0).abs() < 1e-9);
        }
    }

    fn bandit_samples(policy: &PolicyNet, n: usize, rng: &mut ChaCha8Rng) -> Vec<ActorSample> {
        let mask = vec![true, true];
        let lp = policy.log_probs(&[1.0], &mask).unwrap();
        let mut out: Vec<ActorSample> = (0..n)
            .map(|_| {
                let a = super::super::policy::sample_masked(&lp, &mask, rng).unwrap();
                ActorSample {
                    obs: vec![1.0],
                    mask: mask.clone(),
                    action: a,
                    logp_old: lp[a],
                    advantage: if a == 0 { 1.0 } else { 0.0 },
                }
            })
            .collect();
        let mut adv: Vec<f64> = out.iter().map(|s| s.advantage).collect();
        normalize(&mut adv);
        for (s, a) in out.iter_mut().zip(adv) {
            s.advantage = a;
        }
        out
    }

    #[test]
    fn first_minibatch_ratios_are_exactly_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut policy = PolicyNet::with_dims(1, 16, 2, &mut rng);
        let samples = bandit_samples(&policy, 64, &mut rng);
        let mut opt = Adam::new(3e-4);
        let cfg = TrainConfig {
            entropy_coef: 0.0,
            ..TrainConfig::default()
        };
        let stats = ppo_update(&mut policy, &mut opt, &samples, &cfg, &mut rng).unwrap();
        assert!(stats.first_ratios.iter().all(|&r| r == 1.0));
        let mean_adv = samples.iter().map(|s| s.advantage).sum::<f64>() / samples.len() as f64;
        assert!((stats.first_surrogate - mean_adv).abs() < 1e-12);
        assert_eq!(stats.steps, 4);
    }

    #[test]
    fn clipping_caps_positive_advantage_at_one_plus_eps() {
        // one sample whose probability rose by half since collection
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut policy = PolicyNet::with_dims(1, 4, 2, &mut rng);
        let lp = policy.log_probs(&[1.0], &[true, true]).unwrap();
        let sample = ActorSample {
            obs: vec![1.0],
            mask: vec![true, true],
            action: 0,
            logp_old: lp[0] - 1.5f64.ln(),
            advantage: 2.0,
        };
        let cfg = TrainConfig {
            epochs: 1,
            entropy_coef: 0.0,
            ..TrainConfig::default()
        };
        let stats = ppo_update(&mut policy, &mut Adam::new(1e-9), &[sample], &cfg, &mut rng).unwrap();
        assert!((stats.first_ratios[0] - 1.5).abs() < 1e-12);
        assert!((stats.first_surrogate - 1.2 * 2.0).abs() < 1e-12);
        // fully clipped: no gradient flows
        assert_eq!(stats.grad_norm, 0.0);
    }

    #[test]
    fn bandit_learns_the_better_arm() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut policy = PolicyNet::with_dims(1, 16, 2, &mut rng);
        let mut opt = Adam::new(3e-4);
        let cfg = TrainConfig {
            entropy_coef: 0.0,
            ..TrainConfig::default()
        };
        let mut p = 0.0;
        for _ in 0..500 {
            let samples = bandit_samples(&policy, 64, &mut rng);
            ppo_update(&mut policy, &mut opt, &samples, &cfg, &mut rng).unwrap();
            p = policy.log_probs(&[1.0], &[true, true]).unwrap()[0].exp();
            if p > 0.95 {
                break;
            }
        }
        assert!(p > 0.95, "{p}");
    }

    #[test]
    fn empty_batches_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut policy = PolicyNet::with_dims(1, 4, 2, &mut rng);
        let cfg = TrainConfig::default();
        assert!(ppo_update(&mut policy, &mut Adam::new(1e-3), &[], &cfg, &mut rng).is_err());
        assert!(TrainConfig { gamma: 1.0, ..cfg }.validate().is_err());
    }
}
