//! Shared actor and masked categorical action selection.

use rand::Rng;

use crate::env::NUM_ACTIONS;
use crate::error::{invalid, Error, Result};
use crate::numeric::{Graph, Tensor};

use super::nets::Mlp2;

pub const POLICY_HIDDEN: usize = 256;
/// Initial scale of the logit layer; small values start near-uniform.
pub const POLICY_OUT_GAIN: f64 = 0.01;

/// One network evaluated by every agent on its own observation.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNet {
    pub net: Mlp2,
}

impl PolicyNet {
    /// Observation width → 256 → 152 logits.
    pub fn new<R: Rng>(obs_width: usize, rng: &mut R) -> Self {
        Self::with_dims(obs_width, POLICY_HIDDEN, NUM_ACTIONS, rng)
    }

    pub fn with_dims<R: Rng>(obs_width: usize, hidden: usize, actions: usize, rng: &mut R) -> Self {
        Self {
            net: Mlp2::new("actor", obs_width, hidden, actions, POLICY_OUT_GAIN, rng),
        }
    }

    pub fn num_actions(&self) -> usize {
        self.net.out_width()
    }

    /// Log-probabilities under the masked softmax; blocked actions get `-inf`.
    pub fn log_probs(&self, obs: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
        if obs.len() != self.net.in_width() || mask.len() != self.num_actions() {
            return Err(Error::Shape {
                op: "policy",
                lhs: vec![obs.len(), mask.len()],
                rhs: vec![self.net.in_width(), self.num_actions()],
            });
        }
        if !mask.iter().any(|&m| m) {
            return invalid("every action is masked");
        }
        let mut g = Graph::new();
        let vars = self.net.params.bind(&mut g)?;
        let x = g.constant(Tensor::row(obs.to_vec()))?;
        let logits = self.net.forward(&mut g, &vars, x)?;
        let lp = g.masked_log_softmax(logits, mask, 1.0)?;
        Ok(g.value(lp)
            .data()
            .iter()
            .zip(mask)
            .map(|(&v, &ok)| if ok { v } else { f64::NEG_INFINITY })
            .collect())
    }
}

/// Draws an index from `exp(log_probs)`, skipping blocked entries.
pub fn sample_masked<R: Rng>(log_probs: &[f64], mask: &[bool], rng: &mut R) -> Result<usize> {
    let Some(last) = mask.iter().rposition(|&m| m) else {
        return invalid("every action is masked");
    };
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (a, (&lp, &ok)) in log_probs.iter().zip(mask).enumerate() {
        if ok {
            acc += lp.exp();
            if u < acc {
                return Ok(a);
            }
        }
    }
    Ok(last)
}

/// Samples an action and returns it with its log-probability.
pub fn act<R: Rng>(policy: &PolicyNet, obs: &[f64], mask: &[bool], rng: &mut R) -> Result<(usize, f64)> {
    let lp = policy.log_probs(obs, mask)?;
    let a = sample_masked(&lp, mask, rng)?;
    Ok((a, lp[a]))
}

/// Most probable allowed action (lowest index on ties).
pub fn greedy(policy: &PolicyNet, obs: &[f64], mask: &[bool]) -> Result<usize> {
    let lp = policy.log_probs(obs, mask)?;
    let mut best = None::<(usize, f64)>;
    for (a, &v) in lp.iter().enumerate() {
        if mask[a] && best.is_none_or(|(_, b)| v > b) {
            best = Some((a, v));
        }
    }
    Ok(best.expect("mask has an allowed action").0)
}

/// Entropy of the masked distribution, nats.
pub fn entropy(log_probs: &[f64], mask: &[bool]) -> f64 {
    -log_probs
        .iter()
        .zip(mask)
        .filter(|(_, &ok)| ok)
        .map(|(&lp, _)| lp.exp() * lp)
        .sum::<f64>()
}

/// Log-probability of a joint action: agents choose independently, so this
/// is the sum of the per-agent terms.
pub fn joint_log_prob(policy: &PolicyNet, obs: &[Vec<f64>], masks: &[Vec<bool>], actions: &[usize]) -> Result<f64> {
    if obs.len() != masks.len() || obs.len() != actions.len() {
        return invalid("joint action length mismatch");
    }
    let mut total = 0.0;
    for ((o, m), &a) in obs.iter().zip(masks).zip(actions) {
        total += policy.log_probs(o, m)?[a];
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::env::action_mask;
    use crate::sim::Phase;

    fn zero_policy(obs: usize, actions: usize) -> PolicyNet {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = PolicyNet::with_dims(obs, 4, actions, &mut rng);
        p.net.params.get_mut(2).data_mut().fill(0.0);
        p
    }

    #[test]
    fn uniform_logits_over_allowed_actions() {
        let p = zero_policy(3, NUM_ACTIONS);
        let mask = action_mask(Phase::P2);
        let lp = p.log_probs(&[0.1, 0.2, 0.3], &mask).unwrap();
        for (a, &v) in lp.iter().enumerate() {
            if mask[a] {
                assert!((v.exp() - 1.0 / 114.0).abs() < 1e-15);
            } else {
                assert_eq!(v, f64::NEG_INFINITY);
            }
        }
        assert!((entropy(&lp, &mask) - 114f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn single_allowed_action_has_zero_log_prob() {
        let p = zero_policy(2, 5);
        let mask = [false, false, true, false, false];
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            assert_eq!(act(&p, &[1.0, -1.0], &mask, &mut rng).unwrap(), (2, 0.0));
        }
        assert!(act(&p, &[1.0, -1.0], &[false; 5], &mut rng).is_err());
    }

    #[test]
    fn empirical_frequencies_match_probabilities() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut p = PolicyNet::with_dims(2, 8, 4, &mut rng);
        // spread the logits so the probabilities differ visibly
        for (i, w) in p.net.params.get_mut(2).data_mut().iter_mut().enumerate() {
            *w = (i as f64 * 0.37).sin();
        }
        let obs = [0.5, -0.25];
        let mask = [true, true, false, true];
        let lp = p.log_probs(&obs, &mask).unwrap();
        let draws = 100_000;
        let mut counts = [0usize; 4];
        for _ in 0..draws {
            counts[act(&p, &obs, &mask, &mut rng).unwrap().0] += 1;
        }
        assert_eq!(counts[2], 0);
        for a in [0, 1, 3] {
            let prob = lp[a].exp();
            let sd = (draws as f64 * prob * (1.0 - prob)).sqrt();
            assert!((counts[a] as f64 - draws as f64 * prob).abs() < 3.0 * sd, "{a}");
        }
    }

    #[test]
    fn sampled_actions_respect_the_phase_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = PolicyNet::new(6, &mut rng);
        for phase in Phase::ALL {
            let mask = action_mask(phase);
            let lp = p.log_probs(&[0.2; 6], &mask).unwrap();
            for _ in 0..25_000 {
                let a = sample_masked(&lp, &mask, &mut rng).unwrap();
                assert_ne!(a / 38, phase.index());
            }
        }
    }

    #[test]
    fn greedy_picks_the_mode() {
        let mut p = zero_policy(1, 3);
        p.net.params.get_mut(3).data_mut().copy_from_slice(&[0.0, 2.0, 5.0]);
        assert_eq!(greedy(&p, &[0.0], &[true, true, true]).unwrap(), 2);
        assert_eq!(greedy(&p, &[0.0], &[true, true, false]).unwrap(), 1);
    }

    #[test]
    fn joint_log_prob_is_product_of_marginals() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = PolicyNet::with_dims(2, 5, 3, &mut rng);
        let obs = vec![vec![0.1, 0.9], vec![-0.4, 0.3]];
        let masks = vec![vec![true, true, true], vec![true, false, true]];
        let p0 = p.log_probs(&obs[0], &masks[0]).unwrap();
        let p1 = p.log_probs(&obs[1], &masks[1]).unwrap();
        let mut total = 0.0;
        for a in 0..3 {
            for b in [0, 2] {
                let j = joint_log_prob(&p, &obs, &masks, &[a, b]).unwrap();
                assert_eq!(j, p0[a] + p1[b]);
                assert!((j.exp() - p0[a].exp() * p1[b].exp()).abs() < 1e-15);
                total += j.exp();
            }
        }
        assert!((total - 1.0).abs() < 1e-12);
    }
}
