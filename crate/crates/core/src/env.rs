//! Agent-facing view of the simulator: lane-level observations, the
//! 152-way phase × green action codec, and the delayed-passenger reward.

use std::collections::VecDeque;

use crate::error::{invalid, Error, Result};
use crate::numeric::Tensor;
use crate::sim::{Mode, Motion, Phase, SimWorld, StepRecord, MAX_GREEN_S, MIN_GREEN_S};

/// Observed lanes per intersection: eight road lanes plus one pooled slot
/// for the two tram tracks on the east–west axis.
pub const OBS_LANES: usize = 9;
pub const FEATURES_PER_LANE: usize = 16;
pub const OBS_WIDTH: usize = FEATURES_PER_LANE * OBS_LANES + 4;
pub const GREEN_CHOICES: usize = (MAX_GREEN_S - MIN_GREEN_S + 1) as usize;
pub const NUM_ACTIONS: usize = 4 * GREEN_CHOICES;

// Feature block offsets within a lane's 16 slots; each block is
// ordered total, bus, tram, car.
const VEH: usize = 0;
const PAX: usize = 4;
const QUEUE: usize = 8;
const SPEED: usize = 12;

/// Divisors applied by [`Observation::normalized`], per feature block.
pub const FEATURE_SCALES: [f64; 4] = [10.0, 100.0, 10.0, 50.0];

fn mode_slot(mode: Mode) -> usize {
    match mode {
        Mode::Bus => 1,
        Mode::Tram => 2,
        Mode::Car => 3,
    }
}

/// Raw lane features (speeds in km/h) followed by the phase one-hot.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub values: Vec<f64>,
    pub phase: Phase,
}

impl Observation {
    pub fn lane(&self, slot: usize) -> &[f64] {
        &self.values[slot * FEATURES_PER_LANE..(slot + 1) * FEATURES_PER_LANE]
    }

    /// Network input: counts and speeds rescaled to order one.
    pub fn normalized(&self) -> Vec<f64> {
        let mut out = self.values.clone();
        for slot in 0..OBS_LANES {
            for (block, scale) in FEATURE_SCALES.iter().enumerate() {
                for m in 0..4 {
                    out[slot * FEATURES_PER_LANE + block * 4 + m] /= scale;
                }
            }
        }
        out
    }
}

fn obs_slot(local_lane: usize) -> usize {
    local_lane.min(OBS_LANES - 1)
}

/// Observations of every intersection in one pass over the vehicles.
pub fn observe_all(world: &SimWorld) -> Vec<Observation> {
    let n = world.num_intersections();
    let net = world.network();
    // per (intersection, slot, mode-slot): vehicles, passengers, queued, speed sum
    let cells = n * OBS_LANES * 4;
    let mut veh = vec![0.0; cells];
    let mut pax = vec![0.0; cells];
    let mut queue = vec![0.0; cells];
    let mut speed = vec![0.0; cells];
    for v in world.active_vehicles() {
        let Some(lane) = v.lane() else { continue };
        let lane = net.lane(lane);
        let base = (lane.intersection * OBS_LANES + obs_slot(lane.local)) * 4;
        let s = world.speed_kmh(v);
        let queued = f64::from(u8::from(v.motion == Motion::Queued));
        for c in [base, base + mode_slot(v.mode)] {
            veh[c] += 1.0;
            pax[c] += f64::from(v.occupancy);
            queue[c] += queued;
            speed[c] += s;
        }
    }
    let car_ff = world.free_flow_kmh(Mode::Car);
    let tram_ff = world.free_flow_kmh(Mode::Tram);
    (0..n)
        .map(|i| {
            let mut values = vec![0.0; OBS_WIDTH];
            for slot in 0..OBS_LANES {
                let lane_ff = if slot == OBS_LANES - 1 { tram_ff } else { car_ff };
                let out = &mut values[slot * FEATURES_PER_LANE..(slot + 1) * FEATURES_PER_LANE];
                for m in 0..4 {
                    let c = (i * OBS_LANES + slot) * 4 + m;
                    out[VEH + m] = veh[c];
                    out[PAX + m] = pax[c];
                    out[QUEUE + m] = queue[c];
                    out[SPEED + m] = if veh[c] > 0.0 {
                        speed[c] / veh[c]
                    } else {
                        match m {
                            0 => lane_ff,
                            2 => tram_ff,
                            _ => car_ff,
                        }
                    };
                }
            }
            let phase = world.controllers()[i].phase();
            values[FEATURES_PER_LANE * OBS_LANES + phase.index()] = 1.0;
            Observation { values, phase }
        })
        .collect()
}

pub fn observe(world: &SimWorld, i: usize) -> Result<Observation> {
    world.controller(i)?;
    Ok(observe_all(world).swap_remove(i))
}

/// `a ↦ (phase a div 38, green 8 + a mod 38)`.
pub fn decode_action(a: usize) -> Result<(Phase, u32)> {
    if a >= NUM_ACTIONS {
        return Err(Error::OutOfRange {
            what: "action",
            index: a,
            limit: NUM_ACTIONS,
        });
    }
    Ok((
        Phase::from_index(a / GREEN_CHOICES)?,
        MIN_GREEN_S + (a % GREEN_CHOICES) as u32,
    ))
}

pub fn encode_action(phase: Phase, green_s: u32) -> Result<usize> {
    if !(MIN_GREEN_S..=MAX_GREEN_S).contains(&green_s) {
        return invalid(format!("green {green_s}s outside [{MIN_GREEN_S}, {MAX_GREEN_S}]"));
    }
    Ok(phase.index() * GREEN_CHOICES + (green_s - MIN_GREEN_S) as usize)
}

/// `true` marks an allowed action; the 38 actions repeating `current` are blocked.
pub fn action_mask(current: Phase) -> Vec<bool> {
    (0..NUM_ACTIONS).map(|a| a / GREEN_CHOICES != current.index()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardConfig {
    /// Weight of the agent's own intersection.
    pub w1: f64,
    /// Weight of the whole network.
    pub w2: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self { w1: 0.5, w2: 0.5 }
    }
}

/// `−(w1/m·Σ N_i + w2/m·Σ N̂)` over the `m` seconds in `window`.
pub fn compute_reward(window: &[StepRecord], i: usize, cfg: &RewardConfig) -> Result<f64> {
    if window.is_empty() {
        return invalid("reward window is empty");
    }
    if !(cfg.w1 >= 0.0 && cfg.w2 >= 0.0) {
        return invalid("reward weights must be non-negative");
    }
    let mut local = 0u64;
    let mut network = 0u64;
    for r in window {
        local += *r.delayed_by_intersection.get(i).ok_or(Error::OutOfRange {
            what: "intersection",
            index: i,
            limit: r.delayed_by_intersection.len(),
        })?;
        network += r.delayed_network;
    }
    let m = window.len() as f64;
    Ok(-(cfg.w1 / m * local as f64 + cfg.w2 / m * network as f64))
}

/// Rolling history of per-second network snapshots from which the critic's
/// `t`-step window (sampled every `spacing` seconds, newest last) is cut.
#[derive(Debug, Clone)]
pub struct FeatureWindow {
    steps: usize,
    spacing: usize,
    width: usize,
    history: VecDeque<Vec<f64>>,
}

impl FeatureWindow {
    /// `width` is the per-node feature width fed to the encoder; observation
    /// vectors are zero-padded up to it.
    pub fn new(steps: usize, spacing: usize, width: usize) -> Result<Self> {
        if steps == 0 || spacing == 0 || width < OBS_WIDTH {
            return invalid(format!("window needs steps ≥ 1, spacing ≥ 1 and width ≥ {OBS_WIDTH}"));
        }
        Ok(Self {
            steps,
            spacing,
            width,
            history: VecDeque::with_capacity((steps - 1) * spacing + 1),
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn clear(&mut self) {
        self.history.clear();
    }

    /// Records the normalized observations of all intersections at one second.
    pub fn push(&mut self, obs: &[Observation]) {
        let mut snap = Vec::with_capacity(obs.len() * self.width);
        for o in obs {
            snap.extend(o.normalized());
            snap.resize(snap.len() + self.width - OBS_WIDTH, 0.0);
        }
        if self.history.len() == (self.steps - 1) * self.spacing + 1 {
            self.history.pop_front();
        }
        self.history.push_back(snap);
    }

    /// `(n·t) × width` node features, row `τ·n + i`. Before enough history
    /// exists the oldest snapshot is repeated.
    pub fn node_features(&self) -> Result<Tensor> {
        let Some(newest) = self.history.back() else {
            return invalid("feature window is empty");
        };
        let n = newest.len() / self.width;
        let last = self.history.len() - 1;
        let mut data = Vec::with_capacity(self.steps * newest.len());
        for tau in 0..self.steps {
            let back = (self.steps - 1 - tau) * self.spacing;
            data.extend_from_slice(&self.history[last.saturating_sub(back)]);
        }
        Tensor::matrix(self.steps * n, self.width, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{load_scenario, Scope, SimConfig};

    fn quiet() -> SimConfig {
        let mut cfg = SimConfig::default();
        cfg.demand.rate_scale = 0.0;
        cfg.demand.bus_headway_s = 0;
        cfg.demand.tram_headway_s = 0;
        cfg
    }

    #[test]
    fn empty_network_observation() {
        let w = load_scenario(&quiet(), 0).unwrap();
        let o = observe(&w, 0).unwrap();
        assert_eq!(o.values.len(), OBS_WIDTH);
        assert_eq!(OBS_WIDTH, 148);
        for slot in 0..OBS_LANES {
            let l = o.lane(slot);
            assert!(l[..SPEED].iter().all(|&x| x == 0.0));
            assert!(l[SPEED..].iter().all(|&x| x > 0.0));
        }
        assert_eq!(&o.values[OBS_WIDTH - 4..], &[1.0, 0.0, 0.0, 0.0]);
        assert!(observe(&w, 6).is_err());
    }

    #[test]
    fn width_formula() {
        assert_eq!(FEATURES_PER_LANE * 8 + 4, 132);
    }

    #[test]
    fn queued_bus_in_lane_zero() {
        let mut w = load_scenario(&quiet(), 0).unwrap();
        let lane = w.network().lane_id(0, 0);
        // hold the north approach red
        w.apply_signal(0, Phase::P3, 45).unwrap();
        w.spawn(Mode::Bus, vec![lane], 40).unwrap();
        for _ in 0..20 {
            w.step();
        }
        assert_eq!(w.delayed_passengers(Scope::Intersection(0)).unwrap(), 40);
        let o = observe(&w, 0).unwrap();
        let l = o.lane(0);
        assert_eq!((l[VEH], l[VEH + 1]), (1.0, 1.0));
        assert_eq!((l[PAX], l[PAX + 1]), (40.0, 40.0));
        assert_eq!((l[QUEUE], l[QUEUE + 1]), (1.0, 1.0));
        assert_eq!((l[SPEED], l[SPEED + 1]), (0.0, 0.0));
        assert_eq!(l[VEH + 3], 0.0);
        assert_eq!(l[SPEED + 3], 50.0);
    }

    #[test]
    fn codec_examples_and_bijection() {
        assert_eq!(decode_action(0).unwrap(), (Phase::P1, 8));
        assert_eq!(decode_action(45).unwrap(), (Phase::P2, 15));
        assert_eq!(decode_action(151).unwrap(), (Phase::P4, 45));
        assert!(decode_action(152).is_err());
        for a in 0..NUM_ACTIONS {
            let (p, g) = decode_action(a).unwrap();
            assert_eq!(encode_action(p, g).unwrap(), a);
        }
        assert!(encode_action(Phase::P1, 7).is_err());
    }

    #[test]
    fn masks_block_one_phase() {
        let m = action_mask(Phase::P1);
        assert!(m[..38].iter().all(|&b| !b));
        assert!(m[38..].iter().all(|&b| b));
        for p in Phase::ALL {
            let m = action_mask(p);
            assert_eq!(m.iter().filter(|&&b| !b).count(), 38);
            for (a, &ok) in m.iter().enumerate() {
                assert_eq!(ok, decode_action(a).unwrap().0 != p);
            }
        }
    }

    fn record(n_i: u64, n_net: u64) -> StepRecord {
        StepRecord {
            t: 0,
            spawned: 0,
            exited: 0,
            spawned_total: 0,
            exited_total: 0,
            in_network: 0,
            discharges: vec![],
            delayed_by_intersection: vec![n_i; 6],
            delayed_network: n_net,
            queued_by_intersection: vec![0; 6],
            queued_network: 0,
            signals: vec![],
        }
    }

    #[test]
    fn reward_examples() {
        let cfg = RewardConfig::default();
        let zeros = vec![record(0, 0); 5];
        assert_eq!(compute_reward(&zeros, 0, &cfg).unwrap(), 0.0);
        let log = vec![record(4, 10); 10];
        assert_eq!(compute_reward(&log, 2, &cfg).unwrap(), -7.0);
        assert!(compute_reward(&[], 0, &cfg).is_err());
        assert!(compute_reward(&log, 6, &cfg).is_err());
    }

    #[test]
    fn window_cuts_every_fifth_second() {
        let w = load_scenario(&quiet(), 0).unwrap();
        let obs = observe_all(&w);
        let mut win = FeatureWindow::new(3, 5, OBS_WIDTH).unwrap();
        assert!(win.node_features().is_err());
        for s in 0..20 {
            let mut o = obs.clone();
            for x in &mut o {
                x.values[0] = f64::from(s);
            }
            win.push(&o);
        }
        let x = win.node_features().unwrap();
        assert_eq!(x.shape(), &[18, OBS_WIDTH]);
        // newest is second 19, then 14, then 9; veh counts are scaled by 1/10
        assert!((x.get(0, 0) - 0.9).abs() < 1e-12);
        assert!((x.get(6, 0) - 1.4).abs() < 1e-12);
        assert!((x.get(17, 0) - 1.9).abs() < 1e-12);
    }
}
