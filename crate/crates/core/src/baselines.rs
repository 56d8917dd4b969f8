//! Non-learning comparators: a fixed-time plan sized with Webster's formula
//! and a uniform random policy.

use rand::Rng;

use crate::error::{invalid, Result};
use crate::sim::{load_scenario, Phase, SimConfig, SimWorld, MAX_GREEN_S, MIN_GREEN_S, TRANSITION_S};

/// Lost time per cycle: four transitions of amber plus all-red.
pub const LOST_TIME_S: u32 = 4 * TRANSITION_S;
pub const WARMUP_S: u32 = 300;

pub const MIN_CYCLE_S: u32 = 4 * MIN_GREEN_S + LOST_TIME_S;
pub const MAX_CYCLE_S: u32 = 4 * MAX_GREEN_S + LOST_TIME_S;

/// Optimal cycle `(1.5 L + 5) / (1 - Y)` rounded and clamped to what four
/// legal greens can fill. The flag is set when demand cannot be served
/// within the longest cycle (`Y >= 1` or the formula exceeds it); the cycle
/// is then the maximum.
pub fn webster_cycle(ratios: &[f64; 4], lost_s: u32) -> Result<(u32, bool)> {
    if lost_s == 0 {
        return invalid("lost time must be positive");
    }
    if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) {
        return invalid(format!("flow ratios must be finite and non-negative: {ratios:?}"));
    }
    let lo = 4 * MIN_GREEN_S + lost_s;
    let hi = 4 * MAX_GREEN_S + lost_s;
    let y: f64 = ratios.iter().sum();
    if y >= 1.0 {
        return Ok((hi, true));
    }
    let c = ((1.5 * f64::from(lost_s) + 5.0) / (1.0 - y)).round();
    if c > f64::from(hi) {
        return Ok((hi, true));
    }
    Ok(((c as u32).max(lo), false))
}

/// Splits `cycle - lost` among the phases in proportion to their ratios.
/// The result always sums to `cycle - lost` with every green in [8, 45].
pub fn green_split(cycle: u32, ratios: &[f64; 4], lost_s: u32) -> Result<[u32; 4]> {
    let usable = cycle.saturating_sub(lost_s);
    if !(4 * MIN_GREEN_S..=4 * MAX_GREEN_S).contains(&usable) {
        return invalid(format!("cycle {cycle}s cannot hold four legal greens"));
    }
    let y: f64 = ratios.iter().sum();
    let share = |p: usize| if y > 0.0 { ratios[p] / y } else { 0.25 };
    let mut greens = [0i64; 4];
    for (p, g) in greens.iter_mut().enumerate() {
        *g = (f64::from(usable) * share(p)).round() as i64;
    }
    // phase order by descending ratio, lowest index first on ties
    let mut order = [0usize, 1, 2, 3];
    order.sort_by(|&a, &b| share(b).total_cmp(&share(a)).then(a.cmp(&b)));
    greens[order[0]] += i64::from(usable) - greens.iter().sum::<i64>();
    for g in &mut greens {
        *g = (*g).clamp(i64::from(MIN_GREEN_S), i64::from(MAX_GREEN_S));
    }
    let mut diff = i64::from(usable) - greens.iter().sum::<i64>();
    while diff != 0 {
        let step = diff.signum();
        let p = order
            .iter()
            .copied()
            .find(|&p| {
                let g = greens[p] + step;
                (i64::from(MIN_GREEN_S)..=i64::from(MAX_GREEN_S)).contains(&g)
            })
            .expect("usable time fits the green bounds");
        greens[p] += step;
        diff -= step;
    }
    Ok(greens.map(|g| g as u32))
}

/// Fixed-time plan for one intersection, served P1→P2→P3→P4.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WebsterPlan {
    pub cycle_s: u32,
    pub greens: [u32; 4],
    pub oversaturated: bool,
}

impl WebsterPlan {
    pub fn from_ratios(ratios: &[f64; 4]) -> Result<Self> {
        let (cycle, flag) = webster_cycle(ratios, LOST_TIME_S)?;
        let greens = green_split(cycle, ratios, LOST_TIME_S)?;
        Ok(Self {
            cycle_s: cycle,
            greens,
            oversaturated: flag,
        })
    }

    pub fn green(&self, phase: Phase) -> u32 {
        self.greens[phase.index()]
    }
}

/// Critical flow ratio per phase at each intersection: the largest
/// arrival-rate to saturation-rate ratio over the lanes a phase releases.
pub fn critical_ratios(world: &SimWorld, elapsed_s: u32) -> Vec<[f64; 4]> {
    let net = world.network();
    let sat = world.config().network.saturation_veh_s;
    let arrivals = world.lane_arrivals();
    (0..net.num_intersections())
        .map(|i| {
            Phase::ALL.map(|p| {
                p.lanes()
                    .iter()
                    .map(|&l| arrivals[net.lane_id(i, l)] as f64 / f64::from(elapsed_s.max(1)) / sat)
                    .fold(0.0, f64::max)
            })
        })
        .collect()
}

/// Measures flow ratios over a warm-up run of the scenario under an
/// equal-split cycle, then sizes one plan per intersection.
pub fn plan_from_warmup(cfg: &SimConfig, seed: u64) -> Result<Vec<WebsterPlan>> {
    let mut world = load_scenario(cfg, seed)?;
    let equal = WebsterPlan {
        cycle_s: 4 * 13 + LOST_TIME_S,
        greens: [13; 4],
        oversaturated: false,
    };
    let mut ctl = FixedTimeController::new(vec![equal; world.num_intersections()]);
    for _ in 0..WARMUP_S {
        ctl.act(&mut world)?;
        world.step();
    }
    critical_ratios(&world, WARMUP_S)
        .iter()
        .map(WebsterPlan::from_ratios)
        .collect()
}

/// Serves each intersection's plan in the fixed rotation.
#[derive(Debug, Clone)]
pub struct FixedTimeController {
    plans: Vec<WebsterPlan>,
}

impl FixedTimeController {
    pub fn new(plans: Vec<WebsterPlan>) -> Self {
        Self { plans }
    }

    pub fn plans(&self) -> &[WebsterPlan] {
        &self.plans
    }

    /// Starts the next phase wherever a green has just run out.
    pub fn act(&mut self, world: &mut SimWorld) -> Result<()> {
        if self.plans.len() != world.num_intersections() {
            return invalid("one plan per intersection required");
        }
        for (i, plan) in self.plans.iter().enumerate() {
            let c = world.controller(i)?;
            if c.trigger() {
                let next = c.phase().next();
                world.apply_signal(i, next, plan.green(next))?;
            }
        }
        Ok(())
    }
}

/// Uniform draw over the allowed actions.
pub fn random_policy<R: Rng + ?Sized>(mask: &[bool], rng: &mut R) -> Result<usize> {
    let allowed: Vec<usize> = (0..mask.len()).filter(|&a| mask[a]).collect();
    if allowed.is_empty() {
        return invalid("every action is masked");
    }
    Ok(allowed[rng.random_range(0..allowed.len())])
}
