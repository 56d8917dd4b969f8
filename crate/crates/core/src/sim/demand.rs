//! Scenario demand templates.
//!
//! | id | car arrivals per entry                                   |
//! |----|----------------------------------------------------------|
//! | 1  | 200 veh/h                                                |
//! | 2  | linear ramp 200 → 500 veh/h over the horizon             |
//! | 3  | 500 veh/h                                                |
//! | 4  | 350 veh/h, ×1.6 on flows heading into the focus area     |
//! | 5  | 350 veh/h, ×1.6 on flows leaving the focus area          |
//!
//! Inbound (4) boosts both arterial ends, whose traffic travels toward the
//! interior, and the side streets at the focus intersection. Outbound (5)
//! boosts the side streets of the focus intersection and its two neighbours,
//! whose traffic disperses out along the arterial.

use super::config::SimConfig;
use super::network::{Entry, Network};

pub const SKEW: f64 = 1.6;

#[derive(Debug, Clone, PartialEq)]
pub struct DemandSpec {
    scenario: u8,
    horizon_s: u32,
    scale: f64,
    multipliers: Vec<f64>,
    pub ratios: [f64; 3],
    pub bus_headway_s: u32,
    pub tram_headway_s: u32,
    pub car_extra_occupancy_mean: f64,
    pub bus_occupancy: u32,
    pub tram_occupancy: u32,
}

impl DemandSpec {
    pub fn new(cfg: &SimConfig, net: &Network) -> Self {
        let focus = cfg.scenario.focus_intersection;
        let multipliers = net.entries().iter().map(|e| skew(cfg.scenario.id, focus, e)).collect();
        let d = &cfg.demand;
        Self {
            scenario: cfg.scenario.id,
            horizon_s: cfg.scenario.horizon_s,
            scale: d.rate_scale,
            multipliers,
            ratios: [d.through, d.left, d.right],
            bus_headway_s: d.bus_headway_s,
            tram_headway_s: d.tram_headway_s,
            car_extra_occupancy_mean: d.car_extra_occupancy_mean,
            bus_occupancy: d.bus_occupancy,
            tram_occupancy: d.tram_occupancy,
        }
    }

    /// Unskewed per-entry rate at second `t`, veh/h.
    pub fn base_rate(&self, t: u32) -> f64 {
        match self.scenario {
            1 => 200.0,
            2 => 200.0 + 300.0 * f64::from(t.min(self.horizon_s)) / f64::from(self.horizon_s),
            3 => 500.0,
            _ => 350.0,
        }
    }

    pub fn multiplier(&self, entry: usize) -> f64 {
        self.multipliers[entry]
    }

    /// Car arrival rate at `entry` during second `t`, veh/h.
    pub fn car_rate(&self, entry: usize, t: u32) -> f64 {
        self.scale * self.multipliers[entry] * self.base_rate(t)
    }

    /// Upper bound of [`car_rate`](Self::car_rate) over the horizon.
    pub fn peak_rate(&self, entry: usize) -> f64 {
        let peak = (0..=self.horizon_s).map(|t| self.base_rate(t)).fold(0.0, f64::max);
        self.scale * self.multipliers[entry] * peak
    }
}

fn skew(scenario: u8, focus: usize, e: &Entry) -> f64 {
    let hit = match scenario {
        4 => e.is_corridor_end() || e.intersection == focus,
        5 => !e.is_corridor_end() && e.intersection.abs_diff(focus) <= 1,
        _ => false,
    };
    if hit {
        SKEW
    } else {
        1.0
    }
}
