//! Scenario configuration.
//!
//! A config is a TOML document with four optional tables; every key has a
//! default, unknown keys are rejected.
//!
//! ```toml
//! [network]
//! intersections = 6          # corridor length, west to east
//! link_length_m = 200.0      # between neighbouring intersections
//! entry_length_m = 150.0     # boundary approaches
//! tram_stops = 3             # placed mid-link on evenly spread corridor links
//! tram_dwell_s = 20
//! car_speed_kmh = 50.0       # cars and buses
//! tram_speed_kmh = 40.0
//! saturation_veh_s = 0.5     # discharge per lane under green
//! delay_speed_kmh = 5.0      # below this speed occupants count as delayed
//! count_dwelling_as_delayed = false
//!
//! [demand]
//! rate_scale = 1.0           # multiplies the scenario's car arrival rates
//! through = 0.7              # turning ratios (must sum to 1)
//! left = 0.15
//! right = 0.15
//! bus_headway_s = 600        # 0 disables buses
//! tram_headway_s = 300       # 0 disables trams
//! car_extra_occupancy_mean = 0.5   # car occupancy = 1 + Poisson(mean)
//! bus_occupancy = 40
//! tram_occupancy = 150
//!
//! [signal]
//! initial_green_s = 0        # P1 green at t=0; 0 raises the trigger immediately
//!
//! [scenario]
//! id = 1                     # 1..5
//! horizon_s = 1800
//! focus_intersection = 2     # target area for scenarios 4 and 5
//! ```

use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub intersections: usize,
    pub link_length_m: f64,
    pub entry_length_m: f64,
    pub tram_stops: usize,
    pub tram_dwell_s: u32,
    pub car_speed_kmh: f64,
    pub tram_speed_kmh: f64,
    pub saturation_veh_s: f64,
    pub delay_speed_kmh: f64,
    pub count_dwelling_as_delayed: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            intersections: 6,
            link_length_m: 200.0,
            entry_length_m: 150.0,
            tram_stops: 3,
            tram_dwell_s: 20,
            car_speed_kmh: 50.0,
            tram_speed_kmh: 40.0,
            saturation_veh_s: 0.5,
            delay_speed_kmh: 5.0,
            count_dwelling_as_delayed: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemandConfig {
    pub rate_scale: f64,
    pub through: f64,
    pub left: f64,
    pub right: f64,
    pub bus_headway_s: u32,
    pub tram_headway_s: u32,
    pub car_extra_occupancy_mean: f64,
    pub bus_occupancy: u32,
    pub tram_occupancy: u32,
}

impl Default for DemandConfig {
    fn default() -> Self {
        Self {
            rate_scale: 1.0,
            through: 0.7,
            left: 0.15,
            right: 0.15,
            bus_headway_s: 600,
            tram_headway_s: 300,
            car_extra_occupancy_mean: 0.5,
            bus_occupancy: 40,
            tram_occupancy: 150,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SignalConfig {
    pub initial_green_s: u32,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub id: u8,
    pub horizon_s: u32,
    pub focus_intersection: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            id: 1,
            horizon_s: 1800,
            focus_intersection: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub network: NetworkConfig,
    pub demand: DemandConfig,
    pub signal: SignalConfig,
    pub scenario: ScenarioConfig,
}

impl SimConfig {
    /// Defaults for scenario `id`.
    pub fn scenario(id: u8) -> Result<Self> {
        let mut c = Self::default();
        c.scenario.id = id;
        c.validate()?;
        Ok(c)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: String| Err(Error::Config(format!("{field}: {why}")));
        let n = &self.network;
        if n.intersections == 0 {
            return bad("network.intersections", "must be at least 1".into());
        }
        for (name, v) in [
            ("network.link_length_m", n.link_length_m),
            ("network.entry_length_m", n.entry_length_m),
            ("network.car_speed_kmh", n.car_speed_kmh),
            ("network.tram_speed_kmh", n.tram_speed_kmh),
            ("network.saturation_veh_s", n.saturation_veh_s),
            ("network.delay_speed_kmh", n.delay_speed_kmh),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(name, format!("must be positive, got {v}"));
            }
        }
        if n.tram_stops > n.intersections.saturating_sub(1) {
            return bad(
                "network.tram_stops",
                format!("at most {} stops fit between intersections", n.intersections - 1),
            );
        }
        let d = &self.demand;
        for (name, v) in [
            ("demand.rate_scale", d.rate_scale),
            ("demand.through", d.through),
            ("demand.left", d.left),
            ("demand.right", d.right),
            ("demand.car_extra_occupancy_mean", d.car_extra_occupancy_mean),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(name, format!("must be non-negative, got {v}"));
            }
        }
        let sum = d.through + d.left + d.right;
        if (sum - 1.0).abs() > 1e-9 {
            return bad(
                "demand.through/left/right",
                format!("turning ratios sum to {sum}, not 1"),
            );
        }
        if d.bus_occupancy == 0 || d.tram_occupancy == 0 {
            return bad("demand.*_occupancy", "occupancy must be at least 1".into());
        }
        let s = &self.scenario;
        if !(1..=5).contains(&s.id) {
            return bad("scenario.id", format!("must be in 1..=5, got {}", s.id));
        }
        if s.horizon_s == 0 {
            return bad("scenario.horizon_s", "must be positive".into());
        }
        if s.focus_intersection >= n.intersections {
            return bad("scenario.focus_intersection", "outside the corridor".into());
        }
        let g = self.signal.initial_green_s;
        if g != 0 && !(8..=45).contains(&g) {
            return bad("signal.initial_green_s", format!("must be 0 or in 8..=45, got {g}"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_defaults() {
        let c = SimConfig::parse("").unwrap();
        assert_eq!(c, SimConfig::default());
        assert_eq!(c.network.intersections, 6);
        assert_eq!(c.network.tram_stops, 3);
    }

    #[test]
    fn sections_override() {
        let c = SimConfig::parse("[scenario]\nid = 3\n[demand]\nrate_scale = 0.0\nbus_headway_s = 0\n").unwrap();
        assert_eq!(c.scenario.id, 3);
        assert_eq!(c.demand.rate_scale, 0.0);
    }

    #[test]
    fn malformed_reports_location_and_field() {
        let err = SimConfig::parse("[network]\nintersections = \"six\"\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2"), "{msg}");
        assert!(msg.contains("intersections"), "{msg}");
        let err = SimConfig::parse("[demand]\nthrough = 0.9\n").unwrap_err();
        assert!(err.to_string().contains("turning ratios"));
        let err = SimConfig::parse("[network]\nlanes = 3\n").unwrap_err();
        assert!(err.to_string().contains("lanes"));
        assert!(SimConfig::parse("[scenario]\nid = 6\n").is_err());
    }
}
