//! The simulation state and its one-second update.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use crate::error::{Error, Result};

use super::config::SimConfig;
use super::demand::DemandSpec;
use super::network::{Mode, Network, LANES_PER_INTERSECTION};
use super::signal::{Phase, SignalController, Stage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Motion {
    Moving,
    Queued,
    Dwelling,
    Exited,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vehicle {
    pub id: usize,
    pub mode: Mode,
    pub occupancy: u32,
    /// Global lane ids, one per intersection crossed.
    pub route: Vec<usize>,
    pub leg: usize,
    pub position_m: f64,
    pub motion: Motion,
    pub spawn_time: u32,
    pub exit_time: Option<u32>,
    /// Seconds spent below the delay speed threshold.
    pub waiting_s: u32,
    dwell_left: u32,
    stop_served: bool,
}

impl Vehicle {
    /// Current lane, `None` once exited.
    pub fn lane(&self) -> Option<usize> {
        (self.motion != Motion::Exited).then(|| self.route[self.leg])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    Network,
    Intersection(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Discharge {
    pub intersection: usize,
    pub local_lane: usize,
    pub vehicle: usize,
    pub phase: Phase,
    pub stage: Stage,
}

/// Everything observable about one simulated second.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: u32,
    pub spawned: u32,
    pub exited: u32,
    pub spawned_total: u64,
    pub exited_total: u64,
    pub in_network: u64,
    pub discharges: Vec<Discharge>,
    /// Passengers delayed on lanes approaching each intersection.
    pub delayed_by_intersection: Vec<u64>,
    pub delayed_network: u64,
    /// Queued road vehicles (trams excluded) per intersection.
    pub queued_by_intersection: Vec<u64>,
    pub queued_network: u64,
    /// Controller state during this second.
    pub signals: Vec<(Phase, Stage)>,
}

impl StepRecord {
    pub fn csv_header(n: usize) -> String {
        let mut h = String::from("t,delayed_passengers,queue_veh");
        for i in 1..=n {
            h.push_str(&format!(",delayed_i{i}"));
        }
        for i in 1..=n {
            h.push_str(&format!(",queue_i{i}"));
        }
        h
    }

    pub fn csv_row(&self) -> String {
        let mut r = format!("{},{},{}", self.t, self.delayed_network, self.queued_network);
        for v in self.delayed_by_intersection.iter().chain(&self.queued_by_intersection) {
            r.push_str(&format!(",{v}"));
        }
        r
    }
}

#[derive(Debug, Clone)]
pub struct SimWorld {
    cfg: SimConfig,
    net: Network,
    demand: DemandSpec,
    rng: ChaCha8Rng,
    time: u32,
    vehicles: Vec<Vehicle>,
    active: Vec<usize>,
    queues: Vec<VecDeque<usize>>,
    credits: Vec<f64>,
    lane_arrivals: Vec<u64>,
    controllers: Vec<SignalController>,
    arrivals: Vec<Option<Poisson<f64>>>,
    car_extra: Option<Poisson<f64>>,
    spawned: u64,
    exited: u64,
}

/// Builds a fresh world; every controller starts in P1 green at t = 0.
pub fn load_scenario(cfg: &SimConfig, seed: u64) -> Result<SimWorld> {
    SimWorld::new(cfg.clone(), seed)
}

impl SimWorld {
    pub fn new(cfg: SimConfig, seed: u64) -> Result<Self> {
        let net = Network::build(&cfg)?;
        let demand = DemandSpec::new(&cfg, &net);
        let arrivals = (0..net.entries().len())
            .map(|e| {
                let lam = demand.peak_rate(e) / 3600.0;
                (lam > 0.0).then(|| Poisson::new(lam).expect("positive rate"))
            })
            .collect();
        let mean = demand.car_extra_occupancy_mean;
        let car_extra = (mean > 0.0).then(|| Poisson::new(mean).expect("positive mean"));
        let n = net.num_intersections();
        let lanes = net.num_lanes();
        let controllers = (0..n)
            .map(|i| SignalController::new(i, cfg.signal.initial_green_s))
            .collect();
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            time: 0,
            vehicles: Vec::new(),
            active: Vec::new(),
            queues: vec![VecDeque::new(); lanes],
            credits: vec![0.0; lanes],
            lane_arrivals: vec![0; lanes],
            controllers,
            arrivals,
            car_extra,
            spawned: 0,
            exited: 0,
            cfg,
            net,
            demand,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn demand(&self) -> &DemandSpec {
        &self.demand
    }

    /// Seconds simulated so far.
    pub fn time(&self) -> u32 {
        self.time
    }

    pub fn horizon(&self) -> u32 {
        self.cfg.scenario.horizon_s
    }

    pub fn is_finished(&self) -> bool {
        self.time >= self.horizon()
    }

    pub fn num_intersections(&self) -> usize {
        self.net.num_intersections()
    }

    pub fn controllers(&self) -> &[SignalController] {
        &self.controllers
    }

    pub fn controller(&self, i: usize) -> Result<&SignalController> {
        self.controllers.get(i).ok_or(Error::OutOfRange {
            what: "intersection",
            index: i,
            limit: self.controllers.len(),
        })
    }

    /// Every vehicle ever spawned, indexed by id.
    pub fn vehicles(&self) -> &[Vehicle] {
        &self.vehicles
    }

    pub fn active_vehicles(&self) -> impl Iterator<Item = &Vehicle> + '_ {
        self.active.iter().map(move |&id| &self.vehicles[id])
    }

    pub fn queue(&self, lane: usize) -> &VecDeque<usize> {
        &self.queues[lane]
    }

    /// Vehicles that have reached each lane's stop line so far.
    pub fn lane_arrivals(&self) -> &[u64] {
        &self.lane_arrivals
    }

    pub fn spawned_total(&self) -> u64 {
        self.spawned
    }

    pub fn exited_total(&self) -> u64 {
        self.exited
    }

    pub fn in_network(&self) -> u64 {
        self.active.len() as u64
    }

    pub fn free_flow_kmh(&self, mode: Mode) -> f64 {
        match mode {
            Mode::Tram => self.cfg.network.tram_speed_kmh,
            Mode::Car | Mode::Bus => self.cfg.network.car_speed_kmh,
        }
    }

    pub fn speed_kmh(&self, v: &Vehicle) -> f64 {
        match v.motion {
            Motion::Moving => self.free_flow_kmh(v.mode),
            _ => 0.0,
        }
    }

    pub fn is_delayed(&self, v: &Vehicle) -> bool {
        v.motion != Motion::Exited
            && self.speed_kmh(v) < self.cfg.network.delay_speed_kmh
            && (v.motion != Motion::Dwelling || self.cfg.network.count_dwelling_as_delayed)
    }

    /// Occupants of delayed vehicles within `scope`.
    pub fn delayed_passengers(&self, scope: Scope) -> Result<u64> {
        if let Scope::Intersection(i) = scope {
            self.controller(i)?;
        }
        Ok(self
            .active_vehicles()
            .filter(|v| self.is_delayed(v))
            .filter(|v| match scope {
                Scope::Network => true,
                Scope::Intersection(i) => v.lane().map(|l| self.net.lane(l).intersection) == Some(i),
            })
            .map(|v| u64::from(v.occupancy))
            .sum())
    }

    /// Starts a transition at intersection `i` toward `phase` with `green_s` of green.
    pub fn apply_signal(&mut self, i: usize, phase: Phase, green_s: u32) -> Result<()> {
        let limit = self.controllers.len();
        self.controllers
            .get_mut(i)
            .ok_or(Error::OutOfRange {
                what: "intersection",
                index: i,
                limit,
            })?
            .apply(phase, green_s)
    }

    /// Inserts a vehicle at the start of its first lane.
    pub fn spawn(&mut self, mode: Mode, route: Vec<usize>, occupancy: u32) -> Result<usize> {
        if route.is_empty() {
            return Err(Error::Invalid("empty route".into()));
        }
        if occupancy == 0 {
            return Err(Error::Invalid("occupancy must be at least 1".into()));
        }
        if let Some(&bad) = route.iter().find(|&&l| l >= self.net.num_lanes()) {
            return Err(Error::OutOfRange {
                what: "lane",
                index: bad,
                limit: self.net.num_lanes(),
            });
        }
        let id = self.vehicles.len();
        self.vehicles.push(Vehicle {
            id,
            mode,
            occupancy,
            route,
            leg: 0,
            position_m: 0.0,
            motion: Motion::Moving,
            spawn_time: self.time,
            exit_time: None,
            waiting_s: 0,
            dwell_left: 0,
            stop_served: false,
        });
        self.active.push(id);
        self.spawned += 1;
        Ok(id)
    }

    fn spawn_arrivals(&mut self) {
        let t = self.time;
        let d = &self.demand;
        let mut fixed: Vec<(Mode, bool)> = Vec::new();
        let h = d.tram_headway_s;
        if h > 0 {
            if t.is_multiple_of(h) {
                fixed.push((Mode::Tram, true));
            }
            if t % h == h / 2 {
                fixed.push((Mode::Tram, false));
            }
        }
        let h = d.bus_headway_s;
        if h > 0 {
            if t % h == h / 4 {
                fixed.push((Mode::Bus, true));
            }
            if t % h == 3 * h / 4 {
                fixed.push((Mode::Bus, false));
            }
        }
        for (mode, eastbound) in fixed {
            let (route, occ) = match mode {
                Mode::Tram => (self.net.tram_route(eastbound), self.demand.tram_occupancy),
                _ => (self.net.bus_route(eastbound), self.demand.bus_occupancy),
            };
            self.spawn(mode, route, occ).expect("valid transit route");
        }
        for e in 0..self.arrivals.len() {
            let Some(pois) = self.arrivals[e] else {
                continue;
            };
            let count = pois.sample(&mut self.rng) as u64;
            let accept = self.demand.car_rate(e, t) / self.demand.peak_rate(e);
            for _ in 0..count {
                if self.rng.random::<f64>() >= accept {
                    continue;
                }
                let entry = self.net.entries()[e];
                let route = self
                    .net
                    .car_route(entry, self.demand.ratios, &mut self.rng)
                    .expect("entry on network");
                let extra = self.car_extra.map_or(0, |p| p.sample(&mut self.rng) as u32);
                self.spawn(Mode::Car, route, 1 + extra).expect("valid car route");
            }
        }
    }

    fn move_vehicles(&mut self) {
        let dwell = self.cfg.network.tram_dwell_s;
        for &id in &self.active {
            let speed_mps = match self.vehicles[id].mode {
                Mode::Tram => self.cfg.network.tram_speed_kmh,
                _ => self.cfg.network.car_speed_kmh,
            } / 3.6;
            let v = &mut self.vehicles[id];
            match v.motion {
                Motion::Dwelling => {
                    v.dwell_left -= 1;
                    if v.dwell_left == 0 {
                        v.motion = Motion::Moving;
                    }
                }
                Motion::Moving => {
                    let lane_id = v.route[v.leg];
                    let lane = self.net.lane(lane_id);
                    v.position_m += speed_mps;
                    match lane.stop_m {
                        Some(stop) if v.mode == Mode::Tram && !v.stop_served && v.position_m >= stop => {
                            v.position_m = stop;
                            v.stop_served = true;
                            if dwell > 0 {
                                v.motion = Motion::Dwelling;
                                v.dwell_left = dwell;
                            }
                        }
                        _ if v.position_m >= lane.length_m => {
                            v.position_m = lane.length_m;
                            v.motion = Motion::Queued;
                            self.queues[lane_id].push_back(id);
                            self.lane_arrivals[lane_id] += 1;
                        }
                        _ => {}
                    }
                }
                Motion::Queued | Motion::Exited => {}
            }
        }
    }

    fn discharge(&mut self, out: &mut Vec<Discharge>) {
        let sat = self.cfg.network.saturation_veh_s;
        let cap = sat.max(1.0);
        for k in 0..self.controllers.len() {
            let (phase, stage) = (self.controllers[k].phase(), self.controllers[k].stage());
            if stage != Stage::Green {
                continue;
            }
            for &local in phase.lanes() {
                let lane = k * LANES_PER_INTERSECTION + local;
                self.credits[lane] = (self.credits[lane] + sat).min(cap);
                while self.credits[lane] >= 1.0 - 1e-9 {
                    let Some(id) = self.queues[lane].pop_front() else {
                        break;
                    };
                    self.credits[lane] = (self.credits[lane] - 1.0).max(0.0);
                    let v = &mut self.vehicles[id];
                    v.leg += 1;
                    if v.leg < v.route.len() {
                        v.position_m = 0.0;
                        v.motion = Motion::Moving;
                        v.stop_served = false;
                    } else {
                        v.leg -= 1;
                        v.motion = Motion::Exited;
                        v.exit_time = Some(self.time);
                        self.exited += 1;
                    }
                    out.push(Discharge {
                        intersection: k,
                        local_lane: local,
                        vehicle: id,
                        phase,
                        stage,
                    });
                }
            }
        }
        let vehicles = &self.vehicles;
        self.active.retain(|&id| vehicles[id].motion != Motion::Exited);
    }

    /// Advances the world by one second.
    pub fn step(&mut self) -> StepRecord {
        let t = self.time;
        let signals = self.controllers.iter().map(|c| (c.phase(), c.stage())).collect();
        let (spawned0, exited0) = (self.spawned, self.exited);
        self.spawn_arrivals();
        self.move_vehicles();
        let mut discharges = Vec::new();
        self.discharge(&mut discharges);
        for k in 0..self.controllers.len() {
            if self.controllers[k].tick() {
                let base = k * LANES_PER_INTERSECTION;
                self.credits[base..base + LANES_PER_INTERSECTION].fill(0.0);
            }
        }

        let n = self.num_intersections();
        let mut delayed = vec![0u64; n];
        let mut queued = vec![0u64; n];
        for idx in 0..self.active.len() {
            let id = self.active[idx];
            let is_delayed = self.is_delayed(&self.vehicles[id]);
            let v = &mut self.vehicles[id];
            let k = self.net.lane(v.route[v.leg]).intersection;
            if is_delayed {
                v.waiting_s += 1;
                delayed[k] += u64::from(v.occupancy);
            }
            if v.motion == Motion::Queued && v.mode != Mode::Tram {
                queued[k] += 1;
            }
        }
        self.time += 1;
        StepRecord {
            t,
            spawned: (self.spawned - spawned0) as u32,
            exited: (self.exited - exited0) as u32,
            spawned_total: self.spawned,
            exited_total: self.exited,
            in_network: self.in_network(),
            discharges,
            delayed_network: delayed.iter().sum(),
            delayed_by_intersection: delayed,
            queued_network: queued.iter().sum(),
            queued_by_intersection: queued,
            signals,
        }
    }
}
