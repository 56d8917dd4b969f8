//! Episode metrics, controller orchestration and CSV output.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::baselines::{plan_from_warmup, random_policy, FixedTimeController};
use crate::env::{action_mask, decode_action, observe_all};
use crate::error::{invalid, Error, Result};
use crate::marl::{act, greedy, Agent};
use crate::sim::{load_scenario, Mode, Motion, SimConfig, SimWorld, StepRecord};

pub use crate::marl::AblationConfig;

/// Number of evaluation seeds averaged per table cell.
pub const EVAL_SEEDS: u64 = 5;
/// Evaluation worlds draw seeds from here upward, far from training seeds.
pub const EVAL_SEED_BASE: u64 = 1 << 40;

pub fn eval_seed(k: u64) -> u64 {
    EVAL_SEED_BASE + k
}

/// Per-second and per-transit-vehicle record of one evaluation episode.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsLog {
    pub delayed_network: Vec<u64>,
    pub delayed_by_intersection: Vec<Vec<u64>>,
    /// Queued road vehicles, trams excluded.
    pub queued_network: Vec<u64>,
    pub queued_by_intersection: Vec<Vec<u64>>,
    /// (waiting seconds, completed) per bus.
    pub bus_waits: Vec<(u32, bool)>,
    pub tram_waits: Vec<(u32, bool)>,
}

impl MetricsLog {
    pub fn from_run(records: &[StepRecord], world: &SimWorld) -> Self {
        let mut log = Self::default();
        for r in records {
            log.delayed_network.push(r.delayed_network);
            log.delayed_by_intersection.push(r.delayed_by_intersection.clone());
            log.queued_network.push(r.queued_network);
            log.queued_by_intersection.push(r.queued_by_intersection.clone());
        }
        for v in world.vehicles() {
            let entry = (v.waiting_s, v.motion == Motion::Exited);
            match v.mode {
                Mode::Bus => log.bus_waits.push(entry),
                Mode::Tram => log.tram_waits.push(entry),
                Mode::Car => {}
            }
        }
        log
    }

    pub fn horizon(&self) -> usize {
        self.delayed_network.len()
    }
}

/// Average delayed passengers per second.
pub fn anp(log: &MetricsLog) -> Result<f64> {
    if log.horizon() == 0 {
        return invalid("empty metrics log");
    }
    Ok(log.delayed_network.iter().sum::<u64>() as f64 / log.horizon() as f64)
}

/// Average queued road vehicles per second.
pub fn aql(log: &MetricsLog) -> Result<f64> {
    if log.queued_network.is_empty() {
        return invalid("empty metrics log");
    }
    Ok(log.queued_network.iter().sum::<u64>() as f64 / log.queued_network.len() as f64)
}

fn mean_wait(waits: &[(u32, bool)]) -> Option<f64> {
    let done: Vec<f64> = waits.iter().filter(|w| w.1).map(|w| f64::from(w.0)).collect();
    (!done.is_empty()).then(|| done.iter().sum::<f64>() / done.len() as f64)
}

/// Mean waiting time of completed buses; `None` if no bus finished.
pub fn awt_bus(log: &MetricsLog) -> Option<f64> {
    mean_wait(&log.bus_waits)
}

pub fn awt_tram(log: &MetricsLog) -> Option<f64> {
    mean_wait(&log.tram_waits)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ControllerKind {
    /// Actor trained with the hypergraph critic.
    Stdsh,
    /// Actor trained with the plain critic.
    Mappo,
    /// Fixed time, Webster cycle.
    Fswf,
    Random,
}

impl ControllerKind {
    pub const ALL: [Self; 4] = [Self::Stdsh, Self::Mappo, Self::Fswf, Self::Random];

    pub fn is_learned(self) -> bool {
        matches!(self, Self::Stdsh | Self::Mappo)
    }
}

impl fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Stdsh => "stdsh",
            Self::Mappo => "mappo",
            Self::Fswf => "fswf",
            Self::Random => "random",
        })
    }
}

impl FromStr for ControllerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.to_string() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown controller `{s}` (stdsh|mappo|fswf|random)")))
    }
}

/// How a learned controller turns its policy into an action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Selection {
    /// Draw from the policy with the episode's seeded generator.
    #[default]
    Sample,
    /// Most probable allowed action.
    Greedy,
}

/// A controller ready to run.
#[derive(Debug, Clone)]
pub enum Controller {
    Learned {
        kind: ControllerKind,
        agent: Box<Agent>,
        selection: Selection,
    },
    FixedTime,
    Random,
}

impl Controller {
    /// Pairs a controller kind with its checkpoint. `stdsh` needs a model
    /// trained with the hypergraph critic and `mappo` one trained without.
    pub fn new(kind: ControllerKind, agent: Option<Agent>) -> Result<Self> {
        match (kind, agent) {
            (ControllerKind::Fswf, _) => Ok(Self::FixedTime),
            (ControllerKind::Random, _) => Ok(Self::Random),
            (k, None) => invalid(format!("controller `{k}` requires a trained checkpoint")),
            (k, Some(agent)) => {
                let hg = agent.ablation().hg;
                if hg != (k == ControllerKind::Stdsh) {
                    return invalid(format!(
                        "checkpoint with ablation `{}` does not match controller `{k}`",
                        agent.ablation()
                    ));
                }
                Ok(Self::Learned {
                    kind: k,
                    agent: Box::new(agent),
                    selection: Selection::default(),
                })
            }
        }
    }

    pub fn with_selection(mut self, sel: Selection) -> Self {
        if let Self::Learned { selection, .. } = &mut self {
            *selection = sel;
        }
        self
    }

    pub fn kind(&self) -> ControllerKind {
        match self {
            Self::Learned { kind, .. } => *kind,
            Self::FixedTime => ControllerKind::Fswf,
            Self::Random => ControllerKind::Random,
        }
    }

    /// CSV-safe ablation label (`hg+dsha+she+the`); `-` for non-learning
    /// controllers.
    pub fn ablation_label(&self) -> String {
        match self {
            Self::Learned { agent, .. } => agent.ablation().to_string().replace(',', "+"),
            _ => "-".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub scenario: u8,
    pub controller: ControllerKind,
    pub ablation: String,
    pub seed: u64,
    pub anp: f64,
    pub aql: f64,
    pub awt_bus: Option<f64>,
    pub awt_tram: Option<f64>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl Summary {
    pub const CSV_HEADER: &'static str = "scenario,controller,ablation,seed,anp,aql,awt_bus,awt_tram";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.scenario,
            self.controller,
            self.ablation,
            self.seed,
            self.anp,
            self.aql,
            opt(self.awt_bus),
            opt(self.awt_tram)
        )
    }

    pub fn parse_row(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 8 {
            return invalid(format!("summary row needs 8 fields: `{line}`"));
        }
        let num = |s: &str| -> Result<f64> { s.parse().map_err(|_| Error::Invalid(format!("bad number `{s}`"))) };
        let maybe = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                num(s).map(Some)
            }
        };
        Ok(Self {
            scenario: f[0]
                .parse()
                .map_err(|_| Error::Invalid(format!("bad scenario `{}`", f[0])))?,
            controller: f[1].parse()?,
            ablation: f[2].to_string(),
            seed: f[3]
                .parse()
                .map_err(|_| Error::Invalid(format!("bad seed `{}`", f[3])))?,
            anp: num(f[4])?,
            aql: num(f[5])?,
            awt_bus: maybe(f[6])?,
            awt_tram: maybe(f[7])?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Experiment {
    pub log: MetricsLog,
    pub summary: Summary,
}

impl Experiment {
    /// `t,metric,i1..iN,network`, one row per second and metric.
    pub fn heatmap_csv(&self) -> String {
        let n = self.log.delayed_by_intersection.first().map_or(0, Vec::len);
        let mut out = String::from("t,metric");
        for i in 1..=n {
            out.push_str(&format!(",i{i}"));
        }
        out.push_str(",network\n");
        let mut emit = |t: usize, name: &str, per: &[u64], total: u64| {
            out.push_str(&format!("{t},{name}"));
            for v in per {
                out.push_str(&format!(",{v}"));
            }
            out.push_str(&format!(",{total}\n"));
        };
        for t in 0..self.log.horizon() {
            emit(
                t,
                "delayed_passengers",
                &self.log.delayed_by_intersection[t],
                self.log.delayed_network[t],
            );
            emit(
                t,
                "queued_vehicles",
                &self.log.queued_by_intersection[t],
                self.log.queued_network[t],
            );
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        format!("{}\n{}\n", Summary::CSV_HEADER, self.summary.csv_row())
    }
}

/// Runs one evaluation episode. Identical inputs give identical logs.
pub fn run_experiment(cfg: &SimConfig, controller: &Controller, seed: u64) -> Result<Experiment> {
    cfg.validate()?;
    let horizon = cfg.scenario.horizon_s;
    if horizon == 0 {
        return invalid("horizon must be at least one second");
    }
    let mut world = load_scenario(cfg, seed)?;
    let mut fixed = match controller {
        Controller::FixedTime => Some(FixedTimeController::new(plan_from_warmup(cfg, seed)?)),
        _ => None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa11_c0de);
    let mut records = Vec::with_capacity(horizon as usize);
    for _ in 0..horizon {
        match controller {
            Controller::FixedTime => fixed.as_mut().expect("plan built").act(&mut world)?,
            Controller::Learned { agent, selection, .. } => {
                let obs = observe_all(&world);
                for (i, o) in obs.iter().enumerate() {
                    if world.controller(i)?.trigger() {
                        let (x, mask) = (o.normalized(), action_mask(o.phase));
                        let a = match selection {
                            Selection::Greedy => greedy(&agent.policy, &x, &mask)?,
                            Selection::Sample => act(&agent.policy, &x, &mask, &mut rng)?.0,
                        };
                        let (phase, green) = decode_action(a)?;
                        world.apply_signal(i, phase, green)?;
                    }
                }
            }
            Controller::Random => {
                for i in 0..world.num_intersections() {
                    let c = world.controller(i)?;
                    if c.trigger() {
                        let a = random_policy(&action_mask(c.phase()), &mut rng)?;
                        let (phase, green) = decode_action(a)?;
                        world.apply_signal(i, phase, green)?;
                    }
                }
            }
        }
        records.push(world.step());
    }
    let log = MetricsLog::from_run(&records, &world);
    let summary = Summary {
        scenario: cfg.scenario.id,
        controller: controller.kind(),
        ablation: controller.ablation_label(),
        seed,
        anp: anp(&log)?,
        aql: aql(&log)?,
        awt_bus: awt_bus(&log),
        awt_tram: awt_tram(&log),
    };
    Ok(Experiment { log, summary })
}

/// Seed means per (scenario, controller, ablation) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub scenario: u8,
    pub controller: ControllerKind,
    pub ablation: String,
    pub seeds: usize,
    pub anp: f64,
    pub aql: f64,
    pub awt_bus: Option<f64>,
    pub awt_tram: Option<f64>,
}

impl ReportRow {
    pub const CSV_HEADER: &'static str = "scenario,controller,ablation,seeds,anp,aql,awt_bus,awt_tram";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{:.2},{:.2},{},{}",
            self.scenario,
            self.controller,
            self.ablation,
            self.seeds,
            self.anp,
            self.aql,
            self.awt_bus.map(|v| format!("{v:.2}")).unwrap_or_default(),
            self.awt_tram.map(|v| format!("{v:.2}")).unwrap_or_default()
        )
    }
}

fn mean_present(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn report(rows: &[Summary]) -> Vec<ReportRow> {
    let mut cells: BTreeMap<(u8, ControllerKind, String), Vec<&Summary>> = BTreeMap::new();
    for r in rows {
        cells
            .entry((r.scenario, r.controller, r.ablation.clone()))
            .or_default()
            .push(r);
    }
    cells
        .into_iter()
        .map(|((scenario, controller, ablation), rs)| {
            let n = rs.len() as f64;
            ReportRow {
                scenario,
                controller,
                ablation,
                seeds: rs.len(),
                anp: rs.iter().map(|r| r.anp).sum::<f64>() / n,
                aql: rs.iter().map(|r| r.aql).sum::<f64>() / n,
                awt_bus: mean_present(rs.iter().map(|r| r.awt_bus)),
                awt_tram: mean_present(rs.iter().map(|r| r.awt_tram)),
            }
        })
        .collect()
}

pub fn report_csv(rows: &[ReportRow]) -> String {
    let mut out = format!("{}\n", ReportRow::CSV_HEADER);
    for r in rows {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn log_of(delayed: &[u64], queued: &[u64]) -> MetricsLog {
        MetricsLog {
            delayed_network: delayed.to_vec(),
            delayed_by_intersection: delayed.iter().map(|&d| vec![d]).collect(),
            queued_network: queued.to_vec(),
            queued_by_intersection: queued.iter().map(|&q| vec![q]).collect(),
            ..Default::default()
        }
    }

    fn short(id: u8) -> SimConfig {
        let mut cfg = SimConfig::scenario(id).unwrap();
        cfg.scenario.horizon_s = 400;
        cfg
    }

    #[test]
    fn metric_examples() {
        assert_eq!(anp(&log_of(&[3, 5], &[2, 4])).unwrap(), 4.0);
        assert_eq!(aql(&log_of(&[3, 5], &[2, 4])).unwrap(), 3.0);
        assert_eq!(anp(&log_of(&[0; 9], &[0; 9])).unwrap(), 0.0);
        assert!(anp(&MetricsLog::default()).is_err());
        let mut log = log_of(&[1], &[1]);
        assert_eq!(awt_bus(&log), None);
        log.bus_waits = vec![(30, true), (500, false)];
        assert_eq!(awt_bus(&log), Some(30.0));
        assert_eq!(awt_tram(&log), None);
    }

    proptest! {
        #[test]
        fn anp_matches_a_recount(d in proptest::collection::vec(0u64..5000, 1..400)) {
            let log = log_of(&d, &d);
            let mut total = 0.0;
            for v in &d {
                total += *v as f64;
            }
            let got = anp(&log).unwrap();
            prop_assert!((got - total / d.len() as f64).abs() <= 1e-9 * got.max(1.0));
        }
    }

    #[test]
    fn tram_only_jam_has_no_queue() {
        let mut cfg = short(1);
        cfg.demand.rate_scale = 0.0;
        cfg.demand.bus_headway_s = 0;
        // P1 is held, so trams stack at their first stop line
        let mut world = load_scenario(&cfg, 0).unwrap();
        let mut records = Vec::new();
        for _ in 0..cfg.scenario.horizon_s {
            records.push(world.step());
        }
        assert!(world
            .active_vehicles()
            .any(|v| v.mode == Mode::Tram && v.motion == Motion::Queued));
        let log = MetricsLog::from_run(&records, &world);
        assert_eq!(aql(&log).unwrap(), 0.0);
        assert!(anp(&log).unwrap() > 0.0);
        assert_eq!(awt_tram(&log), None);
    }

    #[test]
    fn fswf_summary_and_determinism() {
        let cfg = short(1);
        let a = run_experiment(&cfg, &Controller::FixedTime, 3).unwrap();
        let b = run_experiment(&cfg, &Controller::FixedTime, 3).unwrap();
        assert_eq!(a.summary_csv(), b.summary_csv());
        assert_eq!(a.heatmap_csv(), b.heatmap_csv());
        let row = a.summary.csv_row();
        assert_eq!(row.split(',').count(), Summary::CSV_HEADER.split(',').count());
        assert_eq!(Summary::parse_row(&row).unwrap(), a.summary);
        let csv = a.heatmap_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "t,metric,i1,i2,i3,i4,i5,i6,network");
        assert_eq!(lines.len(), 1 + 2 * 400);
    }

    #[test]
    fn learned_controllers_need_a_matching_checkpoint() {
        assert!(Controller::new(ControllerKind::Stdsh, None).is_err());
        assert!(Controller::new(ControllerKind::Mappo, None).is_err());
        assert!(Controller::new(ControllerKind::Fswf, None).is_ok());
        let full = Agent::new(6, AblationConfig::FULL, 0).unwrap();
        let plain = Agent::new(6, AblationConfig::NO_HG, 0).unwrap();
        assert!(Controller::new(ControllerKind::Mappo, Some(full.clone())).is_err());
        assert!(Controller::new(ControllerKind::Stdsh, Some(plain.clone())).is_err());
        let c = Controller::new(ControllerKind::Stdsh, Some(full)).unwrap();
        let cfg = short(2);
        let a = run_experiment(&cfg, &c, 9).unwrap();
        let b = run_experiment(&cfg, &c, 9).unwrap();
        assert_eq!(a.heatmap_csv(), b.heatmap_csv());
        assert_eq!(a.summary.ablation, "hg+dsha+she+the");
        assert_eq!(Summary::parse_row(&a.summary.csv_row()).unwrap(), a.summary);
        let g = c.clone().with_selection(Selection::Greedy);
        let (g1, g2) = (
            run_experiment(&cfg, &g, 9).unwrap(),
            run_experiment(&cfg, &g, 4).unwrap(),
        );
        assert_eq!(g1.heatmap_csv(), run_experiment(&cfg, &g, 9).unwrap().heatmap_csv());
        assert!(g1.summary.anp >= 0.0 && g2.summary.anp >= 0.0);
        let m = Controller::new(ControllerKind::Mappo, Some(plain)).unwrap();
        assert_eq!(run_experiment(&cfg, &m, 9).unwrap().summary.ablation, "none");
    }

    #[test]
    fn random_controller_runs() {
        let r = run_experiment(&short(1), &Controller::Random, 1).unwrap();
        assert!(r.summary.anp >= 0.0);
        assert_eq!("random".parse::<ControllerKind>().unwrap(), ControllerKind::Random);
        assert!("webster".parse::<ControllerKind>().is_err());
    }

    #[test]
    fn report_averages_seeds() {
        let mk = |seed, anp, bus| Summary {
            scenario: 1,
            controller: ControllerKind::Fswf,
            ablation: "-".into(),
            seed,
            anp,
            aql: 2.0,
            awt_bus: bus,
            awt_tram: None,
        };
        let rows = report(&[mk(0, 10.0, Some(4.0)), mk(1, 20.0, None), mk(2, 30.0, Some(8.0))]);
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].seeds, 3);
        assert_eq!(rows[0].anp, 20.0);
        assert_eq!(rows[0].awt_bus, Some(6.0));
        assert_eq!(rows[0].awt_tram, None);
        assert!(report_csv(&rows).starts_with(ReportRow::CSV_HEADER));
    }
}
