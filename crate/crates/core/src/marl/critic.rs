//! Centralized critic: hypergraph encoder over a window of corridor
//! snapshots, followed by a value head.

use std::collections::BTreeMap;
use std::str::FromStr;

use rand::Rng;

use crate::encoder::{padded_width, EncoderConfig, EncoderParams};
use crate::env::{Observation, OBS_WIDTH};
use crate::error::{invalid, Error, Result};
use crate::hypergraph::{EdgeSelection, Incidence, STHypergraph};
use crate::numeric::{Graph, ParamSet, Tensor, Var};

use super::nets::Mlp2;

/// Which critic components are switched on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AblationConfig {
    /// Hypergraph encoder; when off the head sees the mean observation.
    pub hg: bool,
    /// Learned attention; when off members and incident edges are averaged.
    pub dsha: bool,
    /// Spatial hyperedges.
    pub she: bool,
    /// Temporal hyperedges.
    pub the: bool,
}

impl AblationConfig {
    pub const FULL: Self = Self {
        hg: true,
        dsha: true,
        she: true,
        the: true,
    };
    pub const NO_HG: Self = Self {
        hg: false,
        dsha: false,
        she: false,
        the: false,
    };

    /// The five rows of the ablation grid: no hypergraph, one component
    /// removed at a time, and the full model.
    pub fn grid() -> [Self; 5] {
        [
            Self::NO_HG,
            Self {
                the: false,
                ..Self::FULL
            },
            Self {
                she: false,
                ..Self::FULL
            },
            Self {
                dsha: false,
                ..Self::FULL
            },
            Self::FULL,
        ]
    }

    pub fn flags(&self) -> [bool; 4] {
        [self.hg, self.dsha, self.she, self.the]
    }

    pub fn from_flags(f: [bool; 4]) -> Self {
        Self {
            hg: f[0],
            dsha: f[1],
            she: f[2],
            the: f[3],
        }
    }

    fn validate(&self) -> Result<()> {
        if self.hg && !self.she && !self.the {
            return invalid("hypergraph needs spatial or temporal hyperedges");
        }
        Ok(())
    }
}

impl std::fmt::Display for AblationConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let names: Vec<&str> = ["hg", "dsha", "she", "the"]
            .into_iter()
            .zip(self.flags())
            .filter_map(|(n, on)| on.then_some(n))
            .collect();
        if names.is_empty() {
            write!(f, "none")
        } else {
            write!(f, "{}", names.join(","))
        }
    }
}

/// Parses a comma-separated list of enabled components, or `none`.
impl FromStr for AblationConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut f = [false; 4];
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part.to_ascii_lowercase().as_str() {
                "hg" => f[0] = true,
                "dsha" => f[1] = true,
                "she" => f[2] = true,
                "the" => f[3] = true,
                "none" => {}
                other => return invalid(format!("unknown component `{other}`")),
            }
        }
        let cfg = Self::from_flags(f);
        if !cfg.hg && (cfg.dsha || cfg.she || cfg.the) {
            return invalid("dsha, she and the require hg");
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticConfig {
    pub ablation: AblationConfig,
    pub intersections: usize,
    /// Snapshots per window.
    pub window: usize,
    /// Node feature width.
    pub feature_width: usize,
    pub heads: usize,
    pub model_width: usize,
    pub hidden: usize,
    pub tau: f64,
}

impl CriticConfig {
    pub fn corridor(intersections: usize, ablation: AblationConfig) -> Self {
        Self {
            ablation,
            intersections,
            window: 5,
            feature_width: padded_width(OBS_WIDTH, 4),
            heads: 4,
            model_width: 64,
            hidden: 256,
            tau: 1.0,
        }
    }

    fn head_input(&self) -> usize {
        if self.ablation.hg {
            self.model_width
        } else {
            self.feature_width
        }
    }
}

/// One regression target tied to a stored critic input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticSample {
    pub input: usize,
    pub target: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Critic {
    pub config: CriticConfig,
    pub encoder: Option<EncoderParams>,
    pub head: Mlp2,
    incidence: Option<Incidence>,
}

impl Critic {
    pub fn new<R: Rng>(config: CriticConfig, rng: &mut R) -> Result<Self> {
        let encoder = if config.ablation.hg {
            let ec = EncoderConfig {
                heads: config.heads,
                in_width: config.feature_width,
                model_width: config.model_width,
                tau: config.tau,
                attention: config.ablation.dsha,
            };
            Some(EncoderParams::new(ec, rng)?)
        } else {
            None
        };
        let head = Mlp2::new("critic", config.head_input(), config.hidden, 1, 1.0, rng);
        Self::assemble(config, encoder, head)
    }

    /// Rebuilds a critic from stored parameter sets.
    pub fn from_parts(config: CriticConfig, encoder: Option<ParamSet>, head: Mlp2) -> Result<Self> {
        let encoder = match (config.ablation.hg, encoder) {
            (true, Some(p)) => Some(EncoderParams::from_params(
                EncoderConfig {
                    heads: config.heads,
                    in_width: config.feature_width,
                    model_width: config.model_width,
                    tau: config.tau,
                    attention: config.ablation.dsha,
                },
                p,
            )?),
            (false, None) => None,
            _ => return invalid("encoder parameters do not match the hypergraph switch"),
        };
        if head.in_width() != config.head_input() || head.out_width() != 1 {
            return invalid("critic head shape does not match its configuration");
        }
        Self::assemble(config, encoder, head)
    }

    fn assemble(config: CriticConfig, encoder: Option<EncoderParams>, head: Mlp2) -> Result<Self> {
        config.ablation.validate()?;
        let incidence = if config.ablation.hg {
            let h = STHypergraph::build(config.intersections, config.window)?;
            Some(h.select(EdgeSelection {
                spatial: config.ablation.she,
                temporal: config.ablation.the,
            })?)
        } else {
            None
        };
        Ok(Self {
            config,
            encoder,
            head,
            incidence,
        })
    }

    pub fn incidence(&self) -> Option<&Incidence> {
        self.incidence.as_ref()
    }

    /// Input for one decision instant: the node-feature window when the
    /// hypergraph is on, otherwise the mean of the current observations.
    pub fn input(&self, window: impl FnOnce() -> Result<Tensor>, current: &[Observation]) -> Result<Tensor> {
        if self.config.ablation.hg {
            return window();
        }
        if current.is_empty() {
            return invalid("no observations");
        }
        let mut mean = vec![0.0; self.config.feature_width];
        for o in current {
            for (m, v) in mean.iter_mut().zip(o.normalized()) {
                *m += v;
            }
        }
        let k = current.len() as f64;
        mean.iter_mut().for_each(|m| *m /= k);
        Ok(Tensor::row(mean))
    }

    /// Number of tensors ahead of the head in [`bind`](Self::bind) order.
    pub fn num_encoder_tensors(&self) -> usize {
        self.encoder.as_ref().map_or(0, |e| e.params.len())
    }

    /// Encoder tensors followed by head tensors.
    pub fn tensors(&self) -> Vec<Tensor> {
        let mut out: Vec<Tensor> = Vec::new();
        if let Some(e) = &self.encoder {
            out.extend(e.params.iter().map(|(_, t)| t.clone()));
        }
        out.extend(self.head.params.iter().map(|(_, t)| t.clone()));
        out
    }

    pub fn bind(&self, g: &mut Graph) -> Result<Vec<Var>> {
        let mut vars = match &self.encoder {
            Some(e) => e.params.bind(g)?,
            None => Vec::new(),
        };
        vars.extend(self.head.params.bind(g)?);
        Ok(vars)
    }

    /// `1×1` value of one input. `vars` come from [`bind`](Self::bind).
    pub fn value_var(&self, g: &mut Graph, vars: &[Var], input: &Tensor) -> Result<Var> {
        let k = self.num_encoder_tensors();
        let x = g.constant(input.clone())?;
        let feat = match (&self.encoder, &self.incidence) {
            (Some(enc), Some(inc)) => enc.forward(g, &vars[..k], x, inc)?.pooled,
            _ => x,
        };
        self.head.forward(g, &vars[k..], feat)
    }

    pub fn value(&self, input: &Tensor) -> Result<f64> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g)?;
        let v = self.value_var(&mut g, &vars, input)?;
        g.value(v).item()
    }

    /// `½·mean (target − V)²` over `samples`. Inputs shared by several
    /// samples are evaluated once.
    pub fn loss_var(&self, g: &mut Graph, vars: &[Var], inputs: &[Tensor], samples: &[CriticSample]) -> Result<Var> {
        if samples.is_empty() {
            return invalid("critic loss over an empty batch");
        }
        let mut groups: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for s in samples {
            if s.input >= inputs.len() {
                return Err(Error::OutOfRange {
                    what: "critic input",
                    index: s.input,
                    limit: inputs.len(),
                });
            }
            groups.entry(s.input).or_default().push(s.target);
        }
        let mut values = Vec::with_capacity(groups.len());
        let (mut means, mut counts) = (Vec::new(), Vec::new());
        let mut residual = 0.0;
        for (&w, targets) in &groups {
            values.push(self.value_var(g, vars, &inputs[w])?);
            let mean = targets.iter().sum::<f64>() / targets.len() as f64;
            residual += targets.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>();
            means.push(mean);
            counts.push(targets.len() as f64);
        }
        let v = if values.len() == 1 {
            values[0]
        } else {
            g.concat_rows(&values)?
        };
        let m = g.constant(Tensor::column(means))?;
        let c = g.constant(Tensor::column(counts))?;
        let d = g.sub(v, m)?;
        let sq = g.square(d);
        let weighted = g.mul(sq, c)?;
        let total = g.sum(weighted);
        let scaled = g.scale(total, 0.5 / samples.len() as f64);
        let rest = g.constant(Tensor::scalar(0.5 * residual / samples.len() as f64))?;
        g.add(scaled, rest)
    }

    /// Applies accumulated gradients in `g` to the parameter sets.
    pub fn accumulate(&mut self, g: &Graph, vars: &[Var]) {
        let k = self.num_encoder_tensors();
        if let Some(e) = &mut self.encoder {
            e.params.zero_grads();
            e.params.accumulate(g, &vars[..k]);
        }
        self.head.params.zero_grads();
        self.head.params.accumulate(g, &vars[k..]);
    }

    pub fn param_sets_mut(&mut self) -> Vec<&mut ParamSet> {
        let mut out = Vec::new();
        if let Some(e) = &mut self.encoder {
            out.push(&mut e.params);
        }
        out.push(&mut self.head.params);
        out
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::numeric::finite_diff_check_many;

    fn small(ablation: AblationConfig) -> Critic {
        let cfg = CriticConfig {
            ablation,
            intersections: 3,
            window: 2,
            feature_width: 4,
            heads: 2,
            model_width: 3,
            hidden: 5,
            tau: 1.0,
        };
        Critic::new(cfg, &mut ChaCha8Rng::seed_from_u64(7)).unwrap()
    }

    fn inputs(c: &Critic, k: usize) -> Vec<Tensor> {
        let rows = if c.config.ablation.hg { 6 } else { 1 };
        (0..k)
            .map(|s| {
                let data = (0..rows * 4).map(|i| ((i * 7 + s * 3) as f64 * 0.31).sin()).collect();
                Tensor::matrix(rows, 4, data).unwrap()
            })
            .collect()
    }

    #[test]
    fn parse_and_display() {
        assert_eq!(
            "hg,dsha,she,the".parse::<AblationConfig>().unwrap(),
            AblationConfig::FULL
        );
        assert_eq!("none".parse::<AblationConfig>().unwrap(), AblationConfig::NO_HG);
        assert!("dsha".parse::<AblationConfig>().is_err());
        assert!("hg,dsha".parse::<AblationConfig>().is_err());
        assert!("hg,xyz".parse::<AblationConfig>().is_err());
        for a in AblationConfig::grid() {
            assert_eq!(a.to_string().parse::<AblationConfig>().unwrap(), a);
        }
    }

    #[test]
    fn scalar_loss_example() {
        let mut c = small(AblationConfig::NO_HG);
        // zero the head so V ≡ 0
        for i in 0..4 {
            c.head.params.get_mut(i).data_mut().fill(0.0);
        }
        let xs = inputs(&c, 1);
        let mut g = Graph::new();
        let vars = c.bind(&mut g).unwrap();
        let loss = c
            .loss_var(&mut g, &vars, &xs, &[CriticSample { input: 0, target: 2.0 }])
            .unwrap();
        assert_eq!(g.value(loss).item().unwrap(), 2.0);
    }

    #[test]
    fn perfect_fit_has_zero_loss_and_gradient() {
        let c = small(AblationConfig::FULL);
        let xs = inputs(&c, 3);
        let samples: Vec<CriticSample> = (0..3)
            .map(|i| CriticSample {
                input: i,
                target: c.value(&xs[i]).unwrap(),
            })
            .collect();
        let mut g = Graph::new();
        let vars = c.bind(&mut g).unwrap();
        let loss = c.loss_var(&mut g, &vars, &xs, &samples).unwrap();
        assert!(g.value(loss).item().unwrap().abs() < 1e-30);
        g.backward(loss).unwrap();
        for &v in &vars {
            assert!(g.grad(v).unwrap().iter().all(|x| x.abs() < 1e-15));
        }
    }

    #[test]
    fn grouped_loss_equals_per_sample_mean() {
        let c = small(AblationConfig::FULL);
        let xs = inputs(&c, 2);
        let samples = [
            CriticSample { input: 0, target: 1.5 },
            CriticSample { input: 1, target: -0.5 },
            CriticSample { input: 0, target: 0.25 },
        ];
        let mut g = Graph::new();
        let vars = c.bind(&mut g).unwrap();
        let loss = c.loss_var(&mut g, &vars, &xs, &samples).unwrap();
        let direct: f64 = samples
            .iter()
            .map(|s| {
                let v = c.value(&xs[s.input]).unwrap();
                0.5 * (s.target - v).powi(2)
            })
            .sum::<f64>()
            / 3.0;
        assert!((g.value(loss).item().unwrap() - direct).abs() < 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences_for_every_switch() {
        for ablation in AblationConfig::grid() {
            let c = small(ablation);
            let xs = inputs(&c, 2);
            let samples = [
                CriticSample { input: 0, target: 1.0 },
                CriticSample { input: 1, target: -2.0 },
                CriticSample { input: 1, target: 0.5 },
            ];
            let err = finite_diff_check_many(|g, vars| c.loss_var(g, vars, &xs, &samples), &c.tensors(), 1e-5).unwrap();
            assert!(err <= 1e-4, "{ablation}: {err}");
        }
    }

    #[test]
    fn mean_observation_input_without_hypergraph() {
        let c = Critic::new(
            CriticConfig::corridor(6, AblationConfig::NO_HG),
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        let cfg = crate::sim::SimConfig::default();
        let w = crate::sim::load_scenario(&cfg, 0).unwrap();
        let obs = crate::env::observe_all(&w);
        let x = c.input(|| invalid("window must not be used"), &obs).unwrap();
        assert_eq!(x.shape(), &[1, OBS_WIDTH]);
        assert_eq!(x.data()[OBS_WIDTH - 4], 1.0);
        assert!(c.value(&x).unwrap().is_finite());
    }
}
