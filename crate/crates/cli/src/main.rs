use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use corridor_core::eval::{
    report, report_csv, run_experiment, AblationConfig, Controller, ControllerKind, Selection, Summary,
};
use corridor_core::marl::{Agent, TrainConfig, Trainer};
use corridor_core::sim::SimConfig;

#[derive(Parser)]
#[command(
    name = "corridor",
    version,
    about = "Corridor signal-control training and evaluation"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train the shared actor and critic; writes `checkpoint.bin` and `train_log.csv`.
    Train {
        #[arg(long, default_value_t = 1)]
        scenario: u8,
        /// Comma list of hg,dsha,she,the, or `none`.
        #[arg(long, default_value = "hg,dsha,she,the")]
        ablation: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        episodes: usize,
        /// Adam step size for actor and critic.
        #[arg(long)]
        lr: Option<f64>,
        /// Factor applied to rewards before returns are computed.
        #[arg(long)]
        reward_scale: Option<f64>,
        /// TOML file overriding the scenario's simulator settings.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one evaluation episode; writes summary and heatmap CSVs.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        scenario: u8,
        /// stdsh | mappo | fswf | random
        #[arg(long)]
        controller: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Take the most probable action instead of sampling the policy.
        #[arg(long)]
        greedy: bool,
    },
    /// Average every `summary_*.csv` in a directory into `report.csv`.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
    },
}

fn sim_config(scenario: u8, path: Option<&Path>) -> Result<SimConfig> {
    let Some(p) = path else {
        return Ok(SimConfig::scenario(scenario)?);
    };
    let cfg = SimConfig::from_file(p).with_context(|| format!("reading {}", p.display()))?;
    if cfg.scenario.id != scenario {
        bail!(
            "{} describes scenario {}, but --scenario is {scenario}",
            p.display(),
            cfg.scenario.id
        );
    }
    Ok(cfg)
}

fn train(
    scenario: u8,
    ablation: &str,
    seed: u64,
    episodes: usize,
    cfg: TrainConfig,
    config: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let ablation: AblationConfig = ablation.parse()?;
    let sim = sim_config(scenario, config)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut trainer = Trainer::new(sim, ablation, cfg, seed)?;
    let log_path = out.join("train_log.csv");
    let mut log = BufWriter::new(File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?);
    let start = Instant::now();
    let logs = trainer.train(episodes, Some(&mut log))?;
    let ckpt = out.join("checkpoint.bin");
    trainer.agent.save(&ckpt)?;
    if let Some(last) = logs.last() {
        eprintln!(
            "trained {episodes} episodes ({ablation}) in {:.1}s; last mean reward {:.2}, entropy {:.3}",
            start.elapsed().as_secs_f64(),
            last.mean_reward,
            last.entropy
        );
    }
    println!("{}", ckpt.display());
    Ok(())
}

fn eval(
    checkpoint: Option<&Path>,
    scenario: u8,
    controller: &str,
    seed: u64,
    config: Option<&Path>,
    out: &Path,
    greedy: bool,
) -> Result<()> {
    let kind: ControllerKind = controller.parse()?;
    let agent = match checkpoint {
        Some(p) if kind.is_learned() => {
            Some(Agent::load(p).with_context(|| format!("loading checkpoint {}", p.display()))?)
        }
        _ => None,
    };
    let selection = if greedy { Selection::Greedy } else { Selection::Sample };
    let ctl = Controller::new(kind, agent)?.with_selection(selection);
    let sim = sim_config(scenario, config)?;
    let exp = run_experiment(&sim, &ctl, seed)?;
    fs::create_dir_all(out)?;
    let tag = format!("{kind}_{}_s{scenario}_seed{seed}", ctl.ablation_label());
    fs::write(out.join(format!("summary_{tag}.csv")), exp.summary_csv())?;
    fs::write(out.join(format!("heatmap_{tag}.csv")), exp.heatmap_csv())?;
    println!("{}", Summary::CSV_HEADER);
    println!("{}", exp.summary.csv_row());
    Ok(())
}

fn run_report(dir: &Path) -> Result<()> {
    let mut rows = Vec::new();
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("summary_") && n.ends_with(".csv"))
        })
        .collect();
    files.sort();
    for f in &files {
        let text = fs::read_to_string(f)?;
        for line in text.lines().skip(1).filter(|l| !l.trim().is_empty()) {
            rows.push(Summary::parse_row(line).with_context(|| format!("in {}", f.display()))?);
        }
    }
    if rows.is_empty() {
        bail!("no summary_*.csv files in {}", dir.display());
    }
    let csv = report_csv(&report(&rows));
    fs::write(dir.join("report.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Train {
            scenario,
            ablation,
            seed,
            episodes,
            lr,
            reward_scale,
            config,
            out,
        } => {
            let mut cfg = TrainConfig::default();
            cfg.lr = lr.unwrap_or(cfg.lr);
            cfg.reward_scale = reward_scale.unwrap_or(cfg.reward_scale);
            train(scenario, &ablation, seed, episodes, cfg, config.as_deref(), &out)
        }
        Cmd::Eval {
            checkpoint,
            scenario,
            controller,
            seed,
            config,
            out,
            greedy,
        } => eval(
            checkpoint.as_deref(),
            scenario,
            &controller,
            seed,
            config.as_deref(),
            &out,
            greedy,
        ),
        Cmd::Report { input } => run_report(&input),
    }
}
