//! Experiment harness: config files, policy specs, the four standard sweeps,
//! baseline tuning, and metrics/trace emission.
//!
//! Metrics are comma-separated rows with the header
//! `sweep_value,policy,mean_aoi,sem_aoi,mean_velvar,sem_velvar,episodes,seed_base`;
//! traces are line-delimited JSON episode records. Both carry a format
//! version. Seed discipline: episode `e` of a point runs at `seed_base + e`.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gnn::{GnnConfig, GnnPolicy};
use crate::nn::Checkpoint;
use crate::policies::{MstPolicy, Policy, PolicyRng, RandomFlooding, RoundRobin, SilentPolicy};
use crate::protocol::{run_episode, EpisodeTrace, Task};
use crate::rl::{PpoConfig, RewardKind};
use crate::scenario::{init_positions, MissionConfig};
use rand::SeedableRng;

pub const METRICS_FORMAT_VERSION: u32 = 1;

/// Which mission/model knob a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    ReceptiveField,
    PowerRatio,
    NAgents,
    VelocityRatio,
}

/// A policy named on the command line or in a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PolicySpec {
    Silent,
    Flood(f64),
    RoundRobin { base: usize },
    Mst(f64),
    Gnn { checkpoint: PathBuf },
}

impl FromStr for PolicySpec {
    type Err = Error;

    /// Accepts `silent`, `flood(P)`, `roundrobin`, `roundrobin(BASE)`,
    /// `mst(P)` and `gnn(CHECKPOINT_PATH)`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (head, arg) = match s.find('(') {
            Some(open) if s.ends_with(')') => (&s[..open], Some(&s[open + 1..s.len() - 1])),
            Some(_) => return Err(Error::Config(format!("unbalanced parentheses in policy {s:?}"))),
            None => (s, None),
        };
        let prob = |arg: Option<&str>, what: &str| -> Result<f64> {
            let raw = arg.ok_or_else(|| Error::Config(format!("{what} needs a probability, e.g. {what}(0.5)")))?;
            let p: f64 = raw
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad probability {raw:?} for {what}")))?;
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{what} probability must be in [0, 1]")));
            }
            Ok(p)
        };
        match head {
            "silent" => Ok(PolicySpec::Silent),
            "flood" => Ok(PolicySpec::Flood(prob(arg, "flood")?)),
            "roundrobin" => {
                let base = match arg {
                    None => 0,
                    Some(raw) => raw
                        .trim()
                        .parse()
                        .map_err(|_| Error::Config(format!("bad base agent {raw:?} for roundrobin")))?,
                };
                Ok(PolicySpec::RoundRobin { base })
            }
            "mst" => Ok(PolicySpec::Mst(prob(arg, "mst")?)),
            "gnn" => {
                let path = arg.ok_or_else(|| {
                    Error::Config("gnn needs a checkpoint path, e.g. gnn(model.json)".into())
                })?;
                Ok(PolicySpec::Gnn {
                    checkpoint: PathBuf::from(path.trim()),
                })
            }
            other => Err(Error::Config(format!(
                "unknown policy {other:?}; expected silent, flood(P), roundrobin[(BASE)], mst(P) or gnn(PATH)"
            ))),
        }
    }
}

impl std::fmt::Display for PolicySpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PolicySpec::Silent => write!(f, "silent"),
            PolicySpec::Flood(p) => write!(f, "flood({p})"),
            PolicySpec::RoundRobin { base } => write!(f, "roundrobin({base})"),
            PolicySpec::Mst(p) => write!(f, "mst({p})"),
            PolicySpec::Gnn { checkpoint } => write!(f, "gnn({})", checkpoint.display()),
        }
    }
}

impl PolicySpec {
    /// Instantiates the policy for one episode of `config`. Tree-based
    /// policies are built over the episode's own initial placement, which is
    /// regenerated here from the episode seed (the placement stream is a pure
    /// function of the seed, so this matches what the episode will sample).
    pub fn build(&self, config: &MissionConfig, task: Task, gnn: &GnnConfig) -> Result<Box<dyn Policy>> {
        match self {
            PolicySpec::Silent => Ok(Box::new(SilentPolicy)),
            PolicySpec::Flood(p) => Ok(Box::new(RandomFlooding::new(*p))),
            PolicySpec::RoundRobin { base } => {
                if *base >= config.n_agents {
                    return Err(Error::Config(format!(
                        "roundrobin base {base} out of range for {} agents",
                        config.n_agents
                    )));
                }
                Ok(Box::new(RoundRobin { base: *base }))
            }
            PolicySpec::Mst(p) => {
                let mut init_rng = PolicyRng::seed_from_u64(config.seed.wrapping_add(0x5151_5151));
                let states = init_positions(config, task == Task::Flocking, &mut init_rng)?;
                let positions: Vec<[f64; 2]> = states.iter().map(|s| s.position).collect();
                Ok(Box::new(MstPolicy::new(*p, &positions)))
            }
            PolicySpec::Gnn { checkpoint } => {
                let store = Checkpoint::load(checkpoint)?.into_store(None)?;
                Ok(Box::new(GnnPolicy::new(store, *gnn, config.clone())))
            }
        }
    }
}

/// A full experiment: mission template, task, policies under test and an
/// optional sweep axis. Deserialized from a structured config file whose
/// tables mirror the config struct fields exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub mission: MissionConfig,
    pub task: Task,
    /// Policy specs evaluated at every sweep point.
    pub policies: Vec<String>,
    #[serde(default)]
    pub axis: Option<SweepAxis>,
    /// Sweep points; a single implicit point when empty or no axis is set.
    #[serde(default)]
    pub values: Vec<f64>,
    #[serde(default = "default_episodes")]
    pub episodes: usize,
    #[serde(default)]
    pub seed_base: u64,
    #[serde(default)]
    pub gnn: GnnConfig,
    #[serde(default)]
    pub ppo: PpoConfig,
    #[serde(default = "default_reward")]
    pub reward: RewardKind,
    /// Also write every episode trace next to the metrics file.
    #[serde(default)]
    pub write_traces: bool,
}

fn default_episodes() -> usize {
    100
}

fn default_reward() -> RewardKind {
    RewardKind::Aoi
}

impl ExperimentSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let spec: ExperimentSpec = toml::from_str(&text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        self.mission.validate()?;
        self.ppo.validate()?;
        if self.episodes < 1 {
            return Err(Error::Config("episodes must be at least 1".into()));
        }
        if self.policies.is_empty() {
            return Err(Error::Config("at least one policy is required".into()));
        }
        for policy in &self.policies {
            policy.parse::<PolicySpec>()?;
        }
        if self.axis.is_some() && self.values.is_empty() {
            return Err(Error::Config("a sweep axis needs at least one value".into()));
        }
        Ok(())
    }

    /// Mission/model configuration at one sweep point.
    pub fn at_point(&self, value: Option<f64>) -> Result<(MissionConfig, GnnConfig)> {
        let mut mission = self.mission.clone();
        let mut gnn = self.gnn;
        if let (Some(axis), Some(v)) = (self.axis, value) {
            match axis {
                SweepAxis::ReceptiveField => {
                    if v < 0.0 || v.fract() != 0.0 {
                        return Err(Error::Config(format!("receptive field must be a whole number, got {v}")));
                    }
                    gnn.receptive_field = v as usize;
                }
                SweepAxis::PowerRatio => {
                    if !(v > 0.0) {
                        return Err(Error::Config("power ratio must be positive".into()));
                    }
                    // Scale transmit power relative to the level calibrated
                    // for the nominal communication range.
                    mission.radio = mission.radio.with_range(mission.comm_range_m());
                    mission.radio.tx_power_dbm += 10.0 * v.log10();
                }
                SweepAxis::NAgents => {
                    if v < 1.0 || v.fract() != 0.0 {
                        return Err(Error::Config(format!("team size must be a whole number >= 1, got {v}")));
                    }
                    // Rescale the arena to hold the density fixed; keep every
                    // other knob from the template.
                    let template = &self.mission;
                    let mut scaled = MissionConfig::standard(v as usize);
                    scaled.n_windows = template.n_windows;
                    scaled.window_s = template.window_s;
                    scaled.comm_range_ratio = template.comm_range_ratio;
                    scaled.velocity_ratio = template.velocity_ratio;
                    scaled.v_max = scaled.derived_v_max();
                    scaled.radio = scaled.radio.with_range(scaled.comm_range_m());
                    scaled.seed = template.seed;
                    mission = scaled;
                }
                SweepAxis::VelocityRatio => {
                    if !(v > 0.0) {
                        return Err(Error::Config("velocity ratio must be positive".into()));
                    }
                    mission.velocity_ratio = v;
                    mission.v_max = mission.derived_v_max();
                }
            }
        }
        Ok((mission, gnn))
    }

    /// The sweep points, or one `None` point for a plain evaluation.
    pub fn points(&self) -> Vec<Option<f64>> {
        match (&self.axis, self.values.is_empty()) {
            (Some(_), false) => self.values.iter().copied().map(Some).collect(),
            _ => vec![None],
        }
    }
}

/// Aggregated metrics for one (sweep point, policy) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointMetrics {
    pub sweep_value: Option<f64>,
    pub policy: String,
    pub mean_aoi: f64,
    pub sem_aoi: f64,
    pub mean_velvar: f64,
    pub sem_velvar: f64,
    pub episodes: usize,
    pub seed_base: u64,
    /// False when a single episode makes the standard error degenerate (it is
    /// then reported as 0).
    pub sem_defined: bool,
}

/// Sample mean and standard error of the mean (sample std / sqrt(n)).
pub fn mean_sem(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Runs `episodes` independent episodes of one policy at one configuration,
/// episode `e` seeded at `seed_base + e`. Episodes run in parallel.
pub fn evaluate_point(
    config: &MissionConfig,
    gnn: &GnnConfig,
    spec: &PolicySpec,
    task: Task,
    episodes: usize,
    seed_base: u64,
) -> Result<(PointMetrics, Vec<EpisodeTrace>)> {
    let traces: Vec<EpisodeTrace> = (0..episodes)
        .into_par_iter()
        .map(|e| {
            let mut episode_config = config.clone();
            episode_config.seed = seed_base.wrapping_add(e as u64);
            let policy = spec.build(&episode_config, task, gnn)?;
            run_episode(&episode_config, policy.as_ref(), task)
        })
        .collect::<Result<_>>()?;

    let aois: Vec<f64> = traces.iter().map(|t| t.mean_aoi).collect();
    let velvars: Vec<f64> = traces.iter().map(|t| t.mean_velocity_variance).collect();
    let (mean_aoi, sem_aoi) = mean_sem(&aois);
    let (mean_velvar, sem_velvar) = mean_sem(&velvars);
    Ok((
        PointMetrics {
            sweep_value: None,
            policy: spec.to_string(),
            mean_aoi,
            sem_aoi,
            mean_velvar,
            sem_velvar,
            episodes,
            seed_base,
            sem_defined: episodes > 1,
        },
        traces,
    ))
}

/// Runs the whole experiment; returns one row per (sweep point, policy) and,
/// when traces are requested, all episode traces in row order.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<(Vec<PointMetrics>, Vec<EpisodeTrace>)> {
    spec.validate()?;
    let mut rows = Vec::new();
    let mut all_traces = Vec::new();
    for point in spec.points() {
        let (mission, gnn) = spec.at_point(point)?;
        for policy_text in &spec.policies {
            let policy: PolicySpec = policy_text.parse()?;
            let (mut row, traces) =
                evaluate_point(&mission, &gnn, &policy, spec.task, spec.episodes, spec.seed_base)?;
            row.sweep_value = point;
            rows.push(row);
            if spec.write_traces {
                all_traces.extend(traces);
            }
        }
    }
    Ok((rows, all_traces))
}

/// Renders metrics rows as comma-separated text with a version comment and
/// the fixed header.
pub fn metrics_csv(rows: &[PointMetrics]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# format={METRICS_FORMAT_VERSION}");
    let _ = writeln!(
        out,
        "sweep_value,policy,mean_aoi,sem_aoi,mean_velvar,sem_velvar,episodes,seed_base"
    );
    for row in rows {
        let sweep = row.sweep_value.map_or(String::new(), |v| format!("{v}"));
        let _ = writeln!(
            out,
            "{sweep},{},{},{},{},{},{},{}",
            row.policy,
            row.mean_aoi,
            row.sem_aoi,
            row.mean_velvar,
            row.sem_velvar,
            row.episodes,
            row.seed_base
        );
    }
    out
}

pub fn write_metrics(rows: &[PointMetrics], path: &Path) -> Result<()> {
    std::fs::write(path, metrics_csv(rows))?;
    Ok(())
}

/// One self-describing JSON document per line, one line per episode.
pub fn write_traces(traces: &[EpisodeTrace], path: &Path) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    for trace in traces {
        serde_json::to_writer(&mut file, trace)?;
        file.write_all(b"\n")?;
    }
    file.flush()?;
    Ok(())
}

pub fn read_traces(path: &Path) -> Result<Vec<EpisodeTrace>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|line| serde_json::from_str(line).map_err(Error::from))
        .collect()
}

/// The four standard sweeps. `teamsize` holds the density fixed as the team
/// grows; `power` and `receptive_field` run static teams; `flocking` sweeps
/// the velocity ratio on the flocking task.
pub fn preset_fig(name: &str) -> Result<ExperimentSpec> {
    let mut spec = ExperimentSpec {
        mission: MissionConfig::standard(40),
        task: Task::Static,
        policies: vec!["roundrobin(0)".into(), "flood(0.3)".into(), "mst(0.3)".into()],
        axis: None,
        values: Vec::new(),
        episodes: 100,
        seed_base: 0,
        gnn: GnnConfig::default(),
        ppo: PpoConfig::default(),
        reward: RewardKind::Aoi,
        write_traces: false,
    };
    match name {
        "receptive_field" => {
            spec.axis = Some(SweepAxis::ReceptiveField);
            spec.values = (0..=5).map(|k| k as f64).collect();
        }
        "power" => {
            spec.axis = Some(SweepAxis::PowerRatio);
            spec.values = vec![0.125, 0.25, 0.5, 1.0];
        }
        "teamsize" => {
            spec.task = Task::RandomWalk;
            spec.mission.velocity_ratio = 0.15;
            spec.mission.v_max = spec.mission.derived_v_max();
            spec.axis = Some(SweepAxis::NAgents);
            spec.values = vec![10.0, 20.0, 40.0, 80.0];
        }
        "flocking" => {
            spec.mission = MissionConfig::standard(10);
            spec.task = Task::Flocking;
            spec.reward = RewardKind::VelVar;
            spec.axis = Some(SweepAxis::VelocityRatio);
            spec.values = vec![0.025, 0.05, 0.1, 0.15];
        }
        other => {
            return Err(Error::Config(format!(
                "unknown preset {other:?}; expected receptive_field, power, teamsize or flocking"
            )))
        }
    }
    Ok(spec)
}

/// Grid-tunes a probability-parameterized baseline (`flood` or `mst`) over
/// p in {0.1, ..., 1.0}, 20 episodes each; returns the AoI-minimizing p (ties
/// to the smaller p) and the full (p, mean AoI) table.
pub fn tune_baseline(
    kind: &str,
    config: &MissionConfig,
    task: Task,
    seed_base: u64,
) -> Result<(f64, Vec<(f64, f64)>)> {
    let make = |p: f64| -> Result<PolicySpec> {
        match kind {
            "flood" => Ok(PolicySpec::Flood(p)),
            "mst" => Ok(PolicySpec::Mst(p)),
            other => Err(Error::Config(format!("cannot tune policy {other:?}; expected flood or mst"))),
        }
    };
    let gnn = GnnConfig::default();
    let mut table = Vec::new();
    for step in 1..=10 {
        let p = step as f64 / 10.0;
        let (metrics, _) = evaluate_point(config, &gnn, &make(p)?, task, 20, seed_base)?;
        table.push((p, metrics.mean_aoi));
    }
    // Strict < keeps the smaller p on ties.
    let best = table
        .iter()
        .fold(table[0], |best, &cand| if cand.1 < best.1 { cand } else { best });
    Ok((best.0, table))
}
