//! Transmission-response window engine: per window, evaluate every agent's
//! policy on its own table, resolve the transmission phase, let designated
//! recipients respond concurrently, apply merges for recipients and
//! eavesdroppers alike, and measure the age of information.

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::channel::{resolve_receptions, ReceptionOutcome, Transmit, TransmissionPlan};
use crate::error::Result;
use crate::knowledge::{mean_aoi, KnowledgeTable};
use crate::policies::{Policy, PolicyRng};
use crate::scenario::{
    flocking_control, init_positions, random_walk_control, step_dynamics, velocity_variance,
    AgentState, MissionConfig,
};

/// Motion model driving the team between communication windows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// Agents never move.
    Static,
    /// Independent normally distributed accelerations.
    RandomWalk,
    /// Velocity-consensus controller fed by each agent's knowledge table.
    Flocking,
}

/// Mutable simulation state: one kinematic state and one table per agent.
#[derive(Debug, Clone)]
pub struct World {
    pub states: Vec<AgentState>,
    pub tables: Vec<KnowledgeTable>,
}

impl World {
    pub fn new(states: Vec<AgentState>) -> Self {
        let n = states.len();
        World {
            states,
            tables: (0..n).map(|i| KnowledgeTable::new(i, n)).collect(),
        }
    }

    pub fn positions(&self) -> Vec<[f64; 2]> {
        self.states.iter().map(|s| s.position).collect()
    }
}

/// Everything that happened in one window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowReport {
    pub t: u64,
    pub transmission_plan: TransmissionPlan,
    pub transmission_outcome: ReceptionOutcome,
    pub response_plan: TransmissionPlan,
    pub response_outcome: ReceptionOutcome,
    /// Transmitters each agent decoded this window, both phases.
    pub decoded_from: Vec<Vec<usize>>,
    /// Mean age of information after the response-phase merges.
    pub mean_aoi: f64,
}

/// Runs one transmission-response window at index `t` with the per-agent
/// decisions supplied by closures. Each closure sees only the deciding
/// agent's own table (the decentralization contract).
///
/// Positions are frozen for both phases. A decision targeting the agent
/// itself or an unknown identity is treated as silence.
pub fn run_window_with(
    world: &mut World,
    t: u64,
    config: &MissionConfig,
    transmit: &mut dyn FnMut(usize, &KnowledgeTable) -> Transmit,
    respond: &mut dyn FnMut(usize, &KnowledgeTable) -> Transmit,
) -> WindowReport {
    let n = world.states.len();
    let positions = world.positions();

    for i in 0..n {
        world.tables[i].observe_self(world.states[i], t);
    }

    let sanitize = |intent: Transmit, me: usize| match intent {
        Transmit::To(j) if j == me || j >= n => Transmit::Silent,
        other => other,
    };

    let transmission_plan = TransmissionPlan {
        intents: (0..n)
            .map(|i| sanitize(transmit(i, &world.tables[i]), i))
            .collect(),
    };
    let transmission_outcome = resolve_receptions(&transmission_plan, &positions, &config.radio);

    let mut decoded_from = vec![Vec::new(); n];
    apply_merges(world, &transmission_outcome, &mut decoded_from);

    // Mandated responses: a designated recipient that decoded its transmitter
    // answers it; agents without a mandate get the policy's response-phase
    // opportunity (used by flooding).
    let response_plan = TransmissionPlan {
        intents: (0..n)
            .map(|j| match transmission_outcome.decoded_from[j] {
                Some(i) if transmission_plan.intents[i] == Transmit::To(j) => Transmit::To(i),
                _ => sanitize(respond(j, &world.tables[j]), j),
            })
            .collect(),
    };
    let response_outcome = resolve_receptions(&response_plan, &positions, &config.radio);
    apply_merges(world, &response_outcome, &mut decoded_from);

    for (i, intent) in transmission_plan.intents.iter().enumerate() {
        if let Some(target) = intent.recipient() {
            world.tables[i].record_attempt(target, t);
        }
    }

    WindowReport {
        t,
        transmission_plan,
        transmission_outcome,
        response_plan,
        response_outcome,
        decoded_from,
        mean_aoi: mean_aoi(&world.tables, t),
    }
}

/// [`run_window_with`] driven by a [`Policy`] and per-agent rng streams.
pub fn run_window(
    world: &mut World,
    policy: &dyn Policy,
    t: u64,
    config: &MissionConfig,
    rngs: &mut [PolicyRng],
) -> WindowReport {
    let rngs = std::cell::RefCell::new(rngs);
    run_window_with(
        world,
        t,
        config,
        &mut |i, table| policy.transmission(table, t, &mut rngs.borrow_mut()[i]),
        &mut |j, table| policy.response_opportunity(table, t, &mut rngs.borrow_mut()[j]),
    )
}

/// Merges every decoder's table with the snapshot its decoded transmitter
/// held at transmission time.
fn apply_merges(world: &mut World, outcome: &ReceptionOutcome, decoded_from: &mut [Vec<usize>]) {
    let snapshots: Vec<Option<KnowledgeTable>> = (0..world.tables.len())
        .map(|i| {
            if outcome.received[i].is_empty() {
                None
            } else {
                Some(world.tables[i].clone())
            }
        })
        .collect();
    for (receiver, tx) in outcome
        .decoded_from
        .iter()
        .enumerate()
        .filter_map(|(r, d)| d.map(|tx| (r, tx)))
    {
        let snapshot = snapshots[tx].as_ref().expect("decoded transmitter was active");
        world.tables[receiver].merge(snapshot);
        decoded_from[receiver].push(tx);
    }
}

/// One window's summary inside an episode trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSummary {
    pub t: u64,
    pub transmissions: usize,
    pub responses: usize,
    pub decodes: usize,
    pub mean_aoi: f64,
    pub velocity_variance: f64,
}

impl WindowSummary {
    fn from_report(report: &WindowReport, states: &[AgentState]) -> Self {
        WindowSummary {
            t: report.t,
            transmissions: report.transmission_plan.transmitters().count(),
            responses: report.response_plan.transmitters().count(),
            decodes: report.decoded_from.iter().map(Vec::len).sum(),
            mean_aoi: report.mean_aoi,
            velocity_variance: velocity_variance(states),
        }
    }
}

/// Record of one full episode; the unit of evaluation and training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub format_version: u32,
    pub config: MissionConfig,
    pub policy: String,
    pub task: Task,
    pub windows: Vec<WindowSummary>,
    /// Mean of the per-window mean AoI; zero with `aoi_defined = false` for
    /// zero-window missions.
    pub mean_aoi: f64,
    pub aoi_defined: bool,
    /// Mean per-window velocity variance (one term of the flocking cost).
    pub mean_velocity_variance: f64,
}

pub const TRACE_FORMAT_VERSION: u32 = 1;

/// Deterministic per-agent policy rng streams for one episode.
pub fn episode_rngs(seed: u64, n_agents: usize) -> Vec<PolicyRng> {
    (0..n_agents)
        .map(|i| PolicyRng::seed_from_u64(seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(i as u64 + 1))))
        .collect()
}

/// Runs a full mission: connectivity-checked placement, `n_windows`
/// transmission-response windows interleaved with one kinematics step per
/// window at `dt = window_s`.
pub fn run_episode(config: &MissionConfig, policy: &dyn Policy, task: Task) -> Result<EpisodeTrace> {
    config.validate()?;
    let mut init_rng = PolicyRng::seed_from_u64(config.seed.wrapping_add(0x5151_5151));
    let mut control_rng = PolicyRng::seed_from_u64(config.seed.wrapping_add(0xc0c0_c0c0));
    let states = init_positions(config, task == Task::Flocking, &mut init_rng)?;
    let mut world = World::new(states);
    let mut rngs = episode_rngs(config.seed, config.n_agents);

    let mut windows = Vec::with_capacity(config.n_windows as usize);
    for t in 1..=config.n_windows {
        let report = run_window(&mut world, policy, t, config, &mut rngs);
        windows.push(WindowSummary::from_report(&report, &world.states));

        if t < config.n_windows && task != Task::Static {
            let controls: Vec<[f64; 2]> = (0..config.n_agents)
                .map(|i| match task {
                    Task::Static => [0.0, 0.0],
                    Task::RandomWalk => random_walk_control(config.a_max, &mut control_rng),
                    Task::Flocking => flocking_control(&world.states[i], &world.tables[i]),
                })
                .collect();
            for (state, control) in world.states.iter_mut().zip(controls) {
                *state = step_dynamics(state, control, config.window_s, config);
            }
        }
    }

    let aoi_defined = !windows.is_empty();
    let mean_aoi = if aoi_defined {
        windows.iter().map(|w| w.mean_aoi).sum::<f64>() / windows.len() as f64
    } else {
        0.0
    };
    let mean_velocity_variance = if windows.is_empty() {
        0.0
    } else {
        windows.iter().map(|w| w.velocity_variance).sum::<f64>() / windows.len() as f64
    };

    Ok(EpisodeTrace {
        format_version: TRACE_FORMAT_VERSION,
        config: config.clone(),
        policy: policy.name(),
        task,
        windows,
        mean_aoi,
        aoi_defined,
        mean_velocity_variance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::RadioConfig;
    use crate::policies::{RandomFlooding, RoundRobin, SilentPolicy};
    use approx::assert_relative_eq;

    fn two_agent_config() -> MissionConfig {
        let mut config = MissionConfig::standard(2);
        config.comm_range_ratio = 0.25;
        config.radio = RadioConfig::default().with_range(config.comm_range_m());
        config
    }

    fn world_at(positions: &[[f64; 2]]) -> World {
        World::new(
            positions
                .iter()
                .map(|&position| AgentState {
                    position,
                    velocity: [0.0, 0.0],
                })
                .collect(),
        )
    }

    #[test]
    fn silent_window_ages_everything_by_one() {
        let config = two_agent_config();
        let mut world = world_at(&[[0.0, 0.0], [10.0, 0.0]]);
        let mut rngs = episode_rngs(0, 2);
        for t in 1..=5 {
            let report = run_window(&mut world, &SilentPolicy, t, &config, &mut rngs);
            assert!(report.transmission_plan.transmitters().next().is_none());
            assert_relative_eq!(report.mean_aoi, t as f64);
        }
    }

    #[test]
    fn isolated_pair_exchanges_bidirectionally() {
        let config = two_agent_config();
        let mut world = world_at(&[[0.0, 0.0], [10.0, 0.0]]);
        let mut rngs = episode_rngs(0, 2);

        struct ZeroToOne;
        impl Policy for ZeroToOne {
            fn transmission(&self, table: &KnowledgeTable, _t: u64, _rng: &mut PolicyRng) -> Transmit {
                if table.owner() == 0 {
                    Transmit::To(1)
                } else {
                    Transmit::Silent
                }
            }
            fn name(&self) -> String {
                "zero-to-one".into()
            }
        }

        let report = run_window(&mut world, &ZeroToOne, 1, &config, &mut rngs);
        // Phase 1: 1 decodes 0; phase 2: 1 responds and 0 decodes it.
        assert_eq!(report.decoded_from[1], vec![0]);
        assert_eq!(report.decoded_from[0], vec![1]);
        assert_eq!(report.response_plan.intents[1], Transmit::To(0));
        // Both tables fresh at the end of the window.
        assert_eq!(report.mean_aoi, 0.0);
        assert_eq!(world.tables[0].record(1).timestamp, Some(1));
        assert_eq!(world.tables[1].record(0).timestamp, Some(1));
        // Last-contact recorded for the transmission-phase attempt only.
        assert_eq!(world.tables[0].record(1).last_contact, Some(1));
        assert_eq!(world.tables[1].record(0).last_contact, None);
    }

    #[test]
    fn simultaneous_targets_collide_and_no_response_follows() {
        let mut config = MissionConfig::standard(3);
        config.radio = RadioConfig::default().with_range(config.comm_range_m());
        let mut world = world_at(&[[-50.0, 0.0], [50.0, 0.0], [0.0, 40.0]]);
        let mut rngs = episode_rngs(0, 3);

        struct BothToTwo;
        impl Policy for BothToTwo {
            fn transmission(&self, table: &KnowledgeTable, _t: u64, _rng: &mut PolicyRng) -> Transmit {
                if table.owner() < 2 {
                    Transmit::To(2)
                } else {
                    Transmit::Silent
                }
            }
            fn name(&self) -> String {
                "both-to-two".into()
            }
        }

        let report = run_window(&mut world, &BothToTwo, 1, &config, &mut rngs);
        assert!(report.decoded_from.iter().all(Vec::is_empty));
        assert!(report.response_plan.transmitters().next().is_none());
    }

    #[test]
    fn self_target_means_silent() {
        let config = two_agent_config();
        let mut world = world_at(&[[0.0, 0.0], [10.0, 0.0]]);
        let mut rngs = episode_rngs(0, 2);

        struct SelfTarget;
        impl Policy for SelfTarget {
            fn transmission(&self, table: &KnowledgeTable, _t: u64, _rng: &mut PolicyRng) -> Transmit {
                Transmit::To(table.owner())
            }
            fn name(&self) -> String {
                "self-target".into()
            }
        }

        let report = run_window(&mut world, &SelfTarget, 1, &config, &mut rngs);
        assert!(report.transmission_plan.transmitters().next().is_none());
    }

    #[test]
    fn silent_episode_closed_form() {
        let mut config = MissionConfig::standard(5);
        config.seed = 3;
        let trace = run_episode(&config, &SilentPolicy, Task::Static).unwrap();
        assert!(trace.aoi_defined);
        assert_relative_eq!(trace.mean_aoi, 250.5);
    }

    #[test]
    fn zero_window_episode_flagged() {
        let mut config = MissionConfig::standard(3);
        config.n_windows = 0;
        let trace = run_episode(&config, &SilentPolicy, Task::Static).unwrap();
        assert!(!trace.aoi_defined);
        assert_eq!(trace.mean_aoi, 0.0);
        assert!(trace.windows.is_empty());
    }

    #[test]
    fn same_seed_same_trace() {
        let mut config = MissionConfig::standard(8);
        config.seed = 77;
        config.n_windows = 60;
        let policy = RandomFlooding::new(0.4);
        let a = run_episode(&config, &policy, Task::RandomWalk).unwrap();
        let b = run_episode(&config, &policy, Task::RandomWalk).unwrap();
        assert_eq!(
            serde_json::to_vec(&a).unwrap(),
            serde_json::to_vec(&b).unwrap()
        );
    }

    #[test]
    fn aoi_never_jumps_by_more_than_one() {
        let mut config = MissionConfig::standard(6);
        config.seed = 5;
        config.n_windows = 80;
        let policy = RandomFlooding::new(0.3);
        let trace = run_episode(&config, &policy, Task::Static).unwrap();
        let mut prev = 0.0;
        for window in &trace.windows {
            assert!(window.mean_aoi <= prev + 1.0 + 1e-9);
            prev = window.mean_aoi;
        }
    }

    #[test]
    fn information_causality_over_random_trace() {
        let mut config = MissionConfig::standard(5);
        config.seed = 21;
        config.n_windows = 50;
        config.radio = RadioConfig::default().with_range(config.comm_range_m());
        let policy = RandomFlooding::new(0.5);
        let mut init_rng = PolicyRng::seed_from_u64(1);
        let states = init_positions(&config, false, &mut init_rng).unwrap();
        let mut world = World::new(states);
        let mut rngs = episode_rngs(config.seed, 5);
        for t in 1..=config.n_windows {
            let before = world.tables.clone();
            let report = run_window(&mut world, &policy, t, &config, &mut rngs);
            for i in 0..5 {
                for k in 0..5 {
                    if k == i {
                        continue;
                    }
                    let changed = world.tables[i].record(k).timestamp
                        != before[i].record(k).timestamp;
                    if changed {
                        assert!(
                            !report.decoded_from[i].is_empty(),
                            "record changed without a decode"
                        );
                    }
                }
                assert!(world.tables[i].parents_acyclic());
            }
        }
    }

    #[test]
    fn responses_are_reversed_designated_successes() {
        let mut config = MissionConfig::standard(6);
        config.seed = 13;
        config.n_windows = 40;
        config.radio = RadioConfig::default().with_range(config.comm_range_m());
        let policy = RoundRobin { base: 2 };
        let mut init_rng = PolicyRng::seed_from_u64(2);
        let states = init_positions(&config, false, &mut init_rng).unwrap();
        let mut world = World::new(states);
        let mut rngs = episode_rngs(config.seed, 6);
        for t in 1..=config.n_windows {
            let report = run_window(&mut world, &policy, t, &config, &mut rngs);
            for (j, intent) in report.response_plan.intents.iter().enumerate() {
                if let Transmit::To(i) = intent {
                    assert_eq!(report.transmission_plan.intents[*i], Transmit::To(j));
                    assert_eq!(report.transmission_outcome.decoded_from[j], Some(*i));
                }
            }
        }
    }
}
