//! Mission configuration, point-mass agent kinematics, task controllers and
//! connectivity-checked initial placement.
//!
//! The mission square is centered at the origin with coordinates in
//! `[-p_max, p_max]` per axis. Team density is held at 40 agents per square
//! kilometer when scaling the area with the team size.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::channel::RadioConfig;
use crate::error::Error;
use crate::knowledge::KnowledgeTable;

/// Reference density: 40 agents per 1 km^2.
pub const REFERENCE_DENSITY_PER_KM2: f64 = 40.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionConfig {
    pub n_agents: usize,
    /// Mission square side length in meters; also the "mission distance" used
    /// to normalize communication range and velocity.
    pub side_length_m: f64,
    /// Number of communication windows in a mission.
    pub n_windows: u64,
    /// Duration of one window in seconds.
    pub window_s: f64,
    /// Communication range as a fraction of the mission distance.
    pub comm_range_ratio: f64,
    /// Maximum velocity as a fraction of the distance an agent could cover
    /// across the mission area over the full mission.
    pub velocity_ratio: f64,
    /// Maximum velocity per axis, m/s.
    pub v_max: f64,
    /// Maximum acceleration, m/s^2 (scale of the random-walk controller).
    pub a_max: f64,
    pub radio: RadioConfig,
    pub seed: u64,
}

impl MissionConfig {
    /// Standard mission for `n_agents`: area scaled to hold the reference
    /// density, 500 windows of 100 ms, 0.25 range ratio, 0.15 velocity ratio,
    /// transmit power calibrated to the resulting communication range.
    pub fn standard(n_agents: usize) -> Self {
        let side = side_for_density(n_agents);
        let mut config = MissionConfig {
            n_agents,
            side_length_m: side,
            n_windows: 500,
            window_s: 0.1,
            comm_range_ratio: 0.25,
            velocity_ratio: 0.15,
            v_max: 0.0,
            a_max: 20.0,
            radio: RadioConfig::default(),
            seed: 0,
        };
        config.v_max = config.derived_v_max();
        config.radio = config.radio.with_range(config.comm_range_m());
        config
    }

    /// Half-extent of the mission square.
    pub fn p_max(&self) -> f64 {
        self.side_length_m / 2.0
    }

    /// Communication range in meters.
    pub fn comm_range_m(&self) -> f64 {
        self.comm_range_ratio * self.side_length_m
    }

    /// Mission duration in seconds.
    pub fn duration_s(&self) -> f64 {
        self.n_windows as f64 * self.window_s
    }

    /// Maximum velocity implied by the velocity ratio.
    pub fn derived_v_max(&self) -> f64 {
        self.velocity_ratio * self.side_length_m / self.duration_s()
    }

    pub fn validate(&self) -> Result<(), Error> {
        if self.n_agents < 1 {
            return Err(Error::Config("n_agents must be at least 1".into()));
        }
        for (name, value) in [
            ("side_length_m", self.side_length_m),
            ("window_s", self.window_s),
            ("comm_range_ratio", self.comm_range_ratio),
            ("v_max", self.v_max),
            ("a_max", self.a_max),
        ] {
            if !(value > 0.0) {
                return Err(Error::Config(format!("{name} must be strictly positive")));
            }
        }
        Ok(())
    }
}

/// Side length holding the reference density for a team of `n` agents.
pub fn side_for_density(n: usize) -> f64 {
    1000.0 * (n as f64 / REFERENCE_DENSITY_PER_KM2).sqrt()
}

/// Planar point mass: position and velocity.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AgentState {
    pub position: [f64; 2],
    pub velocity: [f64; 2],
}

/// One first-order integration step: position advances with the old velocity,
/// velocity with the control; velocity components are clamped to
/// `[-v_max, v_max]` and then reflected together with the position at the
/// mission boundary.
pub fn step_dynamics(
    state: &AgentState,
    control: [f64; 2],
    dt: f64,
    config: &MissionConfig,
) -> AgentState {
    debug_assert!(dt > 0.0);
    let p_max = config.p_max();
    let mut next = AgentState::default();
    for axis in 0..2 {
        let mut p = state.position[axis] + state.velocity[axis] * dt;
        let mut v = (state.velocity[axis] + control[axis] * dt).clamp(-config.v_max, config.v_max);
        // Mirror about the boundary until the position falls back inside; one
        // pass suffices for any velocity respecting the clamp.
        while p > p_max || p < -p_max {
            if p > p_max {
                p = 2.0 * p_max - p;
            } else {
                p = -2.0 * p_max - p;
            }
            v = -v;
        }
        next.position[axis] = p;
        next.velocity[axis] = v;
    }
    next
}

/// Zero-mean normal control with standard deviation `a_max / 3` per component.
pub fn random_walk_control<R: Rng>(a_max: f64, rng: &mut R) -> [f64; 2] {
    let sigma = a_max / 3.0;
    if sigma == 0.0 {
        return [0.0, 0.0];
    }
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    [normal.sample(rng), normal.sample(rng)]
}

/// Velocity-consensus controller: mean difference between the velocities of
/// all observed teammates and the agent's own velocity. Returns zero while no
/// teammate has been heard from.
pub fn flocking_control(self_state: &AgentState, table: &KnowledgeTable) -> [f64; 2] {
    let mut sum = [0.0, 0.0];
    let mut count = 0usize;
    for (id, record) in table.records().iter().enumerate() {
        if id == table.owner() {
            continue;
        }
        if record.timestamp.is_some() {
            sum[0] += record.state.velocity[0] - self_state.velocity[0];
            sum[1] += record.state.velocity[1] - self_state.velocity[1];
            count += 1;
        }
    }
    if count == 0 {
        [0.0, 0.0]
    } else {
        [sum[0] / count as f64, sum[1] / count as f64]
    }
}

/// Whether the disk graph over `positions` with radius `range_m` is connected,
/// decided by union-find.
pub fn disk_graph_connected(positions: &[[f64; 2]], range_m: f64) -> bool {
    let n = positions.len();
    if n <= 1 {
        return true;
    }
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut Vec<usize>, mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let range_sq = range_m * range_m;
    for i in 0..n {
        for j in (i + 1)..n {
            let dx = positions[i][0] - positions[j][0];
            let dy = positions[i][1] - positions[j][1];
            if dx * dx + dy * dy <= range_sq {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                parent[ri] = rj;
            }
        }
    }
    let root = find(&mut parent, 0);
    (1..n).all(|i| find(&mut parent, i) == root)
}

/// Default cap on connectivity rejection sampling.
pub const DEFAULT_RESAMPLE_CAP: usize = 10_000;

/// Draws initial positions uniformly in the mission square, rejecting samples
/// until the communication disk graph is connected.
///
/// `random_velocities` selects the flocking-style initialization with each
/// velocity component uniform in `[-v_max, v_max]`; otherwise agents start at
/// rest.
pub fn init_positions<R: Rng>(
    config: &MissionConfig,
    random_velocities: bool,
    rng: &mut R,
) -> Result<Vec<AgentState>, Error> {
    init_positions_capped(config, random_velocities, DEFAULT_RESAMPLE_CAP, rng)
}

pub fn init_positions_capped<R: Rng>(
    config: &MissionConfig,
    random_velocities: bool,
    cap: usize,
    rng: &mut R,
) -> Result<Vec<AgentState>, Error> {
    let p_max = config.p_max();
    let range = config.comm_range_m();
    for _ in 0..cap {
        let positions: Vec<[f64; 2]> = (0..config.n_agents)
            .map(|_| [rng.gen_range(-p_max..=p_max), rng.gen_range(-p_max..=p_max)])
            .collect();
        if disk_graph_connected(&positions, range) {
            return Ok(positions
                .into_iter()
                .map(|position| AgentState {
                    position,
                    velocity: if random_velocities {
                        [
                            rng.gen_range(-config.v_max..=config.v_max),
                            rng.gen_range(-config.v_max..=config.v_max),
                        ]
                    } else {
                        [0.0, 0.0]
                    },
                })
                .collect());
        }
    }
    Err(Error::ConnectivityRejection { attempts: cap })
}

/// Mean squared distance of agent velocities to the team-mean velocity.
pub fn velocity_variance(states: &[AgentState]) -> f64 {
    assert!(!states.is_empty());
    let n = states.len() as f64;
    let mean = states.iter().fold([0.0, 0.0], |acc, s| {
        [acc[0] + s.velocity[0] / n, acc[1] + s.velocity[1] / n]
    });
    states
        .iter()
        .map(|s| {
            let dx = s.velocity[0] - mean[0];
            let dy = s.velocity[1] - mean[1];
            dx * dx + dy * dy
        })
        .sum::<f64>()
        / n
}
