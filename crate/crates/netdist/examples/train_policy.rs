//! Trains the graph-network policy with PPO on a small static team and prints
//! the learning curve. Scaled down to finish in a couple of minutes; raise the
//! budget and team size for real runs (or use the `train` subcommand).

use netdist::gnn::GnnConfig;
use netdist::protocol::Task;
use netdist::rl::{train, PpoConfig, RewardKind};
use netdist::scenario::MissionConfig;

fn main() -> netdist::Result<()> {
    let mut mission = MissionConfig::standard(5);
    mission.n_windows = 50;
    mission.seed = 1;
    let gnn = GnnConfig {
        receptive_field: 2,
        hidden: 16,
        bidirectional_edges: false,
    };
    let ppo = PpoConfig {
        total_observations: 10_000,
        episodes_per_iteration: 4,
        eval_episodes: 2,
        ..PpoConfig::default()
    };

    let result = train(&mission, &gnn, &ppo, Task::Static, RewardKind::Aoi)?;
    println!("random-policy eval AoI: {:.3}\n", result.initial_eval_aoi);
    println!("{:>12} {:>14} {:>10}", "observations", "mean reward", "eval AoI");
    for point in &result.curve {
        println!(
            "{:>12} {:>14.4} {:>10.3}",
            point.observations, point.mean_episode_reward, point.eval_aoi
        );
    }
    Ok(())
}
