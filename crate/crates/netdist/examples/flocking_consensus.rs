//! Flocking through the data network: each agent steers toward the velocities
//! it knows about, so velocity variance decays only as fast as the
//! distribution policy spreads fresh state.

use netdist::policies::{RoundRobin, SilentPolicy};
use netdist::protocol::{run_episode, Task};
use netdist::scenario::MissionConfig;

fn main() -> netdist::Result<()> {
    let mut config = MissionConfig::standard(10);
    config.velocity_ratio = 0.05;
    config.v_max = config.derived_v_max();
    config.seed = 7;

    for (name, trace) in [
        ("silent", run_episode(&config, &SilentPolicy, Task::Flocking)?),
        ("roundrobin", run_episode(&config, &RoundRobin { base: 0 }, Task::Flocking)?),
    ] {
        let first = trace.windows.first().unwrap().velocity_variance;
        println!("{name}: velocity variance over the mission");
        for t in [1usize, 50, 100, 250, 500] {
            let w = &trace.windows[t - 1];
            println!(
                "  window {:>3}: {:10.6}  ({:5.1}% of start)",
                w.t,
                w.velocity_variance,
                100.0 * w.velocity_variance / first
            );
        }
    }
    Ok(())
}
