//! Benchmarks the built-in distribution policies on a static 20-agent team
//! and prints mean age of information with standard errors.

use netdist::experiment::{evaluate_point, PolicySpec};
use netdist::gnn::GnnConfig;
use netdist::protocol::Task;
use netdist::scenario::MissionConfig;

fn main() -> netdist::Result<()> {
    let config = MissionConfig::standard(20);
    let gnn = GnnConfig::default();
    let episodes = 10;

    println!("static team of 20, {episodes} episodes per policy\n");
    println!("{:<16} {:>10} {:>8}", "policy", "mean AoI", "SEM");
    for spec in [
        PolicySpec::Silent,
        PolicySpec::Flood(0.2),
        PolicySpec::Flood(0.5),
        PolicySpec::RoundRobin { base: 0 },
        PolicySpec::Mst(0.5),
    ] {
        let (row, _) = evaluate_point(&config, &gnn, &spec, Task::Static, episodes, 42)?;
        println!("{:<16} {:>10.2} {:>8.3}", row.policy, row.mean_aoi, row.sem_aoi);
    }
    Ok(())
}
