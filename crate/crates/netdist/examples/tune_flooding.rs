//! Grid-tunes the flooding probability for one mission and prints the p-vs-AoI
//! table. Flooding too little starves the network; too much jams it.

use netdist::experiment::tune_baseline;
use netdist::protocol::Task;
use netdist::scenario::MissionConfig;

fn main() -> netdist::Result<()> {
    let mut config = MissionConfig::standard(10);
    config.n_windows = 200; // shorter missions keep the grid search quick
    let (best, table) = tune_baseline("flood", &config, Task::Static, 0)?;

    println!("{:>4} {:>10}", "p", "mean AoI");
    for (p, aoi) in &table {
        let marker = if *p == best { "  <- best" } else { "" };
        println!("{p:>4.1} {aoi:>10.3}{marker}");
    }
    Ok(())
}
