//! Sweeps transmit power for a static team and writes the metrics table:
//! more power means more eavesdropping but also more interference.

use netdist::experiment::{metrics_csv, preset_fig, run_experiment};

fn main() -> netdist::Result<()> {
    let mut spec = preset_fig("power")?;
    // Trimmed for a quick demonstration; raise for publication-grade error bars.
    spec.episodes = 5;
    spec.mission = netdist::scenario::MissionConfig::standard(10);
    spec.policies = vec!["roundrobin(0)".into(), "flood(0.3)".into()];

    let (rows, _) = run_experiment(&spec)?;
    print!("{}", metrics_csv(&rows));
    Ok(())
}
