//! Thin command-line front end over the library: run episodes, train a
//! policy, evaluate a checkpoint, or run a preset sweep.

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use netdist::experiment::{
    evaluate_point, metrics_csv, preset_fig, run_experiment, write_metrics, write_traces,
    ExperimentSpec, PolicySpec,
};
use netdist::nn::Checkpoint;
use netdist::rl::{train, RewardKind};

#[derive(Parser)]
#[command(name = "netdist", about = "Data-distribution simulator and policy trainer for mobile robot networks", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run episodes of one policy and write metrics (and traces).
    Simulate {
        /// Experiment config file (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Policy spec, e.g. silent, flood(0.3), roundrobin(0), mst(0.3), gnn(model.json).
        #[arg(long)]
        policy: Option<String>,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory for metrics.csv and traces.jsonl.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Train the graph-network policy with PPO.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Reward: aoi or velvar.
        #[arg(long, default_value = "aoi")]
        reward: String,
        /// Observation budget (window x agent decisions).
        #[arg(long)]
        budget: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Evaluate a trained checkpoint.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run a standard sweep preset: receptive_field, power, teamsize, flocking.
    Sweep {
        #[arg(long)]
        preset: String,
        /// Optional config overriding the preset's mission template.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn main() {
    if let Err(err) = run(Cli::parse()) {
        eprintln!("error: {err}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> netdist::Result<()> {
    match cli.command {
        Command::Simulate {
            config,
            policy,
            episodes,
            seed,
            out,
        } => {
            let mut spec = ExperimentSpec::load(&config)?;
            if let Some(policy) = policy {
                spec.policies = vec![policy];
            }
            if let Some(episodes) = episodes {
                spec.episodes = episodes;
            }
            if let Some(seed) = seed {
                spec.seed_base = seed;
            }
            spec.validate()?;
            let (rows, traces) = run_experiment(&spec)?;
            std::fs::create_dir_all(&out)?;
            write_metrics(&rows, &out.join("metrics.csv"))?;
            if spec.write_traces {
                write_traces(&traces, &out.join("traces.jsonl"))?;
            }
            print!("{}", metrics_csv(&rows));
            Ok(())
        }
        Command::Train {
            config,
            reward,
            budget,
            out,
        } => {
            let spec = ExperimentSpec::load(&config)?;
            let kind = parse_reward(&reward)?;
            let mut ppo = spec.ppo.clone();
            if let Some(budget) = budget {
                ppo.total_observations = budget;
            }
            let result = train(&spec.mission, &spec.gnn, &ppo, spec.task, kind)?;
            std::fs::create_dir_all(&out)?;
            Checkpoint::from_store(&result.policy_store).save(&out.join("policy.json"))?;
            Checkpoint::from_store(&result.value_store).save(&out.join("value.json"))?;
            let mut curve = String::from(
                "# format=1\nobservations,mean_episode_reward,eval_aoi,entropy,clip_fraction,value_loss\n",
            );
            for point in &result.curve {
                curve.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    point.observations,
                    point.mean_episode_reward,
                    point.eval_aoi,
                    point.entropy,
                    point.clip_fraction,
                    point.value_loss
                ));
            }
            std::fs::write(out.join("learning_curve.csv"), curve)?;
            println!(
                "trained: initial eval AoI {:.3}, best checkpoint eval AoI {:.3} over {} updates",
                result.initial_eval_aoi, result.final_eval_aoi, result.curve.len()
            );
            Ok(())
        }
        Command::Evaluate {
            checkpoint,
            config,
            episodes,
            seed,
            out,
        } => {
            let spec = ExperimentSpec::load(&config)?;
            let policy = PolicySpec::Gnn { checkpoint };
            let episodes = episodes.unwrap_or(spec.episodes);
            let seed = seed.unwrap_or(spec.seed_base);
            let (mut row, _) =
                evaluate_point(&spec.mission, &spec.gnn, &policy, spec.task, episodes, seed)?;
            row.policy = "gnn".into();
            std::fs::create_dir_all(&out)?;
            write_metrics(std::slice::from_ref(&row), &out.join("metrics.csv"))?;
            print!("{}", metrics_csv(std::slice::from_ref(&row)));
            Ok(())
        }
        Command::Sweep {
            preset,
            config,
            episodes,
            seed,
            out,
        } => {
            let mut spec = preset_fig(&preset)?;
            if let Some(path) = config {
                let overrides = ExperimentSpec::load(&path)?;
                spec.mission = overrides.mission;
                spec.policies = overrides.policies;
                spec.gnn = overrides.gnn;
            }
            if let Some(episodes) = episodes {
                spec.episodes = episodes;
            }
            if let Some(seed) = seed {
                spec.seed_base = seed;
            }
            spec.validate()?;
            let (rows, _) = run_experiment(&spec)?;
            std::fs::create_dir_all(&out)?;
            write_metrics(&rows, &out.join(format!("{preset}.csv")))?;
            print!("{}", metrics_csv(&rows));
            Ok(())
        }
    }
}

fn parse_reward(text: &str) -> netdist::Result<RewardKind> {
    match text {
        "aoi" => Ok(RewardKind::Aoi),
        "velvar" => Ok(RewardKind::VelVar),
        other => Err(netdist::Error::Config(format!(
            "unknown reward {other:?}; expected aoi or velvar"
        ))),
    }
}
