//! Train the DQN agent and compare its greedy policy with the exact optimum.
//!
//!     cargo run --release --example train_dqn -- <eta> <episodes> <seed>

use aoi_cache::agents::StationaryPolicy;
use aoi_cache::dqn::{extract_greedy_policy, train, TrainerConfig};
use aoi_cache::model::ModelConfig;
use aoi_cache::solver::{policy_average_cost, rvia, SolverSettings};

fn main() -> aoi_cache::Result<()> {
    let mut args = std::env::args().skip(1);
    let eta: f64 = args.next().and_then(|a| a.parse().ok()).unwrap_or(0.5);
    let episodes: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(10);
    let seed: u64 = args.next().and_then(|a| a.parse().ok()).unwrap_or(0);

    let config = ModelConfig::default_operating_point(eta)?;
    let trainer = TrainerConfig {
        episodes,
        seed,
        ..TrainerConfig::default()
    };
    let run = train(&config, &trainer)?;
    for (i, c) in run.episode_costs.iter().enumerate() {
        println!("episode {:>3}  avg cost {c:.4}", i + 1);
    }

    let greedy = extract_greedy_policy(&run.policy, &config);
    let learned = policy_average_cost(&config, |s| greedy.decide(s))?;
    let optimal = rvia(&config, &SolverSettings::default())?;
    println!(
        "greedy {:.4} (freq {:.3})  optimal {:.4}  ratio {:.3}  [{:.1}s, {} gradient steps]",
        learned.avg_cost,
        learned.update_freq,
        optimal.avg_cost,
        learned.avg_cost / optimal.avg_cost,
        run.wall_time.as_secs_f64(),
        run.gradient_steps
    );
    Ok(())
}
