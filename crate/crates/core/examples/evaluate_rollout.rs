//! Monte Carlo rollouts of several schedulers next to their exact long-run
//! cost.

use aoi_cache::agents::{AoiThresholdPolicy, EpsilonGreedy, EpsilonSchedule, IdlePolicy, Policy, RandomPolicy, TablePolicy};
use aoi_cache::harness::{rollout, RolloutSettings, Summary};
use aoi_cache::model::ModelConfig;
use aoi_cache::rng::RngStream;
use aoi_cache::solver::{rvia, SolverSettings};

fn report(name: &str, config: &ModelConfig, make: &dyn Fn() -> Box<dyn Policy>) -> aoi_cache::Result<()> {
    let mut costs = Vec::new();
    let mut freqs = Vec::new();
    for seed in 0..30 {
        let mut policy = make();
        let mut rng = RngStream::derive(seed, 3);
        let m = rollout(policy.as_mut(), config, RolloutSettings::default(), &mut rng)?;
        costs.push(m.avg_cost);
        freqs.push(m.update_freq);
    }
    let (c, f) = (Summary::of(&costs), Summary::of(&freqs));
    println!("{name:<18} cost {:>8.4} ± {:.4}   freq {:.4}", c.mean, c.std, f.mean);
    Ok(())
}

fn main() -> aoi_cache::Result<()> {
    let config = ModelConfig::default_operating_point(2.0)?;
    let table = rvia(&config, &SolverSettings::default())?;
    println!("exact optimal cost {:.4}", table.avg_cost);
    let optimal = TablePolicy::new(table)?;

    report("optimal", &config, &|| Box::new(optimal.clone()))?;
    report("threshold(2)", &config, &|| Box::new(AoiThresholdPolicy { threshold: 2 }))?;
    report("idle", &config, &|| Box::new(IdlePolicy))?;
    report("random", &config, &|| Box::new(RandomPolicy::new(&config)))?;
    report("optimal, eps=0.1", &config, &|| {
        Box::new(EpsilonGreedy::new(optimal.clone(), EpsilonSchedule::constant(0.1).unwrap(), &config))
    })?;
    Ok(())
}
