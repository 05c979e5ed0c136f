//! The look-ahead-free baseline: solve with delta = 0, lift to the full
//! window, and compare with the optimal look-ahead policy.

use aoi_cache::agents::AoiThresholdPolicy;
use aoi_cache::agents::StationaryPolicy;
use aoi_cache::model::ModelConfig;
use aoi_cache::solver::{evaluate_actions, rvia_compiled, solve_periodic_baseline, CompiledModel, SolverSettings};

fn main() -> aoi_cache::Result<()> {
    let settings = SolverSettings::default();
    println!("{:>5} {:>9} {:>10} {:>10} {:>10}", "eta", "threshold", "baseline", "optimal", "gain");
    for eta in [0.5, 1.0, 2.0, 4.0, 8.0, 16.0] {
        let config = ModelConfig::default_operating_point(eta)?;
        let model = CompiledModel::new(&config)?;
        let baseline = solve_periodic_baseline(&config, &settings)?;
        let lifted = evaluate_actions(&model, &model.tabulate(|s| baseline.action_for(s))?)?;
        let optimal = rvia_compiled(&model, &settings)?;

        // a threshold rule at the same AoI is the same policy
        let threshold = baseline.threshold().unwrap_or(config.aoi_cap());
        let rule = AoiThresholdPolicy { threshold };
        assert_eq!(model.tabulate(|s| rule.decide(s))?, model.tabulate(|s| baseline.action_for(s))?);

        println!(
            "{eta:>5} {threshold:>9} {:>10.4} {:>10.4} {:>9.1}%",
            lifted.avg_cost,
            optimal.avg_cost,
            100.0 * (lifted.avg_cost - optimal.avg_cost) / lifted.avg_cost
        );
    }
    Ok(())
}
