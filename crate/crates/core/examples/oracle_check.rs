//! Cross-check RVIA against brute-force enumeration of every deterministic
//! stationary policy on instances small enough to enumerate.

use aoi_cache::model::ModelConfig;
use aoi_cache::solver::{enumerate_policies_oracle, rvia, SolverSettings};

fn main() -> aoi_cache::Result<()> {
    let settings = SolverSettings {
        span_tolerance: 1e-12,
        ..SolverSettings::default()
    };
    let instances = [(0, 3, 1), (1, 2, 1), (2, 2, 1), (0, 4, 2)];
    for (window, cap, users) in instances {
        for eta in [0.0, 0.5, 2.0] {
            let config = ModelConfig::new(window, cap, vec![users], vec![0.5], eta)?;
            let oracle = enumerate_policies_oracle(&config)?;
            let table = rvia(&config, &settings)?;
            println!(
                "delta {window} cap {cap} N {users} eta {eta:<4} policies {:>6}  oracle {:.9}  rvia {:.9}",
                oracle.policies_evaluated, oracle.evaluation.avg_cost, table.avg_cost
            );
        }
    }
    let too_big = ModelConfig::default_operating_point(1.0)?;
    if let Err(e) = enumerate_policies_oracle(&too_big) {
        println!("operating point: {e}");
    }
    Ok(())
}
