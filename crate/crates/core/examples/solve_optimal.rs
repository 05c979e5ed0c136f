//! Solve the operating point by relative value iteration and inspect the
//! optimal policy around the initial state.
//!
//!     cargo run --release --example solve_optimal -- 2.0

use aoi_cache::model::{initial_state, ModelConfig, StateSpace};
use aoi_cache::solver::{evaluate_actions, rvia_compiled, CompiledModel, SolverSettings};

fn main() -> aoi_cache::Result<()> {
    let eta: f64 = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(2.0);
    let config = ModelConfig::default_operating_point(eta)?;
    let model = CompiledModel::new(&config)?;
    let table = rvia_compiled(&model, &SolverSettings::default())?;
    let eval = evaluate_actions(&model, &table.actions)?;

    println!("{}", config.canonical());
    println!("states {}  iterations {}  converged {}", model.num_states(), table.iterations, table.converged);
    println!("g = {:.6}  (AoI {:.4}, update frequency {:.4})", table.avg_cost, eval.avg_aoi, eval.update_freq);
    println!("max Bellman residual {:.2e}", table.bellman_residual(&model));

    // refresh decision as AoI grows with an empty look-ahead window vs. a full one
    let space = StateSpace::new(&config)?;
    for full in [false, true] {
        let mut s = initial_state(&config);
        if full {
            s.per_content[0].queues.iter_mut().for_each(|q| *q = 2);
        }
        let first = (1..=config.aoi_cap()).find(|&a| {
            s.per_content[0].aoi = a;
            table.actions[space.encode(&s).unwrap().0].is_update()
        });
        println!("queues {:?}: first refresh at AoI {:?}", s.per_content[0].queues, first);
    }
    Ok(())
}
