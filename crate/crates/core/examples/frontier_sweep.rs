//! Sweep the update weight, build the AoI / update-frequency frontiers of the
//! look-ahead optimum and the baseline, and compare them at matched
//! frequencies. Writes sweep.csv and frontier.csv to the given directory.

use std::fs::File;

use aoi_cache::harness::{compare_frontiers, frontier, sweep, PolicyKind, SweepOptions, ETA_GRID};
use aoi_cache::model::ModelConfig;

fn main() -> aoi_cache::Result<()> {
    let outdir = std::env::args().nth(1).unwrap_or_else(|| "frontier-out".into());
    std::fs::create_dir_all(&outdir)?;
    let config = ModelConfig::default_operating_point(0.0)?;
    let seeds: Vec<u64> = (0..30).collect();
    let run = sweep(
        &[PolicyKind::Optimal, PolicyKind::Baseline],
        &ETA_GRID,
        &config,
        &seeds,
        &SweepOptions::default(),
    )?;
    run.result.write_csv(File::create(format!("{outdir}/sweep.csv"))?)?;
    run.result.write_frontier_csv(File::create(format!("{outdir}/frontier.csv"))?)?;

    let optimal = frontier(&run.result, PolicyKind::Optimal);
    let baseline = frontier(&run.result, PolicyKind::Baseline);
    let cmp = compare_frontiers(&optimal, &baseline).expect("frontiers overlap");
    for (f, c, b) in &cmp.matched {
        println!("freq {f:.4}  look-ahead {c:.4}  baseline {b:.4}  reduction {:>5.1}%", 100.0 * (b - c) / b);
    }
    println!(
        "max reduction {:.1}% at freq {:.4}; weakly dominates: {}",
        100.0 * cmp.max_reduction,
        cmp.max_reduction_freq,
        cmp.dominates
    );
    Ok(())
}
