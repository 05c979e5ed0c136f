//! Acceptance checks, one line per criterion.
//!
//! Runs without the libtest harness so the PASS/FAIL lines always reach the
//! output. Arguments: `--ignored` / `--include-ignored` adds the full-scale
//! DQN check; any other bare argument keeps only criteria whose name
//! contains it.

use std::collections::HashMap;
use std::panic::{self, AssertUnwindSafe};
use std::process::Command;
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Instant;

use aoi_cache::agents::{EpsilonGreedy, EpsilonSchedule, IdlePolicy, StationaryPolicy, TablePolicy};
use aoi_cache::dqn::{extract_greedy_policy, train, TrainerConfig, TrainingTrace};
use aoi_cache::harness::{
    compare_frontiers, exact_evaluation, frontier, frontier_from, rollout_seeded, sweep, FrontierPoint, PolicyKind,
    RolloutSettings, Summary, SweepOptions, ETA_GRID,
};
use aoi_cache::model::{initial_state, step, ModelConfig};
use aoi_cache::neural::{NetworkShape, QNetwork};
use aoi_cache::rng::RngStream;
use aoi_cache::solver::{
    enumerate_policies_oracle, policy_average_cost, rvia, rvia_compiled, CompiledModel, Precision, SolverSettings,
};

type Outcome = Result<String, String>;

struct Criterion {
    id: &'static str,
    name: &'static str,
    ignored: bool,
    check: fn() -> Outcome,
}

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn operating_point(eta: f64) -> ModelConfig {
    ModelConfig::default_operating_point(eta).unwrap()
}

// 1
fn oracle_equivalence() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for (window, cap, users) in [(0, 3, 1), (1, 2, 1), (2, 2, 1), (0, 4, 2)] {
        for eta in [0.0, 0.25, 1.0, 2.0, 5.0] {
            let config = ModelConfig::new(window, cap, vec![users], vec![0.5], eta).unwrap();
            let oracle = enumerate_policies_oracle(&config).unwrap();
            let table = rvia(&config, &SolverSettings::default()).unwrap();
            worst = worst.max((table.avg_cost - oracle.evaluation.avg_cost).abs());
            count += 1;
        }
    }
    verdict(
        worst < 1e-6,
        format!("{count} (instance, eta) pairs, max |g_rvia - g_oracle| = {worst:.2e} (< 1e-6)"),
    )
}

// 2
fn bellman_residual() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut states = 0;
    for eta in ETA_GRID {
        let model = CompiledModel::new(&operating_point(eta)).unwrap();
        states = model.num_states();
        let table = rvia_compiled(&model, &SolverSettings::default()).unwrap();
        if !table.converged {
            return Err(format!("RVIA did not converge at eta {eta}"));
        }
        worst = worst.max(table.bellman_residual(&model));
    }
    verdict(
        states == 12_150 && worst < 1e-8,
        format!("|S| = {states}, max residual over the eta grid {worst:.2e} (< 1e-8)"),
    )
}

// 3
fn exact_vs_simulated() -> Outcome {
    let seeds: Vec<u64> = (0..30).collect();
    let mut parts = Vec::new();
    let mut ok = true;
    for eta in [0.5, 2.0, 8.0] {
        let config = operating_point(eta);
        let model = CompiledModel::new(&config).unwrap();
        let table = rvia_compiled(&model, &SolverSettings::default()).unwrap();
        let exact = aoi_cache::solver::evaluate_actions(&model, &table.actions).unwrap().avg_cost;
        let policy = TablePolicy::new(table).unwrap();
        let costs: Vec<f64> = seeds
            .iter()
            .map(|&s| rollout_seeded(&policy, &config, RolloutSettings::new(10_000), s).unwrap().avg_cost)
            .collect();
        let mc = Summary::of(&costs).mean;
        let rel = (mc - exact).abs() / exact;
        ok &= rel < 0.02;
        parts.push(format!("eta {eta}: exact {exact:.4} mc {mc:.4} ({:.2}%)", 100.0 * rel));
    }
    verdict(ok, format!("{} (< 2%)", parts.join(", ")))
}

// 4
fn information_monotonicity() -> Outcome {
    let settings = SolverSettings {
        span_tolerance: 1e-24,
        precision: Precision::DoubleDouble,
        ..SolverSettings::default()
    };
    let mut violations = Vec::new();
    let mut rows = Vec::new();
    for eta in ETA_GRID {
        let g: Vec<f64> = [0, 1, 2, 4]
            .iter()
            .map(|&d| {
                let config = operating_point(eta).with_window(d).unwrap();
                rvia(&config, &settings).unwrap().avg_cost
            })
            .collect();
        for w in g.windows(2) {
            if w[1] > w[0] {
                violations.push(format!("eta {eta}: {} > {}", w[1], w[0]));
            }
        }
        rows.push(format!("{eta}:[{}]", g.iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>().join(" ")));
    }
    if violations.is_empty() {
        Ok(format!("g(delta=0,1,2,4) non-increasing with zero tolerance: {}", rows.join(" ")))
    } else {
        Err(format!("violations: {}", violations.join("; ")))
    }
}

// 5
fn frontier_reduction() -> Outcome {
    let config = operating_point(0.0);
    let seeds: Vec<u64> = (0..30).collect();
    let run = sweep(
        &[PolicyKind::Optimal, PolicyKind::Baseline],
        &ETA_GRID,
        &config,
        &seeds,
        &SweepOptions::default(),
    )
    .unwrap();
    let cmp = compare_frontiers(
        &frontier(&run.result, PolicyKind::Optimal),
        &frontier(&run.result, PolicyKind::Baseline),
    )
    .ok_or("frontiers do not overlap")?;

    let exact = |kind| {
        frontier_from(
            ETA_GRID
                .iter()
                .map(|&eta| {
                    let e = exact_evaluation(kind, &config, eta, &SolverSettings::default()).unwrap();
                    FrontierPoint {
                        eta,
                        update_freq: e.update_freq,
                        avg_aoi: e.avg_aoi,
                    }
                })
                .collect(),
        )
    };
    let exact_cmp = compare_frontiers(&exact(PolicyKind::Optimal), &exact(PolicyKind::Baseline)).unwrap();
    verdict(
        cmp.max_reduction >= 0.25 && cmp.dominates,
        format!(
            "simulated max reduction {:.1}% at freq {:.4} (need >= 25%), weak dominance {} (worst excess {:.4}); exact chain: {:.1}%, dominance {}",
            100.0 * cmp.max_reduction,
            cmp.max_reduction_freq,
            cmp.dominates,
            cmp.worst_excess,
            100.0 * exact_cmp.max_reduction,
            exact_cmp.dominates
        ),
    )
}

// 6
fn gradient_correctness() -> Outcome {
    let config = operating_point(1.0);
    let shape = NetworkShape::for_model(&config);
    let offsets = shape.offsets();
    let layers = shape.layers();
    let mut rng = RngStream::from_seed(2024);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut probes = 0;
    let mut redrawn = 0;
    while probes < 100 {
        let mut net = QNetwork::init_uniform(shape.clone(), &mut rng);
        for p in net.parameters_mut().0.iter_mut() {
            *p += 0.1 * (rng.uniform() - 0.5);
        }
        let x: Vec<f64> = (0..shape.input).map(|_| rng.uniform()).collect();
        let action = rng.below(shape.output);
        let upstream = 2.0 * rng.uniform() - 1.0;
        let analytic = net.backward(&x, action, upstream).unwrap();
        let centre = net.forward(&x)[action];
        let mut numeric = vec![0.0; analytic.len()];
        let mut crosses_kink = false;
        for (i, n) in numeric.iter_mut().enumerate() {
            let orig = net.parameters().0[i];
            net.parameters_mut().0[i] = orig + h;
            let up = net.forward(&x)[action];
            net.parameters_mut().0[i] = orig - h;
            let down = net.forward(&x)[action];
            net.parameters_mut().0[i] = orig;
            // with a fixed ReLU pattern the output is affine in any one parameter
            crosses_kink |= ((up - centre) - (centre - down)).abs() > 1e-9 * (1.0 + centre.abs());
            *n = upstream * (up - down) / (2.0 * h);
        }
        if crosses_kink {
            redrawn += 1;
            continue;
        }
        probes += 1;
        for (l, &(n_in, n_out)) in layers.iter().enumerate() {
            let range = offsets[l].0..offsets[l].1 + n_out;
            assert_eq!(range.len(), n_in * n_out + n_out);
            let a = &analytic.0[range.clone()];
            let n = &numeric[range];
            let diff = a.iter().zip(n).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
            let scale = a.iter().map(|v| v * v).sum::<f64>().sqrt().max(n.iter().map(|v| v * v).sum::<f64>().sqrt());
            if scale > 0.0 {
                worst = worst.max(diff / scale);
            }
        }
    }
    verdict(
        worst < 1e-4,
        format!(
            "{probes} probes ({redrawn} redrawn: ReLU switches inside the stencil), {} layers, worst per-layer relative error {worst:.2e} (< 1e-4)",
            layers.len()
        ),
    )
}

type RunKey = (u64, u64, usize);
type RunCell = Arc<OnceLock<Arc<TrainingTrace>>>;

/// Training runs shared between criteria 7 and 8.
fn training_run(eta: f64, seed: u64, episodes: usize) -> Arc<TrainingTrace> {
    static RUNS: OnceLock<Mutex<HashMap<RunKey, RunCell>>> = OnceLock::new();
    let cell = RUNS
        .get_or_init(Default::default)
        .lock()
        .unwrap()
        .entry((eta.to_bits(), seed, episodes))
        .or_default()
        .clone();
    cell.get_or_init(|| {
        let config = TrainerConfig {
            episodes,
            seed,
            ..TrainerConfig::default()
        };
        Arc::new(train(&operating_point(eta), &config).unwrap())
    })
    .clone()
}

fn dqn_near_optimality(episodes: usize, tolerance: f64) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for eta in [0.5, 2.0] {
        let config = operating_point(eta);
        let optimal = rvia(&config, &SolverSettings::default()).unwrap().avg_cost;
        let mut within = 0;
        let mut ratios = Vec::new();
        for seed in 0..5 {
            let run = training_run(eta, seed, episodes);
            let greedy = extract_greedy_policy(&run.policy, &config);
            let cost = policy_average_cost(&config, |s| greedy.decide(s)).unwrap().avg_cost;
            let ratio = cost / optimal;
            within += usize::from(ratio <= 1.0 + tolerance);
            ratios.push(format!("{ratio:.3}"));
        }
        ok &= within >= 4;
        parts.push(format!("eta {eta}: {within}/5 within (cost/optimal {})", ratios.join(" ")));
    }
    verdict(
        ok,
        format!(
            "N_epi={episodes}, tolerance {:.0}%, need >= 4/5 per eta; {}",
            100.0 * tolerance,
            parts.join("; ")
        ),
    )
}

// 7, CI scale
fn dqn_ci_scale() -> Outcome {
    dqn_near_optimality(60, 0.15)
}

// 7, full scale
fn dqn_full_scale() -> Outcome {
    dqn_near_optimality(200, 0.10)
}

// 8
fn dqn_convergence_shape() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for eta in [0.5, 1.0, 2.0] {
        let run = training_run(eta, 0, 60);
        let c = &run.episode_costs;
        let mean = |r: std::ops::Range<usize>| c[r.clone()].iter().sum::<f64>() / r.len() as f64;
        // episodes 30..=50 and the last 50, counted from 1
        let early = mean(29..50);
        let late = mean(c.len() - 50..c.len());
        let rel = (early - late).abs() / late;
        ok &= rel <= 0.15;
        parts.push(format!("eta {eta}: ep30-50 {early:.4} vs last50 {late:.4} ({:.1}%)", 100.0 * rel));
    }
    verdict(ok, format!("N_epi=60, {} (<= 15%)", parts.join(", ")))
}

// 9
fn statistical_sanity() -> Outcome {
    let n = 100_000u32;
    let mut worst_z: f64 = 0.0;
    for (users, rate) in [(2u32, 0.5), (5, 0.3)] {
        let config = ModelConfig::new(0, 5, vec![users], vec![rate], 1.0).unwrap();
        let pmf = config.arrival_pmf(1).unwrap().to_vec();
        let state = initial_state(&config);
        let mut rng = RngStream::from_seed(99);
        let mut counts = vec![0u32; users as usize + 1];
        for _ in 0..n {
            let (next, _) = step(&state, aoi_cache::model::Action::IDLE, &config, &mut rng);
            counts[next.per_content[0].new_arrivals as usize] += 1;
        }
        for (k, &c) in counts.iter().enumerate() {
            let p = pmf[k];
            let sigma = (f64::from(n) * p * (1.0 - p)).sqrt();
            worst_z = worst_z.max((f64::from(c) - f64::from(n) * p).abs() / sigma);
        }
    }
    let config = operating_point(1.0);
    let mut policy = EpsilonGreedy::new(IdlePolicy, EpsilonSchedule::constant(0.5).unwrap(), &config);
    let mut rng = RngStream::from_seed(7);
    let s = initial_state(&config);
    let random = (0..n).filter(|_| policy.act_traced(&s, &mut rng).1).count();
    let frac = random as f64 / f64::from(n);
    verdict(
        worst_z <= 3.0 && (frac - 0.5).abs() <= 0.01,
        format!(
            "binomial categories max |z| = {worst_z:.2} (<= 3); epsilon-greedy random fraction {frac:.4} (0.5 +/- 0.01)"
        ),
    )
}

// 10
fn determinism() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_aoi-cache");
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for dir in &dirs {
        let status = Command::new(bin)
            .args([
                "reproduce",
                "--seed",
                "7",
                "--seeds",
                "3",
                "--horizon",
                "500",
                "--episodes",
                "3",
                "--episode-len",
                "200",
                "--target-update",
                "200",
                "--batch",
                "64",
                "--outdir",
            ])
            .arg(dir.path())
            .output()
            .unwrap();
        if !status.status.success() {
            return Err(format!("reproduce failed: {}", String::from_utf8_lossy(&status.stderr)));
        }
    }
    let mut sizes = Vec::new();
    for file in ["sweep.csv", "frontier.csv", "trace.csv"] {
        let a = std::fs::read(dirs[0].path().join(file)).unwrap();
        let b = std::fs::read(dirs[1].path().join(file)).unwrap();
        if a != b {
            return Err(format!("{file} differs between runs"));
        }
        sizes.push(format!("{file} {} B", a.len()));
    }
    Ok(format!("reproduce --seed 7 twice, byte-identical: {}", sizes.join(", ")))
}

fn main() {
    let criteria = [
        Criterion {
            id: "1",
            name: "oracle_equivalence",
            ignored: false,
            check: oracle_equivalence,
        },
        Criterion {
            id: "2",
            name: "bellman_residual",
            ignored: false,
            check: bellman_residual,
        },
        Criterion {
            id: "3",
            name: "exact_vs_simulated",
            ignored: false,
            check: exact_vs_simulated,
        },
        Criterion {
            id: "4",
            name: "information_monotonicity",
            ignored: false,
            check: information_monotonicity,
        },
        Criterion {
            id: "5",
            name: "frontier_reduction",
            ignored: false,
            check: frontier_reduction,
        },
        Criterion {
            id: "6",
            name: "gradient_correctness",
            ignored: false,
            check: gradient_correctness,
        },
        Criterion {
            id: "7",
            name: "dqn_near_optimality_ci_scale",
            ignored: false,
            check: dqn_ci_scale,
        },
        Criterion {
            id: "7",
            name: "dqn_near_optimality_full_scale",
            ignored: true,
            check: dqn_full_scale,
        },
        Criterion {
            id: "8",
            name: "dqn_convergence_shape",
            ignored: false,
            check: dqn_convergence_shape,
        },
        Criterion {
            id: "9",
            name: "statistical_sanity",
            ignored: false,
            check: statistical_sanity,
        },
        Criterion {
            id: "10",
            name: "determinism",
            ignored: false,
            check: determinism,
        },
    ];

    let args: Vec<String> = std::env::args().skip(1).collect();
    let with_ignored = args.iter().any(|a| a == "--ignored" || a == "--include-ignored");
    let only_ignored = args.iter().any(|a| a == "--ignored");
    let filters: Vec<&String> = args.iter().filter(|a| !a.starts_with('-')).collect();
    if args.iter().any(|a| a == "--list") {
        for c in &criteria {
            println!("{}: test", c.name);
        }
        return;
    }

    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    let mut skipped = 0;
    let mut ran = 0;
    for c in &criteria {
        if !filters.is_empty() && !filters.iter().any(|f| c.name.contains(f.as_str())) {
            continue;
        }
        if (c.ignored && !with_ignored) || (!c.ignored && only_ignored) {
            println!("criterion {:>2} SKIP {} (ignored; run with --ignored)", c.id, c.name);
            skipped += 1;
            continue;
        }
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(c.check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        ran += 1;
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS {} [{secs:.1}s]: {detail}", c.id, c.name),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL {} [{secs:.1}s]: {detail}", c.id, c.name)
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed, {skipped} skipped", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
