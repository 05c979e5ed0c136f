use aoi_cache::agents::{EpsilonSchedule, RandomPolicy, TablePolicy};
use aoi_cache::dqn::{cost_is_consistent, Trainer, TrainerConfig};
use aoi_cache::harness::{rollout, rollout_seeded, RolloutSettings, Summary};
use aoi_cache::model::ModelConfig;
use aoi_cache::rng::RngStream;
use aoi_cache::solver::{evaluate_actions, rvia_compiled, CompiledModel, SolverSettings};

fn small_trainer(seed: u64, epsilon: EpsilonSchedule) -> TrainerConfig {
    TrainerConfig {
        episodes: 1,
        episode_len: 2_000,
        target_update: 500,
        batch_size: 64,
        replay_capacity: 1_000,
        epsilon,
        seed,
        ..TrainerConfig::default()
    }
}

#[test]
fn fully_random_exploration_costs_like_the_random_policy() {
    let config = ModelConfig::default_operating_point(1.0).unwrap();
    let per_seed: Vec<f64> = (0..8)
        .map(|seed| {
            let mut trainer = Trainer::new(&config, &small_trainer(seed, EpsilonSchedule::constant(1.0).unwrap())).unwrap();
            let mut total = 0.0;
            for _ in 0..2_000 {
                total += trainer.step().unwrap().cost;
            }
            total / 2_000.0
        })
        .collect();
    let random: Vec<f64> = (0..30)
        .map(|seed| {
            let mut policy = RandomPolicy::new(&config);
            let mut rng = RngStream::derive(1_000 + seed, 0);
            rollout(&mut policy, &config, RolloutSettings { horizon: 2_000, burn_in: 0 }, &mut rng)
                .unwrap()
                .avg_cost
        })
        .collect();
    let (a, b) = (Summary::of(&per_seed), Summary::of(&random));
    let se = (a.std.powi(2) / per_seed.len() as f64 + b.std.powi(2) / random.len() as f64).sqrt();
    assert!((a.mean - b.mean).abs() <= 3.0 * se, "{a:?} vs {b:?}");
}

#[test]
fn long_rollout_matches_exact_average_cost() {
    let config = ModelConfig::default_operating_point(4.0).unwrap();
    let model = CompiledModel::new(&config).unwrap();
    let table = rvia_compiled(&model, &SolverSettings::default()).unwrap();
    let exact = evaluate_actions(&model, &table.actions).unwrap();
    let policy = TablePolicy::new(table).unwrap();
    let m = rollout_seeded(&policy, &config, RolloutSettings::new(100_000), 11).unwrap();
    assert!((m.avg_cost - exact.avg_cost).abs() / exact.avg_cost < 0.01);
    assert!((m.update_freq - exact.update_freq).abs() < 0.01);
}

#[test]
fn trainer_invariants() {
    let config = ModelConfig::default_operating_point(2.0).unwrap();
    let settings = small_trainer(3, EpsilonSchedule::new(0.0, 0.99, 200.0).unwrap());
    let mut trainer = Trainer::new(&config, &settings).unwrap();
    let mut syncs = Vec::new();
    for t in 0..1_200u64 {
        let report = trainer.step().unwrap();
        assert_eq!(report.step, t);
        assert_eq!(report.loss.is_some(), t + 1 >= settings.batch_size as u64);
        if report.target_synced {
            syncs.push(t);
        }
        assert!(trainer.policy().parameters().is_finite());
    }
    assert_eq!(syncs, vec![0, 500, 1_000]);
    assert!(trainer.replay_tuples().all(|tuple| cost_is_consistent(tuple, &config)));
    assert_eq!(trainer.replay_tuples().count(), 1_000);
}
