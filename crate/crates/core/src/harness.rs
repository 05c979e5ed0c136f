//! Monte Carlo rollouts, η sweeps and AoI/update-frequency frontiers.

use std::fmt;
use std::io::Write;

use rayon::prelude::*;

use crate::agents::{Policy, StationaryPolicy, TablePolicy};
use crate::dqn::{extract_greedy_policy, train, TrainerConfig, TrainingTrace};
use crate::error::{Error, Result};
use crate::model::{initial_state, step, ModelConfig};
use crate::rng::{RngStream, RNG_ALGORITHM};
use crate::solver::{evaluate_actions, rvia, solve_periodic_baseline, CompiledModel, PolicyEvaluation, SolverSettings};

/// Update weights swept to trace the frontier.
pub const ETA_GRID: [f64; 8] = [0.0, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0];

pub const DEFAULT_HORIZON: u64 = 10_000;
pub const DEFAULT_BURN_IN: u64 = 100;

/// Stream id of rollout randomness. Every cell with the same seed replays the
/// same arrival sequence unless its policy draws random numbers.
const ROLLOUT_STREAM: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RolloutSettings {
    /// Slots accrued into the metrics.
    pub horizon: u64,
    /// Slots simulated first and discarded.
    pub burn_in: u64,
}

impl RolloutSettings {
    pub fn new(horizon: u64) -> Self {
        Self {
            horizon,
            burn_in: DEFAULT_BURN_IN,
        }
    }
}

impl Default for RolloutSettings {
    fn default() -> Self {
        Self::new(DEFAULT_HORIZON)
    }
}

/// Accrued totals and averages of one simulated trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutMetrics {
    pub horizon: u64,
    /// `Σ_t Σ_f A_t^f Q_t^{f,0}`.
    pub total_served_aoi: f64,
    /// `T Σ_f N_f λ_f`.
    pub expected_arrivals: f64,
    pub realized_served: u64,
    pub realized_arrivals: u64,
    pub updates: u64,
    pub total_cost: f64,
    pub avg_aoi_expected_norm: f64,
    /// Served AoI per request actually served; NaN if none was.
    pub avg_aoi_realized_norm: f64,
    pub update_freq: f64,
    pub avg_cost: f64,
}

impl RolloutMetrics {
    /// `|avg_cost − (avg_aoi + η · update_freq)|`.
    pub fn decomposition_gap(&self, eta: f64) -> f64 {
        (self.avg_cost - self.avg_aoi_expected_norm - eta * self.update_freq).abs()
    }
}

/// Simulates `burn_in + horizon` slots from the initial state and accrues the
/// last `horizon` of them.
pub fn rollout<P: Policy + ?Sized>(
    policy: &mut P,
    config: &ModelConfig,
    settings: RolloutSettings,
    rng: &mut RngStream,
) -> Result<RolloutMetrics> {
    if settings.horizon == 0 {
        return Err(Error::InvalidConfig("rollout horizon must be at least 1".into()));
    }
    let mut state = initial_state(config);
    let mut served_aoi = 0.0;
    let mut served = 0u64;
    let mut arrivals = 0u64;
    let mut updates = 0u64;
    let mut total_cost = 0.0;
    for t in 0..settings.burn_in + settings.horizon {
        let action = policy.act(&state, rng).validate(config)?;
        let (next, cost) = step(&state, action, config, rng);
        if t >= settings.burn_in {
            for s in &state.per_content {
                served_aoi += f64::from(s.aoi) * f64::from(s.due_now());
                served += u64::from(s.due_now());
                arrivals += u64::from(s.new_arrivals);
            }
            updates += u64::from(action.is_update());
            total_cost += cost;
        }
        state = next;
    }
    let horizon = settings.horizon as f64;
    let expected = horizon * config.expected_arrivals_per_slot();
    Ok(RolloutMetrics {
        horizon: settings.horizon,
        total_served_aoi: served_aoi,
        expected_arrivals: expected,
        realized_served: served,
        realized_arrivals: arrivals,
        updates,
        total_cost,
        avg_aoi_expected_norm: served_aoi / expected,
        avg_aoi_realized_norm: if served > 0 {
            served_aoi / served as f64
        } else {
            f64::NAN
        },
        update_freq: updates as f64 / horizon,
        avg_cost: total_cost / horizon,
    })
}

/// Rollout of a stationary policy with the rollout stream of `seed`.
pub fn rollout_seeded<P: StationaryPolicy + ?Sized>(
    policy: &P,
    config: &ModelConfig,
    settings: RolloutSettings,
    seed: u64,
) -> Result<RolloutMetrics> {
    let mut rng = RngStream::derive(seed, ROLLOUT_STREAM);
    rollout(&mut Shared(policy), config, settings, &mut rng)
}

struct Shared<'a, P: ?Sized>(&'a P);

impl<P: StationaryPolicy + ?Sized> StationaryPolicy for Shared<'_, P> {
    fn decide(&self, state: &crate::model::SystemState) -> crate::model::Action {
        self.0.decide(state)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PolicyKind {
    /// RVIA at the configured window.
    Optimal,
    /// RVIA without look-ahead, lifted to the configured window.
    Baseline,
    /// Greedy policy of a trained network.
    Dqn,
}

impl PolicyKind {
    pub fn label(self) -> &'static str {
        match self {
            PolicyKind::Optimal => "optimal",
            PolicyKind::Baseline => "baseline",
            PolicyKind::Dqn => "dqn",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "optimal" => Ok(PolicyKind::Optimal),
            "baseline" => Ok(PolicyKind::Baseline),
            "dqn" => Ok(PolicyKind::Dqn),
            _ => Err(Error::InvalidConfig(format!("unknown policy kind `{s}`"))),
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub eta: f64,
    pub kind: PolicyKind,
    pub seed_count: usize,
    pub avg_aoi: Summary,
    pub update_freq: Summary,
    pub avg_cost: Summary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    /// Sorted by η, then policy kind.
    pub rows: Vec<SweepRow>,
    pub seeds: Vec<u64>,
    pub config: ModelConfig,
    pub rollout: RolloutSettings,
}

/// Everything besides the policy set, grid and seeds.
#[derive(Debug, Clone)]
pub struct SweepOptions {
    pub rollout: RolloutSettings,
    pub solver: SolverSettings,
    /// Required when the DQN kind is swept; one network is trained per η.
    pub trainer: Option<TrainerConfig>,
    /// Worker threads; 0 lets the pool pick.
    pub jobs: usize,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            rollout: RolloutSettings::default(),
            solver: SolverSettings::default(),
            trainer: None,
            jobs: 1,
        }
    }
}

/// Sweep results plus the training runs behind the DQN rows.
#[derive(Debug, Clone)]
pub struct SweepRun {
    pub result: SweepResult,
    /// `(η, trace)` for every trained network, sorted by η.
    pub traces: Vec<(f64, TrainingTrace)>,
}

type Boxed = Box<dyn StationaryPolicy + Send + Sync>;

fn build_policy(
    kind: PolicyKind,
    config: &ModelConfig,
    options: &SweepOptions,
) -> Result<(Boxed, Option<TrainingTrace>)> {
    Ok(match kind {
        PolicyKind::Optimal => (Box::new(TablePolicy::new(rvia(config, &options.solver)?)?), None),
        PolicyKind::Baseline => (Box::new(solve_periodic_baseline(config, &options.solver)?), None),
        PolicyKind::Dqn => {
            let trainer = options
                .trainer
                .as_ref()
                .ok_or_else(|| Error::InvalidConfig("sweeping the dqn policy needs trainer settings".into()))?;
            let trace = train(config, trainer)?;
            let policy = extract_greedy_policy(&trace.policy, config);
            (Box::new(policy), Some(trace))
        }
    })
}

fn with_pool<T: Send>(jobs: usize, work: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(work))
}

/// Evaluates every `(η, policy)` pair over `seeds`, re-solving or retraining
/// the policy for each η.
pub fn sweep(
    kinds: &[PolicyKind],
    etas: &[f64],
    config: &ModelConfig,
    seeds: &[u64],
    options: &SweepOptions,
) -> Result<SweepRun> {
    if kinds.is_empty() || etas.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidConfig("a sweep needs policies, η values and seeds".into()));
    }
    let mut kinds = kinds.to_vec();
    kinds.sort();
    kinds.dedup();
    let mut etas = etas.to_vec();
    etas.sort_by(f64::total_cmp);
    etas.dedup();
    let pairs: Vec<(f64, PolicyKind)> = etas
        .iter()
        .flat_map(|&eta| kinds.iter().map(move |&k| (eta, k)))
        .collect();

    let rows_and_traces = with_pool(options.jobs, || -> Result<Vec<(SweepRow, Option<TrainingTrace>)>> {
        let policies = pairs
            .par_iter()
            .map(|&(eta, kind)| {
                let cfg = config.with_update_weight(eta)?;
                let (policy, trace) = build_policy(kind, &cfg, options)?;
                Ok((cfg, policy, trace))
            })
            .collect::<Result<Vec<_>>>()?;
        let cells: Vec<(usize, u64)> = (0..pairs.len())
            .flat_map(|p| seeds.iter().map(move |&s| (p, s)))
            .collect();
        let metrics = cells
            .par_iter()
            .map(|&(p, seed)| rollout_seeded(policies[p].1.as_ref(), &policies[p].0, options.rollout, seed))
            .collect::<Result<Vec<_>>>()?;
        Ok(policies
            .into_iter()
            .zip(metrics.chunks(seeds.len()))
            .zip(&pairs)
            .map(|(((_, _, trace), m), &(eta, kind))| {
                let pick = |f: fn(&RolloutMetrics) -> f64| Summary::of(&m.iter().map(f).collect::<Vec<_>>());
                let row = SweepRow {
                    eta,
                    kind,
                    seed_count: m.len(),
                    avg_aoi: pick(|r| r.avg_aoi_expected_norm),
                    update_freq: pick(|r| r.update_freq),
                    avg_cost: pick(|r| r.avg_cost),
                };
                (row, trace)
            })
            .collect())
    })??;

    let mut rows = Vec::with_capacity(rows_and_traces.len());
    let mut traces = Vec::new();
    for (row, trace) in rows_and_traces {
        if let Some(t) = trace {
            traces.push((row.eta, t));
        }
        rows.push(row);
    }
    Ok(SweepRun {
        result: SweepResult {
            rows,
            seeds: seeds.to_vec(),
            config: config.clone(),
            rollout: options.rollout,
        },
        traces,
    })
}

/// Exact long-run metrics of a solved policy kind at one η.
pub fn exact_evaluation(
    kind: PolicyKind,
    config: &ModelConfig,
    eta: f64,
    solver: &SolverSettings,
) -> Result<PolicyEvaluation> {
    let cfg = config.with_update_weight(eta)?;
    let model = CompiledModel::new(&cfg)?;
    let actions = match kind {
        PolicyKind::Optimal => rvia(&cfg, solver)?.actions,
        PolicyKind::Baseline => {
            let baseline = solve_periodic_baseline(&cfg, solver)?;
            model.tabulate(|s| baseline.action_for(s))?
        }
        PolicyKind::Dqn => {
            return Err(Error::InvalidConfig(
                "exact evaluation needs a trained network; use policy_average_cost".into(),
            ))
        }
    };
    evaluate_actions(&model, &actions)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrontierPoint {
    pub eta: f64,
    pub update_freq: f64,
    pub avg_aoi: f64,
}

/// Points of one policy kind sorted by update frequency; among equal
/// frequencies the lowest AoI is kept.
pub fn frontier(sweep: &SweepResult, kind: PolicyKind) -> Vec<FrontierPoint> {
    frontier_from(
        sweep
            .rows
            .iter()
            .filter(|r| r.kind == kind)
            .map(|r| FrontierPoint {
                eta: r.eta,
                update_freq: r.update_freq.mean,
                avg_aoi: r.avg_aoi.mean,
            })
            .collect(),
    )
}

pub fn frontier_from(mut points: Vec<FrontierPoint>) -> Vec<FrontierPoint> {
    points.sort_by(|a, b| {
        a.update_freq
            .total_cmp(&b.update_freq)
            .then(a.avg_aoi.total_cmp(&b.avg_aoi))
    });
    points.dedup_by(|later, kept| later.update_freq == kept.update_freq);
    points
}

/// Piecewise-linear AoI of a frontier at `freq`; `None` outside its range.
pub fn interpolate(frontier: &[FrontierPoint], freq: f64) -> Option<f64> {
    let first = frontier.first()?;
    let last = frontier.last()?;
    if freq < first.update_freq || freq > last.update_freq {
        return None;
    }
    let i = frontier.partition_point(|p| p.update_freq < freq);
    let hi = frontier[i];
    if hi.update_freq == freq || i == 0 {
        return Some(hi.avg_aoi);
    }
    let lo = frontier[i - 1];
    let w = (freq - lo.update_freq) / (hi.update_freq - lo.update_freq);
    Some(lo.avg_aoi + w * (hi.avg_aoi - lo.avg_aoi))
}

/// Matched-frequency comparison of two frontiers over their common
/// frequency range.
#[derive(Debug, Clone, PartialEq)]
pub struct FrontierComparison {
    /// Largest `(baseline − candidate) / baseline` at a candidate point.
    pub max_reduction: f64,
    pub max_reduction_freq: f64,
    /// Candidate AoI ≤ baseline AoI at every vertex of either frontier
    /// inside the common range.
    pub dominates: bool,
    /// Largest `candidate − baseline` over those vertices.
    pub worst_excess: f64,
    pub overlap: (f64, f64),
    /// `(freq, candidate, baseline)` at every compared frequency.
    pub matched: Vec<(f64, f64, f64)>,
}

/// `None` when the frontiers share no frequency range.
pub fn compare_frontiers(candidate: &[FrontierPoint], baseline: &[FrontierPoint]) -> Option<FrontierComparison> {
    let lo = candidate.first()?.update_freq.max(baseline.first()?.update_freq);
    let hi = candidate.last()?.update_freq.min(baseline.last()?.update_freq);
    if lo > hi {
        return None;
    }
    let mut freqs: Vec<f64> = candidate
        .iter()
        .chain(baseline)
        .map(|p| p.update_freq)
        .filter(|&f| f >= lo && f <= hi)
        .collect();
    freqs.sort_by(f64::total_cmp);
    freqs.dedup();
    let matched: Vec<(f64, f64, f64)> = freqs
        .iter()
        .map(|&f| (f, interpolate(candidate, f).unwrap(), interpolate(baseline, f).unwrap()))
        .collect();
    let worst_excess = matched.iter().map(|&(_, c, b)| c - b).fold(f64::NEG_INFINITY, f64::max);
    let (max_reduction_freq, max_reduction) = candidate
        .iter()
        .filter(|p| p.update_freq >= lo && p.update_freq <= hi)
        .map(|p| {
            let b = interpolate(baseline, p.update_freq).unwrap();
            (p.update_freq, (b - p.avg_aoi) / b)
        })
        .fold((f64::NAN, f64::NEG_INFINITY), |best, x| if x.1 > best.1 { x } else { best });
    Some(FrontierComparison {
        max_reduction,
        max_reduction_freq,
        dominates: worst_excess <= 0.0,
        worst_excess,
        overlap: (lo, hi),
        matched,
    })
}

/// Comment lines identifying the code, configuration and randomness behind
/// an output file.
pub fn provenance(config: &ModelConfig, seeds: &[u64], extra: &[(&str, String)]) -> Vec<String> {
    let mut lines = vec![
        format!("aoi-cache {}", env!("CARGO_PKG_VERSION")),
        format!("config={}", config.canonical()),
        format!("config_hash={}", config.hash()),
        format!(
            "seeds={}",
            seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(",")
        ),
        format!("rng={RNG_ALGORITHM}"),
    ];
    lines.extend(extra.iter().map(|(k, v)| format!("{k}={v}")));
    lines
}

fn write_header<W: Write>(w: &mut W, header: &[String]) -> Result<()> {
    for line in header {
        writeln!(w, "# {line}")?;
    }
    Ok(())
}

impl SweepResult {
    pub fn header(&self) -> Vec<String> {
        let etas: Vec<String> = self.etas().iter().map(f64::to_string).collect();
        provenance(
            &self.config,
            &self.seeds,
            &[
                ("etas", etas.join(",")),
                ("horizon", self.rollout.horizon.to_string()),
                ("burn_in", self.rollout.burn_in.to_string()),
            ],
        )
    }

    pub fn etas(&self) -> Vec<f64> {
        let mut etas: Vec<f64> = self.rows.iter().map(|r| r.eta).collect();
        etas.dedup();
        etas
    }

    pub fn row(&self, eta: f64, kind: PolicyKind) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.eta == eta && r.kind == kind)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        write_header(&mut w, &self.header())?;
        writeln!(
            w,
            "eta,policy,seed_count,avg_aoi_mean,avg_aoi_std,update_freq_mean,update_freq_std,avg_cost_mean,avg_cost_std"
        )?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                r.eta,
                r.kind,
                r.seed_count,
                r.avg_aoi.mean,
                r.avg_aoi.std,
                r.update_freq.mean,
                r.update_freq.std,
                r.avg_cost.mean,
                r.avg_cost.std
            )?;
        }
        Ok(())
    }

    /// `policy,eta,update_freq,avg_aoi` for every kind present.
    pub fn write_frontier_csv<W: Write>(&self, mut w: W) -> Result<()> {
        write_header(&mut w, &self.header())?;
        writeln!(w, "policy,eta,update_freq,avg_aoi")?;
        let mut kinds: Vec<PolicyKind> = self.rows.iter().map(|r| r.kind).collect();
        kinds.sort();
        kinds.dedup();
        for kind in kinds {
            for p in frontier(self, kind) {
                writeln!(w, "{kind},{},{},{}", p.eta, p.update_freq, p.avg_aoi)?;
            }
        }
        Ok(())
    }
}

/// `eta,episode,avg_cost` for several training runs.
pub fn write_traces_csv<W: Write>(mut w: W, traces: &[(f64, TrainingTrace)], header: &[String]) -> Result<()> {
    write_header(&mut w, header)?;
    writeln!(w, "eta,episode,avg_cost")?;
    for (eta, trace) in traces {
        for (i, c) in trace.episode_costs.iter().enumerate() {
            writeln!(w, "{eta},{},{c}", i + 1)?;
        }
    }
    Ok(())
}
