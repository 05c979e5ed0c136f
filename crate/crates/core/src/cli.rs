//! Command-line front end. [`run`] parses arguments, dispatches to the
//! library and maps failures to exit codes: 0 success, 1 bad input, 2
//! numerical failure.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::agents::{StationaryPolicy, TablePolicy};
use crate::config::ConfigFile;
use crate::dqn::{extract_greedy_policy, train, TrainerConfig};
use crate::error::{Error, Result};
use crate::harness::{
    compare_frontiers, frontier, provenance, rollout_seeded, sweep, write_traces_csv, PolicyKind, RolloutMetrics,
    RolloutSettings, Summary, SweepOptions, DEFAULT_BURN_IN, DEFAULT_HORIZON, ETA_GRID,
};
use crate::model::ModelConfig;
use crate::neural::Checkpoint;
use crate::solver::{
    enumerate_policies_oracle, evaluate_actions, rvia_compiled, solve_periodic_baseline, CompiledModel,
    PolicyTable, Precision, SolverSettings,
};

/// Built-in configuration used when `--config` is absent.
pub const DEFAULT_CONFIG: &str = "\
F = 1
delta = 4
aoi_cap = 50
users = 2
rates = 0.5
eta = 2
seed = 0
";

const CONFIG_HELP: &str = "\
Config file keys (`key = value`, `#` starts a comment):
  model:   F, delta, aoi_cap, users, rates, eta, seed
           (users and rates take one value per content or a single shared value)
  trainer: episodes, episode_len, target_update, batch, learning_rate,
           eps_min, eps_max, eps_decay, replay_capacity
Flags override file values. Without --config the built-in operating point is
used: F=1, delta=4, aoi_cap=50, users=2, rates=0.5, eta=2, seed=0.";

#[derive(Debug, Parser)]
#[command(name = "aoi-cache", version, about = "Queue-aware cache update scheduling", after_help = CONFIG_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the MDP by relative value iteration and store the policy.
    #[command(after_help = CONFIG_HELP)]
    Solve {
        #[command(flatten)]
        model: ModelArgs,
        /// Binary policy file to write.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write `state_index,action,h_value` rows.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Enumerate every stationary policy of a tiny instance and compare with RVIA.
    #[command(after_help = CONFIG_HELP)]
    Oracle {
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Solve without look-ahead and lift the policy to the configured window.
    #[command(after_help = CONFIG_HELP)]
    Baseline {
        #[command(flatten)]
        model: ModelArgs,
        /// Binary policy file (of the window-free problem) to write.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Train a DQN and store its checkpoint and per-episode costs.
    #[command(after_help = CONFIG_HELP)]
    Train {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        trainer: TrainerArgs,
        /// Checkpoint file to write.
        #[arg(long)]
        out: Option<PathBuf>,
        /// `episode,avg_cost` CSV to write.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Simulate a stored policy or checkpoint, or a freshly solved one.
    #[command(after_help = CONFIG_HELP)]
    Evaluate {
        #[command(flatten)]
        model: ModelArgs,
        /// Policy file written by `solve` or checkpoint written by `train`.
        #[arg(long, conflicts_with = "kind")]
        policy: Option<PathBuf>,
        /// Solve a policy instead of loading one: optimal or baseline.
        #[arg(long)]
        kind: Option<String>,
        #[command(flatten)]
        rollout: RolloutArgs,
        /// Per-seed metrics CSV to write.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep the update weight and write sweep.csv and frontier.csv.
    #[command(after_help = CONFIG_HELP)]
    Sweep {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        rollout: RolloutArgs,
        /// Comma-separated policy kinds: optimal, baseline, dqn.
        #[arg(long, default_value = "optimal,baseline")]
        policies: String,
        /// Comma-separated update weights; defaults to 0,0.25,0.5,1,2,4,8,16.
        #[arg(long)]
        etas: Option<String>,
        #[command(flatten)]
        trainer: TrainerArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Full pipeline: optimal, baseline and DQN swept over the η grid, plus
    /// training traces. Writes sweep.csv, frontier.csv and trace.csv.
    #[command(after_help = CONFIG_HELP)]
    Reproduce {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        rollout: RolloutArgs,
        #[command(flatten)]
        trainer: TrainerArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
}

#[derive(Debug, Args)]
struct ModelArgs {
    /// Experiment file; see the key list below.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Update cost weight η.
    #[arg(long)]
    eta: Option<f64>,
    /// Look-ahead window Δ.
    #[arg(long)]
    delta: Option<usize>,
    /// Base seed of every random stream.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct SolverArgs {
    /// Span stopping tolerance of relative value iteration.
    #[arg(long, default_value_t = 1e-9)]
    tolerance: f64,
    /// Iteration cap; hitting it is a numerical failure.
    #[arg(long, default_value_t = 1_000_000)]
    max_iterations: usize,
    /// Iterate in double-double precision.
    #[arg(long)]
    extended: bool,
}

#[derive(Debug, Args)]
struct RolloutArgs {
    /// Number of seeds, counted up from the base seed.
    #[arg(long, default_value_t = 30)]
    seeds: u64,
    /// Slots accrued per rollout.
    #[arg(long, default_value_t = DEFAULT_HORIZON)]
    horizon: u64,
    /// Slots simulated and discarded before accrual.
    #[arg(long, default_value_t = DEFAULT_BURN_IN)]
    burn_in: u64,
}

#[derive(Debug, Args)]
struct TrainerArgs {
    /// Training episodes N_epi.
    #[arg(long)]
    episodes: Option<usize>,
    /// Steps per episode T_epi.
    #[arg(long)]
    episode_len: Option<usize>,
    /// Target network sync period T_update.
    #[arg(long)]
    target_update: Option<usize>,
    /// Minibatch size K_batch.
    #[arg(long)]
    batch: Option<usize>,
    /// SGD step size β.
    #[arg(long)]
    learning_rate: Option<f64>,
}

#[derive(Debug, Args)]
struct OutputArgs {
    /// Directory receiving the CSV files.
    #[arg(long, default_value = "results")]
    outdir: PathBuf,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

struct Resolved {
    file: ConfigFile,
    model: ModelConfig,
    seed: u64,
}

impl ModelArgs {
    fn resolve(&self) -> Result<Resolved> {
        let mut file = match &self.config {
            Some(path) => ConfigFile::load(path)?,
            None => ConfigFile::parse(DEFAULT_CONFIG)?,
        };
        if let Some(eta) = self.eta {
            file.set("eta", eta);
        }
        if let Some(delta) = self.delta {
            file.set("delta", delta);
        }
        if let Some(seed) = self.seed {
            file.set("seed", seed);
        }
        let model = file.model_config()?;
        let seed = file.seed()?.unwrap_or(0);
        Ok(Resolved { file, model, seed })
    }
}

impl SolverArgs {
    fn settings(&self) -> SolverSettings {
        SolverSettings {
            span_tolerance: self.tolerance,
            max_iterations: self.max_iterations,
            precision: if self.extended {
                Precision::DoubleDouble
            } else {
                Precision::Double
            },
            ..SolverSettings::default()
        }
    }
}

impl RolloutArgs {
    fn settings(&self) -> RolloutSettings {
        RolloutSettings {
            horizon: self.horizon,
            burn_in: self.burn_in,
        }
    }

    fn seed_list(&self, base: u64) -> Result<Vec<u64>> {
        if self.seeds == 0 {
            return Err(Error::InvalidConfig("--seeds must be at least 1".into()));
        }
        Ok((0..self.seeds).map(|i| base.wrapping_add(i)).collect())
    }
}

impl TrainerArgs {
    fn apply(&self, resolved: &Resolved) -> Result<TrainerConfig> {
        let mut file = resolved.file.clone();
        let overrides = [
            ("episodes", self.episodes.map(|v| v.to_string())),
            ("episode_len", self.episode_len.map(|v| v.to_string())),
            ("target_update", self.target_update.map(|v| v.to_string())),
            ("batch", self.batch.map(|v| v.to_string())),
            ("learning_rate", self.learning_rate.map(|v| v.to_string())),
        ];
        for (key, value) in overrides {
            if let Some(v) = value {
                file.set(key, v);
            }
        }
        let mut config = file.trainer_config()?;
        config.seed = resolved.seed;
        Ok(config)
    }
}

/// Parses `argv` (program name first), runs the command and returns the exit
/// code. Messages go to `out`, diagnostics to `err`.
pub fn run_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(err, "{text}");
                1
            } else {
                let _ = write!(out, "{text}");
                0
            };
        }
    };
    match execute(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            if e.is_numerical() {
                2
            } else {
                1
            }
        }
    }
}

pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_with(argv, &mut std::io::stdout(), &mut std::io::stderr())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn solve_checked(model: &CompiledModel, settings: &SolverSettings) -> Result<PolicyTable> {
    let table = rvia_compiled(model, settings)?;
    if !table.converged {
        return Err(Error::SolverNotConverged {
            iterations: table.iterations,
            tolerance: table.span_tolerance,
        });
    }
    Ok(table)
}

fn execute(command: Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::Solve {
            model,
            out: path,
            csv,
            solver,
        } => {
            let r = model.resolve()?;
            let compiled = CompiledModel::new(&r.model)?;
            let table = solve_checked(&compiled, &solver.settings())?;
            let eval = evaluate_actions(&compiled, &table.actions)?;
            writeln!(out, "config       {}", r.model.canonical())?;
            writeln!(out, "states       {}", compiled.num_states())?;
            writeln!(out, "iterations   {}", table.iterations)?;
            writeln!(out, "avg_cost     {}", table.avg_cost)?;
            writeln!(out, "avg_aoi      {}", eval.avg_aoi)?;
            writeln!(out, "update_freq  {}", eval.update_freq)?;
            writeln!(out, "residual     {:e}", table.bellman_residual(&compiled))?;
            if let Some(p) = path {
                table.save(&p)?;
                writeln!(out, "wrote {}", p.display())?;
            }
            if let Some(p) = csv {
                table.write_csv(create(&p)?)?;
                writeln!(out, "wrote {}", p.display())?;
            }
        }
        Command::Oracle { model } => {
            let r = model.resolve()?;
            let oracle = enumerate_policies_oracle(&r.model)?;
            let settings = SolverSettings {
                span_tolerance: 1e-12,
                ..SolverSettings::default()
            };
            let table = solve_checked(&CompiledModel::new(&r.model)?, &settings)?;
            writeln!(out, "config            {}", r.model.canonical())?;
            writeln!(out, "policies          {}", oracle.policies_evaluated)?;
            writeln!(out, "oracle_avg_cost   {}", oracle.evaluation.avg_cost)?;
            writeln!(out, "rvia_avg_cost     {}", table.avg_cost)?;
            writeln!(
                out,
                "difference        {:e}",
                (oracle.evaluation.avg_cost - table.avg_cost).abs()
            )?;
        }
        Command::Baseline {
            model,
            out: path,
            solver,
        } => {
            let r = model.resolve()?;
            let baseline = solve_periodic_baseline(&r.model, &solver.settings())?;
            if !baseline.table.converged {
                return Err(Error::SolverNotConverged {
                    iterations: baseline.table.iterations,
                    tolerance: baseline.table.span_tolerance,
                });
            }
            let compiled = CompiledModel::new(&r.model)?;
            let eval = evaluate_actions(&compiled, &compiled.tabulate(|s| baseline.action_for(s))?)?;
            writeln!(out, "config       {}", r.model.canonical())?;
            match baseline.threshold() {
                Some(a) => writeln!(out, "threshold    {a}")?,
                None => writeln!(out, "threshold    none")?,
            }
            writeln!(out, "avg_cost     {}", eval.avg_cost)?;
            writeln!(out, "avg_aoi      {}", eval.avg_aoi)?;
            writeln!(out, "update_freq  {}", eval.update_freq)?;
            if let Some(p) = path {
                baseline.table.save(&p)?;
                writeln!(out, "wrote {}", p.display())?;
            }
        }
        Command::Train {
            model,
            trainer,
            out: path,
            trace,
        } => {
            let r = model.resolve()?;
            let config = trainer.apply(&r)?;
            let run = train(&r.model, &config)?;
            let greedy = extract_greedy_policy(&run.policy, &r.model);
            let compiled = CompiledModel::new(&r.model)?;
            let eval = evaluate_actions(&compiled, &compiled.tabulate(|s| greedy.decide(s))?)?;
            writeln!(out, "config           {}", r.model.canonical())?;
            writeln!(out, "steps            {}", config.total_steps())?;
            writeln!(out, "gradient_steps   {}", run.gradient_steps)?;
            if let Some(last) = run.episode_costs.last() {
                writeln!(out, "last_episode     {last}")?;
            }
            writeln!(out, "greedy_avg_cost  {}", eval.avg_cost)?;
            if let Some(p) = path {
                run.checkpoint(&r.model).save(&p)?;
                writeln!(out, "wrote {}", p.display())?;
            }
            if let Some(p) = trace {
                let header = provenance(&r.model, &[config.seed], &trainer_header(&config));
                run.write_csv(create(&p)?, &header)?;
                writeln!(out, "wrote {}", p.display())?;
            }
        }
        Command::Evaluate {
            model,
            policy,
            kind,
            rollout,
            out: path,
        } => {
            let r = model.resolve()?;
            let seeds = rollout.seed_list(r.seed)?;
            let settings = rollout.settings();
            let compiled = CompiledModel::new(&r.model)?;
            let policy: Box<dyn StationaryPolicy + Sync> = match (policy, kind.as_deref()) {
                (Some(p), _) => load_policy(&p, &r.model)?,
                (None, Some(k)) => match PolicyKind::parse(k)? {
                    PolicyKind::Optimal => Box::new(TablePolicy::new(solve_checked(&compiled, &SolverSettings::default())?)?),
                    PolicyKind::Baseline => Box::new(solve_periodic_baseline(&r.model, &SolverSettings::default())?),
                    PolicyKind::Dqn => {
                        return Err(Error::InvalidConfig(
                            "a dqn policy is evaluated from its checkpoint via --policy".into(),
                        ))
                    }
                },
                (None, None) => return Err(Error::InvalidConfig("pass --policy or --kind".into())),
            };
            let metrics = seeds
                .iter()
                .map(|&s| rollout_seeded(policy.as_ref(), &r.model, settings, s))
                .collect::<Result<Vec<_>>>()?;
            let exact = evaluate_actions(&compiled, &compiled.tabulate(|s| policy.decide(s))?)?;
            let pick = |f: fn(&RolloutMetrics) -> f64| Summary::of(&metrics.iter().map(f).collect::<Vec<_>>());
            let (aoi, freq, cost) = (
                pick(|m| m.avg_aoi_expected_norm),
                pick(|m| m.update_freq),
                pick(|m| m.avg_cost),
            );
            writeln!(out, "config       {}", r.model.canonical())?;
            writeln!(out, "seeds        {}", seeds.len())?;
            writeln!(out, "avg_aoi      {} ± {}  (exact {})", aoi.mean, aoi.std, exact.avg_aoi)?;
            writeln!(out, "update_freq  {} ± {}  (exact {})", freq.mean, freq.std, exact.update_freq)?;
            writeln!(out, "avg_cost     {} ± {}  (exact {})", cost.mean, cost.std, exact.avg_cost)?;
            if let Some(p) = path {
                let mut w = create(&p)?;
                let extra = [
                    ("horizon", settings.horizon.to_string()),
                    ("burn_in", settings.burn_in.to_string()),
                ];
                for line in provenance(&r.model, &seeds, &extra) {
                    writeln!(w, "# {line}")?;
                }
                writeln!(
                    w,
                    "seed,horizon,total_served_aoi,realized_served,realized_arrivals,updates,avg_aoi,update_freq,avg_cost"
                )?;
                for (s, m) in seeds.iter().zip(&metrics) {
                    writeln!(
                        w,
                        "{s},{},{},{},{},{},{},{},{}",
                        m.horizon,
                        m.total_served_aoi,
                        m.realized_served,
                        m.realized_arrivals,
                        m.updates,
                        m.avg_aoi_expected_norm,
                        m.update_freq,
                        m.avg_cost
                    )?;
                }
                w.flush()?;
                writeln!(out, "wrote {}", p.display())?;
            }
        }
        Command::Sweep {
            model,
            rollout,
            policies,
            etas,
            trainer,
            output,
        } => {
            let r = model.resolve()?;
            let kinds = policies
                .split(',')
                .map(|k| PolicyKind::parse(k.trim()))
                .collect::<Result<Vec<_>>>()?;
            let etas = match etas {
                Some(list) => list
                    .split(',')
                    .map(|v| {
                        v.trim()
                            .parse::<f64>()
                            .map_err(|_| Error::InvalidConfig(format!("cannot parse η `{v}`")))
                    })
                    .collect::<Result<Vec<_>>>()?,
                None => ETA_GRID.to_vec(),
            };
            let trainer = if kinds.contains(&PolicyKind::Dqn) {
                Some(trainer.apply(&r)?)
            } else {
                None
            };
            run_sweep(&r, &kinds, &etas, &rollout, trainer, &output, out)?;
        }
        Command::Reproduce {
            model,
            rollout,
            trainer,
            output,
        } => {
            let r = model.resolve()?;
            let trainer = trainer.apply(&r)?;
            let kinds = [PolicyKind::Optimal, PolicyKind::Baseline, PolicyKind::Dqn];
            run_sweep(&r, &kinds, &ETA_GRID, &rollout, Some(trainer), &output, out)?;
        }
    }
    Ok(())
}

fn trainer_header(config: &TrainerConfig) -> Vec<(&'static str, String)> {
    vec![
        (
            "trainer",
            format!(
                "episodes={};episode_len={};target_update={};batch={};learning_rate={};eps=({},{},{});replay_capacity={}",
                config.episodes,
                config.episode_len,
                config.target_update,
                config.batch_size,
                config.learning_rate,
                config.epsilon.min,
                config.epsilon.max,
                config.epsilon.decay,
                config.replay_capacity
            ),
        ),
        ("trainer_seed", config.seed.to_string()),
    ]
}

fn run_sweep(
    r: &Resolved,
    kinds: &[PolicyKind],
    etas: &[f64],
    rollout: &RolloutArgs,
    trainer: Option<TrainerConfig>,
    output: &OutputArgs,
    out: &mut dyn Write,
) -> Result<()> {
    let seeds = rollout.seed_list(r.seed)?;
    let options = SweepOptions {
        rollout: rollout.settings(),
        solver: SolverSettings::default(),
        trainer: trainer.clone(),
        jobs: output.jobs,
    };
    let run = sweep(kinds, etas, &r.model, &seeds, &options)?;
    fs::create_dir_all(&output.outdir)?;
    let sweep_path = output.outdir.join("sweep.csv");
    let frontier_path = output.outdir.join("frontier.csv");
    let mut w = create(&sweep_path)?;
    run.result.write_csv(&mut w)?;
    w.flush()?;
    let mut w = create(&frontier_path)?;
    run.result.write_frontier_csv(&mut w)?;
    w.flush()?;
    writeln!(out, "config  {}", r.model.canonical())?;
    for row in &run.result.rows {
        writeln!(
            out,
            "eta {:>5}  {:<8}  aoi {:.4}  freq {:.4}  cost {:.4}",
            row.eta, row.kind, row.avg_aoi.mean, row.update_freq.mean, row.avg_cost.mean
        )?;
    }
    let base = frontier(&run.result, PolicyKind::Baseline);
    for kind in [PolicyKind::Optimal, PolicyKind::Dqn] {
        if let Some(c) = compare_frontiers(&frontier(&run.result, kind), &base) {
            writeln!(
                out,
                "{kind} vs baseline: max AoI reduction {:.1}% at freq {:.4}, dominates {}",
                100.0 * c.max_reduction,
                c.max_reduction_freq,
                c.dominates
            )?;
        }
    }
    writeln!(out, "wrote {}", sweep_path.display())?;
    writeln!(out, "wrote {}", frontier_path.display())?;
    if let Some(config) = &trainer {
        if !run.traces.is_empty() {
            let trace_path = output.outdir.join("trace.csv");
            let etas: Vec<String> = run.traces.iter().map(|(e, _)| e.to_string()).collect();
            let mut extra = trainer_header(config);
            extra.push(("etas", etas.join(",")));
            let header = provenance(&r.model, &seeds, &extra);
            let mut w = create(&trace_path)?;
            write_traces_csv(&mut w, &run.traces, &header)?;
            w.flush()?;
            writeln!(out, "wrote {}", trace_path.display())?;
        }
    }
    Ok(())
}

fn load_policy(path: &Path, config: &ModelConfig) -> Result<Box<dyn StationaryPolicy + Sync>> {
    let bytes = fs::read(path)?;
    if let Ok(table) = PolicyTable::from_bytes(&bytes) {
        if !same_dynamics(&table.config, config) {
            return Err(Error::InvalidConfig(format!(
                "policy was solved for `{}`, not `{}`",
                table.config.canonical(),
                config.canonical()
            )));
        }
        return Ok(Box::new(TablePolicy::new(table)?));
    }
    let checkpoint = Checkpoint::from_bytes(&bytes)?;
    if !same_dynamics(&checkpoint.config, config) {
        return Err(Error::InvalidConfig(format!(
            "checkpoint was trained for `{}`, not `{}`",
            checkpoint.config.canonical(),
            config.canonical()
        )));
    }
    Ok(Box::new(extract_greedy_policy(&checkpoint.policy, config)))
}

/// Equal apart from the update weight.
fn same_dynamics(a: &ModelConfig, b: &ModelConfig) -> bool {
    a.window() == b.window()
        && a.aoi_cap() == b.aoi_cap()
        && a.users() == b.users()
        && a.arrival_rates() == b.arrival_rates()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_capture(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let argv = std::iter::once("aoi-cache").chain(args.iter().copied());
        let code = run_with(argv, &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn default_config_is_the_operating_point() {
        let model = ConfigFile::parse(DEFAULT_CONFIG).unwrap().model_config().unwrap();
        assert_eq!(model, ModelConfig::default_operating_point(2.0).unwrap());
    }

    #[test]
    fn help_and_usage_errors() {
        let (code, out, _) = run_capture(&["--help"]);
        assert_eq!(code, 0);
        assert!(out.contains("reproduce"));
        for sub in ["solve", "oracle", "baseline", "train", "evaluate", "sweep", "reproduce"] {
            let (code, out, _) = run_capture(&[sub, "--help"]);
            assert_eq!(code, 0, "{sub}");
            assert!(out.contains("--config") && out.contains("replay_capacity"), "{sub}");
        }
        assert_eq!(run_capture(&["solve", "--bogus"]).0, 1);
        assert_eq!(run_capture(&[]).0, 1);
        assert_eq!(run_capture(&["evaluate"]).0, 1);
    }

    #[test]
    fn solve_and_evaluate_small_instance() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("small.cfg");
        fs::write(&cfg, "F = 1\ndelta = 1\naoi_cap = 6\nusers = 2\nrates = 0.5\neta = 1\n").unwrap();
        let pol = dir.path().join("p.bin");
        let (code, out, err) = run_capture(&[
            "solve",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            pol.to_str().unwrap(),
        ]);
        assert_eq!(code, 0, "{err}");
        assert!(out.contains("avg_cost"));
        let (code, out, err) = run_capture(&[
            "evaluate",
            "--config",
            cfg.to_str().unwrap(),
            "--policy",
            pol.to_str().unwrap(),
            "--seeds",
            "2",
            "--horizon",
            "200",
        ]);
        assert_eq!(code, 0, "{err}");
        assert!(out.contains("exact"));
        let (code, _, err) = run_capture(&[
            "evaluate",
            "--config",
            cfg.to_str().unwrap(),
            "--delta",
            "2",
            "--policy",
            pol.to_str().unwrap(),
        ]);
        assert_eq!(code, 1);
        assert!(err.contains("solved for"));
    }

    #[test]
    fn oracle_guard_is_a_user_error() {
        let (code, _, err) = run_capture(&["oracle"]);
        assert_eq!(code, 1);
        assert!(err.contains("enumeration limit"));
    }

    #[test]
    fn non_convergence_is_a_numerical_error() {
        let (code, _, err) = run_capture(&["solve", "--delta", "1", "--max-iterations", "3"]);
        assert_eq!(code, 2, "{err}");
    }
}
