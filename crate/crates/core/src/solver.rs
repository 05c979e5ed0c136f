//! Exact solution of the average-cost MDP.
//!
//! [`rvia`] runs relative value iteration over the enumerated state space,
//! [`policy_average_cost`] evaluates any fixed stationary policy through the
//! stationary distribution of its induced chain, and
//! [`enumerate_policies_oracle`] brute-forces every deterministic stationary
//! policy of a tiny instance as an independent check on both.

use std::io::{Read, Write};
use std::ops::{Add, Mul, Sub};
use std::path::Path;

use twofloat::TwoFloat;

use crate::error::{Error, Result};
use crate::model::{initial_state, service_term, Action, ModelConfig, StateIndex, StateSpace, SystemState};

/// Largest state space the solvers will enumerate.
pub const MAX_STATES: usize = 10_000_000;

/// Largest number of stationary policies the oracle will enumerate.
pub const MAX_ORACLE_POLICIES: u128 = 1_000_000;

const POWER_TOLERANCE: f64 = 1e-12;
const POWER_MAX_ITERATIONS: usize = 1_000_000;

/// Transition kernel and costs tabulated over the whole state space.
///
/// Successors of `(s, u)` are `base(s, u) + offset` for every arrival outcome
/// `(offset, prob)`, so the kernel is stored as one base index per
/// state-action pair plus a shared outcome list.
#[derive(Debug, Clone)]
pub struct CompiledModel {
    space: StateSpace,
    num_actions: usize,
    update_weight: f64,
    service: Vec<f64>,
    base: Vec<usize>,
    outcomes: Vec<(usize, f64)>,
    initial: StateIndex,
}

impl CompiledModel {
    pub fn new(config: &ModelConfig) -> Result<Self> {
        let count = StateSpace::count(config);
        if count > MAX_STATES as u128 {
            return Err(Error::StateSpaceTooLarge {
                size: count,
                limit: MAX_STATES as u128,
            });
        }
        let space = StateSpace::new(config)?;
        let num_actions = config.num_actions();
        let mut service = Vec::with_capacity(space.size());
        let mut base = Vec::with_capacity(space.size() * num_actions);
        for (_, state) in space.iter() {
            service.push(service_term(&state, config));
            for u in 0..num_actions {
                base.push(space.deterministic_successor_index(&state, Action(u))?.0);
            }
        }
        let outcomes = space.arrival_outcomes();
        let initial = space.encode(&initial_state(config))?;
        Ok(Self {
            space,
            num_actions,
            update_weight: config.update_weight(),
            service,
            base,
            outcomes,
            initial,
        })
    }

    pub fn space(&self) -> &StateSpace {
        &self.space
    }

    pub fn config(&self) -> &ModelConfig {
        self.space.config()
    }

    pub fn num_states(&self) -> usize {
        self.service.len()
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn initial_index(&self) -> StateIndex {
        self.initial
    }

    #[inline]
    pub fn cost(&self, s: usize, u: usize) -> f64 {
        self.service[s] + if u > 0 { self.update_weight } else { 0.0 }
    }

    #[inline]
    pub fn service(&self, s: usize) -> f64 {
        self.service[s]
    }

    /// `Σ_{s'} P(s' | s, u) values[s']`.
    #[inline]
    pub fn expected(&self, s: usize, u: usize, values: &[f64]) -> f64 {
        let base = self.base[s * self.num_actions + u];
        self.outcomes.iter().map(|&(off, p)| p * values[base + off]).sum()
    }


    /// Actions of a policy tabulated over this space.
    pub fn tabulate<P: Fn(&SystemState) -> Action>(&self, policy: P) -> Result<Vec<Action>> {
        self.space
            .iter()
            .map(|(_, s)| policy(&s).validate(self.config()))
            .collect()
    }
}

/// RVIA settings.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverSettings {
    /// Stop once the span of successive relative value differences drops
    /// below this.
    pub span_tolerance: f64,
    pub max_iterations: usize,
    /// Anchor of the relative values; `None` selects the initial state.
    pub reference_state: Option<StateIndex>,
    /// Weight `τ ∈ (0, 1]` of the Bellman update in
    /// `h ← τ·T(h) + (1 - τ)·h`. Values below 1 make every policy's chain
    /// aperiodic without changing optimal policies or relative values.
    pub aperiodicity: f64,
    pub precision: Precision,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            span_tolerance: 1e-9,
            max_iterations: 1_000_000,
            reference_state: None,
            aperiodicity: 0.5,
            precision: Precision::Double,
        }
    }
}

impl SolverSettings {
    fn validate(&self) -> Result<()> {
        if !(self.span_tolerance > 0.0) {
            return Err(Error::InvalidConfig("span tolerance must be positive".into()));
        }
        if !(self.aperiodicity > 0.0 && self.aperiodicity <= 1.0) {
            return Err(Error::InvalidConfig("aperiodicity weight must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Stationary deterministic policy with its average cost and relative values.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTable {
    pub config: ModelConfig,
    pub actions: Vec<Action>,
    pub avg_cost: f64,
    pub relative_values: Vec<f64>,
    pub reference_state: StateIndex,
    pub iterations: usize,
    pub converged: bool,
    pub span_tolerance: f64,
}

impl PolicyTable {
    pub fn action(&self, index: StateIndex) -> Result<Action> {
        self.actions
            .get(index.0)
            .copied()
            .ok_or(Error::StateIndexOutOfRange {
                index: index.0,
                size: self.actions.len(),
            })
    }

    /// `max_s | min_u [c(s,u) + Σ P h] − h(s) − g |`.
    pub fn bellman_residual(&self, model: &CompiledModel) -> f64 {
        let mut q = vec![0.0; model.num_actions()];
        (0..model.num_states())
            .map(|s| {
                model.q_values_in(s, &self.relative_values, &mut q);
                let best = q.iter().copied().fold(f64::INFINITY, f64::min);
                (best - self.relative_values[s] - self.avg_cost).abs()
            })
            .fold(0.0, f64::max)
    }
}

/// Arithmetic used by [`rvia`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Precision {
    #[default]
    Double,
    /// Double-double (about 32 significant digits). Reported values are
    /// rounded to the nearest `f64`, so optimal costs that coincide exactly
    /// come out bit-identical when solved to a tight tolerance.
    DoubleDouble,
}

trait Real: Copy + PartialOrd + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> {
    fn of(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn abs(self) -> Self;
}

impl Real for f64 {
    fn of(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn abs(self) -> Self {
        f64::abs(self)
    }
}

impl Real for TwoFloat {
    fn of(x: f64) -> Self {
        TwoFloat::from(x)
    }
    fn to_f64(self) -> f64 {
        f64::from(self)
    }
    fn abs(self) -> Self {
        TwoFloat::abs(&self)
    }
}

impl CompiledModel {
    fn q_values_in<R: Real>(&self, s: usize, h: &[R], out: &mut [R]) {
        for (u, q) in out.iter_mut().enumerate() {
            let base = self.base[s * self.num_actions + u];
            let mut acc = R::of(self.cost(s, u));
            for &(off, p) in &self.outcomes {
                acc = acc + R::of(p) * h[base + off];
            }
            *q = acc;
        }
    }
}

/// Tie-aware argmin: smallest index within `tol` (relative) of the minimum.
fn greedy_action<R: Real>(q: &[R], tol: f64) -> usize {
    let best = q.iter().copied().fold(q[0], |a, b| if b < a { b } else { a });
    let scale = best.abs().to_f64().max(1.0);
    let bound = best + R::of(tol * scale);
    q.iter().position(|&v| v <= bound).unwrap_or(0)
}

/// Relative value iteration.
///
/// Iterates `h ← T(h) − T(h)(ref)` where
/// `T(h)(s) = min_u [c(s,u) + Σ P(s'|s,u) h(s')]`, damped by
/// [`SolverSettings::aperiodicity`], until the span of `h_{k+1} − h_k` falls
/// below the tolerance. The returned policy is greedy with respect to the
/// final `h`, preferring the smallest action index (idle) on ties.
pub fn rvia(config: &ModelConfig, settings: &SolverSettings) -> Result<PolicyTable> {
    let model = CompiledModel::new(config)?;
    rvia_compiled(&model, settings)
}

pub fn rvia_compiled(model: &CompiledModel, settings: &SolverSettings) -> Result<PolicyTable> {
    settings.validate()?;
    match settings.precision {
        Precision::Double => iterate::<f64>(model, settings),
        Precision::DoubleDouble => iterate::<TwoFloat>(model, settings),
    }
}

fn iterate<R: Real>(model: &CompiledModel, settings: &SolverSettings) -> Result<PolicyTable> {
    let n = model.num_states();
    let reference = settings.reference_state.unwrap_or(model.initial_index());
    if reference.0 >= n {
        return Err(Error::StateIndexOutOfRange {
            index: reference.0,
            size: n,
        });
    }
    let tau = R::of(settings.aperiodicity);
    let keep = R::of(1.0 - settings.aperiodicity);
    let tolerance = R::of(settings.span_tolerance);
    let mut h = vec![R::of(0.0); n];
    let mut next = h.clone();
    let mut q = vec![R::of(0.0); model.num_actions()];
    let mut iterations = 0;
    let mut converged = false;

    while iterations < settings.max_iterations {
        iterations += 1;
        for s in 0..n {
            model.q_values_in(s, &h, &mut q);
            let best = q.iter().copied().fold(q[0], |a, b| if b < a { b } else { a });
            next[s] = tau * best + keep * h[s];
        }
        let offset = next[reference.0];
        let mut lo = next[0] - offset - h[0];
        let mut hi = lo;
        for s in 0..n {
            next[s] = next[s] - offset;
            let d = next[s] - h[s];
            if d < lo {
                lo = d;
            }
            if d > hi {
                hi = d;
            }
        }
        std::mem::swap(&mut h, &mut next);
        if hi - lo < tolerance {
            converged = true;
            break;
        }
    }

    let actions = (0..n)
        .map(|s| {
            model.q_values_in(s, &h, &mut q);
            Action(greedy_action(&q, settings.span_tolerance))
        })
        .collect();
    // h(ref) = 0, so the undamped Bellman operator at ref gives g directly
    model.q_values_in(reference.0, &h, &mut q);
    let avg_cost = q.iter().copied().fold(q[0], |a, b| if b < a { b } else { a }).to_f64();

    Ok(PolicyTable {
        config: model.config().clone(),
        actions,
        avg_cost,
        relative_values: h.into_iter().map(Real::to_f64).collect(),
        reference_state: reference,
        iterations,
        converged,
        span_tolerance: settings.span_tolerance,
    })
}

/// Long-run averages of a fixed stationary policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyEvaluation {
    pub avg_cost: f64,
    /// Served AoI normalized by expected arrivals.
    pub avg_aoi: f64,
    pub update_freq: f64,
}

/// Exact long-run averages of `policy`, started from the initial state.
pub fn policy_average_cost<P: Fn(&SystemState) -> Action>(
    config: &ModelConfig,
    policy: P,
) -> Result<PolicyEvaluation> {
    let model = CompiledModel::new(config)?;
    let actions = model.tabulate(policy)?;
    evaluate_actions(&model, &actions)
}

/// Stationary distribution of the chain induced by `actions`, reached from
/// the initial state.
///
/// Power iteration runs on the lazy chain `(I + P) / 2`, which has the same
/// stationary distribution but is aperiodic (fixed-period schedules induce
/// periodic chains). Mass starting at the initial state only ever visits
/// states reachable from it, so transient states away from its recurrent
/// class receive no weight.
pub fn stationary_distribution(model: &CompiledModel, actions: &[Action]) -> Result<Vec<f64>> {
    let n = model.num_states();
    let mut dist = vec![0.0; n];
    let mut next = vec![0.0; n];
    dist[model.initial_index().0] = 1.0;
    let mut change = f64::INFINITY;
    for _ in 0..POWER_MAX_ITERATIONS {
        for (x, &d) in next.iter_mut().zip(&dist) {
            *x = 0.5 * d;
        }
        for s in 0..n {
            let mass = dist[s];
            if mass == 0.0 {
                continue;
            }
            let base = model.base[s * model.num_actions + actions[s].index()];
            for &(off, p) in &model.outcomes {
                next[base + off] += 0.5 * mass * p;
            }
        }
        change = dist.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut dist, &mut next);
        if change < POWER_TOLERANCE {
            return Ok(dist);
        }
    }
    Err(Error::PowerIterationNotConverged {
        iterations: POWER_MAX_ITERATIONS,
        change,
    })
}

pub fn evaluate_actions(model: &CompiledModel, actions: &[Action]) -> Result<PolicyEvaluation> {
    if actions.len() != model.num_states() {
        return Err(Error::InvalidState(format!(
            "policy covers {} states, the space has {}",
            actions.len(),
            model.num_states()
        )));
    }
    let dist = stationary_distribution(model, actions)?;
    let mut eval = PolicyEvaluation {
        avg_cost: 0.0,
        avg_aoi: 0.0,
        update_freq: 0.0,
    };
    for (s, &w) in dist.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let u = actions[s].index();
        eval.avg_cost += w * model.cost(s, u);
        eval.avg_aoi += w * model.service(s);
        if u > 0 {
            eval.update_freq += w;
        }
    }
    Ok(eval)
}

/// Best policy found by exhaustive enumeration.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub actions: Vec<Action>,
    pub evaluation: PolicyEvaluation,
    pub policies_evaluated: u128,
}

/// Evaluates every deterministic stationary policy and keeps the cheapest.
///
/// Among policies within `1e-12` of the best cost the one with the lowest
/// update frequency wins, then the first in enumeration order.
pub fn enumerate_policies_oracle(config: &ModelConfig) -> Result<OracleResult> {
    let count = StateSpace::count(config);
    let policies = (config.num_actions() as u128)
        .checked_pow(u32::try_from(count).unwrap_or(u32::MAX))
        .unwrap_or(u128::MAX);
    if policies > MAX_ORACLE_POLICIES {
        return Err(Error::EnumerationTooLarge {
            policies,
            limit: MAX_ORACLE_POLICIES,
        });
    }
    let model = CompiledModel::new(config)?;
    let n = model.num_states();
    let radix = model.num_actions();
    let mut actions = vec![Action::IDLE; n];
    let mut best: Option<(Vec<Action>, PolicyEvaluation)> = None;
    let mut evaluated = 0u128;
    loop {
        let eval = evaluate_actions(&model, &actions)?;
        evaluated += 1;
        let better = match &best {
            None => true,
            Some((_, b)) => {
                eval.avg_cost < b.avg_cost - 1e-12
                    || (eval.avg_cost <= b.avg_cost + 1e-12 && eval.update_freq < b.update_freq - 1e-12)
            }
        };
        if better {
            best = Some((actions.clone(), eval));
        }
        // odometer increment, first state least significant
        let mut pos = 0;
        loop {
            if pos == n {
                let (actions, evaluation) = best.expect("at least one policy");
                return Ok(OracleResult {
                    actions,
                    evaluation,
                    policies_evaluated: evaluated,
                });
            }
            let next = actions[pos].index() + 1;
            if next < radix {
                actions[pos] = Action(next);
                break;
            }
            actions[pos] = Action::IDLE;
            pos += 1;
        }
    }
}

/// Optimal policy of the zero-window model, applied inside any window.
///
/// Without look-ahead the arrivals served in a slot are independent of
/// everything the scheduler controls, so the solved policy depends on the
/// AoI components only; the lifted policy reads `(A¹, …, A^F)` and ignores
/// the queues.
#[derive(Debug, Clone)]
pub struct PeriodicBaseline {
    pub table: PolicyTable,
    reduced: StateSpace,
}

pub fn solve_periodic_baseline(config: &ModelConfig, settings: &SolverSettings) -> Result<PeriodicBaseline> {
    let reduced_config = config.with_window(0)?;
    let reduced = StateSpace::new(&reduced_config)?;
    let settings = SolverSettings {
        reference_state: None,
        ..settings.clone()
    };
    let table = rvia(&reduced_config, &settings)?;
    Ok(PeriodicBaseline { table, reduced })
}

impl PeriodicBaseline {
    pub fn action_for(&self, state: &SystemState) -> Action {
        let reduced = SystemState {
            per_content: state
                .per_content
                .iter()
                .map(|s| crate::model::PerContentState {
                    aoi: s.aoi,
                    queues: Vec::new(),
                    new_arrivals: 0,
                })
                .collect(),
        };
        let idx = self
            .reduced
            .encode(&reduced)
            .expect("AoI components are valid in the reduced space");
        self.table.actions[idx.0]
    }

    /// Smallest AoI at which a single-content baseline refreshes, if any.
    pub fn threshold(&self) -> Option<u32> {
        let cap = self.table.config.aoi_cap();
        (1..=cap).find(|&a| {
            let s = SystemState {
                per_content: vec![crate::model::PerContentState {
                    aoi: a,
                    queues: Vec::new(),
                    new_arrivals: 0,
                }],
            };
            self.reduced.encode(&s).map(|i| self.table.actions[i.0].is_update()).unwrap_or(false)
        })
    }
}

const TABLE_MAGIC: &[u8; 8] = b"AOIPTBL\0";
const TABLE_VERSION: u32 = 1;

impl PolicyTable {
    /// Versioned little-endian binary encoding.
    ///
    /// Layout: magic, version `u32`, config length `u32` + canonical config
    /// bytes, `avg_cost f64`, `span_tolerance f64`, `iterations u64`,
    /// `converged u8`, `reference u64`, `n u64`, `n` actions as `u32`, `n`
    /// relative values as `f64`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let canonical = self.config.canonical();
        let n = self.actions.len();
        let mut out = Vec::with_capacity(64 + canonical.len() + n * 12);
        out.extend_from_slice(TABLE_MAGIC);
        out.extend_from_slice(&TABLE_VERSION.to_le_bytes());
        out.extend_from_slice(&(canonical.len() as u32).to_le_bytes());
        out.extend_from_slice(canonical.as_bytes());
        out.extend_from_slice(&self.avg_cost.to_le_bytes());
        out.extend_from_slice(&self.span_tolerance.to_le_bytes());
        out.extend_from_slice(&(self.iterations as u64).to_le_bytes());
        out.push(u8::from(self.converged));
        out.extend_from_slice(&(self.reference_state.0 as u64).to_le_bytes());
        out.extend_from_slice(&(n as u64).to_le_bytes());
        for a in &self.actions {
            out.extend_from_slice(&(a.index() as u32).to_le_bytes());
        }
        for h in &self.relative_values {
            out.extend_from_slice(&h.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader { bytes, pos: 0 };
        if r.take(8)? != TABLE_MAGIC {
            return Err(Error::Format("not a policy table".into()));
        }
        let version = r.u32()?;
        if version != TABLE_VERSION {
            return Err(Error::Format(format!("unsupported policy table version {version}")));
        }
        let len = r.u32()? as usize;
        let canonical = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Format("config is not UTF-8".into()))?;
        let config = ModelConfig::from_canonical(canonical)?;
        let avg_cost = r.f64()?;
        let span_tolerance = r.f64()?;
        let iterations = r.u64()? as usize;
        let converged = r.take(1)?[0] != 0;
        let reference_state = StateIndex(r.u64()? as usize);
        let n = r.u64()? as usize;
        if StateSpace::count(&config) != n as u128 {
            return Err(Error::Format(format!("table has {n} states, config implies another size")));
        }
        let actions = (0..n)
            .map(|_| Action(r.u32().map(|v| v as usize).unwrap_or(usize::MAX)).validate(&config))
            .collect::<Result<Vec<_>>>()?;
        let relative_values = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after policy table".into()));
        }
        Ok(Self {
            config,
            actions,
            avg_cost,
            relative_values,
            reference_state,
            iterations,
            converged,
            span_tolerance,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::File::create(path)?.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    /// `state_index,action,h_value` rows under a `#` comment header.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# config={}", self.config.canonical())?;
        writeln!(w, "# config_hash={}", self.config.hash())?;
        writeln!(w, "# eta={}", self.config.update_weight())?;
        writeln!(w, "# avg_cost={}", self.avg_cost)?;
        writeln!(w, "# iterations={}", self.iterations)?;
        writeln!(w, "# converged={}", self.converged)?;
        writeln!(w, "# tolerance={}", self.span_tolerance)?;
        writeln!(w, "# reference_state={}", self.reference_state.0)?;
        writeln!(w, "state_index,action,h_value")?;
        for (i, (a, h)) in self.actions.iter().zip(&self.relative_values).enumerate() {
            writeln!(w, "{i},{},{h}", a.index())?;
        }
        Ok(())
    }
}

pub(crate) struct ByteReader<'a> {
    pub bytes: &'a [u8],
    pub pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format("unexpected end of file".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
