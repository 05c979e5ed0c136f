//! Scheduling policies behind one interface.

use crate::error::{Error, Result};
use crate::model::{Action, ModelConfig, StateSpace, SystemState};
use crate::rng::RngStream;
use crate::solver::{PeriodicBaseline, PolicyTable};

/// A scheduler that picks an action every slot.
pub trait Policy {
    fn act(&mut self, state: &SystemState, rng: &mut RngStream) -> Action;
}

/// A deterministic map from states to actions. Every such map is a
/// [`Policy`] and can also be evaluated exactly by the solver.
pub trait StationaryPolicy {
    fn decide(&self, state: &SystemState) -> Action;
}

impl<P: StationaryPolicy + ?Sized> Policy for P {
    fn act(&mut self, state: &SystemState, _rng: &mut RngStream) -> Action {
        self.decide(state)
    }
}

/// Exponentially decaying exploration rate
/// `ε_t = ε_min + (ε_max − ε_min)·exp(−t / ε_decay)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonSchedule {
    pub min: f64,
    pub max: f64,
    pub decay: f64,
}

impl EpsilonSchedule {
    pub fn new(min: f64, max: f64, decay: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&min) || !(0.0..=1.0).contains(&max) || min > max {
            return Err(Error::InvalidConfig(format!(
                "epsilon bounds ({min}, {max}) must satisfy 0 <= min <= max <= 1"
            )));
        }
        if !(decay > 0.0 && decay.is_finite()) {
            return Err(Error::InvalidConfig(format!("epsilon decay {decay} must be positive")));
        }
        Ok(Self { min, max, decay })
    }

    /// Constant exploration rate.
    pub fn constant(epsilon: f64) -> Result<Self> {
        Self::new(epsilon, epsilon, 1.0)
    }

    pub fn epsilon_at(&self, t: u64) -> f64 {
        self.min + (self.max - self.min) * (-(t as f64) / self.decay).exp()
    }
}

/// Looks the action up in a solved table.
#[derive(Debug, Clone)]
pub struct TablePolicy {
    table: PolicyTable,
    space: StateSpace,
}

impl TablePolicy {
    pub fn new(table: PolicyTable) -> Result<Self> {
        let space = StateSpace::new(&table.config)?;
        if space.size() != table.actions.len() {
            return Err(Error::Format("table size does not match its config".into()));
        }
        Ok(Self { table, space })
    }

    pub fn table(&self) -> &PolicyTable {
        &self.table
    }

    pub fn try_decide(&self, state: &SystemState) -> Result<Action> {
        self.table.action(self.space.encode(state)?)
    }
}

impl StationaryPolicy for TablePolicy {
    fn decide(&self, state: &SystemState) -> Action {
        self.try_decide(state)
            .expect("state lies outside the table's enumerated space")
    }
}

impl StationaryPolicy for PeriodicBaseline {
    fn decide(&self, state: &SystemState) -> Action {
        self.action_for(state)
    }
}

/// Never refreshes.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdlePolicy;

impl StationaryPolicy for IdlePolicy {
    fn decide(&self, _state: &SystemState) -> Action {
        Action::IDLE
    }
}

/// Refreshes the stalest content once its AoI reaches `threshold`; lowest
/// content id wins ties. For a single content this is the stationary form of
/// [`FixedPeriodPolicy`] with `period = threshold`.
#[derive(Debug, Clone, Copy)]
pub struct AoiThresholdPolicy {
    pub threshold: u32,
}

impl StationaryPolicy for AoiThresholdPolicy {
    fn decide(&self, state: &SystemState) -> Action {
        let stalest = state
            .per_content
            .iter()
            .enumerate()
            .fold(None::<(usize, u32)>, |best, (c, s)| match best {
                Some((_, a)) if a >= s.aoi => best,
                _ => Some((c, s.aoi)),
            });
        match stalest {
            Some((c, a)) if a >= self.threshold => Action::update(c + 1),
            _ => Action::IDLE,
        }
    }
}

/// Uniform over all `F + 1` actions.
#[derive(Debug, Clone, Copy)]
pub struct RandomPolicy {
    num_actions: usize,
}

impl RandomPolicy {
    pub fn new(config: &ModelConfig) -> Self {
        Self {
            num_actions: config.num_actions(),
        }
    }
}

impl Policy for RandomPolicy {
    fn act(&mut self, _state: &SystemState, rng: &mut RngStream) -> Action {
        Action(rng.below(self.num_actions))
    }
}

/// Refreshes every `period` slots regardless of state, starting with an
/// update in the first slot. With several contents the refreshes cycle
/// through them round-robin.
#[derive(Debug, Clone)]
pub struct FixedPeriodPolicy {
    period: u64,
    num_contents: usize,
    slot: u64,
}

impl FixedPeriodPolicy {
    pub fn new(config: &ModelConfig, period: u64) -> Result<Self> {
        if period == 0 {
            return Err(Error::InvalidConfig("update period must be at least 1".into()));
        }
        Ok(Self {
            period,
            num_contents: config.num_contents(),
            slot: 0,
        })
    }
}

impl Policy for FixedPeriodPolicy {
    fn act(&mut self, _state: &SystemState, _rng: &mut RngStream) -> Action {
        let t = self.slot;
        self.slot += 1;
        if t.is_multiple_of(self.period) {
            let k = t / self.period;
            Action::update((k % self.num_contents as u64) as usize + 1)
        } else {
            Action::IDLE
        }
    }
}

/// With probability `ε_t` a uniformly random action (the greedy one
/// included), otherwise the inner policy's action. `t` counts calls.
#[derive(Debug, Clone)]
pub struct EpsilonGreedy<P> {
    inner: P,
    schedule: EpsilonSchedule,
    num_actions: usize,
    step: u64,
}

impl<P> EpsilonGreedy<P> {
    pub fn new(inner: P, schedule: EpsilonSchedule, config: &ModelConfig) -> Self {
        Self {
            inner,
            schedule,
            num_actions: config.num_actions(),
            step: 0,
        }
    }

    pub fn inner(&self) -> &P {
        &self.inner
    }

    /// Action plus whether it came from the random branch.
    pub fn act_traced(&mut self, state: &SystemState, rng: &mut RngStream) -> (Action, bool)
    where
        P: Policy,
    {
        let epsilon = self.schedule.epsilon_at(self.step);
        self.step += 1;
        if rng.uniform() < epsilon {
            (Action(rng.below(self.num_actions)), true)
        } else {
            (self.inner.act(state, rng), false)
        }
    }
}

impl<P: Policy> Policy for EpsilonGreedy<P> {
    fn act(&mut self, state: &SystemState, rng: &mut RngStream) -> Action {
        self.act_traced(state, rng).0
    }
}
