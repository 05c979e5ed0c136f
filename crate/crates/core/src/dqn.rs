//! Deep Q-network training for the average-cost objective.
//!
//! Each training step observes the current state, picks an ε-greedy action
//! from the policy network, simulates one slot, stores the transition and
//! takes one SGD step on the mean of the per-transition losses
//!
//! ```text
//! L = ½ (c + min_u V(S', u; θ⁻) − min_u V(S_ref, u; θ⁻) − V(S, a; θ))²
//! ```
//!
//! over a minibatch drawn uniformly from the replay memory. `θ⁻` is the
//! target network; it is refreshed from `θ` every `target_update` steps and
//! never receives gradient. Episodes only delimit bookkeeping windows: the
//! environment keeps running across them.

use std::collections::VecDeque;
use std::io::Write;
use std::time::{Duration, Instant};

use crate::agents::{EpsilonSchedule, StationaryPolicy};
use crate::error::{Error, Result};
use crate::model::{initial_state, stage_cost, step, Action, ModelConfig, SystemState};
use crate::neural::{argmin, features, features_into, BatchWorkspace, Checkpoint, NetworkShape, ParameterVector, QNetwork};
use crate::rng::RngStream;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainerConfig {
    pub episodes: usize,
    pub episode_len: usize,
    pub target_update: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epsilon: EpsilonSchedule,
    pub replay_capacity: usize,
    pub seed: u64,
    /// Anchor state of the average-cost target; `None` uses the initial state.
    pub reference_state: Option<SystemState>,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            episodes: 200,
            episode_len: 3_000,
            target_update: 3_000,
            batch_size: 1_000,
            learning_rate: 0.01,
            epsilon: EpsilonSchedule {
                min: 0.0,
                max: 0.99,
                decay: 200.0,
            },
            replay_capacity: 10_000,
            seed: 0,
            reference_state: None,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("episodes", self.episodes),
            ("episode_len", self.episode_len),
            ("target_update", self.target_update),
            ("batch", self.batch_size),
            ("replay_capacity", self.replay_capacity),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidConfig(format!("{name} must be positive")));
        }
        if self.batch_size > self.replay_capacity {
            return Err(Error::InvalidConfig(format!(
                "batch size {} exceeds replay capacity {}",
                self.batch_size, self.replay_capacity
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig("learning rate must be positive".into()));
        }
        EpsilonSchedule::new(self.epsilon.min, self.epsilon.max, self.epsilon.decay)?;
        Ok(())
    }

    pub fn total_steps(&self) -> u64 {
        self.episodes as u64 * self.episode_len as u64
    }
}

/// One observed slot `(S_t, u_t, c(S_t, u_t), S_{t+1})`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionTuple {
    pub state: SystemState,
    pub action: Action,
    pub cost: f64,
    pub next_state: SystemState,
}

/// Fixed-capacity FIFO memory.
#[derive(Debug, Clone)]
pub struct ReplayBuffer<T> {
    capacity: usize,
    items: VecDeque<T>,
}

impl<T> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            items: VecDeque::with_capacity(capacity),
        }
    }

    pub fn push(&mut self, item: T) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(item);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.items.iter()
    }

    /// Positions of `k` distinct entries drawn uniformly, or `None` while the
    /// buffer holds fewer than `k`.
    pub fn sample_indices(&self, k: usize, rng: &mut RngStream) -> Option<Vec<usize>> {
        (self.items.len() >= k).then(|| rng.sample_indices(self.items.len(), k))
    }

    pub fn sample(&self, k: usize, rng: &mut RngStream) -> Option<Vec<&T>> {
        self.sample_indices(k, rng)
            .map(|idx| idx.into_iter().map(|i| &self.items[i]).collect())
    }

    fn get_mut(&mut self, i: usize) -> &mut T {
        &mut self.items[i]
    }
}

fn min_value(net: &QNetwork, x: &[f64]) -> f64 {
    net.forward(x).into_iter().fold(f64::INFINITY, f64::min)
}

/// Loss of one transition and `∂L/∂V(S_t, u_t; θ)`.
pub fn loss(
    policy: &QNetwork,
    target: &QNetwork,
    tuple: &TransitionTuple,
    reference: &SystemState,
    config: &ModelConfig,
) -> (f64, f64) {
    let bootstrap = tuple.cost + min_value(target, &features(&tuple.next_state, config))
        - min_value(target, &features(reference, config));
    let prediction = policy.forward(&features(&tuple.state, config))[tuple.action.index()];
    let error = bootstrap - prediction;
    (0.5 * error * error, -error)
}

/// Gradient of the mean loss over `batch`, computed one sample at a time.
pub fn batch_gradient(
    policy: &QNetwork,
    target: &QNetwork,
    batch: &[&TransitionTuple],
    reference: &SystemState,
    config: &ModelConfig,
) -> (f64, ParameterVector) {
    let k = batch.len() as f64;
    let mut grad = ParameterVector::zeros(policy.parameters().len());
    let mut total = 0.0;
    for t in batch {
        let (l, up) = loss(policy, target, t, reference, config);
        total += l;
        let g = policy
            .backward(&features(&t.state, config), t.action.index(), up / k)
            .expect("stored actions are valid");
        grad.0.iter_mut().zip(&g.0).for_each(|(a, b)| *a += b);
    }
    (total / k, grad)
}

/// Replay entry with cached features and target-network value.
#[derive(Debug, Clone)]
struct Experience {
    tuple: TransitionTuple,
    x: Vec<f64>,
    x_next: Vec<f64>,
    /// `(target generation, min_u V(S', u; θ⁻))`.
    next_min: Option<(u64, f64)>,
}

/// What one call to [`Trainer::step`] did.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub step: u64,
    pub action: Action,
    pub explored: bool,
    pub cost: f64,
    /// Mean minibatch loss, `None` during warm-up.
    pub loss: Option<f64>,
    pub target_synced: bool,
}

/// Result of a full training run.
#[derive(Debug, Clone)]
pub struct TrainingTrace {
    pub episode_costs: Vec<f64>,
    pub wall_time: Duration,
    pub policy: QNetwork,
    pub target: QNetwork,
    pub gradient_steps: u64,
}

impl TrainingTrace {
    /// `episode,avg_cost` rows, episodes counted from 1.
    pub fn write_csv<W: Write>(&self, mut w: W, header: &[String]) -> Result<()> {
        for line in header {
            writeln!(w, "# {line}")?;
        }
        writeln!(w, "episode,avg_cost")?;
        for (i, c) in self.episode_costs.iter().enumerate() {
            writeln!(w, "{},{c}", i + 1)?;
        }
        Ok(())
    }

    pub fn checkpoint(&self, config: &ModelConfig) -> Checkpoint {
        Checkpoint {
            config: config.clone(),
            policy: self.policy.clone(),
            target: self.target.clone(),
        }
    }
}

/// Step-by-step DQN trainer. [`train`] drives it to completion.
pub struct Trainer {
    model: ModelConfig,
    config: TrainerConfig,
    policy: QNetwork,
    target: QNetwork,
    generation: u64,
    reference_min: f64,
    reference_x: Vec<f64>,
    replay: ReplayBuffer<Experience>,
    state: SystemState,
    env_rng: RngStream,
    agent_rng: RngStream,
    t: u64,
    gradient_steps: u64,
    workspace: BatchWorkspace,
    grad: ParameterVector,
    scratch_x: Vec<f64>,
}

impl Trainer {
    /// Streams derived from `config.seed`: 0 initializes weights, 1 drives
    /// the environment, 2 drives exploration and minibatch sampling.
    pub fn new(model: &ModelConfig, config: &TrainerConfig) -> Result<Self> {
        config.validate()?;
        let reference = config.reference_state.clone().unwrap_or_else(|| initial_state(model));
        reference.validate(model)?;
        let shape = NetworkShape::for_model(model);
        let policy = QNetwork::init_uniform(shape.clone(), &mut RngStream::derive(config.seed, 0));
        let target = policy.copy_parameters();
        let reference_x = features(&reference, model);
        let reference_min = min_value(&target, &reference_x);
        Ok(Self {
            model: model.clone(),
            config: config.clone(),
            grad: ParameterVector::zeros(shape.param_count()),
            workspace: BatchWorkspace::new(&shape, config.batch_size),
            policy,
            target,
            generation: 0,
            reference_min,
            reference_x,
            replay: ReplayBuffer::new(config.replay_capacity),
            state: initial_state(model),
            env_rng: RngStream::derive(config.seed, 1),
            agent_rng: RngStream::derive(config.seed, 2),
            t: 0,
            gradient_steps: 0,
            scratch_x: Vec::new(),
        })
    }

    pub fn policy(&self) -> &QNetwork {
        &self.policy
    }

    pub fn target(&self) -> &QNetwork {
        &self.target
    }

    pub fn state(&self) -> &SystemState {
        &self.state
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    pub fn replay_tuples(&self) -> impl Iterator<Item = &TransitionTuple> {
        self.replay.iter().map(|e| &e.tuple)
    }

    pub fn step(&mut self) -> Result<StepReport> {
        let t = self.t;
        features_into(&self.state, &self.model, &mut self.scratch_x);
        let epsilon = self.config.epsilon.epsilon_at(t);
        let explored = self.agent_rng.uniform() < epsilon;
        let action = if explored {
            Action(self.agent_rng.below(self.model.num_actions()))
        } else {
            Action(argmin(&self.policy.forward(&self.scratch_x)))
        };
        let (next, cost) = step(&self.state, action, &self.model, &mut self.env_rng);
        let x_next = features(&next, &self.model);
        self.replay.push(Experience {
            tuple: TransitionTuple {
                state: std::mem::replace(&mut self.state, next.clone()),
                action,
                cost,
                next_state: next,
            },
            x: self.scratch_x.clone(),
            x_next,
            next_min: None,
        });

        let loss = self.gradient_step()?;

        let target_synced = t.is_multiple_of(self.config.target_update as u64);
        if target_synced {
            self.target = self.policy.copy_parameters();
            self.generation += 1;
            self.reference_min = min_value(&self.target, &self.reference_x);
        }
        self.t += 1;
        Ok(StepReport {
            step: t,
            action,
            explored,
            cost,
            loss,
            target_synced,
        })
    }

    fn gradient_step(&mut self) -> Result<Option<f64>> {
        let k = self.config.batch_size;
        let Some(indices) = self.replay.sample_indices(k, &mut self.agent_rng) else {
            return Ok(None);
        };
        let mut actions = Vec::with_capacity(k);
        let mut bootstrap = Vec::with_capacity(k);
        for (row, &i) in indices.iter().enumerate() {
            let generation = self.generation;
            let target = &self.target;
            let e = self.replay.get_mut(i);
            let next_min = match e.next_min {
                Some((g, v)) if g == generation => v,
                _ => {
                    let v = min_value(target, &e.x_next);
                    e.next_min = Some((generation, v));
                    v
                }
            };
            bootstrap.push(e.tuple.cost + next_min);
            actions.push(e.tuple.action.index());
            self.workspace.set_input_row(row, &e.x);
        }
        self.policy.forward_workspace(&mut self.workspace);
        let scale = 1.0 / k as f64;
        let mut total = 0.0;
        let upstream: Vec<f64> = {
            let out = self.workspace.output();
            (0..k)
                .map(|row| {
                    let error = bootstrap[row] - self.reference_min - out[[row, actions[row]]];
                    total += 0.5 * error * error;
                    -error * scale
                })
                .collect()
        };
        let mean_loss = total * scale;
        if !mean_loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                step: self.t,
                detail: format!("mean minibatch loss {mean_loss}"),
            });
        }
        self.policy
            .backward_batch(&mut self.workspace, &actions, &upstream, &mut self.grad)?;
        self.policy.sgd_apply(&self.grad, self.config.learning_rate);
        if !self.policy.parameters().is_finite() {
            return Err(Error::NonFiniteLoss {
                step: self.t,
                detail: "policy parameters became non-finite".into(),
            });
        }
        self.gradient_steps += 1;
        Ok(Some(mean_loss))
    }

    /// Runs the remaining steps and returns the per-episode mean costs.
    pub fn run(mut self) -> Result<TrainingTrace> {
        let start = Instant::now();
        let mut episode_costs = Vec::with_capacity(self.config.episodes);
        let len = self.config.episode_len as u64;
        let mut sum = 0.0;
        while self.t < self.config.total_steps() {
            sum += self.step()?.cost;
            if self.t.is_multiple_of(len) {
                episode_costs.push(sum / len as f64);
                sum = 0.0;
            }
        }
        Ok(TrainingTrace {
            episode_costs,
            wall_time: start.elapsed(),
            policy: self.policy,
            target: self.target,
            gradient_steps: self.gradient_steps,
        })
    }
}

pub fn train(model: &ModelConfig, config: &TrainerConfig) -> Result<TrainingTrace> {
    Trainer::new(model, config)?.run()
}

/// Acts greedily (minimum predicted value, lowest index on ties).
#[derive(Debug, Clone)]
pub struct GreedyNetworkPolicy {
    network: QNetwork,
    config: ModelConfig,
}

pub fn extract_greedy_policy(network: &QNetwork, config: &ModelConfig) -> GreedyNetworkPolicy {
    GreedyNetworkPolicy {
        network: network.clone(),
        config: config.clone(),
    }
}

impl StationaryPolicy for GreedyNetworkPolicy {
    fn decide(&self, state: &SystemState) -> Action {
        Action(argmin(&self.network.forward(&features(state, &self.config))))
    }
}

/// Re-evaluates the stored cost of a tuple.
pub fn cost_is_consistent(tuple: &TransitionTuple, config: &ModelConfig) -> bool {
    stage_cost(&tuple.state, tuple.action, config) == tuple.cost
}
