//! The cache update MDP: configuration, state, action, transition kernel and
//! stage cost, plus a mixed-radix indexing of the finite state space.
//!
//! Time is slotted. In every slot the macro base station either stays idle
//! (action 0) or refreshes exactly one cached content (action `f`, 1-based).
//! Each content carries its age of information `A`, the counts of requests
//! due `δ = 0..Δ-1` slots ahead, and the number `G` of requests that arrived
//! in the current slot (due `Δ` slots ahead). Only `G` is random: each of the
//! `N_f` users of content `f` requests it independently with probability
//! `λ_f`.

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Problem parameters shared by every component.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    window: usize,
    aoi_cap: u32,
    users: Vec<u32>,
    arrival_rates: Vec<f64>,
    update_weight: f64,
    arrival_pmfs: Vec<Vec<f64>>,
}

impl ModelConfig {
    /// Builds a validated configuration. The number of contents is the length
    /// of `users` (and must match `arrival_rates`).
    pub fn new(
        window: usize,
        aoi_cap: u32,
        users: Vec<u32>,
        arrival_rates: Vec<f64>,
        update_weight: f64,
    ) -> Result<Self> {
        if users.is_empty() {
            return Err(Error::InvalidConfig("at least one content is required".into()));
        }
        if users.len() != arrival_rates.len() {
            return Err(Error::InvalidConfig(format!(
                "{} user counts but {} arrival rates",
                users.len(),
                arrival_rates.len()
            )));
        }
        if aoi_cap < 1 {
            return Err(Error::InvalidConfig("aoi_cap must be at least 1".into()));
        }
        if let Some(n) = users.iter().find(|&&n| n < 1) {
            return Err(Error::InvalidConfig(format!("user count {n} must be at least 1")));
        }
        if let Some(r) = arrival_rates.iter().find(|&&r| !(r > 0.0 && r < 1.0)) {
            return Err(Error::InvalidConfig(format!(
                "arrival rate {r} must lie in the open interval (0, 1)"
            )));
        }
        if !(update_weight >= 0.0 && update_weight.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "update weight {update_weight} must be finite and nonnegative"
            )));
        }
        let arrival_pmfs = users
            .iter()
            .zip(&arrival_rates)
            .map(|(&n, &rate)| binomial_pmf(n, rate))
            .collect();
        Ok(Self {
            window,
            aoi_cap,
            users,
            arrival_rates,
            update_weight,
            arrival_pmfs,
        })
    }

    /// Single-content operating point used throughout the experiments:
    /// `Δ = 4`, `Â = 50`, `N = 2`, `λ = 0.5`.
    pub fn default_operating_point(update_weight: f64) -> Result<Self> {
        Self::new(4, 50, vec![2], vec![0.5], update_weight)
    }

    pub fn num_contents(&self) -> usize {
        self.users.len()
    }

    pub fn num_actions(&self) -> usize {
        self.users.len() + 1
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn aoi_cap(&self) -> u32 {
        self.aoi_cap
    }

    pub fn users(&self) -> &[u32] {
        &self.users
    }

    pub fn arrival_rates(&self) -> &[f64] {
        &self.arrival_rates
    }

    pub fn update_weight(&self) -> f64 {
        self.update_weight
    }

    /// Expected number of arrivals per slot, `Σ_f N_f λ_f`.
    pub fn expected_arrivals_per_slot(&self) -> f64 {
        self.users
            .iter()
            .zip(&self.arrival_rates)
            .map(|(&n, &r)| n as f64 * r)
            .sum()
    }

    /// Binomial arrival distribution of content `f` (1-based).
    pub fn arrival_pmf(&self, f: usize) -> Result<&[f64]> {
        if f == 0 || f > self.num_contents() {
            return Err(Error::InvalidContent {
                id: f,
                num_contents: self.num_contents(),
            });
        }
        Ok(&self.arrival_pmfs[f - 1])
    }

    pub(crate) fn pmf(&self, content: usize) -> &[f64] {
        &self.arrival_pmfs[content]
    }

    pub fn with_update_weight(&self, update_weight: f64) -> Result<Self> {
        Self::new(
            self.window,
            self.aoi_cap,
            self.users.clone(),
            self.arrival_rates.clone(),
            update_weight,
        )
    }

    pub fn with_window(&self, window: usize) -> Result<Self> {
        Self::new(
            window,
            self.aoi_cap,
            self.users.clone(),
            self.arrival_rates.clone(),
            self.update_weight,
        )
    }

    pub fn with_aoi_cap(&self, aoi_cap: u32) -> Result<Self> {
        Self::new(
            self.window,
            aoi_cap,
            self.users.clone(),
            self.arrival_rates.clone(),
            self.update_weight,
        )
    }

    /// Canonical one-line rendering, in config-file key order.
    pub fn canonical(&self) -> String {
        let join = |xs: Vec<String>| xs.join(",");
        format!(
            "F={};delta={};aoi_cap={};users={};rates={};eta={}",
            self.num_contents(),
            self.window,
            self.aoi_cap,
            join(self.users.iter().map(|n| n.to_string()).collect()),
            join(self.arrival_rates.iter().map(|r| r.to_string()).collect()),
            self.update_weight
        )
    }

    /// Short hex digest of [`ModelConfig::canonical`].
    pub fn hash(&self) -> String {
        short_hash(&self.canonical())
    }
}

pub(crate) fn short_hash(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

fn binomial_pmf(n: u32, p: f64) -> Vec<f64> {
    let mut coeff = 1.0f64;
    (0..=n)
        .map(|i| {
            if i > 0 {
                coeff = coeff * f64::from(n - i + 1) / f64::from(i);
            }
            coeff * p.powi(i as i32) * (1.0 - p).powi((n - i) as i32)
        })
        .collect()
}

/// Scheduler decision: 0 stays idle, `f >= 1` refreshes content `f`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Action(pub usize);

impl Action {
    pub const IDLE: Action = Action(0);

    pub fn update(content: usize) -> Self {
        Action(content)
    }

    pub fn index(self) -> usize {
        self.0
    }

    pub fn is_update(self) -> bool {
        self.0 > 0
    }

    pub fn validate(self, config: &ModelConfig) -> Result<Self> {
        if self.0 > config.num_contents() {
            return Err(Error::InvalidAction {
                action: self.0,
                max: config.num_contents(),
            });
        }
        Ok(self)
    }
}

/// State of one cached content: `(A, Q⁰, …, Q^{Δ-1}, G)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PerContentState {
    pub aoi: u32,
    /// `queues[δ]` requests are due `δ` slots from now.
    pub queues: Vec<u32>,
    /// Requests that arrived this slot, due `Δ` slots from now.
    pub new_arrivals: u32,
}

impl PerContentState {
    /// Requests served in the current slot. With `Δ = 0` new arrivals are
    /// due immediately.
    pub fn due_now(&self) -> u32 {
        self.queues.first().copied().unwrap_or(self.new_arrivals)
    }
}

/// Joint state of all cached contents.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SystemState {
    pub per_content: Vec<PerContentState>,
}

impl SystemState {
    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        if self.per_content.len() != config.num_contents() {
            return Err(Error::InvalidState(format!(
                "{} content components, expected {}",
                self.per_content.len(),
                config.num_contents()
            )));
        }
        for (f, s) in self.per_content.iter().enumerate() {
            let n = config.users[f];
            if s.aoi < 1 || s.aoi > config.aoi_cap {
                return Err(Error::InvalidState(format!(
                    "content {}: AoI {} outside 1..={}",
                    f + 1,
                    s.aoi,
                    config.aoi_cap
                )));
            }
            if s.queues.len() != config.window {
                return Err(Error::InvalidState(format!(
                    "content {}: {} queues, expected {}",
                    f + 1,
                    s.queues.len(),
                    config.window
                )));
            }
            if s.queues.iter().chain(Some(&s.new_arrivals)).any(|&q| q > n) {
                return Err(Error::InvalidState(format!(
                    "content {}: queue length above {n} users",
                    f + 1
                )));
            }
        }
        Ok(())
    }
}

/// Start state: fresh contents and empty queues.
pub fn initial_state(config: &ModelConfig) -> SystemState {
    SystemState {
        per_content: (0..config.num_contents())
            .map(|_| PerContentState {
                aoi: 1,
                queues: vec![0; config.window],
                new_arrivals: 0,
            })
            .collect(),
    }
}

/// AoI one slot later: reset to 1 when content `f` (1-based) is refreshed,
/// otherwise incremented and saturated at `cap`.
pub fn advance_aoi(aoi: u32, f: usize, action: Action, cap: u32) -> u32 {
    if action.index() == f {
        1
    } else {
        (aoi + 1).min(cap)
    }
}

/// Queue vector one slot later: every queue moves one slot closer to its due
/// date and this slot's arrivals enter at the back.
pub fn shift_queues(state: &PerContentState) -> Vec<u32> {
    let mut next = Vec::with_capacity(state.queues.len());
    if !state.queues.is_empty() {
        next.extend_from_slice(&state.queues[1..]);
        next.push(state.new_arrivals);
    }
    next
}

/// Normalized AoI of the requests served now, `Σ_f A^f Q^{f,0} / Σ_f N_f λ_f`.
pub fn service_term(state: &SystemState, config: &ModelConfig) -> f64 {
    let served: f64 = state
        .per_content
        .iter()
        .map(|s| f64::from(s.aoi) * f64::from(s.due_now()))
        .sum();
    served / config.expected_arrivals_per_slot()
}

/// Per-slot cost: served AoI term plus `η` for an update.
pub fn stage_cost(state: &SystemState, action: Action, config: &ModelConfig) -> f64 {
    let penalty = if action.is_update() {
        config.update_weight
    } else {
        0.0
    };
    service_term(state, config) + penalty
}

/// Successor with every random component (`G`) set to zero.
fn deterministic_successor(state: &SystemState, action: Action, config: &ModelConfig) -> SystemState {
    SystemState {
        per_content: state
            .per_content
            .iter()
            .enumerate()
            .map(|(c, s)| PerContentState {
                aoi: advance_aoi(s.aoi, c + 1, action, config.aoi_cap),
                queues: shift_queues(s),
                new_arrivals: 0,
            })
            .collect(),
    }
}

/// All successors of `(state, action)` with their probabilities, in
/// lexicographic order of the new arrival counts `(G¹, …, G^F)`.
pub fn transition_distribution(
    state: &SystemState,
    action: Action,
    config: &ModelConfig,
) -> Vec<(SystemState, f64)> {
    let base = deterministic_successor(state, action, config);
    let mut out = vec![(base, 1.0)];
    for c in 0..config.num_contents() {
        let pmf = config.pmf(c);
        out = out
            .into_iter()
            .flat_map(|(s, p)| {
                pmf.iter().enumerate().map(move |(g, &pg)| {
                    let mut next = s.clone();
                    next.per_content[c].new_arrivals = g as u32;
                    (next, p * pg)
                })
            })
            .collect();
    }
    out
}

/// Samples one slot of the dynamics. The returned cost is charged on the
/// current state, before the refresh takes effect.
pub fn step(
    state: &SystemState,
    action: Action,
    config: &ModelConfig,
    rng: &mut RngStream,
) -> (SystemState, f64) {
    let cost = stage_cost(state, action, config);
    let mut next = deterministic_successor(state, action, config);
    for (c, s) in next.per_content.iter_mut().enumerate() {
        s.new_arrivals = rng.categorical(config.pmf(c)) as u32;
    }
    (next, cost)
}

/// Position of a state in the canonical enumeration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StateIndex(pub usize);

/// Bijection between [`SystemState`] values and `0..size`.
///
/// Digits are `(A-1, Q⁰, …, Q^{Δ-1}, G)` for content 1, then content 2, and
/// so on, most significant first, so the index order is the lexicographic
/// order of states.
#[derive(Debug, Clone)]
pub struct StateSpace {
    config: ModelConfig,
    size: usize,
    /// Index stride of each content's `G` digit.
    arrival_strides: Vec<usize>,
}

impl StateSpace {
    /// `∏_f Â (N_f + 1)^{Δ+1}`, without overflow.
    pub fn count(config: &ModelConfig) -> u128 {
        config.users.iter().fold(1u128, |acc, &n| {
            let per = u128::from(config.aoi_cap)
                .saturating_mul(u128::from(n + 1).saturating_pow(config.window as u32 + 1));
            acc.saturating_mul(per)
        })
    }

    pub fn new(config: &ModelConfig) -> Result<Self> {
        let count = Self::count(config);
        let size = usize::try_from(count).map_err(|_| Error::StateSpaceTooLarge {
            size: count,
            limit: usize::MAX as u128,
        })?;
        let mut arrival_strides = vec![0; config.num_contents()];
        let mut stride = 1usize;
        for c in (0..config.num_contents()).rev() {
            arrival_strides[c] = stride;
            stride *= config.aoi_cap as usize * (config.users[c] as usize + 1).pow(config.window as u32 + 1);
        }
        Ok(Self {
            config: config.clone(),
            size,
            arrival_strides,
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn encode(&self, state: &SystemState) -> Result<StateIndex> {
        state.validate(&self.config)?;
        let mut idx = 0usize;
        for (c, s) in state.per_content.iter().enumerate() {
            let radix = self.config.users[c] as usize + 1;
            idx = idx * self.config.aoi_cap as usize + (s.aoi as usize - 1);
            for &q in s.queues.iter().chain(Some(&s.new_arrivals)) {
                idx = idx * radix + q as usize;
            }
        }
        Ok(StateIndex(idx))
    }

    pub fn decode(&self, index: StateIndex) -> Result<SystemState> {
        if index.0 >= self.size {
            return Err(Error::StateIndexOutOfRange {
                index: index.0,
                size: self.size,
            });
        }
        let window = self.config.window;
        let mut rest = index.0;
        let mut per_content = Vec::with_capacity(self.config.num_contents());
        for c in (0..self.config.num_contents()).rev() {
            let radix = self.config.users[c] as usize + 1;
            let new_arrivals = (rest % radix) as u32;
            rest /= radix;
            let mut queues = vec![0u32; window];
            for q in queues.iter_mut().rev() {
                *q = (rest % radix) as u32;
                rest /= radix;
            }
            let aoi = (rest % self.config.aoi_cap as usize) as u32 + 1;
            rest /= self.config.aoi_cap as usize;
            per_content.push(PerContentState {
                aoi,
                queues,
                new_arrivals,
            });
        }
        per_content.reverse();
        Ok(SystemState { per_content })
    }

    /// Index offsets and probabilities of every arrival outcome, in the same
    /// order as [`transition_distribution`]. Adding an offset to the index of
    /// a state with all `G = 0` gives the index of the corresponding
    /// successor.
    pub fn arrival_outcomes(&self) -> Vec<(usize, f64)> {
        let mut out = vec![(0usize, 1.0f64)];
        for c in 0..self.config.num_contents() {
            let stride = self.arrival_strides[c];
            let pmf = self.config.pmf(c);
            out = out
                .into_iter()
                .flat_map(|(off, p)| {
                    pmf.iter()
                        .enumerate()
                        .map(move |(g, &pg)| (off + g * stride, p * pg))
                })
                .collect();
        }
        out
    }

    /// Index of the successor of `(state, action)` with all arrivals zero.
    pub fn deterministic_successor_index(&self, state: &SystemState, action: Action) -> Result<StateIndex> {
        self.encode(&deterministic_successor(state, action, &self.config))
    }

    pub fn iter(&self) -> impl Iterator<Item = (StateIndex, SystemState)> + '_ {
        (0..self.size).map(move |i| {
            let s = self.decode(StateIndex(i)).expect("index in range");
            (StateIndex(i), s)
        })
    }
}
