//! Multi-user downlink scheduling policies over the belief vector.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::channel::Belief;
use crate::error::{Error, Result};
use crate::index::WhittleIndex;
use crate::tree::{memo, Compact, Key, Memo};
use crate::user::{check_discount, UserModel};

/// Largest system the exact tree evaluators accept.
pub const MAX_USERS: usize = 8;

/// Default horizon cap of the optimal planner.
pub const OPTIMAL_HORIZON_CAP: usize = 14;

/// One base station serving `N` users, one per slot.
#[derive(Debug, Clone)]
pub struct DownlinkSystem {
    users: Vec<UserModel>,
    beta: f64,
    indices: Vec<WhittleIndex>,
}

impl DownlinkSystem {
    pub fn new(users: Vec<UserModel>, beta: f64) -> Result<Self> {
        check_discount(beta)?;
        if users.is_empty() {
            return Err(Error::InvalidSystem("at least one user is required".into()));
        }
        let indices = users
            .iter()
            .map(|u| WhittleIndex::new(u, beta))
            .collect::<Result<_>>()?;
        Ok(DownlinkSystem {
            users,
            beta,
            indices,
        })
    }

    pub fn users(&self) -> &[UserModel] {
        &self.users
    }

    pub fn user(&self, i: usize) -> &UserModel {
        &self.users[i]
    }

    pub fn whittle(&self, i: usize) -> &WhittleIndex {
        &self.indices[i]
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    /// `true` when all users share channel and reward model.
    pub fn identical(&self) -> bool {
        self.users.iter().all(|u| u == &self.users[0])
    }

    /// Every user at its stationary belief.
    pub fn steady_state(&self) -> SystemState {
        SystemState {
            beliefs: self
                .users
                .iter()
                .map(|u| u.channel().steady_state())
                .collect(),
        }
    }

    pub(crate) fn check_state(&self, state: &SystemState) -> Result<()> {
        if state.len() != self.len() {
            return Err(Error::InvalidState(format!(
                "state has {} beliefs for {} users",
                state.len(),
                self.len()
            )));
        }
        Ok(())
    }

    fn check_user(&self, i: usize) -> Result<()> {
        if i >= self.len() {
            return Err(Error::InvalidState(format!(
                "user {i} out of range for {} users",
                self.len()
            )));
        }
        Ok(())
    }
}

/// Belief vector, the sufficient statistic of the scheduler.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemState {
    beliefs: Vec<Belief>,
}

impl SystemState {
    pub fn new(beliefs: Vec<Belief>) -> Self {
        SystemState { beliefs }
    }

    pub fn from_values(values: &[f64]) -> Result<Self> {
        Ok(SystemState {
            beliefs: values
                .iter()
                .map(|&v| Belief::new(v))
                .collect::<Result<_>>()?,
        })
    }

    pub fn beliefs(&self) -> &[Belief] {
        &self.beliefs
    }

    pub fn len(&self) -> usize {
        self.beliefs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beliefs.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PolicyDecision {
    pub user: usize,
}

/// Policies addressable by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PolicyKind {
    Whittle,
    Greedy,
    Random,
    NoFeedback,
    Optimal,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 5] = [
        PolicyKind::Whittle,
        PolicyKind::Greedy,
        PolicyKind::Random,
        PolicyKind::NoFeedback,
        PolicyKind::Optimal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Whittle => "whittle",
            PolicyKind::Greedy => "greedy",
            PolicyKind::Random => "random",
            PolicyKind::NoFeedback => "nofb",
            PolicyKind::Optimal => "optimal",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "unknown policy {s:?} (expected whittle, greedy, random, nofb or optimal)"
                ))
            })
    }
}

/// Index values closer than this are treated as tied. Closed-form indices
/// that are mathematically equal (e.g. `W = delta` on a low-belief interval)
/// differ by a few ulps.
pub const INDEX_TIE_TOL: f64 = 1e-12;

/// Index-policy choice: among users whose index is within
/// [`INDEX_TIE_TOL`] of the largest, the one with the largest belief, then
/// the lowest label.
pub(crate) fn index_argmax(
    n: usize,
    index: impl Fn(usize) -> f64,
    belief: impl Fn(usize) -> f64,
) -> usize {
    let w: Vec<f64> = (0..n).map(&index).collect();
    let top = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut best = None;
    for i in (0..n).filter(|&i| w[i] >= top - INDEX_TIE_TOL) {
        match best {
            Some(b) if belief(i) <= belief(b) => {}
            _ => best = Some(i),
        }
    }
    best.unwrap_or(0)
}

/// Lowest-index argmax.
fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_value = f64::NEG_INFINITY;
    for (i, v) in values.enumerate() {
        if v > best_value {
            best = i;
            best_value = v;
        }
    }
    best
}

/// Belief vector after serving `scheduled` and observing its channel.
pub fn transition(
    sys: &DownlinkSystem,
    state: &SystemState,
    scheduled: usize,
    observed_high: bool,
) -> Result<SystemState> {
    sys.check_state(state)?;
    sys.check_user(scheduled)?;
    let beliefs = state
        .beliefs
        .iter()
        .zip(&sys.users)
        .enumerate()
        .map(|(i, (&b, u))| {
            if i == scheduled {
                u.channel().feedback_update(observed_high)
            } else {
                u.channel().q_step(b)
            }
        })
        .collect();
    Ok(SystemState { beliefs })
}

/// Serves the user with the largest Whittle index; ties go to the larger
/// belief, then the lower label.
pub fn whittle_policy(sys: &DownlinkSystem, state: &SystemState) -> Result<PolicyDecision> {
    sys.check_state(state)?;
    let b = &state.beliefs;
    Ok(PolicyDecision {
        user: index_argmax(b.len(), |i| sys.indices[i].index(b[i]), |i| b[i].get()),
    })
}

/// Serves the user with the largest belief.
pub fn greedy_policy(sys: &DownlinkSystem, state: &SystemState) -> Result<PolicyDecision> {
    sys.check_state(state)?;
    Ok(PolicyDecision {
        user: argmax(state.beliefs.iter().map(|b| b.get())),
    })
}

/// Serves a uniformly random user.
pub fn random_policy<R: Rng + ?Sized>(sys: &DownlinkSystem, rng: &mut R) -> PolicyDecision {
    PolicyDecision {
        user: rng.random_range(0..sys.len()),
    }
}

/// Serves the user with the largest expected reward under the open-loop
/// beliefs, which ignore all feedback.
pub fn no_feedback_policy(sys: &DownlinkSystem, open_loop: &SystemState) -> Result<PolicyDecision> {
    sys.check_state(open_loop)?;
    Ok(PolicyDecision {
        user: argmax(
            open_loop
                .beliefs
                .iter()
                .zip(&sys.users)
                .map(|(&b, u)| u.immediate_reward(b)),
        ),
    })
}

/// Open-loop beliefs one slot later.
pub fn open_loop_step(sys: &DownlinkSystem, open_loop: &SystemState) -> SystemState {
    SystemState {
        beliefs: open_loop
            .beliefs
            .iter()
            .zip(&sys.users)
            .map(|(&b, u)| u.channel().q_step(b))
            .collect(),
    }
}

/// Exact finite-horizon dynamic program over the feedback tree, memoised
/// on reached belief vectors. Reusable across horizons and start states of
/// one system.
#[derive(Debug)]
pub struct OptimalPlanner {
    compact: Compact,
    memo: Memo<(f64, u8)>,
    cap: usize,
}

impl OptimalPlanner {
    pub fn new(sys: &DownlinkSystem) -> Result<Self> {
        Self::with_cap(sys, OPTIMAL_HORIZON_CAP)
    }

    pub fn with_cap(sys: &DownlinkSystem, cap: usize) -> Result<Self> {
        Self::build(sys, cap, true)
    }

    /// `symmetric = false` keeps user labels in the memo keys, so memoised
    /// actions can be replayed on concrete trajectories.
    pub(crate) fn build(sys: &DownlinkSystem, cap: usize, symmetric: bool) -> Result<Self> {
        Ok(OptimalPlanner {
            compact: Compact::new(sys, symmetric)?,
            memo: memo(0),
            cap,
        })
    }

    /// Optimal expected discounted reward over `horizon` slots and an
    /// optimal first action.
    pub fn solve(&mut self, state: &SystemState, horizon: usize) -> Result<(f64, PolicyDecision)> {
        if horizon > self.cap {
            return Err(Error::HorizonTooLarge {
                horizon,
                cap: self.cap,
            });
        }
        if state.len() != self.compact.len() {
            return Err(Error::InvalidState(format!(
                "state has {} beliefs for {} users",
                state.len(),
                self.compact.len()
            )));
        }
        while self.memo.len() <= horizon {
            self.memo.push(Default::default());
        }
        let key = self.compact.encode(state)?;
        let (v, a) = self.value(key, horizon)?;
        Ok((v, PolicyDecision { user: a as usize }))
    }

    fn value(&mut self, key: Key, t: usize) -> Result<(f64, u8)> {
        if t == 0 {
            return Ok((0.0, 0));
        }
        if let Some(&hit) = self.memo[t].get(&key) {
            return Ok(hit);
        }
        let beta = self.compact.beta();
        let mut best = (f64::NEG_INFINITY, 0u8);
        for i in 0..self.compact.len() {
            let pi = self.compact.belief(key, i);
            let mut future = 0.0;
            if pi > 0.0 {
                let next = self.compact.next(key, i, true)?;
                future += pi * self.value(next, t - 1)?.0;
            }
            if pi < 1.0 {
                let next = self.compact.next(key, i, false)?;
                future += (1.0 - pi) * self.value(next, t - 1)?.0;
            }
            let q = self.compact.reward(key, i) + beta * future;
            if q > best.0 {
                best = (q, i as u8);
            }
        }
        self.memo[t].insert(key, best);
        Ok(best)
    }

    pub(crate) fn compact(&self) -> &Compact {
        &self.compact
    }

    /// Memoised optimal action with `t` slots remaining.
    pub(crate) fn action(&self, key: Key, t: usize) -> Option<usize> {
        self.memo.get(t)?.get(&key).map(|&(_, a)| a as usize)
    }

    /// Number of memoised (horizon, state) entries.
    pub fn memo_size(&self) -> usize {
        self.memo.iter().map(|m| m.len()).sum()
    }
}

/// Optimal value over `horizon` slots from `state` and an optimal first
/// action.
pub fn optimal_finite_horizon(
    sys: &DownlinkSystem,
    state: &SystemState,
    horizon: usize,
) -> Result<(f64, PolicyDecision)> {
    OptimalPlanner::new(sys)?.solve(state, horizon)
}
