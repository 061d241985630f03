//! Exact and Monte Carlo policy evaluation and the experiment protocols.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::channel::{Belief, MarkovChannel};
use crate::error::{Error, Result};
use crate::policies::{
    DownlinkSystem, OptimalPlanner, PolicyKind, SystemState, OPTIMAL_HORIZON_CAP,
};
use crate::reward::RewardModel;
use crate::tree::{memo, Compact, Key, Memo};
use crate::user::UserModel;

/// Horizon cap of the exact evaluator.
pub const EXACT_HORIZON_CAP: usize = 20;

/// Default relative change defining the convergence horizon.
pub const DEFAULT_CONVERGENCE_PCT: f64 = 0.01;

/// Stream offset reserved for the random policy's draws.
const POLICY_STREAM: u64 = 0xFFFF;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    Exact,
    MonteCarlo { runs: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    pub horizon: usize,
    pub mode: EvalMode,
    pub convergence_pct: f64,
}

impl EvalConfig {
    pub fn exact(horizon: usize) -> Self {
        EvalConfig {
            horizon,
            mode: EvalMode::Exact,
            convergence_pct: DEFAULT_CONVERGENCE_PCT,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::InvalidConfig("horizon must be at least 1".into()));
        }
        if let EvalMode::MonteCarlo { runs: 0, .. } = self.mode {
            return Err(Error::InvalidConfig(
                "Monte Carlo needs at least one run".into(),
            ));
        }
        if !(self.convergence_pct > 0.0 && self.convergence_pct < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "convergence_pct {} must lie in (0, 1)",
                self.convergence_pct
            )));
        }
        Ok(())
    }
}

/// Expected discounted reward of the no-feedback policy: it only knows the
/// open-loop beliefs, so its expected reward each slot is the best `R_i`
/// among them.
fn no_feedback_value(sys: &DownlinkSystem, state: &SystemState, horizon: usize) -> f64 {
    let mut beliefs: Vec<f64> = state.beliefs().iter().map(|b| b.get()).collect();
    let mut total = 0.0;
    let mut discount = 1.0;
    for _ in 0..horizon {
        let best = beliefs
            .iter()
            .zip(sys.users())
            .map(|(&b, u)| u.reward_raw(b))
            .fold(f64::NEG_INFINITY, f64::max);
        total += discount * best;
        discount *= sys.beta();
        for (b, u) in beliefs.iter_mut().zip(sys.users()) {
            *b = u.channel().q_raw(*b);
        }
    }
    total
}

/// Exact evaluator of a closed-loop policy over the feedback tree,
/// reusable across horizons.
#[derive(Debug)]
pub struct ExactEvaluator {
    kind: PolicyKind,
    sys: DownlinkSystem,
    compact: Option<Compact>,
    memo: Memo<f64>,
    planner: Option<OptimalPlanner>,
}

impl ExactEvaluator {
    pub fn new(sys: &DownlinkSystem, kind: PolicyKind) -> Result<Self> {
        let (compact, planner) = match kind {
            PolicyKind::Optimal => (None, Some(OptimalPlanner::new(sys)?)),
            PolicyKind::NoFeedback => (None, None),
            // Only the random policy's value is label-free; the index and
            // greedy tie-breaks depend on user order.
            PolicyKind::Random => (Some(Compact::new(sys, true)?), None),
            PolicyKind::Whittle | PolicyKind::Greedy => (Some(Compact::new(sys, false)?), None),
        };
        Ok(ExactEvaluator {
            kind,
            sys: sys.clone(),
            compact,
            memo: memo(0),
            planner,
        })
    }

    pub fn kind(&self) -> PolicyKind {
        self.kind
    }

    pub fn evaluate(&mut self, state: &SystemState, horizon: usize) -> Result<f64> {
        self.sys.check_state(state)?;
        if horizon > EXACT_HORIZON_CAP {
            return Err(Error::HorizonTooLarge {
                horizon,
                cap: EXACT_HORIZON_CAP,
            });
        }
        if let Some(planner) = self.planner.as_mut() {
            return Ok(planner.solve(state, horizon)?.0);
        }
        if self.kind == PolicyKind::NoFeedback {
            return Ok(no_feedback_value(&self.sys, state, horizon));
        }
        while self.memo.len() <= horizon {
            self.memo.push(Default::default());
        }
        let key = self
            .compact
            .as_mut()
            .expect("compact state")
            .encode(state)?;
        self.value(key, horizon)
    }

    fn action_value(&mut self, key: Key, i: usize, t: usize) -> Result<f64> {
        let compact = self.compact.as_mut().expect("compact state");
        let pi = compact.belief(key, i);
        let reward = compact.reward(key, i);
        let beta = compact.beta();
        let mut future = 0.0;
        if pi > 0.0 {
            let next = self.compact.as_mut().unwrap().next(key, i, true)?;
            future += pi * self.value(next, t - 1)?;
        }
        if pi < 1.0 {
            let next = self.compact.as_mut().unwrap().next(key, i, false)?;
            future += (1.0 - pi) * self.value(next, t - 1)?;
        }
        Ok(reward + beta * future)
    }

    fn value(&mut self, key: Key, t: usize) -> Result<f64> {
        if t == 0 {
            return Ok(0.0);
        }
        if let Some(&v) = self.memo[t].get(&key) {
            return Ok(v);
        }
        let compact = self.compact.as_ref().expect("compact state");
        let v = match self.kind {
            PolicyKind::Whittle => {
                let i = crate::policies::index_argmax(
                    compact.len(),
                    |i| compact.whittle(key, i),
                    |i| compact.belief(key, i),
                );
                self.action_value(key, i, t)?
            }
            PolicyKind::Greedy => {
                let i = compact.argmax(|i| compact.belief(key, i));
                self.action_value(key, i, t)?
            }
            PolicyKind::Random => {
                let n = compact.len();
                let mut sum = 0.0;
                for i in 0..n {
                    sum += self.action_value(key, i, t)?;
                }
                sum / n as f64
            }
            PolicyKind::NoFeedback | PolicyKind::Optimal => unreachable!(),
        };
        self.memo[t].insert(key, v);
        Ok(v)
    }
}

/// Exact expected discounted reward of `kind` over `horizon` slots.
pub fn evaluate_exact(
    sys: &DownlinkSystem,
    kind: PolicyKind,
    state: &SystemState,
    horizon: usize,
) -> Result<f64> {
    ExactEvaluator::new(sys, kind)?.evaluate(state, horizon)
}

/// Sample mean and standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
}

fn user_rng(seed: u64, run: u64, slot: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((run << 16) | slot);
    rng
}

/// Monte Carlo estimate of the discounted reward. Each (run, user) pair has
/// its own random stream, so results do not depend on the thread count and
/// adding a user leaves the other users' channel draws unchanged.
pub fn evaluate_monte_carlo(
    sys: &DownlinkSystem,
    kind: PolicyKind,
    state: &SystemState,
    horizon: usize,
    runs: usize,
    seed: u64,
) -> Result<Estimate> {
    sys.check_state(state)?;
    if runs == 0 {
        return Err(Error::InvalidConfig(
            "Monte Carlo needs at least one run".into(),
        ));
    }
    if sys.len() >= POLICY_STREAM as usize {
        return Err(Error::InvalidSystem("too many users".into()));
    }
    let planner = if kind == PolicyKind::Optimal {
        let mut planner = OptimalPlanner::build(sys, OPTIMAL_HORIZON_CAP, false)?;
        planner.solve(state, horizon)?;
        Some(planner)
    } else {
        None
    };
    let samples: Vec<f64> = (0..runs as u64)
        .into_par_iter()
        .map(|run| simulate_run(sys, kind, state, horizon, seed, run, planner.as_ref()))
        .collect::<Result<_>>()?;
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let stderr = if samples.len() > 1 {
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    Ok(Estimate { mean, stderr })
}

fn simulate_run(
    sys: &DownlinkSystem,
    kind: PolicyKind,
    state: &SystemState,
    horizon: usize,
    seed: u64,
    run: u64,
    planner: Option<&OptimalPlanner>,
) -> Result<f64> {
    let n = sys.len();
    let mut rngs: Vec<ChaCha8Rng> = (0..n as u64).map(|i| user_rng(seed, run, i)).collect();
    let mut policy_rng = user_rng(seed, run, POLICY_STREAM);
    let mut beliefs: Vec<f64> = state.beliefs().iter().map(|b| b.get()).collect();
    let mut open_loop = beliefs.clone();
    let mut high: Vec<bool> = beliefs
        .iter()
        .zip(rngs.iter_mut())
        .map(|(&b, rng)| rng.random::<f64>() < b)
        .collect();
    let mut key = planner.and_then(|p| p.compact().encode_known(state));
    let argmax = |score: &dyn Fn(usize) -> f64| {
        let mut best = 0;
        for i in 1..n {
            if score(i) > score(best) {
                best = i;
            }
        }
        best
    };
    let mut total = 0.0;
    let mut discount = 1.0;
    for t in 0..horizon {
        let chosen = match kind {
            PolicyKind::Whittle => crate::policies::index_argmax(
                n,
                |i| sys.whittle(i).index(Belief::from_rounded(beliefs[i])),
                |i| beliefs[i],
            ),
            PolicyKind::Greedy => argmax(&|i| beliefs[i]),
            PolicyKind::Random => policy_rng.random_range(0..n),
            PolicyKind::NoFeedback => argmax(&|i| sys.user(i).reward_raw(open_loop[i])),
            PolicyKind::Optimal => planner
                .unwrap()
                .action(key.unwrap(), horizon - t)
                .ok_or_else(|| Error::InvalidState("state missing from planner memo".into()))?,
        };
        let used = if kind == PolicyKind::NoFeedback {
            open_loop[chosen]
        } else {
            beliefs[chosen]
        };
        let pair = sys
            .user(chosen)
            .reward()
            .best_pair(Belief::from_rounded(used));
        total += discount * pair.realized(high[chosen]);
        discount *= sys.beta();
        if let (Some(p), Some(k)) = (planner, key) {
            key = p.compact().next_known(k, chosen, high[chosen]);
        }
        for i in 0..n {
            let ch = sys.user(i).channel();
            beliefs[i] = if i == chosen {
                ch.feedback_update(high[i]).get()
            } else {
                ch.q_raw(beliefs[i])
            };
            open_loop[i] = ch.q_raw(open_loop[i]);
            let up = if high[i] { ch.p() } else { ch.r() };
            high[i] = rngs[i].random::<f64>() < up;
        }
    }
    Ok(total)
}

/// Fraction of the feedback gain captured by the index policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PctGain {
    Defined(f64),
    /// `v_opt` does not exceed `v_nofb` by a meaningful margin.
    Undefined,
}

impl PctGain {
    pub fn value(self) -> Option<f64> {
        match self {
            PctGain::Defined(v) => Some(v),
            PctGain::Undefined => None,
        }
    }
}

pub fn pct_gain(v_opt: f64, v_index: f64, v_nofb: f64) -> PctGain {
    let denom = v_opt - v_nofb;
    if denom <= 1e-12 * v_opt.abs().max(1.0) {
        PctGain::Undefined
    } else {
        PctGain::Defined((v_index - v_nofb) / denom * 100.0)
    }
}

/// One row of the random-instance table.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub instance: usize,
    pub channels: Vec<(f64, f64)>,
    pub beta: f64,
    pub v_opt: f64,
    pub v_index: f64,
    pub v_greedy: f64,
    pub v_nofb: f64,
    pub pct_gain: PctGain,
    pub horizon_used: usize,
    pub seed: u64,
}

/// Values of several policies at a common horizon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HorizonPoint {
    pub horizon: usize,
    pub v_opt: f64,
    pub v_index: f64,
}

/// `v_opt` and `v_index` for `M = 1..=m_max`.
pub fn horizon_sweep(
    sys: &DownlinkSystem,
    state: &SystemState,
    m_max: usize,
) -> Result<Vec<HorizonPoint>> {
    if m_max > OPTIMAL_HORIZON_CAP {
        return Err(Error::HorizonTooLarge {
            horizon: m_max,
            cap: OPTIMAL_HORIZON_CAP,
        });
    }
    let mut opt = ExactEvaluator::new(sys, PolicyKind::Optimal)?;
    let mut idx = ExactEvaluator::new(sys, PolicyKind::Whittle)?;
    (1..=m_max)
        .map(|m| {
            Ok(HorizonPoint {
                horizon: m,
                v_opt: opt.evaluate(state, m)?,
                v_index: idx.evaluate(state, m)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MemoryPoint {
    pub p: f64,
    pub r: f64,
    pub v_opt: f64,
    pub v_index: f64,
    pub v_nofb: f64,
}

/// Identical users with `r = 1 - p` for each `p` of the grid, all starting
/// at `initial` (the steady state when `None`).
pub fn memory_sweep(
    n: usize,
    p_grid: &[f64],
    reward: &RewardModel,
    beta: f64,
    horizon: usize,
    initial: Option<f64>,
) -> Result<Vec<MemoryPoint>> {
    if n == 0 {
        return Err(Error::InvalidSystem("at least one user is required".into()));
    }
    p_grid
        .par_iter()
        .map(|&p| {
            if !(0.5..1.0).contains(&p) {
                return Err(Error::InvalidConfig(format!(
                    "memory sweep p={p} outside [0.5, 1)"
                )));
            }
            let r = 1.0 - p;
            let user = UserModel::new(MarkovChannel::new(p, r, reward.delta())?, reward.clone())?;
            let sys = DownlinkSystem::new(vec![user; n], beta)?;
            let state = match initial {
                Some(x) => SystemState::new(vec![Belief::new(x)?; n]),
                None => sys.steady_state(),
            };
            Ok(MemoryPoint {
                p,
                r,
                v_opt: evaluate_exact(&sys, PolicyKind::Optimal, &state, horizon)?,
                v_index: evaluate_exact(&sys, PolicyKind::Whittle, &state, horizon)?,
                v_nofb: evaluate_exact(&sys, PolicyKind::NoFeedback, &state, horizon)?,
            })
        })
        .collect()
}

/// Parameters of the random-instance table.
#[derive(Debug, Clone, PartialEq)]
pub struct TableConfig {
    pub count: usize,
    pub n_min: usize,
    pub n_max: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    pub reward: RewardModel,
    pub seed: u64,
    pub convergence_pct: f64,
    pub max_horizon: usize,
}

/// Values at the smallest horizon where every tracked policy's value moved
/// by less than `pct` relative to the previous horizon.
pub fn convergence_horizon(
    sys: &DownlinkSystem,
    state: &SystemState,
    pct: f64,
    max_horizon: usize,
) -> Result<(usize, [f64; 4])> {
    let kinds = [
        PolicyKind::Optimal,
        PolicyKind::Whittle,
        PolicyKind::Greedy,
        PolicyKind::NoFeedback,
    ];
    let mut evals = kinds
        .iter()
        .map(|&k| ExactEvaluator::new(sys, k))
        .collect::<Result<Vec<_>>>()?;
    let mut prev = [0.0; 4];
    for m in 1..=max_horizon {
        let mut cur = [0.0; 4];
        for (c, e) in cur.iter_mut().zip(evals.iter_mut()) {
            *c = e.evaluate(state, m)?;
        }
        let settled = m > 1
            && cur
                .iter()
                .zip(&prev)
                .all(|(c, p)| (c - p).abs() < pct * c.abs());
        if settled {
            return Ok((m, cur));
        }
        prev = cur;
    }
    Err(Error::NotConverged {
        sweeps: max_horizon,
        last_change: f64::NAN,
    })
}

/// Random instances in the style of the comparison table: channels uniform
/// on the unit square, discount uniform in the configured range, users at
/// steady state, values at the convergence horizon.
pub fn random_instance_table(cfg: &TableConfig) -> Result<Vec<ExperimentResult>> {
    if cfg.n_min == 0 || cfg.n_min > cfg.n_max {
        return Err(Error::InvalidConfig(format!(
            "invalid user range {}..={}",
            cfg.n_min, cfg.n_max
        )));
    }
    if !(0.0 <= cfg.beta_min && cfg.beta_min <= cfg.beta_max && cfg.beta_max < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "invalid discount range [{}, {}]",
            cfg.beta_min, cfg.beta_max
        )));
    }
    (0..cfg.count)
        .into_par_iter()
        .map(|instance| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(instance as u64);
            let n = rng.random_range(cfg.n_min..=cfg.n_max);
            let beta = if cfg.beta_max > cfg.beta_min {
                rng.random_range(cfg.beta_min..cfg.beta_max)
            } else {
                cfg.beta_min
            };
            let channels: Vec<(f64, f64)> = (0..n)
                .map(|_| loop {
                    let p: f64 = rng.random();
                    let r: f64 = rng.random();
                    if p > 0.0 && r > 0.0 {
                        break (p, r);
                    }
                })
                .collect();
            let users = channels
                .iter()
                .map(|&(p, r)| {
                    UserModel::new(
                        MarkovChannel::new(p, r, cfg.reward.delta())?,
                        cfg.reward.clone(),
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            let sys = DownlinkSystem::new(users, beta)?;
            let state = sys.steady_state();
            let (m, [v_opt, v_index, v_greedy, v_nofb]) =
                convergence_horizon(&sys, &state, cfg.convergence_pct, cfg.max_horizon)?;
            Ok(ExperimentResult {
                instance,
                channels,
                beta,
                v_opt,
                v_index,
                v_greedy,
                v_nofb,
                pct_gain: pct_gain(v_opt, v_index, v_nofb),
                horizon_used: m,
                seed: cfg.seed,
            })
        })
        .collect()
}
