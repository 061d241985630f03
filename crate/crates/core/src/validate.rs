//! Invariant suite run by `memsched validate`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::channel::{Belief, Correlation, HittingTime, MarkovChannel};
use crate::error::Result;
use crate::index::{index_oracle, indexability_scan, IndexQuery, WhittleIndex};
use crate::policies::{greedy_policy, whittle_policy, DownlinkSystem, PolicyKind, SystemState};
use crate::report::Table;
use crate::reward::{lower_bound, upper_bound, RewardModel};
use crate::sim::{evaluate_exact, evaluate_monte_carlo};
use crate::subsidy::{OracleSolution, SubsidyProblem, DEFAULT_MAX_SWEEPS};
use crate::user::UserModel;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub module: &'static str,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn outcome(module: &'static str, name: &'static str, worst: f64, tol: f64) -> CheckOutcome {
    CheckOutcome {
        module,
        name,
        passed: worst <= tol,
        detail: format!("worst {worst:.3e} (tol {tol:.0e})"),
    }
}

fn count_outcome(
    module: &'static str,
    name: &'static str,
    bad: usize,
    total: usize,
) -> CheckOutcome {
    CheckOutcome {
        module,
        name,
        passed: bad == 0,
        detail: format!("{bad} of {total} violate"),
    }
}

/// Runs every check for the users and discount of a configuration.
pub fn run_suite(users: &[UserModel], beta: f64, seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();
    let channels: Vec<MarkovChannel> = users.iter().map(|u| *u.channel()).collect();
    out.extend(channel_checks(&channels));
    let mut models: Vec<RewardModel> = Vec::new();
    for u in users {
        if !models.contains(u.reward()) {
            models.push(u.reward().clone());
        }
    }
    out.extend(reward_checks(&models));
    out.extend(subsidy_checks(users, beta)?);
    out.extend(index_checks(users, beta)?);
    out.extend(policy_checks(users, beta, seed)?);
    out.extend(sim_checks(users, beta, seed)?);
    Ok(out)
}

pub fn summary_table(results: &[CheckOutcome]) -> Table {
    let mut t = Table::new(&["module", "check", "status", "detail"]);
    for r in results {
        t.push(vec![
            r.module.into(),
            r.name.into(),
            if r.passed { "pass" } else { "fail" }.into(),
            r.detail.clone(),
        ]);
    }
    t
}

fn grid(n: usize) -> impl Iterator<Item = f64> {
    (0..=n).map(move |i| i as f64 / n as f64)
}

pub fn channel_checks(channels: &[MarkovChannel]) -> Vec<CheckOutcome> {
    let mut all: Vec<MarkovChannel> = channels.to_vec();
    for p in [0.0, 0.1, 0.5, 0.9, 1.0] {
        for r in [0.05, 0.5, 0.95] {
            all.push(MarkovChannel::new(p, r, 0.2).expect("valid grid channel"));
        }
    }
    let mut composition = 0.0_f64;
    let mut bounds = 0usize;
    let mut monotone = 0usize;
    let mut hitting = 0usize;
    let mut total = 0usize;
    for ch in &all {
        let (lo, hi) = (ch.p().min(ch.r()), ch.p().max(ch.r()));
        let steady = ch.steady_state().get();
        for pi in grid(20) {
            let b = Belief::new(pi).unwrap();
            let mut x = b;
            let mut prev_gap = (pi - steady).abs();
            let mut prev = pi;
            for t in 1..=64u64 {
                x = ch.q_step(x);
                let closed = ch.q_iterate(b, t).get();
                composition = composition.max((closed - x.get()).abs());
                if closed < lo - 1e-12 || closed > hi + 1e-12 {
                    bounds += 1;
                }
                let ok = match ch.correlation() {
                    Correlation::Positive => {
                        let gap = (closed - steady).abs();
                        let ok =
                            gap <= prev_gap + 1e-12 && (closed - prev) * (steady - pi) >= -1e-12;
                        prev_gap = gap;
                        ok
                    }
                    Correlation::Negative => {
                        let gap = (closed - steady).abs();
                        let ok = gap <= prev_gap + 1e-12;
                        prev_gap = gap;
                        ok
                    }
                };
                if !ok {
                    monotone += 1;
                }
                prev = closed;
                total += 1;
            }
            for th in grid(10) {
                let got = ch.hitting_time(b, Belief::new(th).unwrap());
                let want = brute_hitting(ch, pi, th);
                if got != want && !boundary_tie(ch, pi, th, got, want) {
                    hitting += 1;
                }
            }
        }
    }
    vec![
        outcome(
            "channel",
            "q_iterate_matches_composition",
            composition,
            1e-12,
        ),
        count_outcome("channel", "iterates_within_min_max", bounds, total),
        count_outcome("channel", "monotone_convergence", monotone, total),
        count_outcome(
            "channel",
            "hitting_time_matches_iteration",
            hitting,
            all.len() * 21 * 11,
        ),
    ]
}

/// Hitting time by direct iteration; beyond the cap the answer is Infinite
/// only if the geometric tail can never cross.
pub fn brute_hitting(ch: &MarkovChannel, pi: f64, th: f64) -> HittingTime {
    let mut x = pi;
    for t in 0..10_000u64 {
        if x > th {
            return HittingTime::Finite(t);
        }
        x = x * ch.p() + (1.0 - x) * ch.r();
    }
    HittingTime::Infinite
}

/// Two hitting times may differ when the belief lands exactly on the
/// threshold and rounding decides the strict comparison.
fn boundary_tie(ch: &MarkovChannel, pi: f64, th: f64, a: HittingTime, b: HittingTime) -> bool {
    let t = match (a.finite(), b.finite()) {
        (Some(x), Some(y)) => x.min(y),
        (Some(x), None) | (None, Some(x)) => x,
        (None, None) => return true,
    };
    let x = ch.q_iterate(Belief::new(pi).unwrap(), t).get();
    (x - th).abs() <= 1e-12
}

pub fn reward_checks(models: &[RewardModel]) -> Vec<CheckOutcome> {
    let mut convex = 0.0_f64;
    let mut monotone = 0.0_f64;
    let mut bounds = 0.0_f64;
    let mut endpoints = 0usize;
    let mut gap_missing = 0usize;
    for m in models {
        let d = m.delta();
        let xs: Vec<f64> = grid(1000).collect();
        let v: Vec<f64> = xs
            .iter()
            .map(|&x| m.eval(Belief::new(x).unwrap()))
            .collect();
        for i in 1..v.len() {
            monotone = monotone.max(v[i - 1] - v[i]);
            if i + 1 < v.len() {
                convex = convex.max(2.0 * v[i] - v[i - 1] - v[i + 1]);
            }
        }
        for (&x, &y) in xs.iter().zip(&v) {
            let b = Belief::new(x).unwrap();
            bounds = bounds.max(lower_bound(d, b) - y).max(y - upper_bound(d, b));
        }
        if m.eval(Belief::ZERO) != d || m.eval(Belief::ONE) != 1.0 {
            endpoints += 1;
        }
        let non_pure = m
            .estimator_pairs()
            .iter()
            .any(|p| (p.gamma_l > 0.0 && p.gamma_l < d) || (p.gamma_h > d && p.gamma_h < 1.0));
        if d > 0.0 && non_pure {
            let strict = xs
                .iter()
                .zip(&v)
                .any(|(&x, &y)| y < upper_bound(d, Belief::new(x).unwrap()) - 1e-12);
            if !strict {
                gap_missing += 1;
            }
        }
    }
    vec![
        outcome("reward", "convex", convex, 1e-12),
        outcome("reward", "nondecreasing", monotone, 0.0),
        outcome("reward", "within_bounds", bounds, 1e-12),
        count_outcome("reward", "exact_endpoints", endpoints, models.len()),
        count_outcome(
            "reward",
            "strict_gap_to_upper_bound",
            gap_missing,
            models.len(),
        ),
    ]
}

const OMEGAS: [f64; 6] = [0.1, 0.3, 0.5, 0.7, 0.9, 1.2];

pub fn subsidy_checks(users: &[UserModel], beta: f64) -> Result<Vec<CheckOutcome>> {
    let mut anchors = 0.0_f64;
    let mut convex = 0.0_f64;
    let mut crossings = 0usize;
    let mut omega_mono = 0.0_f64;
    let mut tables = 0usize;
    for u in users {
        let mut prev: Option<Vec<f64>> = None;
        for &omega in &OMEGAS {
            let prob = SubsidyProblem::new(u.clone(), beta, omega)?;
            let class = prob.classify_threshold()?;
            let a = prob.anchor_values(class)?;
            let sol = OracleSolution::solve(&prob, DEFAULT_MAX_SWEEPS)?;
            anchors = anchors
                .max((a.v_p - sol.v_p()).abs())
                .max((a.v_r - sol.v_r()).abs());
            let table = prob.value_iteration(1001, DEFAULT_MAX_SWEEPS)?;
            convex = convex.max(table.convexity_defect());
            if table.sign_changes() > 1 {
                crossings += 1;
            }
            if let Some(p) = &prev {
                for (x, y) in p.iter().zip(table.values()) {
                    omega_mono = omega_mono.max(x - y);
                }
            }
            prev = Some(table.values().to_vec());
            tables += 1;
        }
    }
    Ok(vec![
        outcome("subsidy", "anchors_match_value_iteration", anchors, 1e-6),
        outcome("subsidy", "value_convex", convex, 1e-8),
        count_outcome("subsidy", "single_switch_threshold", crossings, tables),
        outcome(
            "subsidy",
            "value_nondecreasing_in_subsidy",
            omega_mono,
            1e-9,
        ),
    ])
}

pub fn index_checks(users: &[UserModel], beta: f64) -> Result<Vec<CheckOutcome>> {
    let mut mono = 0.0_f64;
    let mut range = 0usize;
    let mut cont = 0.0_f64;
    let mut oracle = 0.0_f64;
    let mut inverse = 0.0_f64;
    let mut residual = 0.0_f64;
    let mut scans = 0usize;
    for u in users {
        let w = WhittleIndex::new(u, beta)?;
        let d = u.delta();
        let mut prev = f64::NEG_INFINITY;
        for x in grid(1000) {
            let v = w.index(Belief::new(x).unwrap());
            mono = mono.max(prev - v);
            prev = v;
            if v < d - 1e-12 || v > 1.0 + 1e-12 {
                range += 1;
            }
            residual = residual.max(w.residual(Belief::new(x).unwrap()).abs());
        }
        if w.index(Belief::ONE) != 1.0 {
            range += 1;
        }
        let ch = u.channel();
        for edge in [
            ch.p(),
            ch.r(),
            ch.steady_state().get(),
            ch.q_step(Belief::new(ch.p())?).get(),
        ] {
            if edge - 1e-9 >= 0.0 && edge + 1e-9 <= 1.0 {
                let a = w.index(Belief::new(edge - 1e-9)?);
                let b = w.index(Belief::new(edge + 1e-9)?);
                cont = cont.max((a - b).abs());
            }
        }
        for x in grid(10) {
            let q = IndexQuery {
                user: u.clone(),
                beta,
                pi: Belief::new(x)?,
            };
            oracle = oracle.max((index_oracle(&q)?.omega - w.index(q.pi)).abs());
        }
        for &omega in &[0.3, 0.5, 0.7, 0.9] {
            if omega <= d {
                continue;
            }
            let class = SubsidyProblem::new(u.clone(), beta, omega)?.solve_threshold()?;
            let pi = class.interior().expect("interior threshold");
            inverse = inverse.max((w.index(pi) - omega).abs());
        }
        let omega_grid: Vec<f64> = (1..=20).map(|i| d + (1.0 - d) * i as f64 / 21.0).collect();
        if indexability_scan(u, beta, &omega_grid).is_err() {
            scans += 1;
        }
    }
    Ok(vec![
        outcome("index", "nondecreasing_in_belief", mono, 1e-12),
        count_outcome("index", "range_delta_to_one", range, users.len() * 1002),
        outcome("index", "continuous_across_branches", cont, 1e-6),
        outcome("index", "matches_bisection_oracle", oracle, 1e-5),
        outcome("index", "inverse_of_threshold", inverse, 1e-5),
        outcome("index", "implicit_equation_residual", residual, 1e-6),
        count_outcome("index", "threshold_strictly_increasing", scans, users.len()),
    ])
}

fn random_state<R: Rng>(rng: &mut R, n: usize) -> SystemState {
    SystemState::new((0..n).map(|_| Belief::new(rng.random()).unwrap()).collect())
}

pub fn policy_checks(users: &[UserModel], beta: f64, seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let small: Vec<UserModel> = users.iter().take(4).cloned().collect();
    let sys = DownlinkSystem::new(small, beta)?;
    let mut dominance = 0.0_f64;
    for _ in 0..5 {
        let state = random_state(&mut rng, sys.len());
        for m in [1, 3, 6] {
            let opt = evaluate_exact(&sys, PolicyKind::Optimal, &state, m)?;
            for kind in [
                PolicyKind::Whittle,
                PolicyKind::Greedy,
                PolicyKind::Random,
                PolicyKind::NoFeedback,
            ] {
                dominance = dominance.max(evaluate_exact(&sys, kind, &state, m)? - opt);
            }
        }
    }
    let mut disagree = 0usize;
    let mut total = 0usize;
    for u in users {
        let same = DownlinkSystem::new(vec![u.clone(); 3], beta)?;
        for _ in 0..10_000 / users.len().max(1) {
            let state = random_state(&mut rng, 3);
            if whittle_policy(&same, &state)? != greedy_policy(&same, &state)? {
                disagree += 1;
            }
            total += 1;
        }
    }
    let mut perm = 0usize;
    let n = sys.len();
    for _ in 0..1000 {
        let state = random_state(&mut rng, n);
        let rot: Vec<UserModel> = (0..n).map(|i| sys.user((i + 1) % n).clone()).collect();
        let rot_sys = DownlinkSystem::new(rot, beta)?;
        let rot_state = SystemState::new((0..n).map(|i| state.beliefs()[(i + 1) % n]).collect());
        let a = whittle_policy(&sys, &state)?.user;
        let b = whittle_policy(&rot_sys, &rot_state)?.user;
        let wa = sys.whittle(a).index(state.beliefs()[a]);
        let wb = rot_sys.whittle(b).index(rot_state.beliefs()[b]);
        if (wa - wb).abs() > 1e-12 {
            perm += 1;
        }
    }
    Ok(vec![
        outcome("policies", "optimal_dominates", dominance, 1e-10),
        count_outcome(
            "policies",
            "identical_users_index_is_greedy",
            disagree,
            total,
        ),
        count_outcome(
            "policies",
            "decision_depends_on_index_order_only",
            perm,
            1000,
        ),
    ])
}

pub fn sim_checks(users: &[UserModel], beta: f64, seed: u64) -> Result<Vec<CheckOutcome>> {
    let small: Vec<UserModel> = users.iter().take(3).cloned().collect();
    let sys = DownlinkSystem::new(small, beta)?;
    let state = sys.steady_state();
    let mut outside = 0usize;
    let mut worst = 0.0_f64;
    for (k, kind) in PolicyKind::ALL.into_iter().enumerate() {
        let exact = evaluate_exact(&sys, kind, &state, 8)?;
        let mc = evaluate_monte_carlo(&sys, kind, &state, 8, 20_000, seed.wrapping_add(k as u64))?;
        let z = (mc.mean - exact).abs() / mc.stderr.max(1e-300);
        worst = worst.max(z);
        if z > 3.0 {
            outside += 1;
        }
    }
    let opt = evaluate_exact(&sys, PolicyKind::Optimal, &state, 8)?;
    let idx = evaluate_exact(&sys, PolicyKind::Whittle, &state, 8)?;
    Ok(vec![
        CheckOutcome {
            module: "sim",
            name: "monte_carlo_within_3_sigma",
            passed: outside == 0,
            detail: format!("largest deviation {worst:.3} sigma"),
        },
        outcome("sim", "index_not_above_optimal", idx - opt, 1e-9),
    ])
}
