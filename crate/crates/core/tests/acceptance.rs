//! Acceptance suite. Each test prints one `PASS`/`FAIL` line.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use memsched::index::{index_oracle, index_trace, indexability_scan};
use memsched::policies::{greedy_policy, optimal_finite_horizon, whittle_policy};
use memsched::report;
use memsched::sim::{self, TableConfig};
use memsched::subsidy::{OracleSolution, DEFAULT_MAX_SWEEPS};
use memsched::validate::reward_checks;
use memsched::{
    Belief, Correlation, DownlinkSystem, IndexBranch, IndexQuery, PctGain, PolicyKind, RewardModel,
    SubsidyProblem, SystemState, ThresholdClass, UserModel, WhittleIndex,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DELTA: f64 = 0.2;

fn verdict(criterion: u32, title: &str, passed: bool, detail: &str) {
    let status = if passed { "PASS" } else { "FAIL" };
    println!("{status} [{criterion:>2}] {title}: {detail}");
    assert!(passed, "criterion {criterion} ({title}) failed: {detail}");
}

fn user(p: f64, r: f64) -> UserModel {
    UserModel::with_default_reward(p, r, DELTA).unwrap()
}

/// A channel of the requested sign with both transition probabilities in
/// `[0.02, 0.98]`.
fn random_channel(rng: &mut ChaCha8Rng, positive: bool) -> (f64, f64) {
    loop {
        let a: f64 = rng.random_range(0.02..0.98);
        let b = rng.random_range(0.02..0.98);
        if (a - b).abs() < 1e-3 {
            continue;
        }
        let (hi, lo) = if a > b { (a, b) } else { (b, a) };
        return if positive { (hi, lo) } else { (lo, hi) };
    }
}

/// Belief interval covered by each closed-form branch.
fn branch_interval(w: &WhittleIndex, branch: IndexBranch) -> (f64, f64) {
    let ch = w.user().channel();
    let (p, r, s) = (ch.p(), ch.r(), ch.steady_state().get());
    let qp = ch.q_step(Belief::new(p).unwrap()).get();
    match branch {
        IndexBranch::PosHigh => (p, 1.0),
        IndexBranch::PosMid => (s, p),
        IndexBranch::PosLowMid => (r, s),
        IndexBranch::PosLow => (0.0, r),
        IndexBranch::NegHigh => (r, 1.0),
        IndexBranch::NegUpper => (qp, r),
        IndexBranch::NegMid => (s, qp),
        IndexBranch::NegLowMid => (p, s),
        IndexBranch::NegLow => (0.0, p),
    }
}

fn is_positive(branch: IndexBranch) -> bool {
    matches!(
        branch,
        IndexBranch::PosHigh | IndexBranch::PosMid | IndexBranch::PosLowMid | IndexBranch::PosLow
    )
}

#[test]
fn criterion_01_index_matches_oracle() {
    const PER_BRANCH: usize = 25;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: BTreeMap<String, (usize, f64)> = BTreeMap::new();
    let mut worst_case = (0.0_f64, String::new());
    let mut over = Vec::new();
    for branch in IndexBranch::ALL {
        let mut n = 0;
        while n < PER_BRANCH {
            let (p, r) = random_channel(&mut rng, is_positive(branch));
            let beta = rng.random_range(0.05..0.95);
            let u = user(p, r);
            let w = WhittleIndex::new(&u, beta).unwrap();
            let (lo, hi) = branch_interval(&w, branch);
            if hi - lo < 1e-4 {
                continue;
            }
            let pi = Belief::new(rng.random_range(lo..hi)).unwrap();
            if w.branch(pi) != branch {
                continue;
            }
            let q = IndexQuery { user: u, beta, pi };
            let oracle = index_oracle(&q).unwrap().omega;
            let err = (w.index(pi) - oracle).abs();
            let e = worst.entry(format!("{branch:?}")).or_insert((0, 0.0));
            e.0 += 1;
            e.1 = e.1.max(err);
            if err > 1e-5 {
                over.push(pi.get());
            }
            if err > worst_case.0 {
                worst_case = (
                    err,
                    format!("p={p:.4} r={r:.4} beta={beta:.4} pi={:.4}", pi.get()),
                );
            }
            n += 1;
        }
    }
    let elapsed = start.elapsed();
    let total: usize = worst.values().map(|v| v.0).sum();
    let max_err = worst.values().map(|v| v.1).fold(0.0, f64::max);
    let per_branch: Vec<String> = worst
        .iter()
        .map(|(b, (n, e))| format!("{b}:{n}/{e:.1e}"))
        .collect();
    verdict(
        1,
        "closed-form index vs bisection oracle",
        total >= 200 && worst.len() == 9 && max_err <= 1e-5 && elapsed < Duration::from_secs(300),
        &format!(
            "{total} samples, max |err| {max_err:.2e} at {} in {:.1}s [{}]; {} samples above 1e-5, largest belief among them {:.4}",
            worst_case.1,
            elapsed.as_secs_f64(),
            per_branch.join(" "),
            over.len(),
            over.iter().copied().fold(0.0, f64::max)
        ),
    );
}

/// Region of the threshold that selects the closed-form anchor formula.
fn anchor_region(u: &UserModel, class: ThresholdClass) -> &'static str {
    let ch = u.channel();
    let (p, r, s) = (ch.p(), ch.r(), ch.steady_state().get());
    let Some(th) = class.interior().map(Belief::get) else {
        return match class {
            ThresholdClass::AlwaysActive => "always_active",
            _ => "always_idle",
        };
    };
    match ch.correlation() {
        Correlation::Positive if th < r => "pos_below_r",
        Correlation::Positive if th < s => "pos_r_to_steady",
        Correlation::Positive if th < p => "pos_steady_to_p",
        Correlation::Positive => "pos_above_p",
        Correlation::Negative if th < p => "neg_below_p",
        Correlation::Negative if th < ch.q_step(Belief::new(p).unwrap()).get() => "neg_p_to_qp",
        Correlation::Negative if th < r => "neg_qp_to_r",
        Correlation::Negative => "neg_above_r",
    }
}

#[test]
fn criterion_02_anchors_match_value_iteration() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut regions: BTreeMap<&'static str, (usize, f64)> = BTreeMap::new();
    let mut errors = Vec::new();
    for k in 0..400 {
        let positive = k % 2 == 0;
        let (p, r) = random_channel(&mut rng, positive);
        let beta = rng.random_range(0.05..0.95);
        let u = user(p, r);
        let w = WhittleIndex::new(&u, beta).unwrap();
        let omega = match k % 20 {
            0 => rng.random_range(0.0..DELTA),
            1 => rng.random_range(1.0..1.5),
            _ => w.index(Belief::new(rng.random()).unwrap()),
        };
        if (omega - DELTA).abs() < 1e-9 || (omega - 1.0).abs() < 1e-9 {
            continue;
        }
        let prob = SubsidyProblem::new(u.clone(), beta, omega).unwrap();
        let class = prob.classify_threshold().unwrap();
        let region = anchor_region(&u, class);
        let oracle = OracleSolution::solve(&prob, DEFAULT_MAX_SWEEPS).unwrap();
        let err = match prob.anchor_values(class) {
            Ok(a) => (a.v_p - oracle.v_p())
                .abs()
                .max((a.v_r - oracle.v_r()).abs()),
            Err(e) => {
                errors.push(format!(
                    "p={p:.4} r={r:.4} beta={beta:.4} omega={omega:.4}: {e}"
                ));
                f64::INFINITY
            }
        };
        let e = regions.entry(region).or_insert((0, 0.0));
        e.0 += 1;
        e.1 = e.1.max(err);
    }
    let elapsed = start.elapsed();
    let max_err = regions.values().map(|v| v.1).fold(0.0, f64::max);
    let covered = regions.len() == 10 && regions.values().all(|v| v.0 >= 5);
    let detail: Vec<String> = regions
        .iter()
        .map(|(k, (n, e))| format!("{k}:{n}/{e:.1e}"))
        .collect();
    verdict(
        2,
        "closed-form anchors vs value iteration",
        covered && max_err <= 1e-6 && elapsed < Duration::from_secs(300),
        &format!(
            "max |err| {max_err:.2e} in {:.1}s [{}]{}",
            elapsed.as_secs_f64(),
            detail.join(" "),
            if errors.is_empty() {
                String::new()
            } else {
                format!(" errors: {}", errors.join("; "))
            }
        ),
    );
}

#[test]
fn criterion_03_threshold_strictly_increasing() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let grid: Vec<f64> = (1..=50)
        .map(|k| DELTA + (1.0 - DELTA) * k as f64 / 51.0)
        .collect();
    let mut min_inc = f64::INFINITY;
    let mut failures = Vec::new();
    for k in 0..20 {
        let (p, r) = random_channel(&mut rng, k % 2 == 0);
        let beta = rng.random_range(0.05..0.95);
        match indexability_scan(&user(p, r), beta, &grid) {
            Ok(rep) => {
                min_inc = min_inc.min(rep.min_increment);
                if rep
                    .points
                    .iter()
                    .filter(|(_, c)| c.interior().is_some())
                    .count()
                    != 50
                {
                    failures.push(format!("p={p:.3} r={r:.3}: non-interior threshold"));
                }
            }
            Err(e) => failures.push(format!("p={p:.3} r={r:.3} beta={beta:.3}: {e}")),
        }
    }
    verdict(
        3,
        "threshold strictly increasing in subsidy",
        failures.is_empty() && min_inc > 1e-7,
        &format!(
            "20 channels x 50 subsidies, smallest increment {min_inc:.3e} {}",
            failures.join("; ")
        ),
    );
}

#[test]
fn criterion_04_reward_model_suite() {
    let mut models = Vec::new();
    for delta in [0.0, 0.05, DELTA, 0.5, 0.9] {
        models.push(RewardModel::no_estimation(delta).unwrap());
        models.push(RewardModel::default_for(delta).unwrap());
    }
    let checks = reward_checks(&models);
    let failed: Vec<String> = checks
        .iter()
        .filter(|c| !c.passed)
        .map(|c| format!("{} ({})", c.name, c.detail))
        .collect();
    let all_checks: Vec<&str> = checks.iter().map(|c| c.name).collect();
    verdict(
        4,
        "reward convexity, monotonicity, bounds, endpoints",
        failed.is_empty(),
        &format!(
            "{} models on 1001 points, checks {} {}",
            models.len(),
            all_checks.join(","),
            failed.join("; ")
        ),
    );
}

const HORIZON_PAIRS: [(f64, f64); 5] = [
    (0.2, 0.75),
    (0.6, 0.25),
    (0.8, 0.3),
    (0.4, 0.7),
    (0.65, 0.55),
];

#[test]
fn criterion_05_index_near_optimal_over_horizons() {
    let start = Instant::now();
    let mut worst = (f64::INFINITY, 0.0, 0);
    for beta in [0.4, 0.8] {
        let sys = DownlinkSystem::new(
            HORIZON_PAIRS.iter().map(|&(p, r)| user(p, r)).collect(),
            beta,
        )
        .unwrap();
        for pt in sim::horizon_sweep(&sys, &sys.steady_state(), 10).unwrap() {
            let ratio = pt.v_index / pt.v_opt;
            if ratio < worst.0 {
                worst = (ratio, beta, pt.horizon);
            }
        }
    }
    let elapsed = start.elapsed();
    verdict(
        5,
        "index/optimal ratio on the five-channel system",
        worst.0 >= 0.98 && elapsed < Duration::from_secs(600),
        &format!(
            "min ratio {:.5} (beta={}, M={}) in {:.1}s",
            worst.0,
            worst.1,
            worst.2,
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn criterion_06_gain_distribution() {
    let start = Instant::now();
    let rows = sim::random_instance_table(&TableConfig {
        count: 20,
        n_min: 4,
        n_max: 5,
        beta_min: 0.45,
        beta_max: 0.67,
        reward: RewardModel::default_for(DELTA).unwrap(),
        seed: 2024,
        convergence_pct: 0.01,
        max_horizon: 14,
    })
    .unwrap();
    let elapsed = start.elapsed();
    let mut gains: Vec<f64> = rows.iter().filter_map(|r| r.pct_gain.value()).collect();
    let undefined = rows
        .iter()
        .filter(|r| r.pct_gain == PctGain::Undefined)
        .count();
    gains.sort_by(f64::total_cmp);
    let median = match gains.len() {
        0 => f64::NAN,
        n if n % 2 == 1 => gains[n / 2],
        n => 0.5 * (gains[n / 2 - 1] + gains[n / 2]),
    };
    let max = gains.last().copied().unwrap_or(f64::NAN);
    let min = gains.first().copied().unwrap_or(f64::NAN);
    verdict(
        6,
        "%gain over 20 random instances",
        median >= 90.0 && max <= 100.0 + 1e-6 && elapsed < Duration::from_secs(900),
        &format!(
            "median {median:.3}, range [{min:.3}, {max:.6}] over {} defined rows ({undefined} rows with v_opt = v_nofb) in {:.1}s",
            gains.len(),
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn criterion_07_memory_sweep() {
    let reward = RewardModel::default_for(DELTA).unwrap();
    let grid = [0.5, 0.6, 0.7, 0.8, 0.9];
    let pts = sim::memory_sweep(5, &grid, &reward, 0.6, 10, None).unwrap();
    let first = pts[0];
    let eq_opt = (first.v_opt - first.v_nofb).abs();
    let eq_idx = (first.v_index - first.v_nofb).abs();
    let spreads: Vec<f64> = pts.iter().map(|m| m.v_opt - m.v_nofb).collect();
    let nondecreasing = spreads.windows(2).all(|w| w[1] >= w[0]);
    verdict(
        7,
        "memory sweep endpoint identity and widening spread",
        eq_opt <= 1e-9 && eq_idx <= 1e-9 && nondecreasing,
        &format!(
            "at p=0.5 |v_opt-v_nofb|={eq_opt:.1e} |v_index-v_nofb|={eq_idx:.1e}; spreads {}",
            spreads
                .iter()
                .map(|s| format!("{s:.5}"))
                .collect::<Vec<_>>()
                .join(" ")
        ),
    );
}

#[test]
fn criterion_08_identical_users_index_is_greedy() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut disagree = 0;
    let mut reward_ties = 0;
    let mut example = String::new();
    for _ in 0..20 {
        let (p, r): (f64, f64) = (rng.random_range(0.01..0.99), rng.random_range(0.01..0.99));
        let beta = rng.random_range(0.05..0.95);
        let n = rng.random_range(2..=6);
        let u = user(p, r);
        let sys = DownlinkSystem::new(vec![u.clone(); n], beta).unwrap();
        for _ in 0..500 {
            let state =
                SystemState::new((0..n).map(|_| Belief::new(rng.random()).unwrap()).collect());
            let a = whittle_policy(&sys, &state).unwrap().user;
            let b = greedy_policy(&sys, &state).unwrap().user;
            if a != b {
                disagree += 1;
                let (ba, bb) = (state.beliefs()[a], state.beliefs()[b]);
                if u.immediate_reward(ba) == u.immediate_reward(bb) {
                    reward_ties += 1;
                }
                if example.is_empty() {
                    example = format!(
                        " e.g. p={p:.3} r={r:.3} beta={beta:.3}: index picks {:.4}, greedy {:.4}",
                        ba.get(),
                        bb.get()
                    );
                }
            }
        }
    }
    verdict(
        8,
        "index policy equals greedy for identical users",
        disagree == 0,
        &format!("{disagree} of 10000 states disagree ({reward_ties} with equal immediate reward){example}"),
    );
}

#[test]
fn criterion_09_optimal_dominates() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..50 {
        let n = rng.random_range(1..=3);
        let users = (0..n)
            .map(|_| user(rng.random_range(0.01..0.99), rng.random_range(0.01..0.99)))
            .collect();
        let sys = DownlinkSystem::new(users, rng.random_range(0.05..0.95)).unwrap();
        let state = SystemState::new((0..n).map(|_| Belief::new(rng.random()).unwrap()).collect());
        let m = rng.random_range(1..=10);
        let (opt, _) = optimal_finite_horizon(&sys, &state, m).unwrap();
        for kind in [
            PolicyKind::Whittle,
            PolicyKind::Greedy,
            PolicyKind::Random,
            PolicyKind::NoFeedback,
        ] {
            let v = sim::evaluate_exact(&sys, kind, &state, m).unwrap();
            worst = worst.max(v - opt);
        }
    }
    verdict(
        9,
        "finite-horizon optimum dominates every policy",
        worst <= 1e-10,
        &format!("50 instances, max (policy - optimal) {worst:.2e}"),
    );
}

#[test]
fn criterion_10_index_trace_shapes() {
    let pi0 = Belief::new(0.3).unwrap();
    let mut failures = Vec::new();
    let mut full_sequence = Vec::new();
    for beta in [0.4, 0.6, 0.8, 0.9] {
        let pos: Vec<f64> = index_trace(&user(0.8, 0.2), beta, pi0, 20)
            .unwrap()
            .iter()
            .map(|t| t.2)
            .collect();
        if !pos.windows(2).all(|w| w[1] >= w[0]) {
            failures.push(format!("positive trace not monotone at beta={beta}"));
        }

        let neg_user = user(0.2, 0.8);
        let limit = WhittleIndex::new(&neg_user, beta)
            .unwrap()
            .index(neg_user.channel().steady_state());
        let neg: Vec<f64> = index_trace(&neg_user, beta, pi0, 20)
            .unwrap()
            .iter()
            .map(|t| t.2 - limit)
            .collect();
        let live: Vec<f64> = neg
            .iter()
            .copied()
            .take_while(|d| d.abs() > 1e-12)
            .collect();
        let alternates = live.len() >= 4 && live.windows(2).all(|w| w[0] * w[1] < 0.0);
        let even: Vec<f64> = neg.iter().step_by(2).map(|d| d.abs()).collect();
        let odd: Vec<f64> = neg.iter().skip(1).step_by(2).map(|d| d.abs()).collect();
        let shrinking = |v: &[f64]| v.windows(2).all(|w| w[1] <= w[0] + 1e-15);
        let envelope = neg.windows(2).all(|w| w[1].abs() <= w[0].abs() + 1e-15);
        if !envelope {
            full_sequence.push(beta.to_string());
        }
        if !alternates || !shrinking(&even) || !shrinking(&odd) {
            failures.push(format!(
                "negative trace at beta={beta}: alternates={alternates} upper={} lower={}",
                shrinking(&even),
                shrinking(&odd)
            ));
        }
    }
    verdict(
        10,
        "index trace shapes from belief 0.3",
        failures.is_empty(),
        &if failures.is_empty() {
            format!(
                "monotone for (0.8,0.2); alternating around W(pi0) with shrinking upper and lower envelopes for (0.2,0.8); beta in {{0.4,0.6,0.8,0.9}}; |W - W(pi0)| itself not monotone at beta in {{{}}}",
                full_sequence.join(",")
            )
        } else {
            failures.join("; ")
        },
    );
}

fn csv_artifacts() -> Vec<Vec<u8>> {
    let table = sim::random_instance_table(&TableConfig {
        count: 8,
        n_min: 2,
        n_max: 4,
        beta_min: 0.45,
        beta_max: 0.67,
        reward: RewardModel::default_for(DELTA).unwrap(),
        seed: 11,
        convergence_pct: 0.01,
        max_horizon: 14,
    })
    .unwrap();
    let sys = DownlinkSystem::new(
        HORIZON_PAIRS.iter().map(|&(p, r)| user(p, r)).collect(),
        0.8,
    )
    .unwrap();
    let state = sys.steady_state();
    let evals: Vec<report::EvaluationRow> = PolicyKind::ALL
        .into_iter()
        .map(|kind| report::EvaluationRow {
            policy: kind.name().into(),
            mode: "monte-carlo".into(),
            horizon: 8,
            runs: 4000,
            seed: 11,
            estimate: sim::evaluate_monte_carlo(&sys, kind, &state, 8, 4000, 11).unwrap(),
        })
        .collect();
    let memory = sim::memory_sweep(
        3,
        &[0.5, 0.7, 0.9],
        &RewardModel::default_for(DELTA).unwrap(),
        0.6,
        6,
        None,
    )
    .unwrap();
    vec![
        report::experiment_table(&table).to_csv_bytes().unwrap(),
        report::channel_table(&table).to_csv_bytes().unwrap(),
        report::evaluation_table(&evals).to_csv_bytes().unwrap(),
        report::memory_table(&memory).to_csv_bytes().unwrap(),
    ]
}

#[test]
fn criterion_11_thread_count_independence() {
    let runs: Vec<Vec<Vec<u8>>> = [1, 2, 4, 8]
        .iter()
        .map(|&n| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .unwrap()
                .install(csv_artifacts)
        })
        .collect();
    let identical = runs.iter().all(|r| r == &runs[0]);
    let bytes: usize = runs[0].iter().map(Vec::len).sum();
    verdict(
        11,
        "byte-identical CSV across thread counts",
        identical,
        &format!("table, channels, Monte Carlo and memory-sweep CSVs ({bytes} bytes) with 1, 2, 4, 8 threads"),
    );
}
