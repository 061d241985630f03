//! Whittle index of a single user.
//!
//! `W(pi)` is the subsidy at which transmitting and idling at belief `pi` are
//! equally good. Setting the threshold to `pi` fixes which closed-form
//! anchor values apply, and the indifference condition is then linear in
//! `W`, so each belief region has an explicit formula.

use rayon::prelude::*;

use crate::channel::{Belief, Correlation, HittingTime};
use crate::error::{Error, Result};
use crate::subsidy::{
    always_active_anchors, anchor_forms, value_from_anchors, NegativeConstants, OracleSolution,
    SubsidyProblem, ThresholdClass, DEFAULT_MAX_SWEEPS,
};
use crate::user::{check_discount, UserModel};

/// Bisection width for the oracle index search.
const ORACLE_TOL: f64 = 1e-10;

/// Tolerance of the threshold monotonicity check.
pub const INDEXABILITY_TOL: f64 = 1e-7;

/// Belief region selecting the closed-form index expression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum IndexBranch {
    /// `pi >= p`, positive correlation.
    PosHigh,
    /// `pi0 <= pi < p`.
    PosMid,
    /// `r <= pi < pi0`.
    PosLowMid,
    /// `pi < r`.
    PosLow,
    /// `pi >= r`, negative correlation.
    NegHigh,
    /// `Q(p) <= pi < r`.
    NegUpper,
    /// `pi0 <= pi < Q(p)`.
    NegMid,
    /// `p <= pi < pi0`.
    NegLowMid,
    /// `pi < p`.
    NegLow,
}

impl IndexBranch {
    pub const ALL: [IndexBranch; 9] = [
        IndexBranch::PosHigh,
        IndexBranch::PosMid,
        IndexBranch::PosLowMid,
        IndexBranch::PosLow,
        IndexBranch::NegHigh,
        IndexBranch::NegUpper,
        IndexBranch::NegMid,
        IndexBranch::NegLowMid,
        IndexBranch::NegLow,
    ];
}

/// A single index evaluation request.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexQuery {
    pub user: UserModel,
    pub beta: f64,
    pub pi: Belief,
}

/// Index calculator for one user with the per-user constants precomputed.
#[derive(Debug, Clone)]
pub struct WhittleIndex {
    user: UserModel,
    beta: f64,
    a_p: f64,
    a_r: f64,
    neg: Option<NegativeConstants>,
}

impl WhittleIndex {
    pub fn new(user: &UserModel, beta: f64) -> Result<Self> {
        check_discount(beta)?;
        let (a_p, a_r) = always_active_anchors(user, beta);
        let neg = match user.channel().correlation() {
            Correlation::Negative => Some(NegativeConstants::new(user, beta)),
            Correlation::Positive => None,
        };
        Ok(WhittleIndex {
            user: user.clone(),
            beta,
            a_p,
            a_r,
            neg,
        })
    }

    pub fn user(&self) -> &UserModel {
        &self.user
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn branch(&self, pi: Belief) -> IndexBranch {
        let ch = self.user.channel();
        let (p, r) = (ch.p(), ch.r());
        let pi = pi.get();
        match ch.correlation() {
            Correlation::Positive => {
                if pi >= p {
                    IndexBranch::PosHigh
                } else if ch.reaches_steady(pi) {
                    IndexBranch::PosMid
                } else if pi >= r {
                    IndexBranch::PosLowMid
                } else {
                    IndexBranch::PosLow
                }
            }
            Correlation::Negative => {
                if pi >= r {
                    IndexBranch::NegHigh
                } else if pi >= ch.q_raw(p) {
                    IndexBranch::NegUpper
                } else if ch.reaches_steady(pi) {
                    IndexBranch::NegMid
                } else if pi >= p {
                    IndexBranch::NegLowMid
                } else {
                    IndexBranch::NegLow
                }
            }
        }
    }

    /// Closed-form index `W(pi)`.
    pub fn index(&self, pi: Belief) -> f64 {
        let ch = self.user.channel();
        let (p, r) = (ch.p(), ch.r());
        let beta = self.beta;
        let x = pi.get();
        let rew = |y: f64| self.user.reward_raw(y);
        let qx = ch.q_raw(x);
        // Coefficients of V(p) and V(r) in the transmit-minus-idle balance
        // when the next belief Q(pi) is above the threshold.
        let k = x - beta * qx;
        let m = (1.0 - x) - beta * (1.0 - qx);
        match self.branch(pi) {
            IndexBranch::PosHigh | IndexBranch::NegHigh => rew(x),
            IndexBranch::PosMid => {
                (beta * x * rew(p) + (1.0 - beta * p) * rew(x)) / (1.0 + beta * x - beta * p)
            }
            IndexBranch::PosLowMid => {
                let l = match ch.hitting_time(Belief::from_rounded(r), pi) {
                    HittingTime::Finite(l) => l,
                    HittingTime::Infinite => unreachable!("belief below steady state"),
                };
                let q = ch.q_iterate_raw(r, l);
                let bl = crate::channel::pow_u64(beta, l);
                let gamma = (1.0 - beta) * (1.0 - beta * p) * (1.0 - bl * beta)
                    + (1.0 - beta).powi(2) * bl * beta * q;
                let lambda = (1.0 - beta) * bl * ((1.0 - beta * p) * rew(q) + beta * q * rew(p));
                let n_omega = (1.0 - bl) * (1.0 - beta * p);
                let alpha0 = rew(x) - beta * rew(qx) + beta * k * rew(p) / (1.0 - beta * p);
                let c = beta * (beta * k * (1.0 - p) + m * (1.0 - beta * p)) / (1.0 - beta * p);
                (alpha0 * gamma + c * lambda) / (gamma - c * n_omega)
            }
            IndexBranch::PosLow | IndexBranch::NegLow => {
                rew(x) - beta * rew(qx) + beta * k * self.a_p + beta * m * self.a_r
            }
            IndexBranch::NegUpper => {
                let stay = 1.0 - beta * (1.0 - r);
                let num = (1.0 - beta) * stay * rew(x) + beta * (1.0 - beta) * (1.0 - x) * rew(r);
                let den = (1.0 - beta * x) * stay - beta * beta * (1.0 - x) * r;
                num / den
            }
            IndexBranch::NegMid => {
                let c = self.neg.expect("negative constants");
                let stay = 1.0 - beta * (1.0 - r);
                let num = (1.0 - beta) * rew(x) * c.delta
                    + beta * (1.0 - beta) * x * c.omega
                    + beta * (1.0 - beta) * (1.0 - x) * c.upsilon;
                let den = c.delta
                    - beta * (1.0 - beta) * stay * x
                    - (1.0 - beta) * beta * beta * r * (1.0 - x);
                num / den
            }
            IndexBranch::NegLowMid => {
                let c = self.neg.expect("negative constants");
                let stay = 1.0 - beta * (1.0 - r);
                let num =
                    (rew(x) - beta * rew(qx)) * c.delta + beta * k * c.omega + beta * m * c.upsilon;
                let den = c.delta - beta * k * stay - beta * beta * r * m;
                num / den
            }
        }
    }

    /// Residual of the indifference condition at `pi` with subsidy `W(pi)`
    /// and threshold `pi`: idle value minus active value.
    pub fn residual(&self, pi: Belief) -> f64 {
        let w = self.index(pi);
        let x = pi.get();
        let level = Some(x);
        let (fp, fr) = anchor_forms(&self.user, self.beta, level);
        let (v_p, v_r) = (fp.at(w), fr.at(w));
        let qx = self.user.channel().q_raw(x);
        let idle =
            w + self.beta * value_from_anchors(&self.user, self.beta, w, level, v_p, v_r, qx);
        let active = self.user.reward_raw(x) + self.beta * (x * v_p + (1.0 - x) * v_r);
        idle - active
    }
}

/// Closed-form Whittle index for a query.
pub fn whittle_index(q: &IndexQuery) -> Result<f64> {
    Ok(WhittleIndex::new(&q.user, q.beta)?.index(q.pi))
}

/// Residual of the implicit index equation; near zero when the closed form
/// is correct.
pub fn index_residual(q: &IndexQuery) -> Result<f64> {
    Ok(WhittleIndex::new(&q.user, q.beta)?.residual(q.pi))
}

/// Result of the bisection index oracle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleIndex {
    pub omega: f64,
    /// `false` when idle minus active had constant sign on `[delta, 1]` and
    /// `omega` is the corresponding endpoint.
    pub bracketed: bool,
}

/// Index computed by bisecting the subsidy on idle-minus-active value, both
/// from the value-iteration oracle.
pub fn index_oracle(q: &IndexQuery) -> Result<OracleIndex> {
    check_discount(q.beta)?;
    let delta = q.user.delta();
    let x = q.pi.get();
    let mut warm: Option<(f64, f64)> = None;
    let mut gap = |omega: f64| -> Result<f64> {
        let prob = SubsidyProblem::new(q.user.clone(), q.beta, omega)?;
        let sol = OracleSolution::solve_from(&prob, DEFAULT_MAX_SWEEPS, warm)?;
        warm = Some((sol.v_p(), sol.v_r()));
        Ok(sol.idle_value_raw(x) - sol.active_value_raw(x))
    };
    if gap(delta)? >= 0.0 {
        return Ok(OracleIndex {
            omega: delta,
            bracketed: false,
        });
    }
    if gap(1.0)? < 0.0 {
        return Ok(OracleIndex {
            omega: 1.0,
            bracketed: false,
        });
    }
    let (mut lo, mut hi) = (delta, 1.0);
    while hi - lo > ORACLE_TOL {
        let mid = 0.5 * (lo + hi);
        if gap(mid)? >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(OracleIndex {
        omega: 0.5 * (lo + hi),
        bracketed: true,
    })
}

/// Thresholds along a subsidy grid.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexabilityReport {
    pub points: Vec<(f64, ThresholdClass)>,
    /// Smallest increment between consecutive interior thresholds.
    pub min_increment: f64,
}

/// Solves the threshold at every grid subsidy and checks that interior
/// thresholds strictly increase.
pub fn indexability_scan(
    user: &UserModel,
    beta: f64,
    omega_grid: &[f64],
) -> Result<IndexabilityReport> {
    check_discount(beta)?;
    if omega_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidConfig(
            "subsidy grid must be strictly increasing".into(),
        ));
    }
    let points = omega_grid
        .par_iter()
        .map(|&omega| {
            let class = SubsidyProblem::new(user.clone(), beta, omega)?.classify_threshold()?;
            Ok((omega, class))
        })
        .collect::<Result<Vec<_>>>()?;
    let interior: Vec<(f64, f64)> = points
        .iter()
        .filter_map(|(w, c)| c.interior().map(|b| (*w, b.get())))
        .collect();
    let mut min_increment = f64::INFINITY;
    for pair in interior.windows(2) {
        let (lo, hi) = (pair[0], pair[1]);
        let inc = hi.1 - lo.1;
        min_increment = min_increment.min(inc);
        if inc < -INDEXABILITY_TOL || inc == 0.0 {
            return Err(Error::MonotonicityViolation {
                omega_lo: lo.0,
                pi_lo: lo.1,
                omega_hi: hi.0,
                pi_hi: hi.1,
            });
        }
    }
    Ok(IndexabilityReport {
        points,
        min_increment,
    })
}

/// `(t, Q^t(pi0), W(Q^t(pi0)))` along the idle belief trajectory, for
/// `t = 0..horizon`.
pub fn index_trace(
    user: &UserModel,
    beta: f64,
    pi0: Belief,
    horizon: usize,
) -> Result<Vec<(usize, f64, f64)>> {
    if horizon == 0 {
        return Err(Error::InvalidConfig(
            "trace horizon must be at least 1".into(),
        ));
    }
    let w = WhittleIndex::new(user, beta)?;
    let ch = user.channel();
    Ok((0..horizon)
        .map(|t| {
            let b = ch.q_iterate(pi0, t as u64);
            (t, b.get(), w.index(b))
        })
        .collect())
}

/// `(pi, branch, W(pi))` on `points` evenly spaced beliefs in `[0, 1]`.
pub fn index_curve(
    user: &UserModel,
    beta: f64,
    points: usize,
) -> Result<Vec<(f64, IndexBranch, f64)>> {
    if points < 2 {
        return Err(Error::InvalidConfig(
            "an index curve needs at least 2 points".into(),
        ));
    }
    let w = WhittleIndex::new(user, beta)?;
    Ok((0..points)
        .map(|i| {
            let b = Belief::from_rounded(i as f64 / (points - 1) as f64);
            (b.get(), w.branch(b), w.index(b))
        })
        .collect())
}
