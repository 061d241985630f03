//! Single-user subsidy problem.
//!
//! Each slot the controller either transmits (earning `R(pi)`, after which
//! feedback resets the belief to `p` or `r`) or idles (earning the subsidy
//! `omega` while the belief drifts to `Q(pi)`). The optimal policy is a
//! threshold rule: transmit iff `pi > pi*(omega)`. Given the threshold, the
//! values at the two feedback beliefs `p` and `r` have closed forms that are
//! affine in `omega`; every other value follows from them by idling until
//! the belief crosses the threshold.

mod oracle;

pub use oracle::{OracleSolution, ValueTable};

use crate::channel::{Belief, Correlation, HittingTime};
use crate::error::{Error, Result};
use crate::index::WhittleIndex;
use crate::user::{check_discount, UserModel};

/// Tolerance for `|W(pi*) - omega|` when checking a supplied threshold.
pub const THRESHOLD_CONSISTENCY_TOL: f64 = 1e-6;

/// Bisection width for the oracle threshold search.
const THRESHOLD_BISECTION_TOL: f64 = 1e-11;

/// Default cap on value-iteration sweeps.
pub const DEFAULT_MAX_SWEEPS: usize = 200_000;

/// Threshold of the optimal subsidy policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdClass {
    /// `omega <= delta`: transmit at every belief.
    AlwaysActive,
    /// Transmit iff the belief is strictly above the threshold.
    Interior(Belief),
    /// `omega >= 1`: never transmit.
    AlwaysIdle,
}

impl ThresholdClass {
    /// Threshold as a belief level; `None` for always-active.
    pub(crate) fn level(self) -> Option<f64> {
        match self {
            ThresholdClass::AlwaysActive => None,
            ThresholdClass::Interior(b) => Some(b.get()),
            ThresholdClass::AlwaysIdle => Some(1.0),
        }
    }

    pub fn interior(self) -> Option<Belief> {
        match self {
            ThresholdClass::Interior(b) => Some(b),
            _ => None,
        }
    }
}

/// Optimal discounted values at the two feedback beliefs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnchorValues {
    pub v_p: f64,
    pub v_r: f64,
}

/// `base + slope * omega`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Affine {
    pub base: f64,
    pub slope: f64,
}

impl Affine {
    const fn constant(base: f64) -> Self {
        Affine { base, slope: 0.0 }
    }

    #[inline]
    pub fn at(self, omega: f64) -> f64 {
        self.base + self.slope * omega
    }
}

/// Expected discounted reward of transmitting in every slot, evaluated at
/// the two feedback beliefs. Solves
///
/// ```text
/// A_p = R(p) + beta (p A_p + (1 - p) A_r)
/// A_r = R(r) + beta (r A_p + (1 - r) A_r)
/// ```
pub(crate) fn always_active_anchors(user: &UserModel, beta: f64) -> (f64, f64) {
    let ch = user.channel();
    let (p, r) = (ch.p(), ch.r());
    let (rp, rr) = (user.reward_raw(p), user.reward_raw(r));
    let a11 = 1.0 - beta * p;
    let a12 = -beta * (1.0 - p);
    let a21 = -beta * r;
    let a22 = 1.0 - beta * (1.0 - r);
    let det = a11 * a22 - a12 * a21;
    ((rp * a22 - a12 * rr) / det, (a11 * rr - a21 * rp) / det)
}

/// Closed-form anchor values as affine functions of `omega`, given the
/// threshold level (`None` = transmit everywhere).
pub(crate) fn anchor_forms(user: &UserModel, beta: f64, level: Option<f64>) -> (Affine, Affine) {
    let ch = user.channel();
    let (p, r) = (ch.p(), ch.r());
    let idle_forever = Affine {
        base: 0.0,
        slope: 1.0 / (1.0 - beta),
    };
    let active = || {
        let (a_p, a_r) = always_active_anchors(user, beta);
        (Affine::constant(a_p), Affine::constant(a_r))
    };
    let Some(th) = level else {
        return active();
    };
    let rp = user.reward_raw(p);
    let rr = user.reward_raw(r);
    match ch.correlation() {
        Correlation::Positive => {
            if th < r {
                active()
            } else if !ch.reaches_steady(th) {
                // r idles for L slots, then transmits at q = Q^L(r).
                let l = match ch.hitting_time(Belief::from_rounded(r), Belief::from_rounded(th)) {
                    HittingTime::Finite(l) => l,
                    HittingTime::Infinite => unreachable!("threshold below steady state"),
                };
                let q = ch.q_iterate_raw(r, l);
                let bl = crate::channel::pow_u64(beta, l);
                let gamma = (1.0 - beta) * (1.0 - beta * p) * (1.0 - bl * beta)
                    + (1.0 - beta).powi(2) * bl * beta * q;
                let lambda =
                    (1.0 - beta) * bl * ((1.0 - beta * p) * user.reward_raw(q) + beta * q * rp);
                let v_r = Affine {
                    base: lambda / gamma,
                    slope: (1.0 - bl) * (1.0 - beta * p) / gamma,
                };
                let v_p = Affine {
                    base: (rp + beta * (1.0 - p) * v_r.base) / (1.0 - beta * p),
                    slope: beta * (1.0 - p) * v_r.slope / (1.0 - beta * p),
                };
                (v_p, v_r)
            } else if th < p {
                let v_p = Affine {
                    base: rp / (1.0 - beta * p),
                    slope: beta * (1.0 - p) / ((1.0 - beta) * (1.0 - beta * p)),
                };
                (v_p, idle_forever)
            } else {
                (idle_forever, idle_forever)
            }
        }
        Correlation::Negative => {
            let qp = ch.q_raw(p);
            if th < p {
                active()
            } else if th < qp {
                let c = NegativeConstants::new(user, beta);
                let v_p = Affine {
                    base: c.omega / c.delta,
                    slope: (1.0 - beta * (1.0 - r)) / c.delta,
                };
                let v_r = Affine {
                    base: c.upsilon / c.delta,
                    slope: beta * r / c.delta,
                };
                (v_p, v_r)
            } else if th < r {
                let denom = 1.0 - beta * (1.0 - r);
                let v_r = Affine {
                    base: rr / denom,
                    slope: beta * r / ((1.0 - beta) * denom),
                };
                (idle_forever, v_r)
            } else {
                (idle_forever, idle_forever)
            }
        }
    }
}

/// Constants of the negative-correlation branch where `p` idles exactly one
/// slot before transmitting at `Q(p)` and `r` transmits.
#[derive(Debug, Clone, Copy)]
pub(crate) struct NegativeConstants {
    pub delta: f64,
    pub omega: f64,
    pub upsilon: f64,
}

impl NegativeConstants {
    pub fn new(user: &UserModel, beta: f64) -> Self {
        let ch = user.channel();
        let (p, r) = (ch.p(), ch.r());
        let qp = ch.q_raw(p);
        let rqp = user.reward_raw(qp);
        let rr = user.reward_raw(r);
        let stay = 1.0 - beta * (1.0 - r);
        let b2 = beta * beta;
        NegativeConstants {
            delta: stay * (1.0 - b2 * qp) - b2 * beta * r * (1.0 - qp),
            omega: beta * stay * rqp + b2 * (1.0 - qp) * rr,
            upsilon: b2 * r * rqp + (1.0 - b2 * qp) * rr,
        }
    }
}

/// Discounted value at `pi` under threshold `level`, given anchor values.
pub(crate) fn value_from_anchors(
    user: &UserModel,
    beta: f64,
    omega: f64,
    level: Option<f64>,
    v_p: f64,
    v_r: f64,
    pi: f64,
) -> f64 {
    let ch = user.channel();
    let wait = match level {
        None => HittingTime::Finite(0),
        Some(th) => ch.hitting_time(Belief::from_rounded(pi), Belief::from_rounded(th)),
    };
    match wait {
        HittingTime::Infinite => omega / (1.0 - beta),
        HittingTime::Finite(k) => {
            let q = ch.q_iterate_raw(pi, k);
            let bk = crate::channel::pow_u64(beta, k);
            let idle_part = if k == 0 {
                0.0
            } else {
                (1.0 - bk) / (1.0 - beta) * omega
            };
            idle_part + bk * (user.reward_raw(q) + beta * (q * v_p + (1.0 - q) * v_r))
        }
    }
}

/// The subsidy problem for one user at a fixed discount and subsidy.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsidyProblem {
    user: UserModel,
    beta: f64,
    omega: f64,
}

impl SubsidyProblem {
    pub fn new(user: UserModel, beta: f64, omega: f64) -> Result<Self> {
        check_discount(beta)?;
        if !omega.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "subsidy {omega} is not finite"
            )));
        }
        Ok(SubsidyProblem { user, beta, omega })
    }

    pub fn user(&self) -> &UserModel {
        &self.user
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    /// Same user and discount, different subsidy.
    pub fn with_omega(&self, omega: f64) -> Result<Self> {
        SubsidyProblem::new(self.user.clone(), self.beta, omega)
    }

    /// Threshold class; interior thresholds are located with the
    /// value-iteration oracle.
    pub fn classify_threshold(&self) -> Result<ThresholdClass> {
        if self.omega >= 1.0 {
            Ok(ThresholdClass::AlwaysIdle)
        } else if self.omega <= self.user.delta() {
            Ok(ThresholdClass::AlwaysActive)
        } else {
            self.solve_threshold()
        }
    }

    /// Expected discounted reward of transmitting in every slot from `start`.
    pub fn always_active_value(&self, start: Belief) -> f64 {
        let (a_p, a_r) = always_active_anchors(&self.user, self.beta);
        let s = start.get();
        self.user.reward_raw(s) + self.beta * (s * a_p + (1.0 - s) * a_r)
    }

    /// Closed-form `V(p)` and `V(r)` for the given threshold, which must be
    /// the optimal one for this subsidy.
    pub fn anchor_values(&self, threshold: ThresholdClass) -> Result<AnchorValues> {
        self.check_threshold(threshold)?;
        let (fp, fr) = anchor_forms(&self.user, self.beta, threshold.level());
        Ok(AnchorValues {
            v_p: fp.at(self.omega),
            v_r: fr.at(self.omega),
        })
    }

    fn check_threshold(&self, threshold: ThresholdClass) -> Result<()> {
        let fail = |reason: String| {
            Err(Error::InconsistentThreshold {
                threshold,
                omega: self.omega,
                reason,
            })
        };
        let delta = self.user.delta();
        match threshold {
            ThresholdClass::AlwaysActive if self.omega > delta => {
                fail(format!("always-active requires omega <= delta = {delta}"))
            }
            ThresholdClass::AlwaysIdle if self.omega < 1.0 => {
                fail("always-idle requires omega >= 1".into())
            }
            ThresholdClass::Interior(pi_star) => {
                if !(self.omega > delta && self.omega < 1.0) {
                    return fail(format!("interior threshold requires {delta} < omega < 1"));
                }
                if !(pi_star.get() > 0.0 && pi_star.get() < 1.0) {
                    return fail("interior threshold must lie in (0, 1)".into());
                }
                let w = WhittleIndex::new(&self.user, self.beta)?.index(pi_star);
                if (w - self.omega).abs() > THRESHOLD_CONSISTENCY_TOL {
                    return fail(format!("index at threshold is {w}"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Optimal value at `pi` from the anchors: idle until the belief crosses
    /// the threshold, then transmit.
    pub fn value_at(&self, threshold: ThresholdClass, anchors: AnchorValues, pi: Belief) -> f64 {
        value_from_anchors(
            &self.user,
            self.beta,
            self.omega,
            threshold.level(),
            anchors.v_p,
            anchors.v_r,
            pi.get(),
        )
    }

    /// Tabulates the optimal value on a uniform grid of `grid_size` points
    /// (plus `p`, `r`, the steady state, `Q(p)` and `Q(r)`) by iterating the
    /// Bellman operator.
    pub fn value_iteration(&self, grid_size: usize, max_sweeps: usize) -> Result<ValueTable> {
        ValueTable::build(self, grid_size, max_sweeps)
    }

    /// Locates the interior threshold by bisecting the sign change of
    /// active minus idle value under the oracle solution.
    pub fn solve_threshold(&self) -> Result<ThresholdClass> {
        let delta = self.user.delta();
        if !(self.omega > delta && self.omega < 1.0) {
            return Err(Error::SubsidyOutOfRange {
                omega: self.omega,
                delta,
            });
        }
        let oracle = OracleSolution::solve(self, DEFAULT_MAX_SWEEPS)?;
        let gap = |pi: f64| oracle.active_value_raw(pi) - oracle.idle_value_raw(pi);
        let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
        let (g_lo, g_hi) = (gap(lo), gap(hi));
        if !(g_lo <= 0.0 && g_hi > 0.0) {
            return Err(Error::NoSignChange(format!(
                "active - idle is {g_lo:e} at 0 and {g_hi:e} at 1"
            )));
        }
        while hi - lo > THRESHOLD_BISECTION_TOL {
            let mid = 0.5 * (lo + hi);
            if gap(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(ThresholdClass::Interior(Belief::from_rounded(
            0.5 * (lo + hi),
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::MarkovChannel;
    use crate::reward::RewardModel;

    fn user(p: f64, r: f64) -> UserModel {
        UserModel::with_default_reward(p, r, 0.2).unwrap()
    }

    fn b(x: f64) -> Belief {
        Belief::new(x).unwrap()
    }

    #[test]
    fn classify_threshold_cases() {
        let u = user(0.8, 0.2);
        let prob = |w| SubsidyProblem::new(u.clone(), 0.9, w).unwrap();
        assert_eq!(
            prob(1.2).classify_threshold().unwrap(),
            ThresholdClass::AlwaysIdle
        );
        assert_eq!(
            prob(0.15).classify_threshold().unwrap(),
            ThresholdClass::AlwaysActive
        );
        let pi = prob(0.6).classify_threshold().unwrap().interior().unwrap();
        assert!(pi.get() > 0.0 && pi.get() < 1.0);
    }

    #[test]
    fn always_active_value_examples() {
        let u = user(0.8, 0.2);
        let zero = SubsidyProblem::new(u.clone(), 0.0, 0.5).unwrap();
        for x in [0.0, 0.3, 0.7, 1.0] {
            assert_eq!(zero.always_active_value(b(x)), u.immediate_reward(b(x)));
        }
        let iid = UserModel::new(
            MarkovChannel::new(0.5, 0.5, 0.2).unwrap(),
            RewardModel::no_estimation(0.2).unwrap(),
        )
        .unwrap();
        let prob = SubsidyProblem::new(iid, 0.5, 0.0).unwrap();
        assert!((prob.always_active_value(b(0.5)) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn always_idle_anchors() {
        let prob = SubsidyProblem::new(user(0.8, 0.2), 0.6, 1.2).unwrap();
        let a = prob.anchor_values(ThresholdClass::AlwaysIdle).unwrap();
        assert!((a.v_p - 3.0).abs() < 1e-12);
        assert!((a.v_r - 3.0).abs() < 1e-12);
        for x in [0.0, 0.5, 1.0] {
            assert!((prob.value_at(ThresholdClass::AlwaysIdle, a, b(x)) - 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn always_active_anchors_match_direct_values() {
        let prob = SubsidyProblem::new(user(0.3, 0.7), 0.8, 0.1).unwrap();
        let a = prob.anchor_values(ThresholdClass::AlwaysActive).unwrap();
        assert!((a.v_p - prob.always_active_value(b(0.3))).abs() < 1e-12);
        assert!((a.v_r - prob.always_active_value(b(0.7))).abs() < 1e-12);
        let pi = b(0.45);
        let expected = prob.user().immediate_reward(pi) + 0.8 * (0.45 * a.v_p + 0.55 * a.v_r);
        assert!((prob.value_at(ThresholdClass::AlwaysActive, a, pi) - expected).abs() < 1e-12);
    }

    #[test]
    fn inconsistent_threshold_rejected() {
        let prob = SubsidyProblem::new(user(0.8, 0.2), 0.9, 0.6).unwrap();
        assert!(matches!(
            prob.anchor_values(ThresholdClass::AlwaysIdle),
            Err(Error::InconsistentThreshold { .. })
        ));
        assert!(matches!(
            prob.anchor_values(ThresholdClass::AlwaysActive),
            Err(Error::InconsistentThreshold { .. })
        ));
        assert!(matches!(
            prob.anchor_values(ThresholdClass::Interior(b(0.05))),
            Err(Error::InconsistentThreshold { .. })
        ));
    }

    #[test]
    fn solve_threshold_rejects_out_of_range() {
        let prob = SubsidyProblem::new(user(0.8, 0.2), 0.9, 0.1).unwrap();
        assert!(matches!(
            prob.solve_threshold(),
            Err(Error::SubsidyOutOfRange { .. })
        ));
    }

    #[test]
    fn threshold_boundary_behaviour() {
        let u = user(0.8, 0.2);
        let near_delta = SubsidyProblem::new(u.clone(), 0.9, 0.2 + 1e-6)
            .unwrap()
            .solve_threshold()
            .unwrap();
        assert!(near_delta.interior().unwrap().get() < 1e-3);
        let near_one = SubsidyProblem::new(u, 0.9, 1.0 - 1e-6)
            .unwrap()
            .solve_threshold()
            .unwrap();
        assert!(near_one.interior().unwrap().get() > 0.999);
    }
}
