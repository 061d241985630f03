//! Two-state (Gilbert–Elliott) channel model and the scheduler's belief
//! dynamics.
//!
//! A channel sits in a high state `h` (rate 1) or a low state `l` (rate
//! `delta`). Transitions are Markov with `p = P(h -> h)` and
//! `r = P(l -> h)`. The scheduler never sees the state directly; it tracks
//! the belief `pi = P(state = h)` which evolves as
//!
//! ```text
//! scheduled, feedback h :  pi+ = p
//! scheduled, feedback l :  pi+ = r
//! idle                  :  pi+ = Q(pi) = pi*p + (1 - pi)*r
//! ```

use std::fmt;

use crate::error::{Error, Result};

/// Largest rounding excursion outside [0, 1] that [`Belief::from_rounded`]
/// will absorb.
const CLAMP_SLACK: f64 = 1e-12;

/// Probability that a channel is currently in its high state.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Belief(f64);

impl Belief {
    pub const ZERO: Belief = Belief(0.0);
    pub const ONE: Belief = Belief(1.0);

    pub fn new(value: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&value) {
            Ok(Belief(value))
        } else {
            Err(Error::InvalidBelief(value))
        }
    }

    /// Wraps the result of belief arithmetic, absorbing sub-1e-12 rounding
    /// outside the unit interval.
    pub(crate) fn from_rounded(value: f64) -> Self {
        debug_assert!(
            value > -CLAMP_SLACK && value < 1.0 + CLAMP_SLACK,
            "belief arithmetic drifted to {value}"
        );
        Belief(value.clamp(0.0, 1.0))
    }

    #[inline]
    pub fn get(self) -> f64 {
        self.0
    }
}

impl fmt::Display for Belief {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl TryFrom<f64> for Belief {
    type Error = Error;

    fn try_from(value: f64) -> Result<Self> {
        Belief::new(value)
    }
}

/// Sign of the channel's one-step correlation.
///
/// `p = r` (memoryless) is grouped with the negative case.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Correlation {
    Positive,
    Negative,
}

/// Number of idle slots before the belief first rises strictly above a
/// threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum HittingTime {
    Finite(u64),
    Infinite,
}

impl HittingTime {
    pub fn finite(self) -> Option<u64> {
        match self {
            HittingTime::Finite(t) => Some(t),
            HittingTime::Infinite => None,
        }
    }
}

/// Per-user two-state Markov channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarkovChannel {
    p: f64,
    r: f64,
    delta: f64,
}

impl MarkovChannel {
    pub fn new(p: f64, r: f64, delta: f64) -> Result<Self> {
        let bad = |reason| {
            Err(Error::InvalidChannel {
                p,
                r,
                delta,
                reason,
            })
        };
        if !(0.0..=1.0).contains(&p) {
            return bad("p must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&r) {
            return bad("r must lie in [0, 1]");
        }
        if !(0.0..1.0).contains(&delta) {
            return bad("delta must lie in [0, 1)");
        }
        if p == 1.0 && r == 0.0 {
            return bad("(p, r) = (1, 0) has no unique steady state");
        }
        Ok(MarkovChannel { p, r, delta })
    }

    #[inline]
    pub fn p(&self) -> f64 {
        self.p
    }

    #[inline]
    pub fn r(&self) -> f64 {
        self.r
    }

    #[inline]
    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn correlation(&self) -> Correlation {
        if self.p > self.r {
            Correlation::Positive
        } else {
            Correlation::Negative
        }
    }

    /// `p - r`, the contraction factor of the idle map.
    #[inline]
    pub fn memory(&self) -> f64 {
        self.p - self.r
    }

    /// Belief after scheduling the user and receiving exact state feedback.
    pub fn feedback_update(&self, observed_high: bool) -> Belief {
        Belief(if observed_high { self.p } else { self.r })
    }

    /// One idle step of the belief, `Q(pi)`.
    pub fn q_step(&self, pi: Belief) -> Belief {
        Belief::from_rounded(self.q_raw(pi.get()))
    }

    #[inline]
    pub(crate) fn q_raw(&self, pi: f64) -> f64 {
        pi * self.p + (1.0 - pi) * self.r
    }

    /// `t` idle steps of the belief, `Q^t(pi)`, in closed form.
    pub fn q_iterate(&self, pi: Belief, t: u64) -> Belief {
        Belief::from_rounded(self.q_iterate_raw(pi.get(), t))
    }

    pub(crate) fn q_iterate_raw(&self, pi: f64, t: u64) -> f64 {
        let gap = self.r - (1.0 + self.r - self.p) * pi;
        (self.r - pow_u64(self.memory(), t) * gap) / (1.0 + self.r - self.p)
    }

    /// Stationary probability of the high state, `r / (1 + r - p)`.
    pub fn steady_state(&self) -> Belief {
        Belief::from_rounded(self.steady_raw())
    }

    #[inline]
    pub(crate) fn steady_raw(&self) -> f64 {
        self.r / (1.0 + self.r - self.p)
    }

    /// `x >= pi0` up to a few ulps; the computed steady state of e.g.
    /// (0.8, 0.2) is 0.5000000000000001.
    #[inline]
    pub(crate) fn reaches_steady(&self, x: f64) -> bool {
        let steady = self.steady_raw();
        x >= steady - 4.0 * f64::EPSILON * steady
    }

    /// Idle slots needed for the belief to exceed `threshold` starting from
    /// `pi`.
    pub fn hitting_time(&self, pi: Belief, threshold: Belief) -> HittingTime {
        let (pi, th) = (pi.get(), threshold.get());
        if pi > th {
            return HittingTime::Finite(0);
        }
        match self.correlation() {
            Correlation::Negative => {
                if self.q_raw(pi) > th {
                    HittingTime::Finite(1)
                } else {
                    HittingTime::Infinite
                }
            }
            Correlation::Positive => {
                let steady = self.steady_raw();
                if self.reaches_steady(th) {
                    return HittingTime::Infinite;
                }
                // pi <= th < steady. Q^t(pi) = steady - d^t (steady - pi), so we
                // need the first t with d^t * far < near.
                let d = self.memory();
                let far = steady - pi;
                let near = steady - th;
                let crosses = |t: u64| pow_u64(d, t) * far < near;
                let estimate = (near / far).ln() / d.ln();
                let mut t = if estimate.is_finite() && estimate >= 0.0 {
                    (estimate.floor() as u64).saturating_add(1)
                } else {
                    1
                };
                // The log estimate can be off by one at exact boundaries.
                while t > 1 && crosses(t - 1) {
                    t -= 1;
                }
                while !crosses(t) {
                    t += 1;
                }
                HittingTime::Finite(t)
            }
        }
    }
}

/// `base^t` for a 64-bit exponent with the convention `0^0 = 1`.
pub(crate) fn pow_u64(base: f64, t: u64) -> f64 {
    if t <= i32::MAX as u64 {
        base.powi(t as i32)
    } else if base.abs() < 1.0 {
        0.0
    } else {
        // Only |base| = 1 reaches here.
        if base > 0.0 || t.is_multiple_of(2) {
            1.0
        } else {
            -1.0
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ch(p: f64, r: f64) -> MarkovChannel {
        MarkovChannel::new(p, r, 0.2).unwrap()
    }

    fn b(x: f64) -> Belief {
        Belief::new(x).unwrap()
    }

    #[test]
    fn rejects_invalid_parameters() {
        assert!(MarkovChannel::new(1.0, 0.0, 0.2).is_err());
        assert!(MarkovChannel::new(1.1, 0.2, 0.2).is_err());
        assert!(MarkovChannel::new(0.5, -0.1, 0.2).is_err());
        assert!(MarkovChannel::new(0.5, 0.5, 1.0).is_err());
        assert!(MarkovChannel::new(0.0, 1.0, 0.0).is_ok());
        assert!(MarkovChannel::new(1.0, 0.3, 0.0).is_ok());
        assert!(Belief::new(1.0000001).is_err());
    }

    #[test]
    fn correlation_sign() {
        assert_eq!(ch(0.8, 0.2).correlation(), Correlation::Positive);
        assert_eq!(ch(0.2, 0.8).correlation(), Correlation::Negative);
        assert_eq!(ch(0.5, 0.5).correlation(), Correlation::Negative);
    }

    #[test]
    fn feedback_update_examples() {
        assert_eq!(ch(0.8, 0.2).feedback_update(true).get(), 0.8);
        assert_eq!(ch(0.8, 0.2).feedback_update(false).get(), 0.2);
        assert_eq!(ch(0.5, 0.5).feedback_update(true).get(), 0.5);
        assert_eq!(ch(0.5, 0.5).feedback_update(false).get(), 0.5);
    }

    #[test]
    fn q_step_examples() {
        assert!((ch(0.8, 0.2).q_step(b(0.3)).get() - 0.38).abs() < 1e-15);
        assert!((ch(0.8, 0.2).q_step(b(0.5)).get() - 0.5).abs() < 1e-15);
        assert!((ch(0.2, 0.8).q_step(b(0.3)).get() - 0.62).abs() < 1e-15);
    }

    #[test]
    fn q_iterate_examples() {
        assert!((ch(0.8, 0.2).q_iterate(b(0.3), 2).get() - 0.428).abs() < 1e-15);
        assert_eq!(ch(0.8, 0.2).q_iterate(b(0.3), 0).get(), 0.3);
        assert_eq!(ch(0.3, 0.9).q_iterate(b(0.77), 0).get(), 0.77);
        assert!((ch(0.5, 0.5).q_iterate(b(0.9), 1).get() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn steady_state_examples() {
        assert!((ch(0.8, 0.2).steady_state().get() - 0.5).abs() < 1e-15);
        assert!((ch(0.2, 0.8).steady_state().get() - 0.5).abs() < 1e-15);
        assert!((ch(0.6, 0.6).steady_state().get() - 0.6).abs() < 1e-15);
        for c in [ch(0.8, 0.2), ch(0.1, 0.95), ch(0.0, 1.0), ch(1.0, 0.4)] {
            let s = c.steady_state();
            assert!((c.q_step(s).get() - s.get()).abs() < 1e-12);
        }
    }

    #[test]
    fn hitting_time_examples() {
        assert_eq!(
            ch(0.8, 0.2).hitting_time(b(0.2), b(0.45)),
            HittingTime::Finite(4)
        );
        assert_eq!(
            ch(0.8, 0.2).hitting_time(b(0.6), b(0.45)),
            HittingTime::Finite(0)
        );
        assert_eq!(
            ch(0.2, 0.8).hitting_time(b(0.3), b(0.7)),
            HittingTime::Infinite
        );
        // Threshold at or above steady state is never crossed from below.
        assert_eq!(
            ch(0.8, 0.2).hitting_time(b(0.2), b(0.5)),
            HittingTime::Infinite
        );
        assert_eq!(
            ch(0.2, 0.8).hitting_time(b(0.3), b(0.6)),
            HittingTime::Finite(1)
        );
        assert_eq!(
            ch(0.5, 0.5).hitting_time(b(0.3), b(0.5)),
            HittingTime::Infinite
        );
    }

    #[test]
    fn hitting_time_exact_boundary() {
        // Q(0.2) = 0.32 exactly (up to rounding): threshold 0.32 needs 2 steps.
        let c = ch(0.8, 0.2);
        let t = c.hitting_time(b(0.2), b(0.32)).finite().unwrap();
        assert!(c.q_iterate_raw(0.2, t) > 0.32);
        assert!(c.q_iterate_raw(0.2, t - 1) <= 0.32 + 1e-15);
    }

    #[test]
    fn hitting_time_far_below_steady_state() {
        let c = ch(0.999, 0.001);
        let t = c.hitting_time(b(0.0), b(0.4999)).finite().unwrap();
        assert!(t > 1000);
        assert!(c.q_iterate_raw(0.0, t) > 0.4999);
        assert!(c.q_iterate_raw(0.0, t - 1) <= 0.4999);
    }

    #[test]
    fn pow_handles_huge_exponents() {
        assert_eq!(pow_u64(0.5, u64::MAX), 0.0);
        assert_eq!(pow_u64(-1.0, u64::MAX), -1.0);
        assert_eq!(pow_u64(0.0, 0), 1.0);
    }
}
