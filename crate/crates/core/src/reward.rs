//! Expected immediate reward `R(pi)` of scheduling a user.
//!
//! Every estimator / rate-adapter strategy `u` succeeds at an average rate
//! `gamma_h(u)` when the channel is high and `gamma_l(u)` when it is low, so
//! its expected rate under belief `pi` is linear in `pi`. The optimised
//! reward is the upper envelope of these lines, which makes it convex and
//! increasing with `R(0) = delta` and `R(1) = 1`.

use crate::channel::Belief;
use crate::error::{Error, Result};

/// Success rates of one estimator / rate-adapter strategy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PayoffPair {
    pub gamma_h: f64,
    pub gamma_l: f64,
}

impl PayoffPair {
    pub const fn new(gamma_h: f64, gamma_l: f64) -> Self {
        PayoffPair { gamma_h, gamma_l }
    }

    /// Written as `gamma_l + pi (gamma_h - gamma_l)` so that rounding keeps
    /// it monotone in `pi`.
    #[inline]
    pub fn expected(&self, pi: f64) -> f64 {
        self.gamma_l + pi * (self.gamma_h - self.gamma_l)
    }

    /// Realised rate given the true channel state.
    #[inline]
    pub fn realized(&self, high: bool) -> f64 {
        if high {
            self.gamma_h
        } else {
            self.gamma_l
        }
    }

    fn validate(&self, delta: f64) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.gamma_h) && (0.0..=delta).contains(&self.gamma_l);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidPayoffPair {
                gamma_h: self.gamma_h,
                gamma_l: self.gamma_l,
                delta,
            })
        }
    }
}

/// Convex reward model: pointwise maximum over a finite set of payoff pairs.
///
/// The set always contains the conservative pair `(delta, delta)` and the
/// aggressive pair `(1, 0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardModel {
    delta: f64,
    pairs: Vec<PayoffPair>,
}

impl RewardModel {
    /// Builds a model from caller-supplied estimation strategies plus the two
    /// mandatory pairs. Duplicate pairs are dropped.
    pub fn with_pairs(delta: f64, estimator_pairs: &[PayoffPair]) -> Result<Self> {
        if !(0.0..1.0).contains(&delta) {
            return Err(Error::InvalidChannel {
                p: f64::NAN,
                r: f64::NAN,
                delta,
                reason: "delta must lie in [0, 1)",
            });
        }
        let mut pairs = vec![PayoffPair::new(delta, delta), PayoffPair::new(1.0, 0.0)];
        for pair in estimator_pairs {
            pair.validate(delta)?;
            if !pairs.contains(pair) {
                pairs.push(*pair);
            }
        }
        Ok(RewardModel { delta, pairs })
    }

    /// Rate adaptation on the belief alone: `R(pi) = max{delta, pi}`.
    pub fn no_estimation(delta: f64) -> Result<Self> {
        Self::with_pairs(delta, &[])
    }

    /// Mandatory pairs plus the mid pair `(1 - delta/2, delta/2)`.
    pub fn default_for(delta: f64) -> Result<Self> {
        Self::with_pairs(delta, &[Self::mid_pair(delta)])
    }

    pub fn mid_pair(delta: f64) -> PayoffPair {
        PayoffPair::new(1.0 - delta / 2.0, delta / 2.0)
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn pairs(&self) -> &[PayoffPair] {
        &self.pairs
    }

    /// Pairs supplied beyond the two mandatory ones.
    pub fn estimator_pairs(&self) -> &[PayoffPair] {
        &self.pairs[2..]
    }

    pub fn eval(&self, pi: Belief) -> f64 {
        self.eval_raw(pi.get())
    }

    /// Evaluates on behalf of a channel, rejecting a delta mismatch.
    pub fn eval_for(&self, channel_delta: f64, pi: Belief) -> Result<f64> {
        if channel_delta != self.delta {
            return Err(Error::DeltaMismatch {
                model: self.delta,
                channel: channel_delta,
            });
        }
        Ok(self.eval(pi))
    }

    #[inline]
    pub(crate) fn eval_raw(&self, pi: f64) -> f64 {
        self.pairs
            .iter()
            .map(|pair| pair.expected(pi))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// The first pair attaining the maximum at `pi`.
    pub fn best_pair(&self, pi: Belief) -> PayoffPair {
        let mut best = self.pairs[0];
        let mut best_value = best.expected(pi.get());
        for pair in &self.pairs[1..] {
            let v = pair.expected(pi.get());
            if v > best_value {
                best = *pair;
                best_value = v;
            }
        }
        best
    }
}

/// Reward without channel estimation, `max{delta, pi}`.
pub fn lower_bound(delta: f64, pi: Belief) -> f64 {
    delta.max(pi.get())
}

/// Reward with full channel knowledge, `(1 - delta) pi + delta`.
pub fn upper_bound(delta: f64, pi: Belief) -> f64 {
    (1.0 - delta) * pi.get() + delta
}
