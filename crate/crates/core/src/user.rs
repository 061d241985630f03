use crate::channel::{Belief, MarkovChannel};
use crate::error::{Error, Result};
use crate::reward::RewardModel;

/// A downlink user: its channel together with the reward model matching the
/// channel's low-state rate.
#[derive(Debug, Clone, PartialEq)]
pub struct UserModel {
    channel: MarkovChannel,
    reward: RewardModel,
}

impl UserModel {
    pub fn new(channel: MarkovChannel, reward: RewardModel) -> Result<Self> {
        if channel.delta() != reward.delta() {
            return Err(Error::DeltaMismatch {
                model: reward.delta(),
                channel: channel.delta(),
            });
        }
        Ok(UserModel { channel, reward })
    }

    /// Channel `(p, r, delta)` with the default reward model.
    pub fn with_default_reward(p: f64, r: f64, delta: f64) -> Result<Self> {
        Self::new(
            MarkovChannel::new(p, r, delta)?,
            RewardModel::default_for(delta)?,
        )
    }

    #[inline]
    pub fn channel(&self) -> &MarkovChannel {
        &self.channel
    }

    #[inline]
    pub fn reward(&self) -> &RewardModel {
        &self.reward
    }

    #[inline]
    pub fn delta(&self) -> f64 {
        self.channel.delta()
    }

    #[inline]
    pub fn immediate_reward(&self, pi: Belief) -> f64 {
        self.reward.eval(pi)
    }

    #[inline]
    pub(crate) fn reward_raw(&self, pi: f64) -> f64 {
        self.reward.eval_raw(pi)
    }
}

pub(crate) fn check_discount(beta: f64) -> Result<()> {
    if (0.0..1.0).contains(&beta) {
        Ok(())
    } else {
        Err(Error::InvalidDiscount(beta))
    }
}
