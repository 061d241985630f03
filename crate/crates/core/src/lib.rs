//! Channel-estimation-aware opportunistic scheduling over two-state Markov
//! channels: belief dynamics, the subsidy problem, Whittle indices, policies
//! and their evaluation.

pub mod channel;
pub mod error;
pub mod index;
pub mod policies;
pub mod report;
pub mod reward;
pub mod sim;
pub mod subsidy;
mod tree;
pub mod user;
pub mod validate;

pub use channel::{Belief, Correlation, HittingTime, MarkovChannel};
pub use error::{Error, Result};
pub use index::{IndexBranch, IndexQuery, WhittleIndex};
pub use policies::{DownlinkSystem, PolicyDecision, PolicyKind, SystemState};
pub use reward::{PayoffPair, RewardModel};
pub use sim::{EvalConfig, EvalMode, ExperimentResult, PctGain};
pub use subsidy::{AnchorValues, SubsidyProblem, ThresholdClass};
pub use user::UserModel;
