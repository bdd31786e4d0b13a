//! Finite-user slotted Aloha networks: exact queue dynamics, recurrence
//! classification, inner/outer rate regions, and Monte Carlo and exact
//! validation of the resulting verdicts.
//!
//! Modules:
//!
//! * [`dists`]: arrival and window laws with closed-form moments.
//! * [`chain`]: the queue-length Markov chain and trajectory simulation.
//! * [`region`]: classification, offered rates, region membership and the
//!   inner-region witness search.
//! * [`recurrence`]: return times, Lyapunov traces and escape probabilities.
//! * [`oracle`]: exact truncated-chain return times.
//! * [`harness`]: config files, grid scans and command runners.

pub mod chain;
pub mod dists;
pub mod error;
pub mod harness;
pub mod oracle;
pub mod recurrence;
pub mod region;
pub mod rng;

pub use chain::{step, NetworkConfig, QueueState, SlotDraw, StepOutcome, TrajectoryRecord, UserLaws};
pub use dists::{Distribution, DistributionMoments, DistributionSpec};
pub use error::{AlohaError, LawRole, Result};
pub use recurrence::{LyapunovTrace, ReturnTimeOutcome, ReturnTimeStats};
pub use region::{classify, Verdict, VerdictLabel, WitnessOptions, WitnessResult};
