//! Raceline tracking with a PPO-scheduled Pure Pursuit controller, plus
//! fixed, adaptive and teacher Pure Pursuit and a kinematic MPC baseline.

// Validation uses `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod env;
pub mod harness;
pub mod mpc;
pub mod ppo;
pub mod pure_pursuit;
pub mod raceline;
pub mod vehicle;

pub use env::{EnvConfig, EnvError, RacingEnv, RewardWeights};
pub use harness::{ControllerSpec, HarnessError, LapReport, RunConfig, SweepGrid, SweepResult, TrainMode};
pub use mpc::{MpcConfig, MpcTracker};
pub use ppo::{ActionMode, Agent, Checkpoint, LrSchedule, PpoConfig, PpoError, Trainer};
pub use pure_pursuit::{Mode, ParamSource, PpParams, PurePursuit};
pub use raceline::{Raceline, RacelineError, TrackSpec};
pub use vehicle::{Command, SimConfig, VehicleState};
