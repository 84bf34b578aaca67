//! Deterministic discrete-time simulator and policy toolkit for data
//! distribution in mobile ad-hoc robot networks.
//!
//! Agents share time-stamped state over an interference-limited wireless
//! channel under a two-phase transmission-response protocol. The crate
//! provides:
//!
//! - [`channel`]: free-space path loss, SINR and deterministic packet
//!   reception for simultaneous transmissions
//! - [`knowledge`]: per-agent tables of teammate states with timestamps and
//!   data-flow parent pointers, the merge rule, and the age-of-information
//!   objective
//! - [`protocol`]: the transmission-response window engine and episode runner
//! - [`scenario`]: mission configuration, kinematics, random-walk and
//!   flocking controllers, connectivity-checked placement
//! - [`policies`]: the policy interface plus random flooding, round robin and
//!   minimum-spanning-tree baselines
//! - [`nn`] / [`gnn`]: a small dense NN kernel with taped reverse-mode
//!   gradients, and the aggregation graph network policy and value heads
//! - [`rl`]: PPO training with shared team rewards
//! - [`experiment`]: config files, sweep presets, metrics and trace output
//!
//! See the crate `examples/` directory for runnable entry points and the
//! `netdist` binary for the command-line surface.

pub mod channel;
pub mod error;
pub mod experiment;
pub mod gnn;
pub mod knowledge;
pub mod nn;
pub mod policies;
pub mod protocol;
pub mod rl;
pub mod scenario;

pub use error::{Error, Result};
