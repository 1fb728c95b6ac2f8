//! Consensus-based charging-spot allocation for electric vehicles in
//! parking lots, with a lookahead tree search over future demand.

pub mod benchmark;
pub mod demand;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod gne;
pub mod mcts;
pub mod network;
pub mod oracle;
pub mod report;
pub mod rng;
pub mod scenario;
pub mod sh;
pub mod sim;
pub mod state;
pub mod user_opt;

pub use error::{Error, Result};
