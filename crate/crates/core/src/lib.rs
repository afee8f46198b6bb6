//! Model-based reinforcement learning for portfolio trading with normalizing-flow
//! transition dynamics, together with the market-data, backtest and analysis
//! tooling around it.

pub mod analysis;
pub mod causality;
pub mod diffnet;
pub mod dynamics;
pub mod env;
pub mod error;
pub mod flow;
pub mod market;
pub mod mbrl;
pub mod metrics;
pub mod sac;
pub mod stable;
pub mod synth;

pub use error::{Error, Result};
