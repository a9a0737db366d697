//! Sequential comparison of two Bernoulli success rates with a
//! synthesized, risk-budgeted stopping rule, plus the usual baselines.

pub mod baselines;
pub mod dynamics;
pub mod error;
pub mod exec;
pub mod hypothesis;
pub mod io;
pub mod lp;
pub mod region;
pub mod rng;
pub mod runtime;
pub mod sim;
pub mod synthesis;

pub use error::{Error, Result};
