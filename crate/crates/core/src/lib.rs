//! Data-driven linear-programming policy iteration and value iteration for
//! unknown deterministic discrete-time systems.

pub mod basis;
pub mod error;
pub mod systems;

pub use error::{Error, Result};
pub mod lp;
pub mod replay;
pub mod oracle;
pub mod algorithms;
pub mod experiment;
