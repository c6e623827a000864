pub mod cli;
pub mod compliance;
pub mod config;
pub mod error;
mod groups;
pub mod ids;
pub mod money;
pub mod pricing;
pub mod qf;
pub mod sim;
pub mod stats;
pub mod survey;

pub use error::{Error, Result};
