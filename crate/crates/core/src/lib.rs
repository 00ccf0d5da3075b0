pub mod balance;
pub mod error;
pub mod exchange;
pub mod orchestrator;
pub mod rearrangement;
pub mod run;
pub mod topology;
pub mod types;
pub mod verify;
pub mod workload;

pub use error::{Error, Result};
