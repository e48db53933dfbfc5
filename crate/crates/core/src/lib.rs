//! Cooperative resource negotiation by incremental utility elicitation.
//!
//! A provisioner splits one divisible resource among workload managers
//! (WMs) whose utility curves it only knows at sampled points. Allocations
//! are chosen to minimize max regret over every monotone curve consistent
//! with the samples, and further samples are requested where they shrink
//! that regret fastest.

pub mod elicit;
pub mod error;
pub mod grid;
pub mod harness;
pub mod instance;
pub mod knapsack;
pub mod minimax;
pub mod regret;
pub mod sim;
pub mod utility;

pub use error::{Error, Result};
pub use grid::{Grid, Units};
pub use minimax::{minimax_allocation, MmrResult, SolveMode, SolveOptions};
pub use regret::{max_regret, Allocation, RegretCertificate};
pub use utility::{SampleSet, StepUtility};
