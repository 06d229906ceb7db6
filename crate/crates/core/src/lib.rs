//! Echo state network system identification with scenario-optimization
//! performance certificates.
//!
//! The crate covers the full experimental loop: a simulated pH-neutralization
//! benchmark plant ([`plant`]), multilevel pseudo-random excitation and
//! dataset plumbing ([`signals`]), randomized ESN training with least-squares
//! readouts ([`esn`]), and the scenario campaign that turns "train many random
//! reservoirs and keep the best" into a procedure with quantified
//! probabilistic guarantees ([`scenario`]).

pub mod error;
pub mod esn;
pub mod fsutil;
pub mod plant;
pub mod scenario;
pub mod seeds;
pub mod signals;

pub use error::{Error, Result};
