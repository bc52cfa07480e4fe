//! Calibration of reading-efficiency test items from simulated responses,
//! psychometric filtering, and assembly of parallel test forms by a relaxed
//! optimal-transport matching solved with gradient descent.
//!
//! The crate is organized by pipeline stage:
//!
//! - [`item_bank`]: items, participants, response logs and data-hygiene filters.
//! - [`simulator`]: the item-response simulator contract, prompt rendering,
//!   response-time binning, a reference generative simulator and an HTTP batch
//!   client for an external simulator.
//! - [`calibration`]: aggregation of simulated draws into item parameters and
//!   the accuracy / response-time / duplicate filters.
//! - [`assembly`]: the relaxed matching objective, its gradient, the Adam
//!   optimizer and discrete form extraction.
//! - [`psychometrics`]: scoring, agreement statistics and 2PL IRT.

pub mod assembly;
pub mod calibration;
pub mod error;
pub mod item_bank;
pub mod psychometrics;
pub mod seed;
pub mod simulator;
pub mod stats;

pub use error::{Error, ErrorKind, Result};
