//! Uncertain LFT models of nonlinear state-space systems.
//!
//! The pipeline linearizes and discretizes a nonlinear system, identifies a
//! sparse polynomial residual (PNLSS), rewrites it as an LPV model, realizes
//! that as an LFT, reduces the scheduling parameters with a cascade network,
//! bounds the resulting error by falsification and compares robust gains of
//! the candidate models.

pub mod analysis;
pub mod cfnn;
pub mod dynamics;
pub mod envelope;
pub mod error;
pub mod falsify;
pub mod linalg;
pub mod lpvlft;
pub mod pipeline;
pub mod sysid;

pub use error::{Error, Result};
