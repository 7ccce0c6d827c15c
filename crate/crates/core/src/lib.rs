pub mod error;
pub mod geometry;
mod lp;
pub mod mpc;
pub mod nn;
pub mod pipeline;
pub mod qp;
pub mod scaling;
pub mod verify;
pub mod bounds;
pub mod cli;
mod serde_rows;

pub use error::{Error, Result};
