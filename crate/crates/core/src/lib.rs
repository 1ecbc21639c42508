//! Transfer matrices and Baxter Q-operators of the periodic XXZ chain built
//! from Borel representations of quantum affine sl2, with numerical checks
//! of their functional relations.

pub mod algebra;
pub mod cli;
pub mod error;
pub mod lax;
pub mod relations;
pub mod reps;
pub mod transfer;

pub use error::{Error, Result};
