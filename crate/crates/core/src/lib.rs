pub mod cli;
pub mod error;
pub mod green;
pub mod hamiltonians;
pub mod lagrangian;
pub mod oscint;
pub mod phase;
pub mod rayflow;
pub mod reference;
pub mod validate;

pub use error::{Error, Result};
