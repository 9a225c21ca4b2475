pub mod bgr;
pub mod cli;
pub mod error;
pub mod experiment;
pub mod model;
pub mod primal_dual;
pub mod swo;

pub use error::{Error, Result};
