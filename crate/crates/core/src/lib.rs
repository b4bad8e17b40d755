pub mod analyze;
pub mod decompose;
pub mod error;
pub mod explain;
pub mod predict;
pub mod signal;
pub mod synth;

pub use error::{Error, ExternalError, Result};
