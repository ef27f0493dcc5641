pub mod analysis;
pub mod checkpoint;
pub mod config;
pub mod datasets;
pub mod error;
pub mod gp;
pub mod model;
pub mod objectives;
pub mod specialize;
pub mod train;

pub use config::{InputMode, LossConfig, Mixing, ModelConfig, RunConfig, Zeta};
pub use error::{CgtError, Result};
