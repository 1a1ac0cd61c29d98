pub mod alignment;
pub mod condenser;
pub mod config;
pub mod data;
pub mod error;
pub mod exec;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod recon;
pub mod tensor;
pub mod text_branch;
pub mod time_branch;
pub mod train;

pub use error::{Error, Result};
