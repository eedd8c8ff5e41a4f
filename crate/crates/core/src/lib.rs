pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod io_util;
pub mod model;
pub mod nn;
pub mod train;

pub use error::{Error, Result};
