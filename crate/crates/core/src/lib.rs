pub mod cli;
pub mod distributions;
pub mod error;
pub mod geometry;
pub mod io;
pub mod optimize;
pub mod rng;
pub mod sim;
pub mod sure;
pub mod tweedie;

pub use error::{Error, Result};
