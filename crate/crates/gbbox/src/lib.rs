pub mod autodiff;
pub mod divergence;
pub mod error;
pub mod experiment;
pub mod gaussian;
pub mod geometry;

pub mod dataset;
pub mod detector;

pub use error::{Error, Result};
