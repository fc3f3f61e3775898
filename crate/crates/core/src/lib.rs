pub mod compiled;
pub mod error;
pub mod expr;
pub mod linear;
pub mod model;
pub mod ranktest;
pub mod scan;
pub mod scenarios;
pub mod sim;
pub mod stack;

pub use error::{Error, Result};
