pub mod checkpoint;
pub mod controller;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod experts;
pub mod model;
pub mod numerics;
pub mod router;
pub mod sim;
pub mod trainer;

pub use error::{Error, ErrorKind, Result};
