pub mod algorithms;
pub mod diagnostics;
pub mod error;
pub mod four_op;
pub mod linalg;
pub mod nofob;
pub mod operators;
pub mod problems;
pub mod projective;
pub mod rng;

pub use error::{Error, Result};
pub use linalg::{Point, SpdMetric};
