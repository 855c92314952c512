pub mod design;
pub mod error;
pub mod estimators;
pub mod exact_ot;
pub mod experiments;
pub mod ground_truth;
pub mod kdtree;
pub mod linalg;
pub mod measures;
pub mod rng;
pub mod stability;

pub use error::{Error, Result};
