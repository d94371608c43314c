pub mod constraints;
pub mod dataset;
pub mod detect;
pub mod domain;
pub mod extdict;
pub mod ground;
pub mod infer;
pub mod pipeline;
pub mod repair;
pub mod synthetic;

pub use dataset::{CellRef, DataError, Dataset, LoadOptions};
