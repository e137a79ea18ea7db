pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod model;
pub mod params;
pub mod pipelines;
pub mod pruning;
pub mod report;
pub mod seed;
pub mod tasks;
pub mod tensor;

pub use error::{Error, Result};
pub use params::{Gradients, ParameterStore};
pub use tensor::{Real, Tensor};
