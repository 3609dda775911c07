pub mod attender;
pub mod corpus;
pub mod decoder;
pub mod encoders;
pub mod error;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod schema;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
