pub mod autodiff;
pub mod data;
pub mod error;
pub mod experiment;
pub mod graphmi;
pub mod metrics;
pub mod models;
pub mod training;

pub use error::{Error, Result};
