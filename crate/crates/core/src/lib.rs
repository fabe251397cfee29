//! Drug-target interaction modelling on precomputed embeddings, with
//! confidence and unfamiliarity scores and virtual-screening analytics.

pub mod embeddings;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod scalar;
pub mod screening;
pub mod seed;
pub mod training;

pub use error::{Error, Result};

pub type Tensor = nn::Tensor2<f64>;
pub type Model = model::ModelState<f64>;
