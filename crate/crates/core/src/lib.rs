//! Desk-scale laboratory for component-level lesion studies on toy language
//! models: train matched dense/MoE decoders, attribute linguistic phenomena
//! and clinical phenotypes to functional units, lesion those units, and
//! measure graded degradation with a WAB-style Aphasia Quotient.

pub mod align;
pub mod autodiff;
pub mod chart;
pub mod clinic;
pub mod data;
pub mod error;
pub mod lesion;
pub mod model;
pub mod optim;
pub mod phenotype;
pub mod pipeline;
pub mod probe;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
