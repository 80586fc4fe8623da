//! Skeleton-induced vision-language workbench.

pub mod autodiff;
pub mod chart;
pub mod encoders;
pub mod error;
pub mod experiment;
pub mod kvconfig;
pub mod losses;
pub mod lvlm;
pub mod optim;
pub mod par;
pub mod params;
pub mod primitives;
pub mod rng;
pub mod synthdata;
pub mod tensor;
pub mod training;
pub mod types;
pub mod zseval;

pub use error::{Result, SkiError};
