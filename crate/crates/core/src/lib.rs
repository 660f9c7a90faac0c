//! Neural news recommendation from scratch: encoder families (NRMS, NAML,
//! LSTUR), a minimal tensor engine with analytic backward passes, MIND-format
//! data handling, vectorized ranking metrics, cached evaluation, a seeded
//! training loop, and dataset/recommendation analysis emitters.

pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod insight;
pub mod layers;
pub mod metrics;
pub mod seed;
pub mod tensor;
pub mod train;
pub mod zoo;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
pub use zoo::{build_model, Family, Model, ModelSpec, Param, ParamStore, UserIdMode, View};
