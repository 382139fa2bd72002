pub mod encoder;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod eval;
pub mod finetune;
pub mod kg;
pub mod model;
pub mod numerics;
pub mod pretrain;
pub mod retrieval;
pub mod rng;
pub mod text;

pub use error::{Error, Result};
