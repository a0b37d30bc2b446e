pub mod data_model;
pub mod error;
pub mod eval;
pub mod experiment;

pub use error::{Error, Result};
pub mod io;
pub mod rng;
pub mod synth;
pub mod sampling;
pub mod augment;
pub mod config;
pub mod dataset;
pub mod tensor;
pub mod encoder;
pub mod losses;
pub mod optim;
pub mod training;
pub mod checkpoint;
pub mod cli;
