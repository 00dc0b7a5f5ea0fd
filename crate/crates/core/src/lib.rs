pub mod archive;
pub mod autodiff;
pub mod clustering;
pub mod config;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod inference;
pub mod language;
pub mod nn;
pub mod optim;
pub mod pipeline;
pub mod pseudo;
pub mod selfcheck;
pub mod synth;
pub mod tensor;
pub mod trainer;
pub mod video;

pub use error::{Error, Result};
