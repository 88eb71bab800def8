pub mod audio;
pub mod corruption;
pub mod error;
pub mod features;
pub mod harness;
pub mod model;
pub mod nn;
pub mod stoi;
pub mod synth;

pub use error::{Error, Result};
