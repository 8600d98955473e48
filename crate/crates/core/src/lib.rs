pub mod erra;
pub mod error;
pub mod cli;
pub mod imaging;
pub mod manifest;
pub mod metrics;
pub mod recon;
pub mod rng;
pub mod scenes;
pub mod selection;
pub mod spectra;
pub mod tensor;

pub use error::{Error, Result};
