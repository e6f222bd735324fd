pub mod autodiff;
pub mod data;
pub mod distill;
pub mod error;
pub mod eval;
pub mod forecaster;
pub mod random;
pub mod run;
pub mod spectral;
pub mod synth;

pub use error::{Error, Result};
