pub mod error;
pub mod experiments;
pub mod integral;
pub mod levy;
pub mod mc;
pub mod psumming;
pub mod quadrature;
pub mod spde;

pub use error::{Error, Result};
