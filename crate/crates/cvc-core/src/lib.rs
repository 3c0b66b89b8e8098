#![no_std]

extern crate alloc;

pub mod covmodel;
pub mod error;
pub mod estimators;
pub mod linalg;
pub mod optim;
pub mod predictors;
pub mod scenario;
pub mod sim;
pub mod varest;

pub use error::{Error, Result};
