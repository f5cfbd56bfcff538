//! Urgent-post classification for course forums: an LSTM with attention,
//! a Monte Carlo Dropout variant and a variational-inference variant, plus
//! the data pipeline, training loop, experiment protocols and a
//! finite-difference verification suite.

pub mod cli;
pub mod config;
pub mod corpus;
pub mod diffcore;
pub mod encoder;
pub mod error;
pub mod mcd;
pub mod model;
pub mod synthetic;
pub mod train_eval;
pub mod verify;
pub mod vi;

pub use error::{Error, Result};
