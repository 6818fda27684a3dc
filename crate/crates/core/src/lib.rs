//! Central pattern generator for hexapod locomotion built from bursting
//! neurons, with phase reduction onto a two-torus.

pub mod cli;
pub mod continuation;
pub mod error;
pub mod integrate;
pub mod network;
pub mod neuron;
pub mod phase;
pub mod torus;

pub use error::{Error, Result};
