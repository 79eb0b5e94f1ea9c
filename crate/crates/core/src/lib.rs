pub mod annotator;
pub mod cli;
pub mod ctc;
pub mod datamodel;
pub mod detector;
pub mod error;
pub mod features;
pub mod metrics;
pub mod nn;
pub mod recognizer;
pub mod svg;
pub mod synthgen;

pub use error::{Error, Result};
