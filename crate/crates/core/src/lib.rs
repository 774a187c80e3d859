//! Adversarial defense toolkit for small image classifiers: gradient-based
//! attack crafting, natural / adversarial / semi-supervised adversarial
//! training, Gaussian-mixture detection of out-of-distribution inputs in the
//! penultimate feature space, and detection-aware risk evaluation.

pub mod attacks;
pub mod binio;
pub mod data;
pub mod diffnet;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod kv;
pub mod projection;
pub mod seed;
pub mod training;
pub mod uad;

pub use error::{Error, Result};
