//! Classifiers that see through reporting bias in human-written labels.
//!
//! Human annotations (tags, caption words) record what people chose to
//! mention, not everything that is present. Training directly on such
//! labels yields a classifier that mimics the annotators' omissions. This
//! crate factors the predictor into a visual presence classifier and an
//! input-conditioned relevance classifier, trains the pair end-to-end on
//! the noisy labels alone, and recovers both "what is there" and "what a
//! person would say".
//!
//! The crate also ships a synthetic corpus generator with known ground
//! truth, reference baselines, an evaluation stack (mAP, precision at
//! human recall, bias measurement, decoupling diagnostics) and a CLI that
//! ties them into reproducible experiments.

pub mod baselines;
pub mod checkpoint;
pub mod config;
pub mod cli;
pub mod corpus;
pub mod error;
pub mod features;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod report;
pub mod rng;
pub mod synthgen;
pub mod trainer;
pub mod vocab;

pub use error::{Error, Result};
pub use features::Features;
pub use vocab::Vocabulary;
