//! Quantitative evaluation of interpretability methods and of trust in model
//! predictions.
//!
//! The pipeline: [`corpus`] turns labelled text into tf-idf vectors,
//! [`classifier`] fits a multinomial logistic regression, [`explain`] produces
//! three-word highlights (COVAR, LIME-style, random), [`study`] runs timed
//! annotation studies under randomized conditions, [`simarm`] drives studies
//! with parametric synthetic annotators, and [`metrics`] computes information
//! transfer rates, trust coefficients and significance tests.

pub mod bench;
pub mod classifier;
pub mod corpus;
pub mod explain;
pub mod metrics;
pub mod simarm;
pub mod study;
pub mod synth;
