//! Estimation of hidden subclass structure and worst-case-robust training.
//!
//! A classifier trained on coarse "superclass" labels often hides large
//! performance gaps across finer, unlabeled subclasses. This crate implements
//! a two-step pipeline against that failure mode:
//!
//! 1. train a standard model, cluster its feature representations within each
//!    superclass (automatic cluster-count selection plus overclustering), and
//!    treat the clusters as proxy subclass labels;
//! 2. retrain with group distributionally robust optimization (GDRO) over the
//!    estimated subclasses, checkpointing on worst-cluster validation
//!    performance.
//!
//! Alongside the pipeline the crate provides the hierarchical Gaussian
//! generative model used for validation, density-ratio risk estimators with
//! their clamped importance weights, the soft-assignment GDRO variant, and the
//! evaluation metrics (robust/cluster-robust accuracy, alignment, AUROC,
//! SCAA).
//!
//! Entry points: [`harness::run_george`] for the full pipeline,
//! [`harness::run_baselines`] for reference training modes, and the `stratum`
//! CLI in the companion binary crate.

pub mod cluster;
pub mod dro;
pub mod error;
pub mod gaussian;
pub mod harness;
pub mod linalg;
pub mod metrics;
pub mod models;
pub mod reduce;
pub mod riskest;
pub mod rng;
pub mod synthgen;

pub use error::{Error, Result};
pub use synthgen::{Dataset, GenerativeSpec, ZUse};
