//! Mutual-bootstrapping lesion segmentation and classification.
//!
//! A coarse segmenter produces soft lesion masks; a classifier consumes image
//! plus mask and yields class activation maps; an enhanced segmenter fuses
//! those maps with its encoder features. Segmenters train on a Dice loss
//! plus a margin rank loss over online-mined hard pixels.
//!
//! Module map:
//!
//! * [`losses`]: Dice, rank, hybrid, weighted cross-entropy and focal losses
//!   with analytic gradients, and hard-pixel mining.
//! * [`networks`], [`checkpoint`]: the three network roles and weight
//!   persistence, on top of the small layer library in [`nn`].
//! * [`cam`]: class activation maps.
//! * [`data`]: ISIC-layout ingestion, augmentation and the synthetic
//!   generator.
//! * [`metrics`]: JA, DI, pixel accuracy/sensitivity/specificity, ROC AUC.
//! * [`pipeline`]: stage training, artifacts, resumable runs, sweeps, loss
//!   comparison and cross-validated fine-tuning.
//! * [`config`], [`report`], [`cli`]: configuration files, report/plot
//!   emission and the command-line front end.

pub mod cam;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod networks;
pub mod nn;
pub mod pipeline;
pub mod report;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
