//! Quality assurance for ray-based vessel wall segmentation.
//!
//! A vessel cross-section is segmented by casting 31 rays from a center,
//! predicting a lumen radius and a wall width per ray, and mapping the result
//! back to Cartesian contours. This crate provides that pipeline on synthetic
//! black-blood phantoms, estimates per-ray uncertainty with Monte Carlo dropout
//! or center-jitter ensembles, and measures how well that uncertainty tracks
//! segmentation quality (Dice) under image noise and center displacement.
//!
//! Modules, bottom-up:
//!
//! - [`volume`]: volumes, percentile rescaling, noise, bilinear sampling, `VOL1` I/O.
//! - [`phantom`]: synthetic cohorts with exact elliptical ground truth.
//! - [`polar`]: polar patches and contour geometry.
//! - [`predictor`]: edge-detection oracle and a small rotation-equivariant CNN.
//! - [`uncertainty`]: dropout/centers ensembles and mean/polar aggregation.
//! - [`qa`]: rasterization, Dice, and uncertainty–quality correlation.
//! - [`sim`]: noise and center-offset sweeps.
//! - [`report`], [`config`], [`pipeline`]: artifacts and command orchestration.

pub mod config;
pub mod error;
pub mod linalg;
pub mod num;
pub mod phantom;
pub mod pipeline;
pub mod polar;
pub mod predictor;
pub mod qa;
pub mod report;
pub mod sim;
pub mod stats;
pub mod uncertainty;
pub mod volume;

pub use error::{Error, Result};
pub use num::Real;

/// Double-precision geometry, used for aggregation and scoring.
pub type Center = polar::PolarCenter<f64>;
pub type Contours = polar::ContourPair<f64>;
pub type Patch = polar::PolarPatch<f64>;
pub type Ensemble = uncertainty::ContourEnsemble<f64>;
pub type Aggregated = uncertainty::AggregatedPair<f64>;

/// Single-precision network and patches, used for training and inference.
pub type Cnn = predictor::Network<f32>;
pub type CnnPatch = polar::PolarPatch<f32>;
pub type CnnSample = predictor::Sample<f32>;
