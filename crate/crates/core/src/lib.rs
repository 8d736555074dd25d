//! Multi-axis fusion uncertainty estimation for slice-wise 3D image
//! translation.
//!
//! A 3D volume is translated slice by slice with a 2D model. Running the
//! model over several slicing planes (the three principal planes plus
//! oblique planes obtained by 45-degree pre-rotations) yields multiple
//! predictions of the same volume; their voxel-wise mean is the fused
//! output and their voxel-wise variance is an epistemic uncertainty map.
//! MC-Dropout and deep-ensemble style estimators over a single plane are
//! provided as baselines, along with the preprocessing, evaluation metrics
//! and file formats needed to run cohort experiments.

pub mod error;
pub mod fusion;
pub mod io;
pub mod metrics;
pub mod phantom;
pub mod predictor;
pub mod preprocess;
pub mod slicing;
pub mod volume;

pub use error::{MafError, Result};
pub use volume::{Axis, Dims3, Mask3, RigidRotation, Volume3};
