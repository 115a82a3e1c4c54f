//! Identity-disentangled implicit signed-distance shape modeling.
//!
//! The crate learns a latent auto-decoder SDF over deformable shapes from
//! oriented point clouds, then reconstructs and tracks novel shapes given in
//! arbitrary world coordinates by jointly optimizing latent codes and a 6DoF
//! pose. Rotation initialization comes from a policy-gradient search, an
//! exhaustive multi-hypothesis baseline, or a learned relative-pose
//! regressor.

pub mod error;
pub mod field;
pub mod geometry;
pub mod io;
pub mod meshing;
pub mod metrics;
pub mod objective;
pub mod pose_init;
pub mod reconstructor;
pub mod sampling;
pub mod synth;
pub mod trainer;
