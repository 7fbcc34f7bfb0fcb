//! Topology-agnostic 4D surface reconstruction with fluid-dynamics priors.
//!
//! A temporal signed distance field `f(x, t)` and a velocity field `v(x, t)`,
//! both sinusoidal coordinate networks, are fitted jointly to a sequence of
//! oriented point clouds. The geometry field is supervised with signed
//! distances; the velocity field is shaped by divergence, transport and
//! self-advection residuals; linear warping couples the two. Per-time meshes
//! come from marching cubes and dense correspondences from integrating `v`.

pub mod config;
pub mod correspondence;
pub mod error;
pub mod evaluation;
pub mod extraction;
pub mod geometry;
pub mod io;
pub mod kdtree;
pub mod losses;
mod mc_tables;
pub mod mesh;
mod par;
pub mod sampling;
pub mod scenes;
pub mod siren;
pub mod trainer;

/// Re-export of the linear algebra crate used in public signatures.
pub use nalgebra;

pub use config::{NetworkConfig, TrainConfig};
pub use error::{Error, Result};
pub use geometry::{Aabb, FrameSequence, OrientedPointCloud};
pub use losses::{LossReport, LossWeights, Phase};
pub use mesh::TriMesh;
pub use siren::{FieldEval, ParamGradient, SirenParams};
pub use trainer::{AdamState, TrainOutcome};

/// Points, normals and velocities in scene units.
pub type Vec3 = nalgebra::Vector3<f64>;
