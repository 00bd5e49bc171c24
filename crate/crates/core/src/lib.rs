//! Rigid registration of 3D point clouds, built for tunnel-like scenes.
//!
//! The crate estimates the SE(3) transform aligning a *target* scan to a
//! *source* map: every estimated transform maps target-frame points into the
//! source frame.
//!
//! - Geometric core: point clouds, SE(3) transforms, a deterministic kd-tree,
//!   and a closed-form symmetric 3×3 eigensolver.
//! - Preprocessing: voxel downsampling, statistical outlier removal, normal
//!   estimation.
//! - Coarse alignment: ISS keypoints, FPFH descriptors, mutual matching and
//!   RANSAC with an edge-similarity pre-check.
//! - Refinement: normal-distributions-transform (NDT) gradient ascent and
//!   point-to-point ICP.
//! - Evaluation, an end-to-end pipeline with JSON reports, PLY/XYZ I/O, and a
//!   synthetic tunnel-scene generator for benchmarks and tests.
//!
//! All randomized code takes explicit seeds and runs sequentially, so every
//! function in this crate is deterministic: same inputs, same bytes out.

pub mod coarse_align;
pub mod eigen;
pub mod error;
pub mod evaluate;
pub mod fpfh;
pub mod geom;
pub mod icp;
pub mod io;
pub mod iss;
pub mod kdtree;
pub mod ndt;
pub mod pipeline;
pub mod preprocess;
pub mod se3;
pub mod synthgen;

pub use error::{Error, Result};
pub use geom::{Point3, PointCloud, Vec3};
pub use se3::RigidTransform;
