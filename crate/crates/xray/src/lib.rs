//! Temporal fusion of sparse LiDAR sequences into object-complete frames.
//!
//! The pipeline chains greedy multi-object tracking, canonicalization and
//! point-cloud registration, and per-frame object replacement, so that each
//! detected instance carries the points gathered from every frame of its
//! track. A synthetic LiDAR simulator with exact ground truth backs the test
//! suite, and the `distill` module provides the weak-to-strong loss
//! arithmetic that consumes the fused frames downstream.

pub mod completion;
pub mod distill;
pub mod eval;
pub mod geometry;
pub mod grid;
pub mod io;
pub mod parallel;
pub mod registration;
pub mod rng;
pub mod simulate;
pub mod tracking;

pub use completion::{Frame, FusionConfig, FusionReport, Sequence, TrackingMode};
pub use geometry::{BoundingBox3D, Point3, PointCloud, RigidTransform};
pub use tracking::{DetectedInstance, Track};
